#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "ncp/ncp.hpp"
#include "ncp/random.hpp"
#include "ncp/tensor.hpp"
#include "ncp/vae.hpp"

namespace ncp {

struct SirConfig {
  std::size_t M = 5000;
  std::uint64_t stream = 0;

  void validate() const;
};

struct LdConfig {
  double lambda = 0.01;
  std::size_t T = 100;

  void validate() const;
};

/// Multiplier on the base conditionals' standard deviations, in [0, 1].
struct TemperatureSetting {
  double t = 1.0;

  void validate() const;
};

/// Draws n x d proposals.
using BaseSampler = std::function<Tensor(std::size_t n, Rng& rng)>;
/// log r per row.
using LogRatioFn = std::function<std::vector<double>(const Tensor& z)>;
/// Gradient of the energy w.r.t. every row of z (same shape as z).
using EnergyGradFn = std::function<Tensor(const Tensor& z)>;

inline constexpr double kLogWeightClamp = 30.0;

struct SirResult {
  Tensor z;  // 1 x d
  std::size_t index = 0;
  std::vector<double> log_weights;
  double ess = 0.0;
};

/// One sampling-importance-resampling draw. A single uniform is consumed
/// first, then the M proposals. Finite log-weights are clamped to +-30;
/// -inf entries get zero weight.
SirResult sir_sample(const BaseSampler& base, const LogRatioFn& log_r, const SirConfig& cfg,
                     Rng& rng);

/// Inverse-CDF pick over normalized weights; ties go to the lower index.
std::size_t resample_index(std::span<const double> log_weights, double u);

/// 1 / sum(w_hat^2), computed as (sum w)^2 / sum w^2 after a max shift.
double ess(std::span<const double> log_weights);

/// z_{t+1} = z_t - 0.5 lambda grad E(z_t) + sqrt(lambda) eps_t, all rows at once.
Tensor langevin_sample(const EnergyGradFn& grad_energy, const Tensor& z0, const LdConfig& cfg,
                       Rng& rng);

/// Tape-free Gaussian parameters (rows or a broadcast 1 x d row).
struct GaussianParams {
  Tensor mu;
  Tensor log_sigma;
};

/// log_sigma + ln t, mu unchanged. Requires 0 < t <= 1.
DiagGaussian apply_temperature(const DiagGaussian& g, TemperatureSetting t);
GaussianParams apply_temperature(const GaussianParams& g, TemperatureSetting t);

/// mu + exp(log_sigma) * eps; t = 0 yields mu exactly.
Tensor sample_gaussian_rows(const GaussianParams& g, std::size_t rows, Rng& rng);

enum class SamplerKind { kSir, kLd };

struct AncestralConfig {
  SamplerKind method = SamplerKind::kSir;
  SirConfig sir;
  LdConfig ld;
  TemperatureSetting temperature;
};

struct AncestralResult {
  Tensor z;  // n x total_latent
  /// ess[k][i]: SIR effective sample size of group k for draw i (empty for LD).
  std::vector<std::vector<double>> ess;
  std::vector<double> mean_ess() const;
};

/// n draws from the (tempered) NCP prior, group by group. Each draw i uses its
/// own stream Rng(base_seed, i) where base_seed comes from `rng`.
AncestralResult ancestral_ncp_sample(NcpModel& model, std::size_t n, const AncestralConfig& cfg,
                                     Rng& rng);

/// n draws from the (tempered) base hierarchical prior p(z).
Tensor sample_base_prior(HierarchicalVae& model, std::size_t n, Rng& rng,
                         TemperatureSetting t = {});

/// Decoder output for latent rows: Bernoulli probabilities or Normal means.
Tensor decode_mean(HierarchicalVae& model, const Tensor& z);

}  // namespace ncp
