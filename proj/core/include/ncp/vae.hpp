#pragma once

#include <span>
#include <string>
#include <vector>

#include "ncp/autodiff.hpp"
#include "ncp/nn.hpp"
#include "ncp/random.hpp"
#include "ncp/tensor.hpp"

namespace ncp {

enum class Likelihood { kBernoulli, kNormal };

std::string to_string(Likelihood l);
Likelihood likelihood_from_string(const std::string& s);

/// Shape of a hierarchical VAE with K latent groups. Groups are 0-indexed;
/// group 0 has no context and a free (trainable) Gaussian prior.
struct HierarchySpec {
  std::size_t data_dim = 2;
  std::vector<std::size_t> latent_dims{2};
  std::size_t context_dim = 16;
  std::vector<std::size_t> encoder_hidden{64, 64};
  std::vector<std::size_t> decoder_hidden{64, 64};
  std::vector<std::size_t> prior_hidden{32};
  Likelihood likelihood = Likelihood::kNormal;

  std::size_t groups() const { return latent_dims.size(); }
  std::size_t total_latent() const;
  /// Column where group k starts inside the concatenated latent z.
  std::size_t offset(std::size_t k) const;
  void validate() const;
};

inline constexpr double kLogSigmaMin = -8.0;
inline constexpr double kLogSigmaMax = 8.0;

/// Diagonal Gaussian over rows of a batch. `mu` and `log_sigma` are either
/// B x d or 1 x d (broadcast over the batch).
struct DiagGaussian {
  Var mu;
  Var log_sigma;

  /// Clamps the raw log standard deviation to [kLogSigmaMin, kLogSigmaMax].
  static DiagGaussian from_raw(Var mu, Var raw_log_sigma);
  std::size_t dim() const { return mu.cols(); }
};

/// Closed-form KL(q || p) per row, shape B x 1.
Var kl_diag_gaussian(const DiagGaussian& q, const DiagGaussian& p);
/// z = mu + exp(log_sigma) * eps.
Var reparam_sample(const DiagGaussian& g, Var eps);
/// log N(z; mu, sigma^2) per row, shape B x 1.
Var gaussian_log_prob(const DiagGaussian& g, Var z);

/// Encoder q(z_k | z_<k, x), prior p(z_k | z_<k) and decoder p(x | z).
///
/// The prior for group k > 0 is an MLP over z_<k whose last hidden layer is
/// the context feature c(z_<k); a linear head maps the context to the
/// conditional's mean and log standard deviation. The encoder sees z_<k
/// directly, so prior parameters only enter the ELBO through the KL terms.
class HierarchicalVae {
 public:
  HierarchicalVae() = default;
  explicit HierarchicalVae(HierarchySpec spec);

  void init(Rng& rng);
  const HierarchySpec& spec() const { return spec_; }
  std::size_t groups() const { return spec_.groups(); }

  Var encode_features(Tape& tape, Var x);
  /// z_prev holds the concatenated z_<k (B x offset(k)); ignored for k = 0.
  DiagGaussian posterior(Tape& tape, std::size_t k, Var features, Var z_prev);

  /// c(z_<k) for k >= 1.
  Var context(Tape& tape, std::size_t k, Var z_prev);
  /// p(z_k | z_<k) from a context (k >= 1) or the free group-0 prior (k = 0,
  /// context ignored, parameters are 1 x d).
  DiagGaussian prior(Tape& tape, std::size_t k, Var context);

  /// Bernoulli logits or Normal means, B x data_dim.
  Var decode(Tape& tape, Var z);
  /// Clamped per-dimension decoder log standard deviation (Normal likelihood only).
  Var decoder_log_sigma(Tape& tape);
  /// log p(x | z) per row, B x 1.
  Var log_likelihood(Tape& tape, Var x, Var z);

  std::vector<NamedParam> parameters();
  std::vector<NamedParam> encoder_parameters();
  std::vector<NamedParam> decoder_parameters();
  std::vector<NamedParam> prior_parameters();
  std::vector<NamedParam> prior_parameters(std::size_t k);

  void set_trainable(bool flag);

  Mlp& encoder_trunk() { return encoder_trunk_; }
  std::vector<Mlp>& posterior_heads() { return posterior_heads_; }
  Tensor& prior0_mu() { return prior0_mu_; }
  Tensor& prior0_log_sigma() { return prior0_log_sigma_; }

 private:
  HierarchySpec spec_;
  Mlp encoder_trunk_;
  std::vector<Mlp> posterior_heads_;
  Tensor prior0_mu_;
  Tensor prior0_log_sigma_;
  std::vector<Mlp> context_nets_;  // index k - 1
  std::vector<Linear> prior_heads_;  // index k - 1
  Mlp decoder_;
  Tensor decoder_log_sigma_;
};

/// Breakdown of a one-sample ELBO estimate. Scalars are batch means.
struct ElboTerms {
  Var elbo;
  Var recon;
  Var kl_total;
  std::vector<Var> kl;  // per group
  Var z;                // sampled latent, B x total_latent
  std::vector<Var> contexts;  // c(z_<k) for k >= 1 (index k - 1)

  /// -(recon - kl_weight * kl_total).
  Var loss(double kl_weight) const;
};

/// Hierarchical ELBO with analytic per-group KL. `eps` holds one B x d_k
/// standard-normal block per group.
ElboTerms hvae_elbo(Tape& tape, HierarchicalVae& model, Var x, std::span<const Tensor> eps);
ElboTerms hvae_elbo(Tape& tape, HierarchicalVae& model, Var x, Rng& rng);

/// Single-group ELBO; throws ShapeError unless the model has K = 1.
ElboTerms elbo(Tape& tape, HierarchicalVae& model, Var x, const Tensor& eps);

/// Standard-normal noise blocks for every group.
std::vector<Tensor> draw_group_noise(const HierarchySpec& spec, std::size_t batch, Rng& rng);

/// Training data with optional dynamic binarization of each drawn batch.
struct DataView {
  Tensor samples;  // N x data_dim
  bool binarize = false;

  std::size_t size() const { return samples.rows(); }
  Tensor batch(std::span<const std::size_t> indices, Rng& rng) const;
  /// n rows drawn uniformly with replacement.
  Tensor draw(std::size_t n, Rng& rng) const;
};

/// z ~ q(z) = E_{p_d}[q(z | x)], drawn by picking x then z | x. Returns n x total_latent.
Tensor aggregate_posterior_sample(HierarchicalVae& model, const DataView& data, std::size_t n,
                                  Rng& rng);

/// Per-group aggregate-posterior draw for group k.
struct GroupPosteriorDraw {
  Tensor z_prev;   // n x offset(k)
  Tensor z_k;      // n x d_k, from q(z_k | z_<k, x)
  Tensor context;  // n x context_dim (n x 0 for k = 0)
  Tensor x;        // the data rows the draw was conditioned on
};

GroupPosteriorDraw aggregate_posterior_sample_group(HierarchicalVae& model, const DataView& data,
                                                    std::size_t k, std::size_t n, Rng& rng);

}  // namespace ncp
