#pragma once

#include <span>
#include <vector>

#include "ncp/ncp.hpp"
#include "ncp/random.hpp"
#include "ncp/samplers.hpp"
#include "ncp/tensor.hpp"

namespace ncp {

/// log Z = log E_p[r]. The value pools all n * repetitions draws; `std` is
/// the spread of the per-repetition n-sample estimates.
LogZEstimate estimate_log_z(const LogRatioFn& log_r, const BaseSampler& base, std::size_t n,
                            std::size_t repetitions, Rng& rng);

/// Hierarchical case over full ancestral base-prior chains. `per_group[k]` is
/// the diagnostic log E_p[r_k] from the same chains.
LogZEstimate estimate_log_z(NcpModel& model, std::size_t n, std::size_t repetitions, Rng& rng);

/// sum_k log r(z_k | z_<k) per row.
std::vector<double> ncp_log_ratio(NcpModel& model, const Tensor& z);
/// Same, one column per group (n x K).
Tensor ncp_log_ratio_groups(NcpModel& model, const Tensor& z);

struct NllResult {
  std::vector<double> per_datapoint;
  double mean = 0.0;
  double std_error = 0.0;
};

/// Importance-weighted NLL in nats with z ~ q(z | x) and the NCP prior
/// r(z) p(z) / Z. Throws ConfigError when the model carries no log-Z.
NllResult iw_nll(const Tensor& x, NcpModel& model, std::size_t n_importance, Rng& rng);
/// The same bound under the base prior p(z).
NllResult iw_nll_base(const Tensor& x, HierarchicalVae& model, std::size_t n_importance, Rng& rng);

/// Square histogram grid over [lo, hi]^2.
struct GridSpec {
  double lo = -3.0;
  double hi = 3.0;
  std::size_t bins = 30;
};

struct ModeSpec {
  std::vector<std::vector<double>> means;
  double sigma = 0.1;
  /// A sample hits its nearest mode when closer than this many sigmas.
  double hit_sigmas = 3.0;
};

struct QualityReport {
  double hist_kl = 0.0;
  std::size_t mode_coverage = 0;
  std::size_t modes = 0;
  std::vector<double> ess_means;
};

inline constexpr double kHistogramPseudocount = 1e-6;

/// Histogram KL(heldout || samples) plus mode coverage. Points outside the
/// grid fall into the edge bins. Optional per-sample weights (non-negative)
/// replace unit counts for the sample histogram and the coverage counts.
QualityReport quality_2d(const Tensor& samples, const Tensor& heldout, const GridSpec& grid,
                         const ModeSpec* modes = nullptr, std::span<const double> weights = {});

}  // namespace ncp
