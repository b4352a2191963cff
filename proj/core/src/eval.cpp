#include "ncp/eval.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

#include "ncp/error.hpp"
#include "ncp/numeric.hpp"

namespace ncp {

LogZEstimate estimate_log_z(const LogRatioFn& log_r, const BaseSampler& base, std::size_t n,
                            std::size_t repetitions, Rng& rng) {
  if (n < 1) throw ConfigError("log-Z estimation needs n >= 1");
  if (repetitions < 1) throw ConfigError("log-Z estimation needs at least one repetition");
  std::vector<double> pooled;
  pooled.reserve(n * repetitions);
  std::vector<double> per_rep;
  for (std::size_t r = 0; r < repetitions; ++r) {
    Tensor z = base(n, rng);
    auto lr = log_r(z);
    if (lr.size() != n) throw ShapeError("log-Z: log-ratio count mismatch");
    const double e = log_mean_exp(lr);
    if (e == -std::numeric_limits<double>::infinity()) {
      throw NumericError("log-Z: every log-ratio is -inf");
    }
    per_rep.push_back(e);
    pooled.insert(pooled.end(), lr.begin(), lr.end());
  }
  LogZEstimate out;
  out.value = log_mean_exp(pooled);
  out.std = stddev_of(per_rep);
  out.n_samples = n;
  out.repetitions = repetitions;
  if (!std::isfinite(out.value)) throw NumericError("log-Z estimate is not finite");
  return out;
}

Tensor ncp_log_ratio_groups(NcpModel& model, const Tensor& z) {
  auto& vae = model.vae;
  const auto& spec = vae.spec();
  if (model.classifiers.size() != vae.groups()) throw ShapeError("NcpModel: one classifier per group");
  if (z.cols() != spec.total_latent()) throw ShapeError("log ratio: latent width mismatch");
  const std::size_t n = z.rows();
  Tensor out = Tensor::matrix(n, vae.groups());
  Tape tape;
  for (std::size_t k = 0; k < vae.groups(); ++k) {
    const std::size_t off = spec.offset(k);
    Tensor ctx = k == 0 ? Tensor::matrix(n, 0)
                        : vae.context(tape, k, tape.constant(slice_cols(z, 0, off))).value();
    auto lr = log_reweight(model.classifiers[k], slice_cols(z, off, off + spec.latent_dims[k]), ctx);
    for (std::size_t i = 0; i < n; ++i) out.at(i, k) = lr[i];
  }
  return out;
}

std::vector<double> ncp_log_ratio(NcpModel& model, const Tensor& z) {
  Tensor g = ncp_log_ratio_groups(model, z);
  std::vector<double> out(g.rows(), 0.0);
  for (std::size_t i = 0; i < g.rows(); ++i) {
    for (std::size_t k = 0; k < g.cols(); ++k) out[i] = k == 0 ? g.at(i, k) : out[i] + g.at(i, k);
  }
  return out;
}

LogZEstimate estimate_log_z(NcpModel& model, std::size_t n, std::size_t repetitions, Rng& rng) {
  const std::size_t K = model.vae.groups();
  std::vector<std::vector<double>> per_group(K);
  BaseSampler base = [&model](std::size_t m, Rng& r) { return sample_base_prior(model.vae, m, r); };
  LogRatioFn log_r = [&](const Tensor& z) {
    Tensor g = ncp_log_ratio_groups(model, z);
    std::vector<double> total(g.rows(), 0.0);
    for (std::size_t i = 0; i < g.rows(); ++i) {
      for (std::size_t k = 0; k < K; ++k) {
        per_group[k].push_back(g.at(i, k));
        total[i] = k == 0 ? g.at(i, k) : total[i] + g.at(i, k);
      }
    }
    return total;
  };
  LogZEstimate out = estimate_log_z(log_r, base, n, repetitions, rng);
  for (const auto& g : per_group) out.per_group.push_back(log_mean_exp(g));
  return out;
}

namespace {

using LogPriorFn = std::function<std::vector<double>(const Tensor& z)>;

NllResult iw_nll_impl(const Tensor& x, HierarchicalVae& vae, std::size_t n, Rng& rng,
                      const LogPriorFn& log_prior) {
  if (n < 1) throw ConfigError("iw_nll needs at least one importance sample");
  if (x.cols() != vae.spec().data_dim) throw ShapeError("iw_nll: data width mismatch");
  const std::uint64_t base_seed = rng.engine()();
  const auto& spec = vae.spec();
  NllResult out;
  out.per_datapoint.resize(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    Rng r(base_seed, i);
    Tape tape;
    Var xv = tape.constant(repeat_row(x, i, n));
    Var h = vae.encode_features(tape, xv);
    Var z = tape.constant(Tensor::matrix(n, 0));
    Var log_q;
    for (std::size_t k = 0; k < vae.groups(); ++k) {
      DiagGaussian q = vae.posterior(tape, k, h, z);
      Var zk = reparam_sample(q, tape.constant(r.normal_tensor(n, spec.latent_dims[k])));
      Var lq = gaussian_log_prob(q, zk);
      log_q = k == 0 ? lq : log_q + lq;
      z = k == 0 ? zk : concat_cols(z, zk);
    }
    Var ll = vae.log_likelihood(tape, xv, z);
    auto lp = log_prior(z.value());
    std::vector<double> lw(n);
    for (std::size_t j = 0; j < n; ++j) {
      lw[j] = ll.value()[j] + lp[j] - log_q.value()[j];
    }
    out.per_datapoint[i] = -log_mean_exp(lw);
    if (!std::isfinite(out.per_datapoint[i])) throw NumericError("iw_nll: non-finite bound");
  }
  out.mean = mean_of(out.per_datapoint);
  out.std_error = x.rows() > 1
                      ? stddev_of(out.per_datapoint) / std::sqrt(static_cast<double>(x.rows()))
                      : 0.0;
  return out;
}

}  // namespace

NllResult iw_nll(const Tensor& x, NcpModel& model, std::size_t n_importance, Rng& rng) {
  if (!model.log_z) throw ConfigError("iw_nll needs an NcpModel with a log-Z estimate");
  const double log_z = model.log_z->value;
  return iw_nll_impl(x, model.vae, n_importance, rng, [&model, log_z](const Tensor& z) {
    auto u = ncp_log_unnormalized(model, z);
    for (double& v : u) v -= log_z;
    return u;
  });
}

NllResult iw_nll_base(const Tensor& x, HierarchicalVae& model, std::size_t n_importance,
                      Rng& rng) {
  return iw_nll_impl(x, model, n_importance, rng,
                     [&model](const Tensor& z) { return base_log_prior(model, z); });
}

namespace {

std::size_t bin_of(double v, const GridSpec& g) {
  const double w = (g.hi - g.lo) / static_cast<double>(g.bins);
  const double b = std::floor((v - g.lo) / w);
  if (!(b >= 0.0)) return 0;
  return std::min(static_cast<std::size_t>(b), g.bins - 1);
}

std::vector<double> histogram(const Tensor& pts, const GridSpec& g, std::span<const double> w) {
  std::vector<double> h(g.bins * g.bins, 0.0);
  for (std::size_t i = 0; i < pts.rows(); ++i) {
    const std::size_t b = bin_of(pts.at(i, 0), g) * g.bins + bin_of(pts.at(i, 1), g);
    h[b] += w.empty() ? 1.0 : w[i];
  }
  double total = 0.0;
  for (double v : h) total += v;
  double norm = 0.0;
  for (double& v : h) {
    v = v / total + kHistogramPseudocount;
    norm += v;
  }
  for (double& v : h) v /= norm;
  return h;
}

}  // namespace

QualityReport quality_2d(const Tensor& samples, const Tensor& heldout, const GridSpec& grid,
                         const ModeSpec* modes, std::span<const double> weights) {
  if (samples.rows() == 0 || heldout.rows() == 0) throw ShapeError("quality_2d: empty input");
  if (samples.cols() != 2 || heldout.cols() != 2) throw ShapeError("quality_2d expects 2-d points");
  if (grid.bins < 1 || !(grid.hi > grid.lo)) throw ConfigError("quality_2d: bad grid");
  if (!weights.empty()) {
    if (weights.size() != samples.rows()) throw ShapeError("quality_2d: weight count mismatch");
    double total = 0.0;
    for (double w : weights) {
      if (!(w >= 0.0) || !std::isfinite(w)) throw NumericError("quality_2d: bad weight");
      total += w;
    }
    if (!(total > 0.0)) throw NumericError("quality_2d: weights sum to zero");
  }
  QualityReport out;
  auto pd = histogram(heldout, grid, {});
  auto ps = histogram(samples, grid, weights);
  double kl = 0.0;
  for (std::size_t b = 0; b < pd.size(); ++b) kl += pd[b] * std::log(pd[b] / ps[b]);
  out.hist_kl = std::max(0.0, kl);

  if (modes && !modes->means.empty()) {
    const std::size_t k = modes->means.size();
    out.modes = k;
    std::vector<double> hits(k, 0.0);
    double total = 0.0;
    const double r2 = std::pow(modes->hit_sigmas * modes->sigma, 2);
    for (std::size_t i = 0; i < samples.rows(); ++i) {
      const double w = weights.empty() ? 1.0 : weights[i];
      total += w;
      std::size_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t m = 0; m < k; ++m) {
        const double dx = samples.at(i, 0) - modes->means[m][0];
        const double dy = samples.at(i, 1) - modes->means[m][1];
        const double d = dx * dx + dy * dy;
        if (d < best_d) {
          best_d = d;
          best = m;
        }
      }
      if (best_d <= r2) hits[best] += w;
    }
    // Threshold n / (2k) in units of the (weighted) sample count.
    const double threshold = total / (2.0 * static_cast<double>(k));
    for (double h : hits) out.mode_coverage += h >= threshold ? 1 : 0;
  }
  return out;
}

}  // namespace ncp
