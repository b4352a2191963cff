#include "ncp/samplers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ncp/error.hpp"
#include "ncp/numeric.hpp"

namespace ncp {

namespace {

constexpr std::uint64_t kLdStream = 0x4c440000;

GaussianParams conditional(HierarchicalVae& model, std::size_t k, const Tensor& z_prev,
                           Tensor* context_out) {
  Tape tape;
  DiagGaussian p;
  if (k == 0) {
    p = model.prior(tape, 0, Var{});
    if (context_out) *context_out = Tensor::matrix(z_prev.rows(), 0);
  } else {
    Var c = model.context(tape, k, tape.constant(z_prev));
    if (context_out) *context_out = c.value();
    p = model.prior(tape, k, c);
  }
  return {p.mu.value(), p.log_sigma.value()};
}

}  // namespace

void SirConfig::validate() const {
  if (M < 1) throw ConfigError("SIR needs M >= 1");
}

void LdConfig::validate() const {
  if (!(lambda > 0.0) || !std::isfinite(lambda)) throw ConfigError("LD step size must be > 0");
}

void TemperatureSetting::validate() const {
  if (!(t >= 0.0 && t <= 1.0)) throw ConfigError("temperature must lie in [0, 1]");
}

std::size_t resample_index(std::span<const double> log_weights, double u) {
  if (log_weights.empty()) throw ShapeError("resample_index: no weights");
  double m = -std::numeric_limits<double>::infinity();
  for (double v : log_weights) m = std::max(m, v);
  if (m == -std::numeric_limits<double>::infinity()) {
    throw NumericError("all importance weights are zero");
  }
  std::vector<double> cum(log_weights.size());
  double total = 0.0;
  for (std::size_t i = 0; i < log_weights.size(); ++i) {
    total += std::exp(log_weights[i] - m);
    cum[i] = total;
  }
  const double target = u * total;
  // First index whose cumulative weight exceeds the target.
  auto it = std::upper_bound(cum.begin(), cum.end(), target);
  if (it == cum.end()) {
    // u * total rounded up to total: take the last index carrying weight.
    std::size_t i = cum.size() - 1;
    while (i > 0 && cum[i] == cum[i - 1]) --i;
    return i;
  }
  return static_cast<std::size_t>(it - cum.begin());
}

double ess(std::span<const double> log_weights) {
  if (log_weights.empty()) throw ShapeError("ess: no weights");
  double m = -std::numeric_limits<double>::infinity();
  for (double v : log_weights) m = std::max(m, v);
  if (m == -std::numeric_limits<double>::infinity()) {
    throw NumericError("ess: all weights are zero");
  }
  double s = 0.0;
  double s2 = 0.0;
  for (double v : log_weights) {
    const double w = std::exp(v - m);
    s += w;
    s2 += w * w;
  }
  const double e = s * s / s2;
  return std::clamp(e, 1.0, static_cast<double>(log_weights.size()));
}

SirResult sir_sample(const BaseSampler& base, const LogRatioFn& log_r, const SirConfig& cfg,
                     Rng& rng) {
  cfg.validate();
  const double u = rng.uniform();
  Tensor proposals = base(cfg.M, rng);
  if (proposals.rows() != cfg.M) throw ShapeError("SIR base sampler returned the wrong row count");
  SirResult out;
  out.log_weights = log_r(proposals);
  if (out.log_weights.size() != cfg.M) throw ShapeError("SIR log-ratio count mismatch");
  for (double& v : out.log_weights) {
    if (std::isnan(v)) throw NumericError("SIR log-weight is NaN");
    if (v != -std::numeric_limits<double>::infinity()) {
      v = std::clamp(v, -kLogWeightClamp, kLogWeightClamp);
    }
  }
  out.index = resample_index(out.log_weights, u);
  out.ess = ess(out.log_weights);
  out.z = gather_rows(proposals, std::span<const std::size_t>(&out.index, 1));
  return out;
}

Tensor langevin_sample(const EnergyGradFn& grad_energy, const Tensor& z0, const LdConfig& cfg,
                       Rng& rng) {
  cfg.validate();
  z0.check_finite("Langevin initial state");
  Tensor z = z0;
  const double half = 0.5 * cfg.lambda;
  const double noise = std::sqrt(cfg.lambda);
  for (std::size_t t = 0; t < cfg.T; ++t) {
    Tensor g = grad_energy(z);
    if (g.shape() != z.shape()) throw ShapeError("energy gradient shape mismatch");
    for (double v : g.data()) {
      if (!std::isfinite(v)) {
        throw NumericError("non-finite energy gradient at Langevin step " + std::to_string(t));
      }
    }
    for (std::size_t i = 0; i < z.size(); ++i) {
      z[i] = z[i] - half * g[i] + noise * rng.normal();
    }
  }
  return z;
}

DiagGaussian apply_temperature(const DiagGaussian& g, TemperatureSetting t) {
  t.validate();
  if (t.t == 0.0) throw ConfigError("temperature 0 has no density; use t > 0");
  if (t.t == 1.0) return g;
  return {g.mu, g.log_sigma + std::log(t.t)};
}

GaussianParams apply_temperature(const GaussianParams& g, TemperatureSetting t) {
  t.validate();
  GaussianParams out = g;
  if (t.t == 1.0) return out;
  const double shift = t.t == 0.0 ? -std::numeric_limits<double>::infinity() : std::log(t.t);
  for (double& v : out.log_sigma.data()) v += shift;
  return out;
}

Tensor sample_gaussian_rows(const GaussianParams& g, std::size_t rows, Rng& rng) {
  const std::size_t d = g.mu.cols();
  if (g.log_sigma.shape() != g.mu.shape()) throw ShapeError("Gaussian parameter shapes differ");
  const bool broadcast = g.mu.rows() == 1;
  if (!broadcast && g.mu.rows() != rows) throw ShapeError("Gaussian parameter rows mismatch");
  Tensor z = Tensor::matrix(rows, d);
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t src = broadcast ? 0 : r;
    for (std::size_t c = 0; c < d; ++c) {
      const double eps = rng.normal();
      z.at(r, c) = g.mu.at(src, c) + std::exp(g.log_sigma.at(src, c)) * eps;
    }
  }
  return z;
}

std::vector<double> AncestralResult::mean_ess() const {
  std::vector<double> out;
  for (const auto& g : ess) out.push_back(g.empty() ? 0.0 : mean_of(g));
  return out;
}

Tensor sample_base_prior(HierarchicalVae& model, std::size_t n, Rng& rng, TemperatureSetting t) {
  Tensor z = Tensor::matrix(n, 0);
  for (std::size_t k = 0; k < model.groups(); ++k) {
    GaussianParams p = apply_temperature(conditional(model, k, z, nullptr), t);
    Tensor zk = sample_gaussian_rows(p, n, rng);
    z = k == 0 ? zk : concat_cols(z, zk);
  }
  return z;
}

namespace {

AncestralResult ancestral_sir(NcpModel& model, std::size_t n, const AncestralConfig& cfg,
                              std::uint64_t base_seed) {
  auto& vae = model.vae;
  const auto& spec = vae.spec();
  const std::size_t K = vae.groups();
  AncestralResult out;
  out.z = Tensor::matrix(n, spec.total_latent());
  out.ess.assign(K, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(base_seed, i);
    Tensor z_prev = Tensor::matrix(1, 0);
    for (std::size_t k = 0; k < K; ++k) {
      Tensor ctx;
      GaussianParams p = apply_temperature(conditional(vae, k, z_prev, &ctx), cfg.temperature);
      const RatioClassifier& clf = model.classifiers[k];
      BaseSampler base = [&p](std::size_t m, Rng& r) { return sample_gaussian_rows(p, m, r); };
      LogRatioFn log_r = [&clf, &ctx](const Tensor& zk) {
        return log_reweight(clf, zk, repeat_row(ctx, 0, zk.rows()));
      };
      SirResult s = sir_sample(base, log_r, cfg.sir, rng);
      out.ess[k][i] = s.ess;
      z_prev = k == 0 ? s.z : concat_cols(z_prev, s.z);
    }
    std::copy(z_prev.data().begin(), z_prev.data().end(), out.z.row_span(i).begin());
  }
  return out;
}

AncestralResult ancestral_ld(NcpModel& model, std::size_t n, const AncestralConfig& cfg,
                             std::uint64_t base_seed) {
  if (cfg.temperature.t == 0.0) {
    throw ConfigError("Langevin sampling needs a temperature > 0");
  }
  auto& vae = model.vae;
  const std::size_t K = vae.groups();
  AncestralResult out;
  out.ess.assign(K, {});
  Tensor z = Tensor::matrix(n, 0);
  for (std::size_t k = 0; k < K; ++k) {
    Rng rng(base_seed, kLdStream + k);
    Tensor ctx;
    GaussianParams p = apply_temperature(conditional(vae, k, z, &ctx), cfg.temperature);
    RatioClassifier& clf = model.classifiers[k];
    auto params = clf.parameters();
    std::vector<bool> flags;
    for (auto& q : params) flags.push_back(q.tensor->requires_grad());
    set_requires_grad(params, false);
    EnergyGradFn grad = [&](const Tensor& zk) {
      Tape tape;
      Var zv = tape.variable(zk);
      Var logit = clf.logit(tape, zv, tape.constant(ctx));
      DiagGaussian g{tape.constant(p.mu), tape.constant(p.log_sigma)};
      Var energy = -(sum(logit) + sum(gaussian_log_prob(g, zv)));
      tape.backward(energy);
      return tape.grad_tensor(zv);
    };
    Tensor zk;
    try {
      zk = langevin_sample(grad, sample_gaussian_rows(p, n, rng), cfg.ld, rng);
    } catch (...) {
      for (std::size_t j = 0; j < params.size(); ++j) params[j].tensor->set_requires_grad(flags[j]);
      throw;
    }
    for (std::size_t j = 0; j < params.size(); ++j) params[j].tensor->set_requires_grad(flags[j]);
    z = k == 0 ? zk : concat_cols(z, zk);
  }
  out.z = z;
  return out;
}

}  // namespace

AncestralResult ancestral_ncp_sample(NcpModel& model, std::size_t n, const AncestralConfig& cfg,
                                     Rng& rng) {
  if (model.classifiers.size() != model.vae.groups()) {
    throw ShapeError("NcpModel: one classifier per group");
  }
  cfg.temperature.validate();
  const std::uint64_t base_seed = rng.engine()();
  if (cfg.method == SamplerKind::kSir) return ancestral_sir(model, n, cfg, base_seed);
  return ancestral_ld(model, n, cfg, base_seed);
}

Tensor decode_mean(HierarchicalVae& model, const Tensor& z) {
  Tape tape;
  Var out = model.decode(tape, tape.constant(z));
  if (model.spec().likelihood == Likelihood::kBernoulli) return sigmoid(out).value();
  return out.value();
}

}  // namespace ncp
