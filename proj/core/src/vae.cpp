#include "ncp/vae.hpp"

#include <cmath>
#include <numbers>

#include "ncp/datasets.hpp"
#include "ncp/error.hpp"

namespace ncp {

namespace {

const double kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

Var empty_cols(Tape& tape, std::size_t rows) { return tape.constant(Tensor::matrix(rows, 0)); }

void check_finite_rows(Var v, const char* what) { v.value().check_finite(what); }

}  // namespace

std::string to_string(Likelihood l) {
  return l == Likelihood::kBernoulli ? "bernoulli" : "normal";
}

Likelihood likelihood_from_string(const std::string& s) {
  if (s == "bernoulli") return Likelihood::kBernoulli;
  if (s == "normal") return Likelihood::kNormal;
  throw ConfigError("unknown likelihood '" + s + "' (expected bernoulli or normal)");
}

std::size_t HierarchySpec::total_latent() const {
  std::size_t n = 0;
  for (auto d : latent_dims) n += d;
  return n;
}

std::size_t HierarchySpec::offset(std::size_t k) const {
  std::size_t n = 0;
  for (std::size_t j = 0; j < k; ++j) n += latent_dims.at(j);
  return n;
}

void HierarchySpec::validate() const {
  if (latent_dims.empty()) throw ConfigError("hierarchy needs at least one latent group");
  if (data_dim == 0) throw ConfigError("data_dim must be positive");
  for (auto d : latent_dims)
    if (d == 0) throw ConfigError("latent group dimensions must be positive");
  if (groups() > 1 && context_dim == 0) throw ConfigError("context_dim must be positive for K > 1");
  if (encoder_hidden.empty()) throw ConfigError("encoder needs at least one hidden layer");
  for (auto h : encoder_hidden)
    if (h == 0) throw ConfigError("encoder widths must be positive");
  for (auto h : decoder_hidden)
    if (h == 0) throw ConfigError("decoder widths must be positive");
  for (auto h : prior_hidden)
    if (h == 0) throw ConfigError("prior widths must be positive");
}

DiagGaussian DiagGaussian::from_raw(Var mu, Var raw_log_sigma) {
  return DiagGaussian{mu, clamp(raw_log_sigma, kLogSigmaMin, kLogSigmaMax)};
}

Var kl_diag_gaussian(const DiagGaussian& q, const DiagGaussian& p) {
  if (q.dim() != p.dim() || q.log_sigma.cols() != p.log_sigma.cols()) {
    throw ShapeError("kl_diag_gaussian: dimension mismatch " + std::to_string(q.dim()) + " vs " +
                     std::to_string(p.dim()));
  }
  Var var_q = exp(2.0 * q.log_sigma);
  Var inv_var_p = exp(-2.0 * p.log_sigma);
  Var term = p.log_sigma - q.log_sigma + 0.5 * ((var_q + square(q.mu - p.mu)) * inv_var_p) - 0.5;
  return sum_cols(term);
}

Var reparam_sample(const DiagGaussian& g, Var eps) {
  if (eps.cols() != g.dim()) {
    throw ShapeError("reparam_sample: noise width " + std::to_string(eps.cols()) +
                     " vs distribution dimension " + std::to_string(g.dim()));
  }
  return g.mu + exp(g.log_sigma) * eps;
}

Var gaussian_log_prob(const DiagGaussian& g, Var z) {
  if (z.cols() != g.dim()) throw ShapeError("gaussian_log_prob: dimension mismatch");
  Var quad = square(z - g.mu) * exp(-2.0 * g.log_sigma);
  return sum_cols(-0.5 * quad - g.log_sigma - kHalfLog2Pi);
}

// ---------------------------------------------------------------------------

HierarchicalVae::HierarchicalVae(HierarchySpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  const std::size_t K = spec_.groups();
  std::vector<std::size_t> trunk_hidden(spec_.encoder_hidden.begin(), spec_.encoder_hidden.end() - 1);
  const std::size_t feat = spec_.encoder_hidden.back();
  encoder_trunk_ = Mlp(spec_.data_dim, trunk_hidden, feat, Activation::kSwish, true);
  for (std::size_t k = 0; k < K; ++k) {
    const std::size_t d = spec_.latent_dims[k];
    if (k == 0) {
      posterior_heads_.emplace_back(feat, std::vector<std::size_t>{}, 2 * d);
    } else {
      posterior_heads_.emplace_back(feat + spec_.offset(k), std::vector<std::size_t>{feat}, 2 * d);
      context_nets_.emplace_back(spec_.offset(k), spec_.prior_hidden, spec_.context_dim,
                                 Activation::kSwish, true);
      prior_heads_.emplace_back(spec_.context_dim, 2 * d);
    }
  }
  prior0_mu_ = Tensor::matrix(1, spec_.latent_dims[0]);
  prior0_log_sigma_ = Tensor::matrix(1, spec_.latent_dims[0]);
  decoder_ = Mlp(spec_.total_latent(), spec_.decoder_hidden, spec_.data_dim);
  decoder_log_sigma_ = Tensor::matrix(1, spec_.data_dim);
  set_trainable(true);
}

void HierarchicalVae::init(Rng& rng) {
  encoder_trunk_.init(rng);
  for (auto& h : posterior_heads_) h.init(rng, 0.5);
  for (auto& c : context_nets_) c.init(rng);
  for (auto& h : prior_heads_) h.init(rng, 0.5);
  decoder_.init(rng);
  for (double& v : prior0_mu_.data()) v = 0.0;
  for (double& v : prior0_log_sigma_.data()) v = 0.0;
  for (double& v : decoder_log_sigma_.data()) v = 0.0;
}

Var HierarchicalVae::encode_features(Tape& tape, Var x) {
  if (x.cols() != spec_.data_dim) {
    throw ShapeError("encoder input width " + std::to_string(x.cols()) + ", expected " +
                     std::to_string(spec_.data_dim));
  }
  return encoder_trunk_.forward(tape, x);
}

DiagGaussian HierarchicalVae::posterior(Tape& tape, std::size_t k, Var features, Var z_prev) {
  const std::size_t d = spec_.latent_dims.at(k);
  Var in = k == 0 ? features : concat_cols(features, z_prev);
  Var out = posterior_heads_[k].forward(tape, in);
  return DiagGaussian::from_raw(slice_cols(out, 0, d), slice_cols(out, d, 2 * d));
}

Var HierarchicalVae::context(Tape& tape, std::size_t k, Var z_prev) {
  if (k == 0 || k >= groups()) throw ShapeError("context(k) defined for 1 <= k < K");
  if (z_prev.cols() != spec_.offset(k)) {
    throw ShapeError("context: z_<k width " + std::to_string(z_prev.cols()) + ", expected " +
                     std::to_string(spec_.offset(k)));
  }
  return context_nets_[k - 1].forward(tape, z_prev);
}

DiagGaussian HierarchicalVae::prior(Tape& tape, std::size_t k, Var context) {
  if (k == 0) {
    return DiagGaussian::from_raw(tape.param(prior0_mu_), tape.param(prior0_log_sigma_));
  }
  const std::size_t d = spec_.latent_dims.at(k);
  Var out = prior_heads_[k - 1].forward(tape, context);
  return DiagGaussian::from_raw(slice_cols(out, 0, d), slice_cols(out, d, 2 * d));
}

Var HierarchicalVae::decode(Tape& tape, Var z) {
  if (z.cols() != spec_.total_latent()) throw ShapeError("decode: latent width mismatch");
  return decoder_.forward(tape, z);
}

Var HierarchicalVae::decoder_log_sigma(Tape& tape) {
  return clamp(tape.param(decoder_log_sigma_), kLogSigmaMin, kLogSigmaMax);
}

Var HierarchicalVae::log_likelihood(Tape& tape, Var x, Var z) {
  Var out = decode(tape, z);
  if (spec_.likelihood == Likelihood::kBernoulli) {
    return sum_cols(x * out - softplus(out));
  }
  return gaussian_log_prob(DiagGaussian{out, decoder_log_sigma(tape)}, x);
}

std::vector<NamedParam> HierarchicalVae::encoder_parameters() {
  std::vector<NamedParam> out;
  encoder_trunk_.collect("enc.trunk", out);
  for (std::size_t k = 0; k < posterior_heads_.size(); ++k) {
    posterior_heads_[k].collect("enc.head" + std::to_string(k), out);
  }
  return out;
}

std::vector<NamedParam> HierarchicalVae::decoder_parameters() {
  std::vector<NamedParam> out;
  decoder_.collect("dec", out);
  if (spec_.likelihood == Likelihood::kNormal) out.push_back({"dec.log_sigma", &decoder_log_sigma_});
  return out;
}

std::vector<NamedParam> HierarchicalVae::prior_parameters(std::size_t k) {
  std::vector<NamedParam> out;
  if (k == 0) {
    out.push_back({"prior0.mu", &prior0_mu_});
    out.push_back({"prior0.log_sigma", &prior0_log_sigma_});
    return out;
  }
  context_nets_.at(k - 1).collect("prior" + std::to_string(k) + ".ctx", out);
  auto& head = prior_heads_.at(k - 1);
  out.push_back({"prior" + std::to_string(k) + ".head.w", &head.weight});
  out.push_back({"prior" + std::to_string(k) + ".head.b", &head.bias});
  return out;
}

std::vector<NamedParam> HierarchicalVae::prior_parameters() {
  std::vector<NamedParam> out;
  for (std::size_t k = 0; k < groups(); ++k) {
    auto part = prior_parameters(k);
    out.insert(out.end(), part.begin(), part.end());
  }
  return out;
}

std::vector<NamedParam> HierarchicalVae::parameters() {
  auto out = encoder_parameters();
  auto p = prior_parameters();
  auto d = decoder_parameters();
  out.insert(out.end(), p.begin(), p.end());
  out.insert(out.end(), d.begin(), d.end());
  return out;
}

void HierarchicalVae::set_trainable(bool flag) {
  auto params = parameters();
  set_requires_grad(params, flag);
  // The Normal log-sigma is unused (and frozen) for Bernoulli models.
  if (spec_.likelihood == Likelihood::kBernoulli) decoder_log_sigma_.set_requires_grad(false);
}

// ---------------------------------------------------------------------------

Var ElboTerms::loss(double kl_weight) const {
  return -(recon - kl_weight * kl_total);
}

std::vector<Tensor> draw_group_noise(const HierarchySpec& spec, std::size_t batch, Rng& rng) {
  std::vector<Tensor> eps;
  eps.reserve(spec.groups());
  for (auto d : spec.latent_dims) eps.push_back(rng.normal_tensor(batch, d));
  return eps;
}

ElboTerms hvae_elbo(Tape& tape, HierarchicalVae& model, Var x, std::span<const Tensor> eps) {
  const std::size_t K = model.groups();
  if (eps.size() != K) throw ShapeError("hvae_elbo: one noise block per group required");
  const std::size_t B = x.rows();
  ElboTerms t;
  Var h = model.encode_features(tape, x);
  Var z_prev = empty_cols(tape, B);
  Var kl_rows;
  for (std::size_t k = 0; k < K; ++k) {
    DiagGaussian q = model.posterior(tape, k, h, z_prev);
    DiagGaussian p;
    if (k == 0) {
      p = model.prior(tape, 0, Var{});
    } else {
      Var c = model.context(tape, k, z_prev);
      t.contexts.push_back(c);
      p = model.prior(tape, k, c);
    }
    Var kl_k = kl_diag_gaussian(q, p);
    check_finite_rows(kl_k, "KL term");
    t.kl.push_back(mean(kl_k));
    kl_rows = k == 0 ? kl_k : kl_rows + kl_k;
    Var z_k = reparam_sample(q, tape.constant(eps[k]));
    z_prev = k == 0 ? z_k : concat_cols(z_prev, z_k);
  }
  Var recon_rows = model.log_likelihood(tape, x, z_prev);
  check_finite_rows(recon_rows, "log-likelihood");
  t.z = z_prev;
  t.recon = mean(recon_rows);
  t.kl_total = mean(kl_rows);
  t.elbo = mean(recon_rows - kl_rows);
  return t;
}

ElboTerms hvae_elbo(Tape& tape, HierarchicalVae& model, Var x, Rng& rng) {
  auto eps = draw_group_noise(model.spec(), x.rows(), rng);
  return hvae_elbo(tape, model, x, eps);
}

ElboTerms elbo(Tape& tape, HierarchicalVae& model, Var x, const Tensor& eps) {
  if (model.groups() != 1) {
    throw ShapeError("elbo() requires a single-group model; use hvae_elbo for K = " +
                     std::to_string(model.groups()));
  }
  ElboTerms t;
  Var h = model.encode_features(tape, x);
  DiagGaussian q = model.posterior(tape, 0, h, Var{});
  DiagGaussian p = model.prior(tape, 0, Var{});
  Var kl_rows = kl_diag_gaussian(q, p);
  check_finite_rows(kl_rows, "KL term");
  Var z = reparam_sample(q, tape.constant(eps));
  Var recon_rows = model.log_likelihood(tape, x, z);
  check_finite_rows(recon_rows, "log-likelihood");
  t.z = z;
  t.kl.push_back(mean(kl_rows));
  t.recon = mean(recon_rows);
  t.kl_total = mean(kl_rows);
  t.elbo = mean(recon_rows - kl_rows);
  return t;
}

// ---------------------------------------------------------------------------

Tensor DataView::batch(std::span<const std::size_t> indices, Rng& rng) const {
  Tensor x = gather_rows(samples, indices);
  return binarize ? binarize_dynamic(x, rng) : x;
}

Tensor DataView::draw(std::size_t n, Rng& rng) const {
  if (size() == 0) throw ShapeError("cannot draw from an empty dataset");
  std::vector<std::size_t> idx(n);
  for (auto& i : idx) i = rng.index(size());
  return batch(idx, rng);
}

Tensor aggregate_posterior_sample(HierarchicalVae& model, const DataView& data, std::size_t n,
                                  Rng& rng) {
  const std::size_t K = model.groups();
  Tensor x = data.draw(n, rng);
  Tape tape;
  Var xv = tape.constant(x);
  Var h = model.encode_features(tape, xv);
  Var z_prev = empty_cols(tape, n);
  for (std::size_t k = 0; k < K; ++k) {
    DiagGaussian q = model.posterior(tape, k, h, z_prev);
    Var z_k = reparam_sample(q, tape.constant(rng.normal_tensor(n, model.spec().latent_dims[k])));
    z_prev = k == 0 ? z_k : concat_cols(z_prev, z_k);
  }
  return z_prev.value();
}

GroupPosteriorDraw aggregate_posterior_sample_group(HierarchicalVae& model, const DataView& data,
                                                    std::size_t k, std::size_t n, Rng& rng) {
  if (k >= model.groups()) throw ShapeError("aggregate_posterior_sample_group: group out of range");
  GroupPosteriorDraw out;
  out.x = data.draw(n, rng);
  Tape tape;
  Var xv = tape.constant(out.x);
  Var h = model.encode_features(tape, xv);
  Var z_prev = empty_cols(tape, n);
  for (std::size_t j = 0; j <= k; ++j) {
    DiagGaussian q = model.posterior(tape, j, h, z_prev);
    Var z_j = reparam_sample(q, tape.constant(rng.normal_tensor(n, model.spec().latent_dims[j])));
    if (j == k) {
      out.z_prev = z_prev.value();
      out.z_k = z_j.value();
      out.context = k == 0 ? Tensor::matrix(n, 0) : model.context(tape, k, z_prev).value();
      break;
    }
    z_prev = j == 0 ? z_j : concat_cols(z_prev, z_j);
  }
  return out;
}

}  // namespace ncp
