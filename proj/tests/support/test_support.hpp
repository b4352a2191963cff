#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <numbers>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>

#include "ncp/autodiff.hpp"
#include "ncp/ncp.hpp"
#include "ncp/optim.hpp"
#include "ncp/random.hpp"
#include "ncp/tensor.hpp"
#include "ncp/vae.hpp"

namespace ncp::testing {

/// Largest relative error between tape gradients and central differences for
/// every element of every parameter. `loss` builds a scalar on a fresh tape.
inline double max_grad_rel_error(std::vector<Tensor*> params, const std::function<Var(Tape&)>& loss,
                                 double h = 1e-5) {
  for (auto* p : params) p->zero_grad();
  {
    Tape tape;
    tape.backward(loss(tape));
  }
  auto eval = [&] {
    Tape tape;
    return loss(tape).item();
  };
  double worst = 0.0;
  for (auto* p : params) {
    std::vector<double> analytic(p->grad().begin(), p->grad().end());
    for (std::size_t i = 0; i < p->size(); ++i) {
      const double saved = (*p)[i];
      (*p)[i] = saved + h;
      const double up = eval();
      (*p)[i] = saved - h;
      const double down = eval();
      (*p)[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double denom = std::max({std::abs(numeric), std::abs(analytic[i]), 1e-3});
      worst = std::max(worst, std::abs(numeric - analytic[i]) / denom);
    }
  }
  return worst;
}

/// Upper-tail p-value of Pearson's chi-square statistic.
inline double chi_square_p(const std::vector<double>& observed, const std::vector<double>& expected) {
  double stat = 0.0;
  for (std::size_t i = 0; i < observed.size(); ++i) {
    const double d = observed[i] - expected[i];
    stat += d * d / expected[i];
  }
  boost::math::chi_squared dist(static_cast<double>(observed.size() - 1));
  return boost::math::cdf(boost::math::complement(dist, stat));
}

inline double normal_cdf(double x) { return boost::math::cdf(boost::math::normal(), x); }
inline double normal_quantile(double p) { return boost::math::quantile(boost::math::normal(), p); }

inline double sample_mean(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

inline double sample_var(const std::vector<double>& v) {
  const double m = sample_mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

/// Energy distance between two samples of row vectors.
inline double energy_distance(const Tensor& a, const Tensor& b) {
  auto dist = [](std::span<const double> x, std::span<const double> y) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - y[i]) * (x[i] - y[i]);
    return std::sqrt(s);
  };
  auto mean_dist = [&](const Tensor& x, const Tensor& y) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.rows(); ++i)
      for (std::size_t j = 0; j < y.rows(); ++j) s += dist(x.row_span(i), y.row_span(j));
    return s / static_cast<double>(x.rows() * y.rows());
  };
  return 2.0 * mean_dist(a, b) - mean_dist(a, a) - mean_dist(b, b);
}

/// Permutation p-value for the energy-distance two-sample statistic.
inline double energy_test_p(const Tensor& a, const Tensor& b, std::size_t permutations,
                            std::uint64_t seed) {
  const double observed = energy_distance(a, b);
  const std::size_t n = a.rows() + b.rows();
  const std::size_t d = a.cols();
  Tensor pooled = Tensor::matrix(n, d);
  for (std::size_t i = 0; i < a.rows(); ++i)
    std::copy_n(a.row_span(i).begin(), d, pooled.row_span(i).begin());
  for (std::size_t i = 0; i < b.rows(); ++i)
    std::copy_n(b.row_span(i).begin(), d, pooled.row_span(a.rows() + i).begin());
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 gen(seed);
  std::size_t at_least = 0;
  for (std::size_t p = 0; p < permutations; ++p) {
    std::shuffle(idx.begin(), idx.end(), gen);
    std::vector<std::size_t> ia(idx.begin(), idx.begin() + a.rows());
    std::vector<std::size_t> ib(idx.begin() + a.rows(), idx.end());
    if (energy_distance(gather_rows(pooled, ia), gather_rows(pooled, ib)) >= observed) ++at_least;
  }
  return (static_cast<double>(at_least) + 1.0) / (static_cast<double>(permutations) + 1.0);
}

/// Trains a context-free classifier to separate draws of `q` (label 1) from
/// draws of `p` (label 0) with Adam and a cosine schedule.
inline void train_classifier(RatioClassifier& clf, const std::function<Tensor(std::size_t, Rng&)>& q,
                             const std::function<Tensor(std::size_t, Rng&)>& p, std::size_t steps,
                             std::size_t batch, double lr_init, double lr_final, Rng& rng) {
  auto params = clf.parameters();
  set_requires_grad(params, true);
  Adam adam(params);
  const Tensor none = Tensor::matrix(batch, 0);
  for (std::size_t s = 0; s < steps; ++s) {
    GroupBatch b{q(batch, rng), p(batch, rng), none, none};
    Tape tape;
    Var loss = nce_loss_hier(tape, clf, b);
    adam.zero_grad();
    tape.backward(loss);
    adam.step(cosine_anneal(static_cast<std::int64_t>(s), static_cast<std::int64_t>(steps), lr_init,
                            lr_final));
  }
  set_requires_grad(params, false);
}

inline std::function<Tensor(std::size_t, Rng&)> normal_sampler(double mu, double sigma) {
  return [mu, sigma](std::size_t n, Rng& rng) {
    Tensor t = rng.normal_tensor(n, 1);
    for (double& v : t.data()) v = mu + sigma * v;
    return t;
  };
}

/// With the encoder frozen, the ELBO depends on the prior only through the
/// cross-entropy E_q[-log p(z)]. Returns the largest absolute difference
/// between the prior gradients of -ELBO and of the mean per-group Gaussian
/// cross-entropy, written out independently, on the same z chain.
inline double cross_entropy_grad_check(HierarchicalVae& m, const Tensor& x, const std::vector<Tensor>& eps) {
  m.set_trainable(false);
  auto prior = m.prior_parameters();
  set_requires_grad(prior, true);

  zero_grads(prior);
  {
    Tape t;
    t.backward(-hvae_elbo(t, m, t.constant(x), eps).elbo);
  }
  std::vector<std::vector<double>> g_elbo;
  for (auto& p : prior) g_elbo.emplace_back(p.tensor->grad().begin(), p.tensor->grad().end());

  // mean over the batch of sum_k CE(q(z_k|z_<k,x), p(z_k|z_<k)), on the same z chain.
  zero_grads(prior);
  {
    Tape t;
    const std::size_t B = x.rows();
    Var h = m.encode_features(t, t.constant(x));
    Var z_prev = t.constant(Tensor::matrix(B, 0));
    Var total;
    for (std::size_t k = 0; k < m.groups(); ++k) {
      auto q = m.posterior(t, k, h, z_prev);
      Tensor qm = q.mu.value(), qs = q.log_sigma.value();
      DiagGaussian p = k == 0 ? m.prior(t, 0, Var{}) : m.prior(t, k, m.context(t, k, z_prev));
      // CE = sum_d [log sp + 0.5 log 2pi + (sq^2 + (mq - mp)^2) / (2 sp^2)]
      Var var_q = t.constant([&] {
        Tensor v = qs;
        for (double& e : v.data()) e = std::exp(2.0 * e);
        return v;
      }());
      Var ce = sum_cols(p.log_sigma + 0.5 * std::log(2.0 * std::numbers::pi) +
                        0.5 * (var_q + square(t.constant(qm) - p.mu)) * exp(-2.0 * p.log_sigma));
      total = k == 0 ? ce : total + ce;
      Tensor zk = qm;
      for (std::size_t i = 0; i < zk.size(); ++i) zk[i] = qm[i] + std::exp(qs[i]) * eps[k][i];
      Var zkv = t.constant(zk);
      z_prev = k == 0 ? zkv : concat_cols(z_prev, zkv);
    }
    t.backward(mean(total));
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < prior.size(); ++i) {
    auto g = prior[i].tensor->grad();
    for (std::size_t j = 0; j < g.size(); ++j) worst = std::max(worst, std::abs(g_elbo[i][j] - g[j]));
  }
  return worst;
}

/// One-dimensional linear-Gaussian VAE with a closed-form marginal:
///   z ~ N(m0, s0^2), x | z ~ N(w z + b, sx^2)  =>  x ~ N(w m0 + b, w^2 s0^2 + sx^2).
/// The encoder proposes N(mean of p(z | x), (1.3 sd of p(z | x))^2): its trunk
/// swish(x + 20) is linear to ~1e-7 over the test inputs.
struct LinearGaussianVae {
  double m0 = 0.3, s0 = 0.8, w = 1.5, b = -0.2, sx = 0.7;
  HierarchicalVae vae;

  LinearGaussianVae() {
    HierarchySpec s;
    s.data_dim = 1;
    s.latent_dims = {1};
    s.context_dim = 2;
    s.encoder_hidden = {1};
    s.decoder_hidden = {};
    vae = HierarchicalVae(s);
    Rng rng(1);
    vae.init(rng);
    vae.encoder_trunk().layers()[0].weight = Tensor::matrix(1, 1, 1.0);
    vae.encoder_trunk().layers()[0].bias = Tensor::matrix(1, 1, 20.0);
    const double prec = 1.0 / (s0 * s0) + w * w / (sx * sx);
    const double slope = w / (sx * sx) / prec;
    const double intercept = (m0 / (s0 * s0) - w * b / (sx * sx)) / prec;
    auto& head = vae.posterior_heads()[0].layers()[0];
    head.weight = Tensor::from_rows({{slope, 0.0}});
    head.bias = Tensor::from_rows({{intercept - 20.0 * slope, std::log(1.3 / std::sqrt(prec))}});
    vae.prior0_mu() = Tensor::matrix(1, 1, m0);
    vae.prior0_log_sigma() = Tensor::matrix(1, 1, std::log(s0));
    for (auto& p : vae.decoder_parameters()) {
      if (p.name == "dec.l0.w") *p.tensor = Tensor::matrix(1, 1, w);
      if (p.name == "dec.l0.b") *p.tensor = Tensor::matrix(1, 1, b);
      if (p.name == "dec.log_sigma") *p.tensor = Tensor::matrix(1, 1, std::log(sx));
    }
  }

  double exact_nll(double x) const {
    const double var = w * w * s0 * s0 + sx * sx;
    const double d = x - (w * m0 + b);
    return 0.5 * d * d / var + 0.5 * std::log(2.0 * std::numbers::pi * var);
  }
};

/// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("ncp_" + tag + "_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace ncp::testing
