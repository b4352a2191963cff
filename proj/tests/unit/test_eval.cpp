#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "ncp/error.hpp"
#include "ncp/eval.hpp"
#include "ncp/quadrature.hpp"
#include "test_support.hpp"

namespace ncp {
namespace {

BaseSampler standard_normal() {
  return [](std::size_t n, Rng& rng) { return rng.normal_tensor(n, 1); };
}

TEST(LogZ, UnitRatioGivesZero) {
  Rng rng(1);
  LogRatioFn zero = [](const Tensor& z) { return std::vector<double>(z.rows(), 0.0); };
  auto est = estimate_log_z(zero, standard_normal(), 100, 5, rng);
  EXPECT_EQ(est.value, 0.0);
  EXPECT_EQ(est.std, 0.0);
  EXPECT_EQ(est.n_samples, 100u);
  EXPECT_EQ(est.repetitions, 5u);
}

TEST(LogZ, GaussianMomentGenerator) {
  // E_{N(0,1)}[e^z] = e^{1/2}.
  Rng rng(2);
  LogRatioFn lin = [](const Tensor& z) { return std::vector<double>(z.data().begin(), z.data().end()); };
  auto est = estimate_log_z(lin, standard_normal(), 10000, 20, rng);
  EXPECT_NEAR(est.value, 0.5, 0.05);
  EXPECT_GT(est.std, 0.0);
}

TEST(LogZ, SpreadShrinksAsInverseRootN) {
  Rng rng(3);
  LogRatioFn half = [](const Tensor& z) {
    std::vector<double> out(z.rows());
    for (std::size_t i = 0; i < z.rows(); ++i) out[i] = 0.5 * z[i];
    return out;
  };
  const double s_small = estimate_log_z(half, standard_normal(), 500, 60, rng).std;
  const double s_large = estimate_log_z(half, standard_normal(), 8000, 60, rng).std;
  EXPECT_NEAR(s_small / s_large, 4.0, 1.2);
}

TEST(LogZ, RejectsBadInput) {
  Rng rng(4);
  LogRatioFn zero = [](const Tensor& z) { return std::vector<double>(z.rows(), 0.0); };
  EXPECT_THROW(estimate_log_z(zero, standard_normal(), 0, 5, rng), ConfigError);
  EXPECT_THROW(estimate_log_z(zero, standard_normal(), 5, 0, rng), ConfigError);
  LogRatioFn short_fn = [](const Tensor&) { return std::vector<double>(1, 0.0); };
  EXPECT_THROW(estimate_log_z(short_fn, standard_normal(), 5, 1, rng), ShapeError);
  LogRatioFn dead = [](const Tensor& z) {
    return std::vector<double>(z.rows(), -std::numeric_limits<double>::infinity());
  };
  EXPECT_THROW(estimate_log_z(dead, standard_normal(), 5, 1, rng), NumericError);
}

// ---------------------------------------------------------------------------

using LinearModel = testing::LinearGaussianVae;

NcpModel wrap(const HierarchicalVae& vae, double logit_bias, std::optional<double> log_z) {
  NcpModel m;
  m.vae = vae;
  m.classifiers.emplace_back(0, 1, 0, std::vector<std::size_t>{4, 4, 4});
  m.classifiers[0].zero();
  m.classifiers[0].parameters().back().tensor->data()[0] = logit_bias;
  if (log_z) m.log_z = LogZEstimate{*log_z, 0.0, 1, 1, {*log_z}};
  return m;
}

TEST(IwNll, MatchesClosedFormMarginal) {
  LinearModel lm;
  Tensor x = Tensor::from_rows({{-1.0}, {0.25}, {2.0}});
  Rng rng(5);
  auto res = iw_nll_base(x, lm.vae, 10000, rng);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(res.per_datapoint[i], lm.exact_nll(x[i]), 0.01);
}

TEST(IwNll, MoreSamplesTightenTheBound) {
  LinearModel lm;
  Rng data_rng(6);
  Tensor x = data_rng.normal_tensor(200, 1);
  Rng a(7), b(7);
  const double one = iw_nll_base(x, lm.vae, 1, a).mean;
  const double hundred = iw_nll_base(x, lm.vae, 100, b).mean;
  double exact = 0.0;
  for (std::size_t i = 0; i < 200; ++i) exact += lm.exact_nll(x[i]) / 200.0;
  EXPECT_GT(one, hundred);
  EXPECT_GT(hundred, exact - 0.01);
}

TEST(IwNll, UnitRatioNcpIsBitIdenticalToBase) {
  LinearModel lm;
  auto m = wrap(lm.vae, 0.0, 0.0);
  Tensor x = Tensor::from_rows({{-0.4}, {1.1}});
  Rng a(8), b(8);
  auto ncp = iw_nll(x, m, 50, a);
  auto base = iw_nll_base(x, lm.vae, 50, b);
  EXPECT_EQ(ncp.per_datapoint, base.per_datapoint);
  EXPECT_EQ(ncp.mean, base.mean);
}

TEST(IwNll, ConstantRatioCancelsAgainstItsNormalizer) {
  LinearModel lm;
  auto m = wrap(lm.vae, 1.7, std::nullopt);
  Rng zr(9);
  m.log_z = estimate_log_z(m, 100, 3, zr);
  EXPECT_NEAR(m.log_z->value, 1.7, 1e-12);
  Tensor x = Tensor::from_rows({{0.3}});
  Rng a(10), b(10);
  EXPECT_NEAR(iw_nll(x, m, 50, a).mean, iw_nll_base(x, lm.vae, 50, b).mean, 1e-12);
}

TEST(IwNll, RequiresNormalizerAndSamples) {
  LinearModel lm;
  auto m = wrap(lm.vae, 0.0, std::nullopt);
  Rng rng(11);
  Tensor x = Tensor::matrix(1, 1);
  EXPECT_THROW(iw_nll(x, m, 10, rng), ConfigError);
  EXPECT_THROW(iw_nll_base(x, lm.vae, 0, rng), ConfigError);
  EXPECT_THROW(iw_nll_base(Tensor::matrix(1, 2), lm.vae, 5, rng), ShapeError);
}

TEST(IwNll, StandardErrorOfRows) {
  LinearModel lm;
  Rng data_rng(12);
  Tensor x = data_rng.normal_tensor(30, 1);
  Rng rng(13);
  auto res = iw_nll_base(x, lm.vae, 5, rng);
  EXPECT_NEAR(res.std_error, testing::sample_var(res.per_datapoint) > 0
                                 ? std::sqrt(testing::sample_var(res.per_datapoint) / 30.0)
                                 : 0.0,
              1e-12);
}

// ---------------------------------------------------------------------------

Tensor ring_points(std::size_t n, std::uint64_t seed, const std::vector<std::size_t>& modes) {
  Rng rng(seed);
  Tensor out = Tensor::matrix(n, 2);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t k = modes[i % modes.size()];
    const double a = 2.0 * std::numbers::pi * static_cast<double>(k) / 8.0;
    out.at(i, 0) = 2.0 * std::cos(a) + 0.1 * rng.normal();
    out.at(i, 1) = 2.0 * std::sin(a) + 0.1 * rng.normal();
  }
  return out;
}

ModeSpec ring_modes() {
  ModeSpec m;
  for (int k = 0; k < 8; ++k) {
    const double a = 2.0 * std::numbers::pi * k / 8.0;
    m.means.push_back({2.0 * std::cos(a), 2.0 * std::sin(a)});
  }
  m.sigma = 0.1;
  return m;
}

const std::vector<std::size_t> kAllModes{0, 1, 2, 3, 4, 5, 6, 7};

TEST(Quality2d, IdenticalSetsHaveZeroKl) {
  Tensor pts = ring_points(2000, 1, kAllModes);
  auto modes = ring_modes();
  auto q = quality_2d(pts, pts, GridSpec{}, &modes);
  EXPECT_EQ(q.hist_kl, 0.0);
  EXPECT_EQ(q.mode_coverage, 8u);
  EXPECT_EQ(q.modes, 8u);
}

TEST(Quality2d, InvariantToSampleOrder) {
  Tensor s = ring_points(1500, 2, kAllModes), h = ring_points(3000, 3, kAllModes);
  std::vector<std::size_t> idx(s.rows());
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), std::mt19937_64(4));
  auto modes = ring_modes();
  auto a = quality_2d(s, h, GridSpec{}, &modes);
  auto b = quality_2d(gather_rows(s, idx), h, GridSpec{}, &modes);
  EXPECT_EQ(a.hist_kl, b.hist_kl);
  EXPECT_EQ(a.mode_coverage, b.mode_coverage);
}

TEST(Quality2d, SingleModeCoversOne) {
  auto modes = ring_modes();
  auto q = quality_2d(ring_points(500, 5, {3}), ring_points(4000, 6, kAllModes), GridSpec{}, &modes);
  EXPECT_EQ(q.mode_coverage, 1u);
  EXPECT_GT(q.hist_kl, 1.0);
}

TEST(Quality2d, HalfTheModesCoversFour) {
  auto modes = ring_modes();
  auto q = quality_2d(ring_points(800, 7, {0, 2, 4, 6}), ring_points(4000, 8, kAllModes), GridSpec{},
                      &modes);
  EXPECT_EQ(q.mode_coverage, 4u);
}

TEST(Quality2d, HistogramKlClosedForm) {
  // Held-out mass in one bin, samples split evenly across two bins.
  GridSpec g{0.0, 4.0, 4};
  Tensor held = Tensor::from_rows({{0.5, 0.5}, {0.5, 0.5}});
  Tensor samp = Tensor::from_rows({{0.5, 0.5}, {3.5, 3.5}});
  auto q = quality_2d(samp, held, g);
  const double e = kHistogramPseudocount, norm = 1.0 + 16.0 * e;
  const double pd_hit = (1.0 + e) / norm, pd_miss = e / norm;
  const double ps_half = (0.5 + e) / norm, ps_miss = e / norm;
  // Bins: one shared, one sample-only, fourteen empty in both.
  const double expect = pd_hit * std::log(pd_hit / ps_half) + pd_miss * std::log(pd_miss / ps_half);
  (void)ps_miss;
  EXPECT_NEAR(q.hist_kl, expect, 1e-12);
  EXPECT_NEAR(q.hist_kl, std::log(2.0), 1e-4);
}

TEST(Quality2d, OutOfGridPointsLandInEdgeBins) {
  GridSpec g{-1.0, 1.0, 2};
  Tensor far = Tensor::from_rows({{50.0, -50.0}});
  Tensor edge = Tensor::from_rows({{0.9, -0.9}});
  EXPECT_EQ(quality_2d(far, edge, g).hist_kl, 0.0);
}

TEST(Quality2d, UnitWeightsMatchUnweighted) {
  Tensor s = ring_points(600, 9, kAllModes), h = ring_points(1200, 10, kAllModes);
  auto modes = ring_modes();
  std::vector<double> ones(600, 1.0);
  auto a = quality_2d(s, h, GridSpec{}, &modes);
  auto b = quality_2d(s, h, GridSpec{}, &modes, ones);
  EXPECT_EQ(a.hist_kl, b.hist_kl);
  EXPECT_EQ(a.mode_coverage, b.mode_coverage);
  // Zero weight drops a sample entirely.
  std::vector<double> w(600, 1.0);
  for (std::size_t i = 300; i < 600; ++i) w[i] = 0.0;
  std::vector<std::size_t> first(300);
  std::iota(first.begin(), first.end(), 0);
  EXPECT_EQ(quality_2d(s, h, GridSpec{}, &modes, w).hist_kl,
            quality_2d(gather_rows(s, first), h, GridSpec{}, &modes).hist_kl);
}

TEST(Quality2d, RejectsBadInput) {
  Tensor p = Tensor::matrix(3, 2);
  EXPECT_THROW(quality_2d(Tensor::matrix(3, 3), p, GridSpec{}), ShapeError);
  EXPECT_THROW(quality_2d(Tensor::matrix(0, 2), p, GridSpec{}), ShapeError);
  EXPECT_THROW(quality_2d(p, p, GridSpec{1.0, 0.0, 5}), ConfigError);
  std::vector<double> neg{1.0, -1.0, 1.0};
  EXPECT_THROW(quality_2d(p, p, GridSpec{}, nullptr, neg), NumericError);
  std::vector<double> two{1.0, 1.0};
  EXPECT_THROW(quality_2d(p, p, GridSpec{}, nullptr, two), ShapeError);
}

// ---------------------------------------------------------------------------

std::vector<double> std_normal_logpdf(const Tensor& z) {
  std::vector<double> out(z.rows());
  for (std::size_t i = 0; i < z.rows(); ++i) {
    double s = 0.0;
    for (double v : z.row_span(i)) s += -0.5 * v * v - 0.5 * std::log(2.0 * std::numbers::pi);
    out[i] = s;
  }
  return out;
}

TEST(GridQuadrature, StandardNormalMoments) {
  GridQuadrature q({{-8.0, 8.0}}, 4096);
  EXPECT_NEAR(q.mass(std_normal_logpdf), 1.0, 1e-6);
  EXPECT_NEAR(q.expectation(std_normal_logpdf, [](std::span<const double> z) { return z[0] * z[0]; }),
              1.0, 1e-6);
}

TEST(GridQuadrature, TwoDimensionalMixtureMass) {
  GridQuadrature q({{-8.0, 8.0}, {-8.0, 8.0}}, 801);
  auto mix = [](const Tensor& z) {
    std::vector<double> out(z.rows());
    for (std::size_t i = 0; i < z.rows(); ++i) {
      const double x = z.at(i, 0), y = z.at(i, 1);
      const double a = std::exp(-0.5 * ((x - 1) * (x - 1) + y * y) / 0.25) / (2 * std::numbers::pi * 0.25);
      const double b = std::exp(-0.5 * (x * x + (y + 2) * (y + 2))) / (2 * std::numbers::pi);
      out[i] = std::log(0.3 * a + 0.7 * b);
    }
    return out;
  };
  EXPECT_NEAR(q.mass(mix), 1.0, 1e-6);
}

TEST(GridQuadrature, LogIntegralAgreesWithIntegral) {
  GridQuadrature q({{0.0, 2.0}}, 101);
  std::vector<double> f(q.size()), lf(q.size());
  for (std::size_t i = 0; i < q.size(); ++i) {
    f[i] = std::exp(q.nodes()[i]);
    lf[i] = q.nodes()[i];
  }
  EXPECT_NEAR(std::exp(q.log_integral(lf)), q.integral(f), 1e-12);
  EXPECT_NEAR(q.integral(f), std::exp(2.0) - 1.0, 1e-3);
}

TEST(GridQuadrature, TrapezoidExactForLinear) {
  GridQuadrature q({{-1.0, 3.0}}, 7);
  std::vector<double> f(q.size());
  for (std::size_t i = 0; i < q.size(); ++i) f[i] = 2.0 * q.nodes()[i] + 1.0;
  EXPECT_NEAR(q.integral(f), 12.0, 1e-12);
}

}  // namespace
}  // namespace ncp
