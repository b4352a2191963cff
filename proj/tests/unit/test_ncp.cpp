#include <cmath>
#include <numbers>
#include <set>
#include <sstream>

#include <boost/multiprecision/cpp_bin_float.hpp>
#include <gtest/gtest.h>

#include "ncp/error.hpp"
#include "ncp/eval.hpp"
#include "ncp/ncp.hpp"
#include "ncp/quadrature.hpp"
#include "ncp/stage2.hpp"
#include "test_support.hpp"

namespace ncp {
namespace {

using Big = boost::multiprecision::number<boost::multiprecision::cpp_bin_float<256>>;
const double kTwoLn2 = 2.0 * std::numbers::ln2;

double normal_logpdf(double x, double mu, double sigma) {
  const double u = (x - mu) / sigma;
  return -0.5 * u * u - std::log(sigma) - 0.5 * std::log(2.0 * std::numbers::pi);
}

Tensor& named(HierarchicalVae& m, const std::string& name) {
  for (auto& p : m.parameters())
    if (p.name == name) return *p.tensor;
  throw std::runtime_error("no parameter " + name);
}

TEST(NceLoss, UninformativeClassifier) {
  std::vector<double> zq(7, 0.0), zp(5, 0.0);
  EXPECT_NEAR(nce_loss(zq, zp), kTwoLn2, 1e-15);
}

TEST(NceLoss, PerfectSeparation) {
  std::vector<double> q(10, 40.0), p(10, -40.0);
  EXPECT_LT(nce_loss(q, p), 1e-12);
}

TEST(NceLoss, MatchesHighPrecisionOracle) {
  Rng rng(3);
  std::vector<double> q(64), p(48);
  for (double& v : q) v = 8.0 * rng.normal();
  for (double& v : p) v = 8.0 * rng.normal();
  // -mean log sigma(lq) - mean log(1 - sigma(lp)), directly in 256-bit arithmetic.
  Big a = 0, b = 0;
  for (double l : q) a -= boost::multiprecision::log(1 / (1 + boost::multiprecision::exp(-Big(l))));
  for (double l : p) b -= boost::multiprecision::log(1 - 1 / (1 + boost::multiprecision::exp(-Big(l))));
  const double oracle = static_cast<double>(a / Big(64) + b / Big(48));
  EXPECT_NEAR(nce_loss(q, p), oracle, 1e-10);
}

TEST(NceLoss, NeverNanForExtremeFiniteLogits) {
  std::vector<double> q{-1e300, 1e300, 0.0}, p{1e300, -1e300, 0.0};
  EXPECT_TRUE(std::isfinite(nce_loss(q, p)));
}

TEST(NceLoss, EmptyBatchThrows) {
  std::vector<double> empty, one{0.0};
  EXPECT_THROW(nce_loss(empty, one), ShapeError);
  EXPECT_THROW(nce_loss(one, empty), ShapeError);
}

TEST(NceLoss, TapeVersionAgreesAndDifferentiates) {
  Rng rng(4);
  Tensor lq = rng.normal_tensor(6, 1), lp = rng.normal_tensor(9, 1);
  lq.set_requires_grad(true);
  lp.set_requires_grad(true);
  Tape t;
  EXPECT_NEAR(nce_loss(t.param(lq), t.param(lp)).item(), nce_loss(lq.data(), lp.data()), 1e-14);
  auto f = [&](Tape& tp) { return nce_loss(tp.param(lq), tp.param(lp)); };
  EXPECT_LT(testing::max_grad_rel_error({&lq, &lp}, f), 1e-4);
}

// Discrete toy space: q and p are explicit tables with denominator 20, so
// replicating each logit by its count gives the expected loss exactly.
TEST(NceLoss, AnalyticOptimumBeatsPerturbations) {
  const std::vector<int> cq{2, 4, 6, 5, 3}, cp{6, 5, 4, 3, 2};
  auto loss_at = [&](const std::vector<double>& logit) {
    std::vector<double> lq, lp;
    for (std::size_t i = 0; i < logit.size(); ++i) {
      lq.insert(lq.end(), cq[i], logit[i]);
      lp.insert(lp.end(), cp[i], logit[i]);
    }
    return nce_loss(lq, lp);
  };
  std::vector<double> opt(5);
  for (std::size_t i = 0; i < 5; ++i) opt[i] = std::log(static_cast<double>(cq[i]) / cp[i]);
  const double best = loss_at(opt);
  // L* = 2 ln 2 - 2 JSD of the tables.
  double jsd = 0.0;
  for (std::size_t i = 0; i < 5; ++i) {
    const double q = cq[i] / 20.0, p = cp[i] / 20.0, m = 0.5 * (q + p);
    jsd += 0.5 * q * std::log(q / m) + 0.5 * p * std::log(p / m);
  }
  EXPECT_NEAR(best, kTwoLn2 - 2.0 * jsd, 1e-12);
  EXPECT_NEAR(jsd_from_loss(best), jsd, 1e-12);
  for (std::size_t i = 0; i < 5; ++i) {
    for (double d : {-0.1, 0.1, -1e-3, 1e-3}) {
      auto pert = opt;
      pert[i] += d;
      EXPECT_GT(loss_at(pert), best);
    }
  }
  Rng rng(5);
  for (int rep = 0; rep < 100; ++rep) {
    auto pert = opt;
    for (double& v : pert) v += 0.2 * rng.normal();
    EXPECT_GT(loss_at(pert), best);
  }
}

TEST(RatioClassifier, GroupZeroHasNoContext) {
  EXPECT_THROW(RatioClassifier(0, 2, 3, {4, 4, 4}), ShapeError);
  RatioClassifier c(1, 2, 3, {4, 4, 4});
  EXPECT_EQ(c.context_dim(), 3u);
}

TEST(RatioClassifier, GradientsMatchFiniteDifferences) {
  RatioClassifier c(1, 2, 3, {5, 5, 5});
  Rng rng(6);
  c.init(rng);
  GroupBatch b{rng.normal_tensor(8, 2), rng.normal_tensor(8, 2), rng.normal_tensor(8, 3), {}};
  b.context_p = b.context_q;
  std::vector<Tensor*> params;
  for (auto& p : c.parameters()) params.push_back(p.tensor);
  auto f = [&](Tape& t) { return nce_loss_hier(t, c, b); };
  EXPECT_LT(testing::max_grad_rel_error(params, f), 1e-4);
}

TEST(NceLossHier, EmptyContextReducesToNceLoss) {
  RatioClassifier c(0, 2, 0, {8, 8, 8});
  Rng rng(7);
  c.init(rng);
  GroupBatch b{rng.normal_tensor(10, 2), rng.normal_tensor(10, 2), Tensor::matrix(10, 0),
               Tensor::matrix(10, 0)};
  Tensor lq = c.logit(b.z_q, b.context_q), lp = c.logit(b.z_p, b.context_p);
  EXPECT_EQ(nce_loss_hier(c, b), nce_loss(lq.data(), lp.data()));
  Tape t;
  EXPECT_NEAR(nce_loss_hier(t, c, b).item(), nce_loss(lq.data(), lp.data()), 1e-14);
}

TEST(NceLossHier, IdenticalArmsWithZeroLogit) {
  RatioClassifier c(1, 1, 2, {4, 4, 4});
  c.zero();
  Rng rng(8);
  Tensor z = rng.normal_tensor(12, 1), ctx = rng.normal_tensor(12, 2);
  EXPECT_NEAR(nce_loss_hier(c, GroupBatch{z, z, ctx, ctx}), kTwoLn2, 1e-15);
}

TEST(NceLossHier, ContextMismatchThrows) {
  RatioClassifier c(1, 1, 2, {4, 4, 4});
  Rng rng(9);
  c.init(rng);
  Tensor z = rng.normal_tensor(4, 1);
  Tensor ca = rng.normal_tensor(4, 2), cb = rng.normal_tensor(4, 2);
  EXPECT_THROW(nce_loss_hier(c, GroupBatch{z, z, ca, cb}), ShapeError);
  Tape t;
  EXPECT_THROW(nce_loss_hier(t, c, GroupBatch{z, z, ca, cb}), ShapeError);
  EXPECT_THROW(nce_loss_hier(c, GroupBatch{z, z, Tensor::matrix(4, 3), Tensor::matrix(4, 3)}), ShapeError);
}

// Two-group model whose aggregate posterior is Gaussian. Swish units run at
// +20 where they are linear to ~1e-7, so every map below is affine:
//   x ~ N(0,1), z1 = a x + s1 e1, z2 = g x + d z1 + s2 e2,
//   p(z1) = N(0,1), p(z2 | z1) = N(pm, ps) independent of z1.
struct AffineTwoGroup {
  double a = 1.0, s1 = 0.6, g = 0.5, d = 0.8, s2 = 0.5, pm = 0.3, ps = 0.9;
  HierarchicalVae vae;
  DataView data;

  AffineTwoGroup() {
    HierarchySpec s;
    s.data_dim = 1;
    s.latent_dims = {1, 1};
    s.context_dim = 2;
    s.encoder_hidden = {1};
    s.decoder_hidden = {};
    s.prior_hidden = {3};
    vae = HierarchicalVae(s);
    Rng rng(1);
    vae.init(rng);
    auto& trunk = vae.encoder_trunk().layers()[0];
    trunk.weight = Tensor::matrix(1, 1, 1.0);
    trunk.bias = Tensor::matrix(1, 1, 20.0);
    auto& h0 = vae.posterior_heads()[0].layers()[0];
    h0.weight = Tensor::from_rows({{a, 0.0}});
    h0.bias = Tensor::from_rows({{-20.0 * a, std::log(s1)}});
    auto& l0 = vae.posterior_heads()[1].layers()[0];  // input [h, z1]
    l0.weight = Tensor::from_rows({{g}, {d}});
    l0.bias = Tensor::matrix(1, 1, 20.0 - 20.0 * g);
    auto& l1 = vae.posterior_heads()[1].layers()[1];
    l1.weight = Tensor::from_rows({{1.0, 0.0}});
    l1.bias = Tensor::from_rows({{-20.0, std::log(s2)}});
    // Context c(z1) = swish(z1 + 5) in both columns: monotone over q(z1).
    auto& c0 = named(vae, "prior1.ctx.l0.w");
    c0 = Tensor::from_rows({{1.0, 0.0, 0.0}});
    named(vae, "prior1.ctx.l0.b") = Tensor::from_rows({{20.0, 0.0, 0.0}});
    named(vae, "prior1.ctx.l1.w") = Tensor::from_rows({{1.0, 1.0}, {0.0, 0.0}, {0.0, 0.0}});
    named(vae, "prior1.ctx.l1.b") = Tensor::from_rows({{-15.0, -15.0}});
    named(vae, "prior1.head.w") = Tensor::matrix(2, 2, 0.0);
    named(vae, "prior1.head.b") = Tensor::from_rows({{pm, std::log(ps)}});
    vae.set_trainable(false);
    data = DataView{rng.normal_tensor(100000, 1)};
  }

  // Optimal NCE loss for each group by quadrature.
  std::pair<double, double> optimal_losses() const {
    auto pointwise = [](double lq, double lp) {
      // -q log D* - p log(1 - D*) with D* = q / (q + p), in log space.
      const double m = std::max(lq, lp);
      const double lsum = m + std::log(std::exp(lq - m) + std::exp(lp - m));
      return -std::exp(lq) * (lq - lsum) - std::exp(lp) * (lp - lsum);
    };
    const double v1 = a * a + s1 * s1;
    GridQuadrature quad({{-12.0, 12.0}}, 2001);
    std::vector<double> f1(quad.size());
    for (std::size_t i = 0; i < quad.size(); ++i) {
      const double z = quad.nodes()[i];
      f1[i] = pointwise(normal_logpdf(z, 0.0, std::sqrt(v1)), normal_logpdf(z, 0.0, 1.0));
    }
    const double loss1 = quad.integral(f1);
    // q(z2 | z1): Gaussian conditioning of the joint.
    const double cov_xz1 = a;
    const double ex_slope = cov_xz1 / v1, var_x = 1.0 - cov_xz1 * cov_xz1 / v1;
    const double var2 = g * g * var_x + s2 * s2;
    std::vector<double> outer(quad.size());
    for (std::size_t i = 0; i < quad.size(); ++i) {
      const double z1 = quad.nodes()[i];
      const double m2 = d * z1 + g * ex_slope * z1;
      std::vector<double> inner(quad.size());
      for (std::size_t j = 0; j < quad.size(); ++j) {
        const double z2 = quad.nodes()[j];
        inner[j] = pointwise(normal_logpdf(z2, m2, std::sqrt(var2)), normal_logpdf(z2, pm, ps));
      }
      outer[i] = std::exp(normal_logpdf(z1, 0.0, std::sqrt(v1))) * quad.integral(inner);
    }
    return {loss1, quad.integral(outer)};
  }
};

TEST(NceLossHier, TrainedLossMatchesQuadratureOptimum) {
  AffineTwoGroup m;
  NcpModel model{m.vae, {}, std::nullopt, ""};
  Stage2Config cfg;
  cfg.steps = 4000;
  cfg.batch_size = 512;
  cfg.lr_init = 3e-3;
  cfg.lr_final = 1e-5;
  cfg.hidden = {32, 32, 32};
  cfg.eval_batch = 100000;
  cfg.logz_samples = 0;
  auto res = train_stage2(model, m.data, cfg);
  auto [opt1, opt2] = m.optimal_losses();
  EXPECT_NEAR(res.report.final_loss[0], opt1, 0.02);
  EXPECT_NEAR(res.report.final_loss[1], opt2, 0.02);
  EXPECT_GT(kTwoLn2 - opt2, 0.05);  // the second group has real signal
}

TEST(LogReweight, ZeroLogitMeansUnitRatio) {
  RatioClassifier c(0, 2, 0, {4, 4, 4});
  c.zero();
  Rng rng(1);
  for (double l : log_reweight(c, rng.normal_tensor(5, 2), Tensor::matrix(5, 0))) {
    EXPECT_EQ(l, 0.0);
    EXPECT_EQ(std::exp(l), 1.0);
  }
}

TEST(LogReweight, LogThreeMeansRatioThree) {
  RatioClassifier c(0, 1, 0, {4, 4, 4});
  c.zero();
  auto params = c.parameters();
  params.back().tensor->data()[0] = std::log(3.0);
  auto l = log_reweight(c, Tensor::matrix(2, 1, 0.7), Tensor::matrix(2, 0));
  EXPECT_NEAR(std::exp(l[0]), 3.0, 1e-15);
}

TEST(LogReweight, NonFiniteLogitThrows) {
  RatioClassifier c(0, 1, 0, {4, 4, 4});
  Rng rng(1);
  c.init(rng);
  EXPECT_THROW(log_reweight(c, Tensor::matrix(1, 1, std::nan("")), Tensor::matrix(1, 0)), NumericError);
}

TEST(LogReweight, ProbabilityFormAgreesWithLogit) {
  // sigma(l) / (1 - sigma(l)) with 1 - sigma(l) taken as sigma(-l).
  for (double l = -30.0; l <= 30.0; l += 0.125) {
    const double ratio = sigmoid(l) / sigmoid(-l);
    EXPECT_NEAR(ratio / std::exp(l), 1.0, 1e-12) << l;
  }
}

TEST(LogReweight, RecoversGaussianShiftRatio) {
  RatioClassifier c(0, 1, 0, {32, 32, 32});
  Rng rng(11);
  c.init(rng);
  testing::train_classifier(c, testing::normal_sampler(1.0, 1.0), testing::normal_sampler(0.0, 1.0),
                            3000, 512, 3e-3, 1e-5, rng);
  double mae = 0.0;
  const int n = 201;
  Tensor z = Tensor::matrix(n, 1);
  for (int i = 0; i < n; ++i) z[i] = -2.0 + 5.0 * i / (n - 1);
  auto l = log_reweight(c, z, Tensor::matrix(n, 0));
  for (int i = 0; i < n; ++i) mae += std::abs(l[i] - (z[i] - 0.5)) / n;
  EXPECT_LT(mae, 0.1);
}

TEST(JsdFromLoss, Endpoints) {
  EXPECT_NEAR(jsd_from_loss(kTwoLn2), 0.0, 1e-16);
  EXPECT_DOUBLE_EQ(jsd_from_loss(0.0), std::numbers::ln2);
}

TEST(JsdFromLoss, TrainedClassifierMatchesQuadratureJsd) {
  RatioClassifier c(0, 1, 0, {32, 32, 32});
  Rng rng(12);
  c.init(rng);
  auto q = testing::normal_sampler(1.0, 1.0), p = testing::normal_sampler(0.0, 1.0);
  testing::train_classifier(c, q, p, 3000, 512, 3e-3, 1e-5, rng);
  const Tensor none = Tensor::matrix(200000, 0);
  const double est = jsd_from_loss(nce_loss_hier(c, GroupBatch{q(200000, rng), p(200000, rng), none, none}));
  GridQuadrature quad({{-12.0, 13.0}}, 4001);
  std::vector<double> f(quad.size());
  for (std::size_t i = 0; i < quad.size(); ++i) {
    const double z = quad.nodes()[i];
    const double a = std::exp(normal_logpdf(z, 1.0, 1.0)), b = std::exp(normal_logpdf(z, 0.0, 1.0));
    const double m = 0.5 * (a + b);
    f[i] = 0.5 * a * std::log(a / m) + 0.5 * b * std::log(b / m);
  }
  EXPECT_NEAR(est, quad.integral(f), 0.02);
}

// ---------------------------------------------------------------------------

HierarchySpec small_spec(std::vector<std::size_t> latents) {
  HierarchySpec s;
  s.data_dim = 2;
  s.latent_dims = std::move(latents);
  s.context_dim = 4;
  s.encoder_hidden = {16};
  s.decoder_hidden = {16};
  s.prior_hidden = {8};
  return s;
}

NcpModel random_ncp(std::vector<std::size_t> latents, std::uint64_t seed, bool zero_classifiers) {
  NcpModel m;
  m.vae = HierarchicalVae(small_spec(std::move(latents)));
  Rng rng(seed);
  m.vae.init(rng);
  const auto& s = m.vae.spec();
  for (std::size_t k = 0; k < s.groups(); ++k) {
    m.classifiers.emplace_back(k, s.latent_dims[k], k == 0 ? 0 : s.context_dim,
                               std::vector<std::size_t>{8, 8, 8});
    if (zero_classifiers) {
      m.classifiers.back().zero();
    } else {
      m.classifiers.back().init(rng);
    }
  }
  return m;
}

TEST(NcpLogUnnormalized, ZeroLogitsGiveBasePrior) {
  auto m = random_ncp({2, 1, 2}, 3, true);
  Rng rng(4);
  Tensor z = rng.normal_tensor(20, 5);
  EXPECT_EQ(ncp_log_unnormalized(m, z), base_log_prior(m.vae, z));
}

TEST(NcpLogUnnormalized, SingleGroupIsLogRPlusLogP) {
  auto m = random_ncp({2}, 5, false);
  Rng rng(6);
  Tensor z = rng.normal_tensor(10, 2);
  auto lr = log_reweight(m.classifiers[0], z, Tensor::matrix(10, 0));
  auto lp = base_log_prior(m.vae, z);
  auto got = ncp_log_unnormalized(m, z);
  for (std::size_t i = 0; i < 10; ++i) EXPECT_NEAR(got[i], lr[i] + lp[i], 1e-14);
}

TEST(NcpLogUnnormalized, QuadratureMassMatchesLogZEstimate) {
  auto m = random_ncp({1}, 7, false);
  m.vae.prior0_mu() = Tensor::matrix(1, 1, 0.2);
  m.vae.prior0_log_sigma() = Tensor::matrix(1, 1, -0.3);
  GridQuadrature quad({{-10.0, 10.0}}, 4001);
  const double log_z_quad = std::log(quad.mass([&](const Tensor& z) { return ncp_log_unnormalized(m, z); }));
  Rng rng(8);
  auto est = estimate_log_z(m, 10000, 20, rng);
  EXPECT_NEAR(est.value, log_z_quad, 2.0 * est.std);
  EXPECT_GT(est.std, 0.0);
}

TEST(ParameterDigest, ChangesWithParameters) {
  auto m = random_ncp({2}, 9, true);
  const auto a = parameter_digest(m.vae);
  EXPECT_EQ(a.size(), 16u);
  EXPECT_EQ(parameter_digest(m.vae), a);
  m.vae.prior0_mu()[0] += 0.5;
  EXPECT_NE(parameter_digest(m.vae), a);
}

// ---------------------------------------------------------------------------

struct Stage2Fixture {
  HierarchicalVae vae;
  DataView data;
  explicit Stage2Fixture(std::vector<std::size_t> latents) {
    vae = HierarchicalVae(small_spec(std::move(latents)));
    Rng rng(21);
    vae.init(rng);
    data = DataView{rng.normal_tensor(2000, 2)};
  }
};

Stage2Config quick_stage2() {
  Stage2Config c;
  c.steps = 200;
  c.batch_size = 128;
  c.hidden = {16, 16, 16};
  c.log_every = 50;
  c.eval_batch = 2000;
  c.logz_samples = 200;
  c.logz_repetitions = 4;
  return c;
}

TEST(TrainStage2, FreezesVaeAndRecordsDigest) {
  Stage2Fixture f({2, 2});
  NcpModel m{f.vae, {}, std::nullopt, ""};
  const auto before = parameter_digest(m.vae);
  auto res = train_stage2(m, f.data, quick_stage2());
  EXPECT_EQ(res.digest_before, before);
  EXPECT_EQ(res.digest_after, before);
  EXPECT_EQ(parameter_digest(m.vae), before);
  EXPECT_EQ(m.stage1_digest, before);
  EXPECT_EQ(m.classifiers.size(), 2u);
  ASSERT_TRUE(m.log_z.has_value());
  EXPECT_EQ(m.log_z->per_group.size(), 2u);
  EXPECT_EQ(m.log_z->repetitions, 4u);
}

TEST(TrainStage2, ReportHasKRowsPerLogStepAndExactJsd) {
  Stage2Fixture f({2, 1, 1});
  NcpModel m{f.vae, {}, std::nullopt, ""};
  auto res = train_stage2(m, f.data, quick_stage2());
  const auto& curve = res.report.curve;
  ASSERT_EQ(curve.size(), 3u * 4u);
  for (std::size_t i = 0; i < curve.size(); ++i) {
    EXPECT_EQ(curve[i].group, i % 3);
    EXPECT_EQ(curve[i].step, 50u * (i / 3 + 1));
    EXPECT_EQ(curve[i].jsd, jsd_from_loss(curve[i].loss));
  }
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_EQ(res.report.final_jsd[k], jsd_from_loss(res.report.final_loss[k]));
    EXPECT_FALSE(res.report.diverged[k]);
  }
  std::ostringstream os;
  res.report.write_csv(os);
  std::istringstream in(os.str());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "#schema=ncp.classifier_report/1");
  std::getline(in, line);
  EXPECT_EQ(line, "group,step,loss,jsd");
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    std::string g, s, l, j;
    std::getline(ss, g, ',');
    std::getline(ss, s, ',');
    std::getline(ss, l, ',');
    std::getline(ss, j, ',');
    EXPECT_EQ(std::stod(j), jsd_from_loss(std::stod(l)));
    ++rows;
  }
  EXPECT_EQ(rows, curve.size());
}

TEST(TrainStage2, PriorFedToBothArmsIsIndistinguishable) {
  Stage2Fixture f({2, 2});
  NcpModel m{f.vae, {}, std::nullopt, ""};
  auto cfg = quick_stage2();
  cfg.steps = 1000;
  cfg.batch_size = 256;
  cfg.eval_batch = 20000;
  cfg.positive_arm = PositiveArm::kPrior;
  auto res = train_stage2(m, f.data, cfg);
  for (std::size_t k = 0; k < 2; ++k) {
    EXPECT_NEAR(res.report.final_loss[k], kTwoLn2, 0.05);
    EXPECT_LT(std::abs(res.report.final_jsd[k]), 0.03);
  }
}

TEST(TrainStage2, GroupsOwnDisjointParameters) {
  Stage2Fixture f({2, 2, 1});
  NcpModel m{f.vae, {}, std::nullopt, ""};
  train_stage2(m, f.data, quick_stage2());
  std::set<const Tensor*> seen;
  std::size_t total = 0;
  for (auto& c : m.classifiers) {
    for (auto& p : c.parameters()) {
      seen.insert(p.tensor);
      ++total;
    }
  }
  EXPECT_EQ(seen.size(), total);
}

TEST(TrainStage2, GroupTrainingIgnoresOtherClassifiers) {
  Stage2Fixture f({2, 2});
  auto cfg = quick_stage2();
  cfg.logz_samples = 0;
  auto run = [&](std::uint64_t init_seed_group0, bool parallel) {
    NcpModel m{f.vae, {}, std::nullopt, ""};
    const auto& s = m.vae.spec();
    Rng a(init_seed_group0), b(77);
    m.classifiers.emplace_back(0, s.latent_dims[0], 0, cfg.hidden);
    m.classifiers.back().init(a);
    m.classifiers.emplace_back(1, s.latent_dims[1], s.context_dim, cfg.hidden);
    m.classifiers.back().init(b);
    auto c = cfg;
    c.parallel_groups = parallel;
    train_stage2(m, f.data, c);
    std::vector<std::vector<double>> out;
    for (auto& p : m.classifiers[1].parameters()) out.push_back(p.tensor->storage());
    return out;
  };
  const auto ref = run(1, false);
  EXPECT_EQ(run(2, false), ref);
  EXPECT_EQ(run(3, true), ref);
}

TEST(TrainStage2, DeterministicUnderSeed) {
  Stage2Fixture f({2, 2});
  auto go = [&] {
    NcpModel m{f.vae, {}, std::nullopt, ""};
    auto r = train_stage2(m, f.data, quick_stage2());
    return std::make_pair(r.report.final_loss, m.log_z->value);
  };
  EXPECT_EQ(go(), go());
}

TEST(TrainStage2, RejectsBadConfig) {
  Stage2Fixture f({2});
  NcpModel m{f.vae, {}, std::nullopt, ""};
  auto cfg = quick_stage2();
  cfg.batch_size = 0;
  EXPECT_THROW(train_stage2(m, f.data, cfg), ConfigError);
  EXPECT_THROW(positive_arm_from_string("both"), ConfigError);
}

TEST(DrawGroupBatch, SharesContextAcrossArms) {
  Stage2Fixture f({2, 2});
  Rng rng(3);
  auto b = draw_group_batch(f.vae, f.data, 1, 64, PositiveArm::kPosterior, rng);
  EXPECT_EQ(b.context_q, b.context_p);
  EXPECT_EQ(b.context_q.cols(), 4u);
  EXPECT_EQ(b.z_q.rows(), 64u);
  auto b0 = draw_group_batch(f.vae, f.data, 0, 8, PositiveArm::kPosterior, rng);
  EXPECT_EQ(b0.context_q.cols(), 0u);
}

}  // namespace
}  // namespace ncp
