#include <benchmark/benchmark.h>

#include "ncp/autodiff.hpp"
#include "ncp/ncp.hpp"
#include "ncp/nn.hpp"
#include "ncp/random.hpp"
#include "ncp/samplers.hpp"
#include "ncp/tensor.hpp"
#include "ncp/vae.hpp"

namespace ncp {
namespace {

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  Tensor a = rng.normal_tensor(n, n), b = rng.normal_tensor(n, n);
  for (auto _ : state) {
    Tape tape;
    benchmark::DoNotOptimize(matmul(tape.constant(a), tape.constant(b)).value());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(256);

void BM_MlpForwardBackward(benchmark::State& state) {
  const auto batch = static_cast<std::size_t>(state.range(0));
  Mlp mlp(784, {256}, 32);
  Rng rng(2);
  mlp.init(rng);
  std::vector<NamedParam> params;
  mlp.collect("m", params);
  set_requires_grad(params, true);
  Tensor x = rng.normal_tensor(batch, 784);
  for (auto _ : state) {
    zero_grads(params);
    Tape tape;
    tape.backward(mean(square(mlp.forward(tape, tape.constant(x)))));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(batch));
}
BENCHMARK(BM_MlpForwardBackward)->Arg(32)->Arg(128);

RatioClassifier trained_like_classifier() {
  RatioClassifier c(0, 2, 0, {32, 32, 32});
  Rng rng(3);
  c.init(rng);
  return c;
}

void BM_SirDraw(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  RatioClassifier c = trained_like_classifier();
  BaseSampler base = [](std::size_t n, Rng& r) { return r.normal_tensor(n, 2); };
  LogRatioFn log_r = [&](const Tensor& z) { return log_reweight(c, z, Tensor::matrix(z.rows(), 0)); };
  Rng rng(4);
  for (auto _ : state) benchmark::DoNotOptimize(sir_sample(base, log_r, SirConfig{m}, rng));
}
BENCHMARK(BM_SirDraw)->Arg(50)->Arg(5000);

void BM_LangevinStep(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  RatioClassifier c = trained_like_classifier();
  auto params = c.parameters();
  set_requires_grad(params, false);
  // E(z) = |z|^2 / 2 - log r(z) for a standard-normal base.
  EnergyGradFn grad = [&](const Tensor& z) {
    Tape tape;
    Var zv = tape.variable(z);
    Var e = sub(scale(sum(square(zv)), 0.5), sum(c.logit(tape, zv, tape.constant(Tensor::matrix(z.rows(), 0)))));
    tape.backward(e);
    return tape.grad_tensor(zv);
  };
  Rng rng(5);
  Tensor z0 = rng.normal_tensor(n, 2);
  for (auto _ : state) benchmark::DoNotOptimize(langevin_sample(grad, z0, LdConfig{0.01, 1}, rng));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}
BENCHMARK(BM_LangevinStep)->Arg(1000)->Arg(10000);

}  // namespace
}  // namespace ncp

BENCHMARK_MAIN();
