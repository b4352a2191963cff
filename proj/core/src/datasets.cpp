#include "ncp/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include "ncp/error.hpp"
#include "ncp/numeric.hpp"

namespace ncp {

std::string to_string(Split split) {
  switch (split) {
    case Split::kTrain:
      return "train";
    case Split::kValid:
      return "valid";
    case Split::kTest:
      return "test";
  }
  return "unknown";
}

double GaussianMixture::log_density(std::span<const double> x) const {
  if (x.size() != dim()) throw ShapeError("GaussianMixture::log_density: dimension mismatch");
  const double d = static_cast<double>(dim());
  const double norm = -0.5 * d * std::log(2.0 * std::numbers::pi) - d * std::log(sigma);
  std::vector<double> terms;
  terms.reserve(means.size());
  for (const auto& m : means) {
    double sq = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) sq += (x[j] - m[j]) * (x[j] - m[j]);
    terms.push_back(norm - 0.5 * sq / (sigma * sigma));
  }
  return log_mean_exp(terms);
}

std::size_t GaussianMixture::nearest_mode(std::span<const double> x) const {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < means.size(); ++k) {
    double sq = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) sq += (x[j] - means[k][j]) * (x[j] - means[k][j]);
    if (sq < best_d) {
      best_d = sq;
      best = k;
    }
  }
  return best;
}

RingData make_gaussian_ring(std::size_t n, std::size_t k_modes, double radius, double sigma,
                            std::uint64_t seed) {
  GeneratorSpec spec;
  spec.n = n;
  spec.k_modes = k_modes;
  spec.radius = radius;
  spec.sigma = sigma;
  spec.seed = seed;
  return make_gaussian_ring(spec);
}

RingData make_gaussian_ring(const GeneratorSpec& spec) {
  if (spec.n == 0) throw ShapeError("make_gaussian_ring: n must be positive");
  if (spec.k_modes == 0) throw ShapeError("make_gaussian_ring: k_modes must be >= 1");
  if (!(spec.sigma > 0.0)) throw ShapeError("make_gaussian_ring: sigma must be positive");

  RingData out;
  out.density.sigma = spec.sigma;
  for (std::size_t k = 0; k < spec.k_modes; ++k) {
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(k) /
                         static_cast<double>(spec.k_modes);
    out.density.means.push_back({spec.radius * std::cos(angle), spec.radius * std::sin(angle)});
  }

  Rng rng(spec.seed, 0x52494e47);
  std::vector<std::size_t> order(spec.n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng.engine());

  Tensor samples = Tensor::matrix(spec.n, 2);
  for (std::size_t i = 0; i < spec.n; ++i) {
    const auto& m = out.density.means[order[i] % spec.k_modes];
    samples.at(i, 0) = m[0] + spec.sigma * rng.normal();
    samples.at(i, 1) = m[1] + spec.sigma * rng.normal();
  }
  out.dataset.samples = std::move(samples);
  out.dataset.split = Split::kTrain;
  out.dataset.spec = spec;
  return out;
}

std::pair<Dataset, Dataset> split_validation(const Dataset& train, double fraction,
                                             std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw ShapeError("split_validation: fraction in (0, 1)");
  const std::size_t n = train.size();
  const auto n_valid = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n)));
  if (n_valid == 0 || n_valid >= n) throw ShapeError("split_validation: dataset too small");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed, 0x56414c);
  std::shuffle(order.begin(), order.end(), rng.engine());
  std::vector<std::size_t> valid_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_valid));
  std::vector<std::size_t> train_idx(order.begin() + static_cast<std::ptrdiff_t>(n_valid), order.end());
  std::sort(valid_idx.begin(), valid_idx.end());
  std::sort(train_idx.begin(), train_idx.end());

  Dataset tr{gather_rows(train.samples, train_idx), Split::kTrain, train.spec};
  Dataset va{gather_rows(train.samples, valid_idx), Split::kValid, train.spec};
  return {std::move(tr), std::move(va)};
}

Tensor binarize_dynamic(const Tensor& images, Rng& rng) {
  Tensor out(images.shape(), 0.0);
  auto src = images.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (!(src[i] >= 0.0 && src[i] <= 1.0)) {
      throw ShapeError("binarize_dynamic: intensity outside [0, 1]");
    }
    dst[i] = rng.uniform() < src[i] ? 1.0 : 0.0;
  }
  return out;
}

MinibatchIterator::MinibatchIterator(std::size_t n, std::size_t batch_size, std::uint64_t seed)
    : n_(n), batch_(std::min(batch_size, n)), rng_(seed, 0x4d42) {
  if (n == 0) throw ShapeError("MinibatchIterator: empty dataset");
  if (batch_size == 0) throw ShapeError("MinibatchIterator: batch size must be positive");
  order_.resize(n_);
  reshuffle();
}

void MinibatchIterator::reshuffle() {
  std::iota(order_.begin(), order_.end(), 0);
  std::shuffle(order_.begin(), order_.end(), rng_.engine());
  cursor_ = 0;
}

std::vector<std::size_t> MinibatchIterator::next() {
  if (cursor_ + batch_ > n_) {
    ++epoch_;
    reshuffle();
  }
  std::vector<std::size_t> out(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                               order_.begin() + static_cast<std::ptrdiff_t>(cursor_ + batch_));
  cursor_ += batch_;
  ++served_;
  return out;
}

void MinibatchIterator::skip(std::uint64_t count) {
  for (std::uint64_t i = 0; i < count; ++i) next();
}

}  // namespace ncp
