#pragma once

#include <cstdint>
#include <random>
#include <string>

#include "ncp/tensor.hpp"

namespace ncp {

/// Seeded random stream. Streams with distinct ids under the same seed are
/// independent; identical (seed, stream) pairs replay identically.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0, std::uint64_t stream = 0);

  double uniform();
  double normal();
  bool bernoulli(double p) { return uniform() < p; }
  std::size_t index(std::size_t n);

  Tensor normal_tensor(std::size_t rows, std::size_t cols);

  /// Child stream keyed on this stream's identity; does not advance this stream.
  Rng fork(std::uint64_t stream) const;

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }
  std::mt19937_64& engine() { return engine_; }

  /// Full textual state, including the normal distribution's cached value.
  std::string serialize() const;
  void deserialize(const std::string& state);

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace ncp
