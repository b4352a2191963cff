#include "ncp/random.hpp"

#include <sstream>

#include "ncp/error.hpp"

namespace ncp {

namespace {

std::mt19937_64 make_engine(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                    0x6e6370u};
  return std::mt19937_64(seq);
}

}  // namespace

Rng::Rng(std::uint64_t seed, std::uint64_t stream)
    : seed_(seed), stream_(stream), engine_(make_engine(seed, stream)) {}

double Rng::uniform() { return uniform_(engine_); }

double Rng::normal() { return normal_(engine_); }

std::size_t Rng::index(std::size_t n) {
  if (n == 0) throw ShapeError("Rng::index(0)");
  std::uniform_int_distribution<std::size_t> dist(0, n - 1);
  return dist(engine_);
}

Tensor Rng::normal_tensor(std::size_t rows, std::size_t cols) {
  Tensor t = Tensor::matrix(rows, cols);
  for (double& v : t.data()) v = normal();
  return t;
}

Rng Rng::fork(std::uint64_t stream) const {
  // Mix the parent stream id in so that forks of different parents differ.
  return Rng(seed_, stream_ * 0x9E3779B97F4A7C15ull + stream + 1);
}

std::string Rng::serialize() const {
  std::ostringstream os;
  os << seed_ << ' ' << stream_ << ' ' << engine_ << ' ' << normal_;
  return os.str();
}

void Rng::deserialize(const std::string& state) {
  std::istringstream is(state);
  is >> seed_ >> stream_ >> engine_ >> normal_;
  if (!is) throw ConfigError("malformed RNG state");
}

}  // namespace ncp
