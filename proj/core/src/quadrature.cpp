#include "ncp/quadrature.hpp"

#include <cmath>

#include "ncp/error.hpp"
#include "ncp/numeric.hpp"

namespace ncp {

GridQuadrature::GridQuadrature(std::vector<std::pair<double, double>> bounds,
                               std::size_t resolution)
    : bounds_(std::move(bounds)), resolution_(resolution) {
  if (bounds_.empty() || bounds_.size() > 2) throw ShapeError("grid quadrature supports 1 or 2 dims");
  if (resolution_ < 2) throw ConfigError("grid quadrature needs at least 2 points per axis");
  std::vector<std::vector<double>> axis(bounds_.size());
  std::vector<std::vector<double>> axis_w(bounds_.size());
  for (std::size_t a = 0; a < bounds_.size(); ++a) {
    const auto [lo, hi] = bounds_[a];
    if (!(hi > lo)) throw ConfigError("grid quadrature bounds must satisfy lo < hi");
    const double h = (hi - lo) / static_cast<double>(resolution_ - 1);
    for (std::size_t i = 0; i < resolution_; ++i) {
      axis[a].push_back(lo + h * static_cast<double>(i));
      axis_w[a].push_back(i == 0 || i + 1 == resolution_ ? 0.5 * h : h);
    }
  }
  if (bounds_.size() == 1) {
    nodes_ = Tensor::matrix(resolution_, 1);
    for (std::size_t i = 0; i < resolution_; ++i) nodes_.at(i, 0) = axis[0][i];
    weights_ = axis_w[0];
  } else {
    nodes_ = Tensor::matrix(resolution_ * resolution_, 2);
    weights_.resize(resolution_ * resolution_);
    for (std::size_t i = 0; i < resolution_; ++i) {
      for (std::size_t j = 0; j < resolution_; ++j) {
        const std::size_t r = i * resolution_ + j;
        nodes_.at(r, 0) = axis[0][i];
        nodes_.at(r, 1) = axis[1][j];
        weights_[r] = axis_w[0][i] * axis_w[1][j];
      }
    }
  }
}

double GridQuadrature::log_integral(std::span<const double> log_values) const {
  if (log_values.size() != weights_.size()) throw ShapeError("quadrature: value count mismatch");
  std::vector<double> terms(weights_.size());
  for (std::size_t i = 0; i < terms.size(); ++i) terms[i] = std::log(weights_[i]) + log_values[i];
  return log_sum_exp(terms);
}

double GridQuadrature::integral(std::span<const double> values) const {
  if (values.size() != weights_.size()) throw ShapeError("quadrature: value count mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) s += weights_[i] * values[i];
  return s;
}

double GridQuadrature::mass(
    const std::function<std::vector<double>(const Tensor&)>& log_density) const {
  return std::exp(log_integral(log_density(nodes_)));
}

double GridQuadrature::expectation(
    const std::function<std::vector<double>(const Tensor&)>& log_density,
    const std::function<double(std::span<const double>)>& f) const {
  auto lv = log_density(nodes_);
  const double log_z = log_integral(lv);
  double s = 0.0;
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    s += weights_[i] * std::exp(lv[i] - log_z) * f(nodes_.row_span(i));
  }
  return s;
}

}  // namespace ncp
