#pragma once

#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "ncp/tensor.hpp"

namespace ncp {

/// Tensor-product trapezoid rule on a box in 1 or 2 dimensions.
class GridQuadrature {
 public:
  /// `resolution` points per axis, endpoints included.
  GridQuadrature(std::vector<std::pair<double, double>> bounds, std::size_t resolution);

  std::size_t dim() const { return bounds_.size(); }
  std::size_t size() const { return weights_.size(); }
  /// All nodes, size() x dim().
  const Tensor& nodes() const { return nodes_; }
  std::span<const double> weights() const { return weights_; }

  /// log of the integral of exp(log_values) over the box.
  double log_integral(std::span<const double> log_values) const;
  double integral(std::span<const double> values) const;

  /// Integral of a log-density evaluated on all nodes at once.
  double mass(const std::function<std::vector<double>(const Tensor&)>& log_density) const;
  /// E[f] under the normalized density exp(log_density).
  double expectation(const std::function<std::vector<double>(const Tensor&)>& log_density,
                     const std::function<double(std::span<const double>)>& f) const;

 private:
  std::vector<std::pair<double, double>> bounds_;
  std::size_t resolution_;
  Tensor nodes_;
  std::vector<double> weights_;
};

}  // namespace ncp
