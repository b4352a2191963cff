#pragma once

#include <cstdint>
#include <vector>

#include "ncp/nn.hpp"
#include "ncp/tensor.hpp"

namespace ncp {

struct AdamState {
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  std::uint64_t step_count = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// One bias-corrected Adam update using each parameter's gradient buffer.
/// Moment buffers are created on the first call. Throws NumericError (and
/// leaves parameters untouched) if any gradient is NaN/Inf.
void adam_step(std::span<Tensor* const> params, AdamState& state, double lr);

/// lr_final + 0.5 (lr_init - lr_final) (1 + cos(pi step / total_steps)).
double cosine_anneal(std::int64_t step, std::int64_t total_steps, double lr_init, double lr_final);

/// Adam over a named parameter list with a cosine-annealed learning rate.
class Adam {
 public:
  Adam() = default;
  explicit Adam(std::vector<NamedParam> params, double beta1 = 0.9, double beta2 = 0.999,
                double epsilon = 1e-8);

  void zero_grad();
  void step(double lr);

  AdamState& state() { return state_; }
  const AdamState& state() const { return state_; }
  const std::vector<NamedParam>& params() const { return params_; }

 private:
  std::vector<NamedParam> params_;
  std::vector<Tensor*> raw_;
  AdamState state_;
};

}  // namespace ncp
