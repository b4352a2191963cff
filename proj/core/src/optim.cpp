#include "ncp/optim.hpp"

#include <cmath>
#include <numbers>

#include "ncp/error.hpp"

namespace ncp {

void adam_step(std::span<Tensor* const> params, AdamState& state, double lr) {
  if (!(lr > 0.0)) throw ShapeError("adam_step: learning rate must be positive");
  if (state.first_moment.empty()) {
    for (auto* p : params) {
      state.first_moment.emplace_back(p->shape(), 0.0);
      state.second_moment.emplace_back(p->shape(), 0.0);
    }
  }
  if (state.first_moment.size() != params.size() || state.second_moment.size() != params.size()) {
    throw ShapeError("adam_step: moment buffers do not match parameter count");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto* p = params[i];
    if (state.first_moment[i].shape() != p->shape() || state.second_moment[i].shape() != p->shape()) {
      throw ShapeError("adam_step: moment shape " + shape_string(state.first_moment[i].shape()) +
                       " vs parameter " + shape_string(p->shape()));
    }
    if (!p->has_grad()) continue;
    for (double g : p->grad()) {
      if (!std::isfinite(g)) {
        throw NumericError("adam_step: non-finite gradient for parameter " + std::to_string(i) +
                           " of shape " + shape_string(p->shape()));
      }
    }
  }

  state.step_count += 1;
  const double t = static_cast<double>(state.step_count);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor* p = params[i];
    auto m = state.first_moment[i].data();
    auto v = state.second_moment[i].data();
    auto w = p->data();
    if (!p->has_grad()) {
      for (std::size_t k = 0; k < w.size(); ++k) {
        m[k] *= state.beta1;
        v[k] *= state.beta2;
      }
      continue;
    }
    auto g = p->grad();
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * g[k];
      v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * g[k] * g[k];
      const double mhat = m[k] / c1;
      const double vhat = v[k] / c2;
      w[k] -= lr * mhat / (std::sqrt(vhat) + state.epsilon);
    }
  }
}

double cosine_anneal(std::int64_t step, std::int64_t total_steps, double lr_init, double lr_final) {
  if (total_steps <= 0) throw ShapeError("cosine_anneal: total_steps must be positive");
  if (step < 0 || step > total_steps) {
    throw ShapeError("cosine_anneal: step " + std::to_string(step) + " outside [0, " +
                     std::to_string(total_steps) + "]");
  }
  if (!(lr_final > 0.0) || lr_init < lr_final) {
    throw ShapeError("cosine_anneal: requires lr_init >= lr_final > 0");
  }
  const double frac = static_cast<double>(step) / static_cast<double>(total_steps);
  return lr_final + 0.5 * (lr_init - lr_final) * (1.0 + std::cos(std::numbers::pi * frac));
}

Adam::Adam(std::vector<NamedParam> params, double beta1, double beta2, double epsilon)
    : params_(std::move(params)) {
  state_.beta1 = beta1;
  state_.beta2 = beta2;
  state_.epsilon = epsilon;
  for (auto& p : params_) raw_.push_back(p.tensor);
}

void Adam::zero_grad() {
  for (auto* p : raw_) p->zero_grad();
}

void Adam::step(double lr) { adam_step(raw_, state_, lr); }

}  // namespace ncp
