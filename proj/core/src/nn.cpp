#include "ncp/nn.hpp"

#include <Eigen/Core>
#include <cmath>

#include "ncp/error.hpp"

namespace ncp {

double activate(Activation act, double x) {
  switch (act) {
    case Activation::kSwish:
      return x * sigmoid(x);
    case Activation::kTanh:
      return std::tanh(x);
    case Activation::kIdentity:
      return x;
  }
  return x;
}

Var activate(Activation act, Var x) {
  switch (act) {
    case Activation::kSwish:
      return swish(x);
    case Activation::kTanh:
      return tanh(x);
    case Activation::kIdentity:
      return x;
  }
  return x;
}

Linear::Linear(std::size_t in, std::size_t out)
    : weight(Tensor::matrix(in, out)), bias(Tensor::matrix(1, out)) {
  weight.set_requires_grad(true);
  bias.set_requires_grad(true);
}

void Linear::init(Rng& rng, double gain) {
  const double fan = static_cast<double>(in() + out());
  const double bound = fan > 0 ? gain * std::sqrt(6.0 / fan) : 0.0;
  for (double& w : weight.data()) {
    w = static_cast<double>(static_cast<float>(bound * (2.0 * rng.uniform() - 1.0)));
  }
  for (double& b : bias.data()) b = 0.0;
}

Var Linear::forward(Tape& tape, Var x) {
  return affine(x, tape.param(weight), tape.param(bias));
}

Mlp::Mlp(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out, Activation act,
         bool activate_output)
    : in_(in), out_(out), act_(act), activate_output_(activate_output) {
  std::size_t prev = in;
  for (auto h : hidden) {
    if (h == 0) throw ShapeError("Mlp hidden width must be positive");
    layers_.emplace_back(prev, h);
    prev = h;
  }
  layers_.emplace_back(prev, out);
}

void Mlp::init(Rng& rng, double output_gain) {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    layers_[i].init(rng, i + 1 == layers_.size() ? output_gain : 1.0);
  }
}

void Mlp::zero() {
  for (auto& l : layers_) {
    for (double& w : l.weight.data()) w = 0.0;
    for (double& b : l.bias.data()) b = 0.0;
  }
}

Var Mlp::forward(Tape& tape, Var x) {
  if (x.cols() != in_) {
    throw ShapeError("Mlp input width " + std::to_string(x.cols()) + ", expected " +
                     std::to_string(in_));
  }
  Var h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    h = layers_[i].forward(tape, h);
    if (i + 1 < layers_.size() || activate_output_) h = activate(act_, h);
  }
  return h;
}

Tensor Mlp::evaluate(const Tensor& x) const {
  using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using ConstMap = Eigen::Map<const RowMatrix>;
  if (x.cols() != in_) {
    throw ShapeError("Mlp input width " + std::to_string(x.cols()) + ", expected " +
                     std::to_string(in_));
  }
  const auto rows = static_cast<Eigen::Index>(x.rows());
  RowMatrix h = ConstMap(x.data().data(), rows, static_cast<Eigen::Index>(in_));
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    ConstMap w(l.weight.data().data(), static_cast<Eigen::Index>(l.in()),
               static_cast<Eigen::Index>(l.out()));
    ConstMap b(l.bias.data().data(), 1, static_cast<Eigen::Index>(l.out()));
    RowMatrix next(rows, static_cast<Eigen::Index>(l.out()));
    if (l.in() > 0) {
      next.noalias() = h * w;
    } else {
      next.setZero();
    }
    next.rowwise() += b.row(0);
    if (i + 1 < layers_.size() || activate_output_) {
      next = next.unaryExpr([this](double v) { return activate(act_, v); });
    }
    h = std::move(next);
  }
  Tensor out = Tensor::matrix(x.rows(), out_);
  std::copy(h.data(), h.data() + h.size(), out.data().begin());
  return out;
}

void Mlp::collect(const std::string& prefix, std::vector<NamedParam>& out) {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    out.push_back({prefix + ".l" + std::to_string(i) + ".w", &layers_[i].weight});
    out.push_back({prefix + ".l" + std::to_string(i) + ".b", &layers_[i].bias});
  }
}

void set_requires_grad(std::vector<NamedParam>& params, bool flag) {
  for (auto& p : params) p.tensor->set_requires_grad(flag);
}

void zero_grads(std::vector<NamedParam>& params) {
  for (auto& p : params) p.tensor->zero_grad();
}

}  // namespace ncp
