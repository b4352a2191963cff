#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "ncp/tensor.hpp"

namespace ncp {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  std::size_t size() const { return value().size(); }
  double item() const { return value().item(); }
  bool requires_grad() const;

  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode tape. One tape per forward pass; `backward` consumes it.
///
/// Parameters enter through `param`; after `backward` their gradients are
/// accumulated into `Tensor::grad()`. Leaves created with `variable` expose
/// their gradient through `grad`.
class Tape {
 public:
  /// Receives the output gradient and accumulates into input gradients.
  using BackwardFn = std::function<void(Tape&, std::span<const double> out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var variable(Tensor value);
  Var param(Tensor& parameter);

  /// Records an op result. `fn` is dropped when no input requires a gradient.
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn);

  void backward(Var loss);

  std::span<const double> grad(Var v) const;
  Tensor grad_tensor(Var v) const;

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  /// Gradient buffer of node `id`, zero-allocated on first use.
  std::span<double> grad_buffer(std::size_t id);

  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

 private:
  struct Node {
    Tensor value;
    std::vector<double> grad;
    bool requires_grad = false;
    Tensor* parameter = nullptr;
    BackwardFn backward;
  };

  void check_owner(Var v) const;

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

// Elementwise binary ops broadcast 2-D operands whose extents are equal or 1.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);

Var matmul(Var a, Var b);
/// x * weight + bias, with bias a 1 x out row.
Var affine(Var x, Var weight, Var bias);

Var neg(Var a);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var exp(Var a);
Var log(Var a);
Var square(Var a);
Var sigmoid(Var a);
Var softplus(Var a);
Var swish(Var a);
Var tanh(Var a);
/// Clamp with zero gradient outside [lo, hi].
Var clamp(Var a, double lo, double hi);

Var sum(Var a);
Var mean(Var a);
/// Per-row sum: (r x c) -> (r x 1).
Var sum_cols(Var a);

Var concat_cols(Var a, Var b);
Var slice_cols(Var a, std::size_t begin, std::size_t end);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }
inline Var operator-(Var a) { return neg(a); }
inline Var operator*(double s, Var a) { return scale(a, s); }
inline Var operator*(Var a, double s) { return scale(a, s); }
inline Var operator+(Var a, double s) { return add_scalar(a, s); }
inline Var operator-(Var a, double s) { return add_scalar(a, -s); }

/// Numerically stable scalar helpers shared by the ops and by inference code.
double softplus(double x);
double sigmoid(double x);

}  // namespace ncp
