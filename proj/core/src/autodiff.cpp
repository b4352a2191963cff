#include "ncp/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <sstream>

#include "ncp/error.hpp"

namespace ncp {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMatrix = Eigen::Map<RowMatrix>;
using ConstMapMatrix = Eigen::Map<const RowMatrix>;

ConstMapMatrix as_matrix(const Tensor& t) {
  return ConstMapMatrix(t.data().data(), static_cast<Eigen::Index>(t.rows()),
                        static_cast<Eigen::Index>(t.cols()));
}

ConstMapMatrix as_matrix(std::span<const double> data, std::size_t rows, std::size_t cols) {
  return ConstMapMatrix(data.data(), static_cast<Eigen::Index>(rows),
                        static_cast<Eigen::Index>(cols));
}

MapMatrix as_matrix(std::span<double> data, std::size_t rows, std::size_t cols) {
  return MapMatrix(data.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

Tape& tape_of(Var a) {
  if (!a.valid()) throw Error("operation on an unbound Var");
  return *a.tape();
}

Tape& tape_of(Var a, Var b) {
  Tape& t = tape_of(a);
  if (b.tape() != &t) throw Error("operands belong to different tapes");
  return t;
}

}  // namespace

double softplus(double x) {
  // log(1 + e^x) without overflow for large |x|.
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// ---------------------------------------------------------------------------
// Var / Tape

const Tensor& Var::value() const {
  if (!tape_) throw Error("value() on an unbound Var");
  return tape_->value(id_);
}

bool Var::requires_grad() const { return tape_ && tape_->requires_grad(id_); }

void Tape::check_owner(Var v) const {
  if (v.tape() != this) throw Error("Var does not belong to this tape");
}

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::variable(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::param(Tensor& parameter) {
  Node n;
  n.value = parameter;
  n.value.clear_grad();
  n.requires_grad = parameter.requires_grad();
  n.parameter = n.requires_grad ? &parameter : nullptr;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
  bool needs = false;
  for (const auto& in : inputs) {
    check_owner(in);
    needs = needs || nodes_[in.id()].requires_grad;
  }
  Node n;
  n.value = std::move(value);
  n.requires_grad = needs;
  if (needs) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

std::span<double> Tape::grad_buffer(std::size_t id) {
  auto& n = nodes_[id];
  if (n.grad.empty() && n.value.size() > 0) n.grad.assign(n.value.size(), 0.0);
  return n.grad;
}

void Tape::backward(Var loss) {
  check_owner(loss);
  if (consumed_) throw Error("tape already consumed by a previous backward()");
  const auto& lv = nodes_[loss.id()].value;
  if (lv.size() != 1) {
    throw ShapeError("backward() requires a scalar loss, got shape " + shape_string(lv.shape()));
  }
  if (!std::isfinite(lv[0])) {
    std::ostringstream os;
    os << "backward() on non-finite loss " << lv[0];
    throw NumericError(os.str());
  }
  consumed_ = true;
  if (!nodes_[loss.id()].requires_grad) return;

  grad_buffer(loss.id())[0] = 1.0;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    auto& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.backward) n.backward(*this, nodes_[i].grad);
  }

  for (auto& n : nodes_) {
    if (!n.parameter || n.grad.empty()) continue;
    for (double g : n.grad) {
      if (!std::isfinite(g)) {
        throw NumericError("non-finite gradient for parameter of shape " +
                           shape_string(n.value.shape()));
      }
    }
    auto dst = n.parameter->grad();
    if (dst.size() != n.grad.size()) throw ShapeError("parameter changed shape during backward");
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += n.grad[k];
  }
}

std::span<const double> Tape::grad(Var v) const {
  check_owner(v);
  const auto& n = nodes_[v.id()];
  if (!n.requires_grad) throw Error("grad() on a Var that does not require gradients");
  return n.grad;
}

Tensor Tape::grad_tensor(Var v) const {
  auto g = grad(v);
  const auto& shape = nodes_[v.id()].value.shape();
  if (g.empty()) return Tensor(shape, 0.0);
  return Tensor(shape, std::vector<double>(g.begin(), g.end()));
}

// ---------------------------------------------------------------------------
// Broadcasting elementwise binary ops

namespace {

struct Broadcast {
  std::size_t rows, cols;
  std::size_t ar, ac, br, bc;
  Shape out_shape;
};

Broadcast broadcast_shapes(const Tensor& a, const Tensor& b, const char* op) {
  Broadcast bc{};
  bc.ar = a.rows();
  bc.ac = a.cols();
  bc.br = b.rows();
  bc.bc = b.cols();
  auto fits = [](std::size_t x, std::size_t y) { return x == y || x == 1 || y == 1; };
  if (!fits(bc.ar, bc.br) || !fits(bc.ac, bc.bc)) {
    throw ShapeError(std::string(op) + ": incompatible shapes " + shape_string(a.shape()) +
                     " and " + shape_string(b.shape()));
  }
  bc.rows = std::max(bc.ar, bc.br);
  bc.cols = std::max(bc.ac, bc.bc);
  if (bc.ar == 1 && bc.br == 1 && bc.ac == 1 && bc.bc == 1) {
    bc.rows = bc.cols = 1;
  }
  if (a.shape() == b.shape()) {
    bc.out_shape = a.shape();
  } else {
    bc.out_shape = {bc.rows, bc.cols};
  }
  return bc;
}

template <class F, class DA, class DB>
Var binary_op(Var a, Var b, const char* name, F f, DA dfa, DB dfb) {
  Tape& t = tape_of(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const Broadcast bc = broadcast_shapes(av, bv, name);
  Tensor out(bc.out_shape, 0.0);
  auto ad = av.data();
  auto bd = bv.data();
  auto od = out.data();
  for (std::size_t i = 0; i < bc.rows; ++i) {
    const std::size_t ai = (bc.ar == 1 ? 0 : i) * bc.ac;
    const std::size_t bi = (bc.br == 1 ? 0 : i) * bc.bc;
    for (std::size_t j = 0; j < bc.cols; ++j) {
      od[i * bc.cols + j] = f(ad[ai + (bc.ac == 1 ? 0 : j)], bd[bi + (bc.bc == 1 ? 0 : j)]);
    }
  }
  const std::size_t aid = a.id(), bid = b.id();
  return t.record(std::move(out), {a, b}, [aid, bid, bc, dfa, dfb](Tape& tp, std::span<const double> g) {
    const bool need_a = tp.requires_grad(aid);
    const bool need_b = tp.requires_grad(bid);
    auto ad = tp.value(aid).data();
    auto bd = tp.value(bid).data();
    std::span<double> ga, gb;
    if (need_a) ga = tp.grad_buffer(aid);
    if (need_b) gb = tp.grad_buffer(bid);
    for (std::size_t i = 0; i < bc.rows; ++i) {
      const std::size_t ai = (bc.ar == 1 ? 0 : i) * bc.ac;
      const std::size_t bi = (bc.br == 1 ? 0 : i) * bc.bc;
      for (std::size_t j = 0; j < bc.cols; ++j) {
        const std::size_t ak = ai + (bc.ac == 1 ? 0 : j);
        const std::size_t bk = bi + (bc.bc == 1 ? 0 : j);
        const double gij = g[i * bc.cols + j];
        if (need_a) ga[ak] += gij * dfa(ad[ak], bd[bk]);
        if (need_b) gb[bk] += gij * dfb(ad[ak], bd[bk]);
      }
    }
  });
}

template <class F, class DF>
Var unary_op(Var a, F f, DF df) {
  Tape& t = tape_of(a);
  const Tensor& av = a.value();
  Tensor out(av.shape(), 0.0);
  auto ad = av.data();
  auto od = out.data();
  for (std::size_t i = 0; i < ad.size(); ++i) od[i] = f(ad[i]);
  const std::size_t aid = a.id();
  const std::size_t oid = t.size();
  return t.record(std::move(out), {a}, [aid, oid, df](Tape& tp, std::span<const double> g) {
    auto ga = tp.grad_buffer(aid);
    auto x = tp.value(aid).data();
    auto y = tp.value(oid).data();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * df(x[i], y[i]);
  });
}

}  // namespace

Var add(Var a, Var b) {
  return binary_op(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Var sub(Var a, Var b) {
  return binary_op(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Var mul(Var a, Var b) {
  return binary_op(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double, double y) { return y; }, [](double x, double) { return x; });
}

Var div(Var a, Var b) {
  return binary_op(
      a, b, "div", [](double x, double y) { return x / y; },
      [](double, double y) { return 1.0 / y; }, [](double x, double y) { return -x / (y * y); });
}

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.rows()) {
    throw ShapeError("matmul: inner dimensions differ, " + shape_string(av.shape()) + " x " +
                     shape_string(bv.shape()));
  }
  const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
  Tensor out = Tensor::matrix(m, n);
  if (k > 0) as_matrix(out.data(), m, n).noalias() = as_matrix(av) * as_matrix(bv);
  const std::size_t aid = a.id(), bid = b.id();
  return t.record(std::move(out), {a, b}, [aid, bid, m, k, n](Tape& tp, std::span<const double> g) {
    if (k == 0) return;
    auto gm = as_matrix(g, m, n);
    if (tp.requires_grad(aid)) {
      as_matrix(tp.grad_buffer(aid), m, k).noalias() +=
          gm * as_matrix(tp.value(bid)).transpose();
    }
    if (tp.requires_grad(bid)) {
      as_matrix(tp.grad_buffer(bid), k, n).noalias() +=
          as_matrix(tp.value(aid)).transpose() * gm;
    }
  });
}

Var affine(Var x, Var weight, Var bias) {
  Tape& t = tape_of(x, weight);
  if (bias.tape() != &t) throw Error("operands belong to different tapes");
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  const Tensor& bv = bias.value();
  if (xv.cols() != wv.rows() || bv.size() != wv.cols()) {
    throw ShapeError("affine: shapes " + shape_string(xv.shape()) + ", " +
                     shape_string(wv.shape()) + ", " + shape_string(bv.shape()));
  }
  const std::size_t m = xv.rows(), k = xv.cols(), n = wv.cols();
  Tensor out = Tensor::matrix(m, n);
  auto om = as_matrix(out.data(), m, n);
  if (k > 0) {
    om.noalias() = as_matrix(xv) * as_matrix(wv);
  } else {
    om.setZero();
  }
  om.rowwise() += as_matrix(bv.data(), 1, n).row(0);
  const std::size_t xid = x.id(), wid = weight.id(), bid = bias.id();
  return t.record(std::move(out), {x, weight, bias},
                  [xid, wid, bid, m, k, n](Tape& tp, std::span<const double> g) {
                    auto gm = as_matrix(g, m, n);
                    if (k > 0 && tp.requires_grad(xid)) {
                      as_matrix(tp.grad_buffer(xid), m, k).noalias() +=
                          gm * as_matrix(tp.value(wid)).transpose();
                    }
                    if (k > 0 && tp.requires_grad(wid)) {
                      as_matrix(tp.grad_buffer(wid), k, n).noalias() +=
                          as_matrix(tp.value(xid)).transpose() * gm;
                    }
                    if (tp.requires_grad(bid)) {
                      as_matrix(tp.grad_buffer(bid), 1, n).row(0) += gm.colwise().sum();
                    }
                  });
}

Var neg(Var a) {
  return unary_op(a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Var scale(Var a, double s) {
  return unary_op(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var add_scalar(Var a, double s) {
  return unary_op(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var exp(Var a) {
  return unary_op(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
  return unary_op(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var square(Var a) {
  return unary_op(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var sigmoid(Var a) {
  return unary_op(
      a, [](double x) { return sigmoid(x); }, [](double, double y) { return y * (1.0 - y); });
}

Var softplus(Var a) {
  return unary_op(
      a, [](double x) { return softplus(x); }, [](double x, double) { return sigmoid(x); });
}

Var swish(Var a) {
  return unary_op(
      a, [](double x) { return x * sigmoid(x); },
      [](double x, double) {
        const double s = sigmoid(x);
        return s + x * s * (1.0 - s);
      });
}

Var tanh(Var a) {
  return unary_op(
      a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var clamp(Var a, double lo, double hi) {
  return unary_op(
      a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

Var sum(Var a) {
  Tape& t = tape_of(a);
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  const std::size_t aid = a.id();
  return t.record(Tensor::scalar(s), {a}, [aid](Tape& tp, std::span<const double> g) {
    for (double& x : tp.grad_buffer(aid)) x += g[0];
  });
}

Var mean(Var a) {
  const auto n = a.size();
  if (n == 0) throw ShapeError("mean of an empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var sum_cols(Var a) {
  Tape& t = tape_of(a);
  const Tensor& av = a.value();
  const std::size_t r = av.rows(), c = av.cols();
  Tensor out = Tensor::matrix(r, 1);
  for (std::size_t i = 0; i < r; ++i) {
    double s = 0.0;
    for (double v : av.row_span(i)) s += v;
    out[i] = s;
  }
  const std::size_t aid = a.id();
  return t.record(std::move(out), {a}, [aid, r, c](Tape& tp, std::span<const double> g) {
    auto ga = tp.grad_buffer(aid);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[i];
  });
}

Var concat_cols(Var a, Var b) {
  Tape& t = tape_of(a, b);
  Tensor out = concat_cols(a.value(), b.value());
  const std::size_t aid = a.id(), bid = b.id();
  const std::size_t r = out.rows(), ca = a.cols(), cb = b.cols();
  return t.record(std::move(out), {a, b}, [aid, bid, r, ca, cb](Tape& tp, std::span<const double> g) {
    const std::size_t c = ca + cb;
    if (tp.requires_grad(aid) && ca > 0) {
      auto ga = tp.grad_buffer(aid);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < ca; ++j) ga[i * ca + j] += g[i * c + j];
    }
    if (tp.requires_grad(bid) && cb > 0) {
      auto gb = tp.grad_buffer(bid);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < cb; ++j) gb[i * cb + j] += g[i * c + ca + j];
    }
  });
}

Var slice_cols(Var a, std::size_t begin, std::size_t end) {
  Tape& t = tape_of(a);
  Tensor out = slice_cols(a.value(), begin, end);
  const std::size_t aid = a.id();
  const std::size_t r = out.rows(), c = a.cols();
  return t.record(std::move(out), {a}, [aid, r, c, begin, end](Tape& tp, std::span<const double> g) {
    auto ga = tp.grad_buffer(aid);
    const std::size_t w = end - begin;
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < w; ++j) ga[i * c + begin + j] += g[i * w + j];
  });
}

}  // namespace ncp
