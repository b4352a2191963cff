#pragma once

#include <string>
#include <vector>

#include "ncp/autodiff.hpp"
#include "ncp/random.hpp"
#include "ncp/tensor.hpp"

namespace ncp {

struct NamedParam {
  std::string name;
  Tensor* tensor;
};

enum class Activation { kSwish, kTanh, kIdentity };

double activate(Activation act, double x);
Var activate(Activation act, Var x);

/// y = x W + b with W of shape (in x out) and b of shape (1 x out).
struct Linear {
  Tensor weight;
  Tensor bias;

  Linear() = default;
  Linear(std::size_t in, std::size_t out);

  std::size_t in() const { return weight.rows(); }
  std::size_t out() const { return weight.cols(); }

  /// Glorot-uniform weights and zero bias. Values are rounded to float so a
  /// freshly initialized layer survives 32-bit serialization bit-exactly.
  void init(Rng& rng, double gain = 1.0);
  Var forward(Tape& tape, Var x);
};

/// Affine layers with an activation between them. `activate_output` also
/// applies the activation after the last layer (used for feature trunks).
class Mlp {
 public:
  Mlp() = default;
  Mlp(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out,
      Activation act = Activation::kSwish, bool activate_output = false);

  void init(Rng& rng, double output_gain = 1.0);
  void zero();

  Var forward(Tape& tape, Var x);
  /// Tape-free forward pass over frozen parameters; safe to call concurrently.
  Tensor evaluate(const Tensor& x) const;

  std::size_t in() const { return in_; }
  std::size_t out() const { return out_; }
  std::vector<Linear>& layers() { return layers_; }
  const std::vector<Linear>& layers() const { return layers_; }
  Activation activation() const { return act_; }

  void collect(const std::string& prefix, std::vector<NamedParam>& out);

 private:
  std::size_t in_ = 0;
  std::size_t out_ = 0;
  Activation act_ = Activation::kSwish;
  bool activate_output_ = false;
  std::vector<Linear> layers_;
};

void set_requires_grad(std::vector<NamedParam>& params, bool flag);
void zero_grads(std::vector<NamedParam>& params);

}  // namespace ncp
