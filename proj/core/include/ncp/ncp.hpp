#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ncp/autodiff.hpp"
#include "ncp/nn.hpp"
#include "ncp/tensor.hpp"
#include "ncp/vae.hpp"

namespace ncp {

/// Binary classifier D_k(z_k, c(z_<k)) for one latent group. Its logit is
/// the log reweighting factor log r(z_k | z_<k); the probability form is
/// never materialized.
class RatioClassifier {
 public:
  RatioClassifier() = default;
  RatioClassifier(std::size_t group, std::size_t z_dim, std::size_t context_dim,
                  const std::vector<std::size_t>& hidden);

  void init(Rng& rng);
  /// All weights zero: logit 0 everywhere, i.e. r = 1.
  void zero();

  /// Logits, B x 1.
  Var logit(Tape& tape, Var z, Var context);
  Tensor logit(const Tensor& z, const Tensor& context) const;

  std::size_t group() const { return group_; }
  std::size_t z_dim() const { return z_dim_; }
  std::size_t context_dim() const { return context_dim_; }
  const std::vector<std::size_t>& hidden() const { return hidden_; }

  std::vector<NamedParam> parameters();

 private:
  std::size_t group_ = 0;
  std::size_t z_dim_ = 0;
  std::size_t context_dim_ = 0;
  std::vector<std::size_t> hidden_;
  Mlp net_;
};

/// Binary cross-entropy of posterior-vs-prior classification in softplus form:
/// mean softplus(-logit_q) + mean softplus(logit_p).
double nce_loss(std::span<const double> logits_q, std::span<const double> logits_p);
Var nce_loss(Var logits_q, Var logits_p);

/// One conditional-NCE minibatch for group k. Both arms must carry the same
/// context rows: each outer z_<k feeds one posterior and one prior draw.
struct GroupBatch {
  Tensor z_q;
  Tensor z_p;
  Tensor context_q;
  Tensor context_p;
};

Var nce_loss_hier(Tape& tape, RatioClassifier& classifier, const GroupBatch& batch);
double nce_loss_hier(const RatioClassifier& classifier, const GroupBatch& batch);

/// log r(z_k | z_<k) per row (the raw logit). Throws NumericError on NaN/Inf.
std::vector<double> log_reweight(const RatioClassifier& classifier, const Tensor& z,
                                 const Tensor& context);

/// log 2 - 0.5 L*.
double jsd_from_loss(double loss);

struct LogZEstimate {
  double value = 0.0;
  double std = 0.0;
  std::size_t n_samples = 0;
  std::size_t repetitions = 1;
  std::vector<double> per_group;
};

/// Frozen VAE + one classifier per group + the estimated normalizer.
struct NcpModel {
  HierarchicalVae vae;
  std::vector<RatioClassifier> classifiers;
  std::optional<LogZEstimate> log_z;
  std::string stage1_digest;

  std::size_t groups() const { return classifiers.size(); }
};

/// sum_k [log r(z_k | z_<k) + log p(z_k | z_<k)] per row of a full latent.
std::vector<double> ncp_log_unnormalized(NcpModel& model, const Tensor& z);

/// Per-row sum of base-prior conditionals, log p(z).
std::vector<double> base_log_prior(HierarchicalVae& model, const Tensor& z);

/// FNV-1a digest of the parameters rounded to 32-bit floats, as hex.
std::string parameter_digest(HierarchicalVae& model);

}  // namespace ncp
