#include "ncp/ncp.hpp"

#include <cmath>
#include <cstring>
#include <numbers>
#include <sstream>

#include "ncp/error.hpp"

namespace ncp {

RatioClassifier::RatioClassifier(std::size_t group, std::size_t z_dim, std::size_t context_dim,
                                 const std::vector<std::size_t>& hidden)
    : group_(group), z_dim_(z_dim), context_dim_(context_dim), hidden_(hidden) {
  if (group == 0 && context_dim != 0) {
    throw ShapeError("the group-0 classifier takes no context");
  }
  net_ = Mlp(z_dim + context_dim, hidden, 1, Activation::kSwish);
}

void RatioClassifier::init(Rng& rng) { net_.init(rng); }

void RatioClassifier::zero() { net_.zero(); }

Var RatioClassifier::logit(Tape& tape, Var z, Var context) {
  if (z.cols() != z_dim_) throw ShapeError("classifier: z width mismatch");
  if (context_dim_ == 0) return net_.forward(tape, z);
  if (context.cols() != context_dim_) throw ShapeError("classifier: context width mismatch");
  return net_.forward(tape, concat_cols(z, context));
}

Tensor RatioClassifier::logit(const Tensor& z, const Tensor& context) const {
  if (z.cols() != z_dim_) throw ShapeError("classifier: z width mismatch");
  if (context_dim_ == 0) return net_.evaluate(z);
  if (context.cols() != context_dim_ || context.rows() != z.rows()) {
    throw ShapeError("classifier: context shape mismatch");
  }
  return net_.evaluate(concat_cols(z, context));
}

std::vector<NamedParam> RatioClassifier::parameters() {
  std::vector<NamedParam> out;
  net_.collect("clf" + std::to_string(group_), out);
  return out;
}

double nce_loss(std::span<const double> logits_q, std::span<const double> logits_p) {
  if (logits_q.empty() || logits_p.empty()) throw ShapeError("nce_loss: empty batch");
  double a = 0.0;
  for (double l : logits_q) a += softplus(-l);
  double b = 0.0;
  for (double l : logits_p) b += softplus(l);
  return a / static_cast<double>(logits_q.size()) + b / static_cast<double>(logits_p.size());
}

Var nce_loss(Var logits_q, Var logits_p) {
  if (logits_q.size() == 0 || logits_p.size() == 0) throw ShapeError("nce_loss: empty batch");
  return mean(softplus(-logits_q)) + mean(softplus(logits_p));
}

namespace {

void check_group_batch(const RatioClassifier& c, const GroupBatch& b) {
  if (b.z_q.rows() == 0 || b.z_p.rows() == 0) throw ShapeError("nce_loss_hier: empty batch");
  if (b.context_q.shape() != b.context_p.shape() || b.context_q.storage() != b.context_p.storage()) {
    throw ShapeError("nce_loss_hier: context mismatch between posterior and prior arms");
  }
  if (b.context_q.cols() != c.context_dim()) throw ShapeError("nce_loss_hier: context width");
  if (b.z_q.rows() != b.context_q.rows() || b.z_p.rows() != b.context_p.rows()) {
    throw ShapeError("nce_loss_hier: one context row per sample required");
  }
}

}  // namespace

Var nce_loss_hier(Tape& tape, RatioClassifier& classifier, const GroupBatch& batch) {
  check_group_batch(classifier, batch);
  Var lq = classifier.logit(tape, tape.constant(batch.z_q), tape.constant(batch.context_q));
  Var lp = classifier.logit(tape, tape.constant(batch.z_p), tape.constant(batch.context_p));
  return nce_loss(lq, lp);
}

double nce_loss_hier(const RatioClassifier& classifier, const GroupBatch& batch) {
  check_group_batch(classifier, batch);
  Tensor lq = classifier.logit(batch.z_q, batch.context_q);
  Tensor lp = classifier.logit(batch.z_p, batch.context_p);
  return nce_loss(lq.data(), lp.data());
}

std::vector<double> log_reweight(const RatioClassifier& classifier, const Tensor& z,
                                 const Tensor& context) {
  Tensor l = classifier.logit(z, context);
  l.check_finite("classifier logit");
  return l.storage();
}

double jsd_from_loss(double loss) { return std::numbers::ln2 - 0.5 * loss; }

std::vector<double> base_log_prior(HierarchicalVae& model, const Tensor& z) {
  const auto& spec = model.spec();
  if (z.cols() != spec.total_latent()) throw ShapeError("base_log_prior: latent width mismatch");
  Tape tape;
  const std::size_t n = z.rows();
  std::vector<double> out(n, 0.0);
  for (std::size_t k = 0; k < model.groups(); ++k) {
    const std::size_t off = spec.offset(k);
    Var zk = tape.constant(slice_cols(z, off, off + spec.latent_dims[k]));
    DiagGaussian p = k == 0 ? model.prior(tape, 0, Var{})
                            : model.prior(tape, k, model.context(tape, k, tape.constant(slice_cols(z, 0, off))));
    Var lp = gaussian_log_prob(p, zk);
    for (std::size_t i = 0; i < n; ++i) out[i] = k == 0 ? lp.value()[i] : out[i] + lp.value()[i];
  }
  return out;
}

std::vector<double> ncp_log_unnormalized(NcpModel& model, const Tensor& z) {
  auto& vae = model.vae;
  const auto& spec = vae.spec();
  if (model.classifiers.size() != vae.groups()) throw ShapeError("NcpModel: one classifier per group");
  if (z.cols() != spec.total_latent()) throw ShapeError("ncp_log_unnormalized: latent width mismatch");
  Tape tape;
  const std::size_t n = z.rows();
  std::vector<double> out(n, 0.0);
  for (std::size_t k = 0; k < vae.groups(); ++k) {
    const std::size_t off = spec.offset(k);
    Tensor zk = slice_cols(z, off, off + spec.latent_dims[k]);
    Tensor ctx = Tensor::matrix(n, 0);
    DiagGaussian p;
    if (k == 0) {
      p = vae.prior(tape, 0, Var{});
    } else {
      Var c = vae.context(tape, k, tape.constant(slice_cols(z, 0, off)));
      ctx = c.value();
      p = vae.prior(tape, k, c);
    }
    Var lp = gaussian_log_prob(p, tape.constant(zk));
    auto lr = log_reweight(model.classifiers[k], zk, ctx);
    for (std::size_t i = 0; i < n; ++i) {
      const double term = lr[i] + lp.value()[i];
      out[i] = k == 0 ? term : out[i] + term;
    }
  }
  return out;
}

std::string parameter_digest(HierarchicalVae& model) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto mix = [&h](const void* data, std::size_t len) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
      h ^= p[i];
      h *= 0x100000001b3ull;
    }
  };
  for (auto& p : model.parameters()) {
    mix(p.name.data(), p.name.size());
    for (double v : p.tensor->data()) {
      const float f = static_cast<float>(v);
      std::uint32_t bits;
      std::memcpy(&bits, &f, sizeof bits);
      mix(&bits, sizeof bits);
    }
  }
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << h;
  return os.str();
}

}  // namespace ncp
