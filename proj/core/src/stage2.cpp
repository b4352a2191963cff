#include "ncp/stage2.hpp"

#include <exception>
#include <ostream>
#include <thread>

#include "ncp/error.hpp"
#include "ncp/eval.hpp"
#include "ncp/optim.hpp"
#include "ncp/samplers.hpp"

namespace ncp {

std::string to_string(PositiveArm arm) {
  return arm == PositiveArm::kPosterior ? "posterior" : "prior";
}

PositiveArm positive_arm_from_string(const std::string& s) {
  if (s == "posterior") return PositiveArm::kPosterior;
  if (s == "prior") return PositiveArm::kPrior;
  throw ConfigError("positive_arm must be 'posterior' or 'prior', got '" + s + "'");
}

void ClassifierReport::write_csv(std::ostream& os) const {
  os << "#schema=" << kSchema << "\n";
  os << "group,step,loss,jsd\n";
  os.precision(17);
  for (const auto& r : curve) os << r.group << ',' << r.step << ',' << r.loss << ',' << r.jsd << '\n';
}

namespace {

GaussianParams prior_rows(HierarchicalVae& vae, std::size_t k, const Tensor& context) {
  Tape tape;
  DiagGaussian p = k == 0 ? vae.prior(tape, 0, Var{}) : vae.prior(tape, k, tape.constant(context));
  return {p.mu.value(), p.log_sigma.value()};
}

struct BankedDraw {
  Tensor z_k;
  Tensor context;
};

struct GroupOutcome {
  std::vector<ReportRow> rows;
  double final_loss = 0.0;
  bool diverged = false;
  std::string message;
  std::exception_ptr error;
};

class GroupTrainer {
 public:
  GroupTrainer(HierarchicalVae& vae, const DataView& data, RatioClassifier& clf, std::size_t k,
               const Stage2Config& cfg, Rng rng)
      : vae_(vae), data_(data), clf_(clf), k_(k), cfg_(cfg), rng_(std::move(rng)) {}

  GroupOutcome run() {
    GroupOutcome out;
    try {
      if (cfg_.latent_bank > 0) {
        auto d = aggregate_posterior_sample_group(vae_, data_, k_, cfg_.latent_bank, rng_);
        bank_ = BankedDraw{d.z_k, d.context};
      }
      auto params = clf_.parameters();
      set_requires_grad(params, true);
      Adam adam(params);
      for (std::size_t step = 0; step < cfg_.steps; ++step) {
        const double lr = cosine_anneal(static_cast<std::int64_t>(step),
                                        static_cast<std::int64_t>(cfg_.steps), cfg_.lr_init,
                                        cfg_.lr_final);
        GroupBatch b = next_batch(cfg_.batch_size);
        Tape tape;
        Var loss = nce_loss_hier(tape, clf_, b);
        adam.zero_grad();
        try {
          tape.backward(loss);
          adam.step(lr);
        } catch (const NumericError& e) {
          // adam_step leaves parameters untouched on a bad gradient, so the
          // classifier still holds the last good values.
          out.diverged = true;
          out.message = "group " + std::to_string(k_) + " diverged at step " +
                        std::to_string(step) + ": " + e.what();
          break;
        }
        if ((step + 1) % cfg_.log_every == 0 || step + 1 == cfg_.steps) {
          out.rows.push_back({k_, step + 1, loss.item(), jsd_from_loss(loss.item())});
        }
      }
      set_requires_grad(params, false);
      GroupBatch eval = draw_group_batch(vae_, data_, k_, cfg_.eval_batch, cfg_.positive_arm, rng_);
      out.final_loss = nce_loss_hier(clf_, eval);
    } catch (const NumericError& e) {
      out.diverged = true;
      out.message = "group " + std::to_string(k_) + ": " + e.what();
    } catch (...) {
      out.error = std::current_exception();
    }
    return out;
  }

 private:
  GroupBatch next_batch(std::size_t n) {
    if (!bank_) return draw_group_batch(vae_, data_, k_, n, cfg_.positive_arm, rng_);
    std::vector<std::size_t> idx(n);
    for (auto& i : idx) i = rng_.index(bank_->z_k.rows());
    GroupBatch b;
    b.context_q = gather_rows(bank_->context, idx);
    b.context_p = b.context_q;
    GaussianParams p = prior_rows(vae_, k_, b.context_q);
    b.z_q = cfg_.positive_arm == PositiveArm::kPosterior ? gather_rows(bank_->z_k, idx)
                                                          : sample_gaussian_rows(p, n, rng_);
    b.z_p = sample_gaussian_rows(p, n, rng_);
    return b;
  }

  HierarchicalVae& vae_;
  const DataView& data_;
  RatioClassifier& clf_;
  std::size_t k_;
  const Stage2Config& cfg_;
  Rng rng_;
  std::optional<BankedDraw> bank_;
};

}  // namespace

GroupBatch draw_group_batch(HierarchicalVae& vae, const DataView& data, std::size_t k,
                            std::size_t n, PositiveArm arm, Rng& rng) {
  auto d = aggregate_posterior_sample_group(vae, data, k, n, rng);
  GroupBatch b;
  b.context_q = d.context;
  b.context_p = d.context;
  GaussianParams p = prior_rows(vae, k, d.context);
  b.z_q = arm == PositiveArm::kPosterior ? d.z_k : sample_gaussian_rows(p, n, rng);
  b.z_p = sample_gaussian_rows(p, n, rng);
  return b;
}

Stage2Result train_stage2(NcpModel& model, const DataView& data, const Stage2Config& cfg) {
  if (cfg.batch_size == 0 || cfg.eval_batch == 0) throw ConfigError("stage2: batch sizes must be positive");
  if (cfg.log_every == 0) throw ConfigError("stage2: log_every must be positive");
  if (data.size() == 0) throw ConfigError("stage2: empty dataset");
  auto& vae = model.vae;
  const auto& spec = vae.spec();
  const std::size_t K = vae.groups();
  vae.set_trainable(false);

  Stage2Result result;
  result.digest_before = parameter_digest(vae);
  model.stage1_digest = result.digest_before;

  Rng root(cfg.seed, 0x4e4345);
  if (model.classifiers.size() != K) {
    model.classifiers.clear();
    for (std::size_t k = 0; k < K; ++k) {
      model.classifiers.emplace_back(k, spec.latent_dims[k], k == 0 ? 0 : spec.context_dim,
                                     cfg.hidden);
      Rng init = root.fork(0x1000 + k);
      model.classifiers.back().init(init);
    }
  }

  std::vector<GroupOutcome> outcomes(K);
  std::vector<GroupTrainer> trainers;
  trainers.reserve(K);
  for (std::size_t k = 0; k < K; ++k) {
    trainers.emplace_back(vae, data, model.classifiers[k], k, cfg, root.fork(0x2000 + k));
  }
  if (cfg.parallel_groups && K > 1) {
    std::vector<std::jthread> threads;
    for (std::size_t k = 0; k < K; ++k) {
      threads.emplace_back([&, k] { outcomes[k] = trainers[k].run(); });
    }
  } else {
    for (std::size_t k = 0; k < K; ++k) outcomes[k] = trainers[k].run();
  }
  for (auto& o : outcomes) {
    if (o.error) std::rethrow_exception(o.error);
  }

  auto& rep = result.report;
  std::size_t longest = 0;
  for (auto& o : outcomes) longest = std::max(longest, o.rows.size());
  for (std::size_t i = 0; i < longest; ++i) {
    for (auto& o : outcomes) {
      if (i < o.rows.size()) rep.curve.push_back(o.rows[i]);
    }
  }
  for (auto& o : outcomes) {
    rep.final_loss.push_back(o.final_loss);
    rep.final_jsd.push_back(jsd_from_loss(o.final_loss));
    rep.diverged.push_back(o.diverged);
    rep.messages.push_back(o.message);
  }

  if (cfg.logz_samples > 0) {
    Rng logz_rng = root.fork(0x3000);
    model.log_z = estimate_log_z(model, cfg.logz_samples, cfg.logz_repetitions, logz_rng);
  }
  result.digest_after = parameter_digest(vae);
  if (result.digest_after != result.digest_before) {
    throw NumericError("stage2 modified the frozen VAE");
  }
  return result;
}

}  // namespace ncp
