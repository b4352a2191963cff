#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "ncp/ncp.hpp"
#include "ncp/vae.hpp"

namespace ncp {

/// Where the positive ("posterior") arm draws z_k from. `kPrior` feeds the
/// base conditional to both arms, which makes the arms indistinguishable.
enum class PositiveArm { kPosterior, kPrior };

std::string to_string(PositiveArm arm);
PositiveArm positive_arm_from_string(const std::string& s);

struct Stage2Config {
  std::size_t steps = 2000;
  std::size_t batch_size = 256;
  double lr_init = 1e-3;
  double lr_final = 1e-7;
  std::vector<std::size_t> hidden{64, 64, 64};
  std::size_t log_every = 100;
  /// Fresh rows used to measure the final loss L*.
  std::size_t eval_batch = 8192;
  /// 0: fresh posterior draws every step. Otherwise a fixed bank of this many
  /// posterior draws is sampled once and minibatches are taken from it.
  std::size_t latent_bank = 0;
  PositiveArm positive_arm = PositiveArm::kPosterior;
  bool parallel_groups = true;
  std::size_t logz_samples = 1000;
  std::size_t logz_repetitions = 20;
  std::uint64_t seed = 2;
};

struct ReportRow {
  std::size_t group = 0;
  std::uint64_t step = 0;
  double loss = 0.0;
  double jsd = 0.0;
};

/// Loss curves plus the final per-group L* and JSD.
struct ClassifierReport {
  static constexpr const char* kSchema = "ncp.classifier_report/1";

  std::vector<ReportRow> curve;  // ordered by step, then group
  std::vector<double> final_loss;
  std::vector<double> final_jsd;
  std::vector<bool> diverged;
  std::vector<std::string> messages;

  void write_csv(std::ostream& os) const;
};

struct Stage2Result {
  ClassifierReport report;
  std::string digest_before;
  std::string digest_after;
};

/// Builds classifiers for every group of `vae` and trains them against its
/// frozen posterior and prior. On return `model` holds the VAE, classifiers,
/// stage-1 digest and (when logz_samples > 0) the log-Z estimate.
Stage2Result train_stage2(NcpModel& model, const DataView& data, const Stage2Config& config);

/// One classifier's NCE minibatch for group k (shared z_<k across both arms).
GroupBatch draw_group_batch(HierarchicalVae& vae, const DataView& data, std::size_t k,
                            std::size_t n, PositiveArm arm, Rng& rng);

}  // namespace ncp
