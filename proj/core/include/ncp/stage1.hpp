#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ncp/datasets.hpp"
#include "ncp/error.hpp"
#include "ncp/optim.hpp"
#include "ncp/vae.hpp"

namespace ncp {

struct Stage1Config {
  std::size_t steps = 5000;
  std::size_t batch_size = 128;
  double lr_init = 1e-3;
  double lr_final = 1e-5;
  /// KL weight ramps linearly 0 -> 1 over this fraction of `steps`.
  double kl_warmup_fraction = 0.3;
  std::size_t eval_every = 250;
  /// Stop after this many evaluations without improvement; 0 disables.
  std::size_t patience = 0;
  std::size_t valid_max_rows = 2000;
  std::uint64_t seed = 1;
};

/// Raised when a training step produces NaN/Inf. The model has already been
/// rolled back to the best parameters seen so far.
class DivergenceError : public NumericError {
 public:
  DivergenceError(std::uint64_t step, const std::string& what)
      : NumericError("training diverged at step " + std::to_string(step) + ": " + what),
        step_(step) {}
  std::uint64_t step() const { return step_; }

 private:
  std::uint64_t step_;
};

struct Stage1Point {
  std::uint64_t step;
  double valid_elbo;
  double train_loss;
};

/// Everything needed to continue a run exactly where it stopped.
struct Stage1State {
  std::uint64_t step = 0;
  std::uint64_t batches_served = 0;
  std::string rng_state;
  AdamState adam;
  double initial_valid_elbo = 0.0;
  double best_valid_elbo = 0.0;
  std::uint64_t best_step = 0;
  std::size_t evals_since_best = 0;
  bool initialized = false;
};

struct Stage1Result {
  std::vector<Stage1Point> history;
  double initial_valid_elbo = 0.0;
  double best_valid_elbo = 0.0;
  std::uint64_t best_step = 0;
  std::uint64_t steps_run = 0;
  bool stopped_early = false;
};

/// Stage-1 trainer: maximizes the hierarchical ELBO of a VAE with its base
/// prior, keeping the best-validation parameters.
class Stage1Trainer {
 public:
  Stage1Trainer(HierarchicalVae& model, DataView train, DataView valid, Stage1Config config);

  /// Fixed-noise single-sample ELBO averaged over (up to valid_max_rows) validation rows.
  double validation_elbo();

  /// Trains until `config.steps` (or early stop), then restores the best parameters.
  Stage1Result run();

  std::uint64_t step() const { return state_.step; }
  const Stage1State& state() const { return state_; }
  /// Adopts a saved state; parameters must already be loaded into the model.
  void restore(Stage1State state);

 private:
  double train_step();
  void snapshot_best();
  void restore_best();

  HierarchicalVae& model_;
  DataView train_;
  DataView valid_;
  Stage1Config config_;
  std::vector<NamedParam> params_;
  Stage1State state_;
  Rng rng_;
  MinibatchIterator batches_;
  std::vector<std::vector<double>> best_params_;
};

}  // namespace ncp
