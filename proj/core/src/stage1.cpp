#include "ncp/stage1.hpp"

#include <algorithm>
#include <numeric>

namespace ncp {

Stage1Trainer::Stage1Trainer(HierarchicalVae& model, DataView train, DataView valid,
                             Stage1Config config)
    : model_(model),
      train_(std::move(train)),
      valid_(std::move(valid)),
      config_(config),
      params_(model.parameters()),
      rng_(config.seed, 0x5354471),
      batches_(train_.size(), config.batch_size, config.seed) {
  if (config_.steps == 0 && config_.eval_every == 0) config_.eval_every = 1;
  if (config_.eval_every == 0) throw ConfigError("stage1: eval_every must be positive");
  // Only trainable tensors go to the optimizer.
  std::erase_if(params_, [](const NamedParam& p) { return !p.tensor->requires_grad(); });
}

double Stage1Trainer::validation_elbo() {
  Rng rng(config_.seed, 0x56414c49);
  const std::size_t n = std::min(valid_.size(), config_.valid_max_rows);
  const std::size_t chunk = 1000;
  double total = 0.0;
  for (std::size_t begin = 0; begin < n; begin += chunk) {
    const std::size_t end = std::min(n, begin + chunk);
    std::vector<std::size_t> idx(end - begin);
    std::iota(idx.begin(), idx.end(), begin);
    Tape tape;
    Var x = tape.constant(valid_.batch(idx, rng));
    auto terms = hvae_elbo(tape, model_, x, rng);
    total += terms.elbo.item() * static_cast<double>(end - begin);
  }
  return total / static_cast<double>(n);
}

void Stage1Trainer::snapshot_best() {
  best_params_.clear();
  for (auto& p : params_) best_params_.push_back(p.tensor->storage());
}

void Stage1Trainer::restore_best() {
  if (best_params_.size() != params_.size()) return;
  for (std::size_t i = 0; i < params_.size(); ++i) params_[i].tensor->storage() = best_params_[i];
}

void Stage1Trainer::restore(Stage1State state) {
  state_ = std::move(state);
  if (!state_.rng_state.empty()) rng_.deserialize(state_.rng_state);
  batches_ = MinibatchIterator(train_.size(), config_.batch_size, config_.seed);
  batches_.skip(state_.batches_served);
  snapshot_best();
}

double Stage1Trainer::train_step() {
  const double warm = config_.kl_warmup_fraction * static_cast<double>(config_.steps);
  const double kl_weight =
      warm > 0.0 ? std::min(1.0, static_cast<double>(state_.step) / warm) : 1.0;
  const double lr = config_.steps > 0
                        ? cosine_anneal(static_cast<std::int64_t>(std::min<std::uint64_t>(
                                            state_.step, config_.steps)),
                                        static_cast<std::int64_t>(config_.steps), config_.lr_init,
                                        config_.lr_final)
                        : config_.lr_init;

  auto idx = batches_.next();
  state_.batches_served = batches_.batches_served();
  Tape tape;
  Var x = tape.constant(train_.batch(idx, rng_));
  auto terms = hvae_elbo(tape, model_, x, rng_);
  Var loss = terms.loss(kl_weight);
  zero_grads(params_);
  tape.backward(loss);
  std::vector<Tensor*> raw;
  raw.reserve(params_.size());
  for (auto& p : params_) raw.push_back(p.tensor);
  adam_step(raw, state_.adam, lr);
  state_.step += 1;
  return loss.item();
}

Stage1Result Stage1Trainer::run() {
  Stage1Result result;
  if (!state_.initialized) {
    state_.initial_valid_elbo = validation_elbo();
    state_.best_valid_elbo = state_.initial_valid_elbo;
    state_.best_step = state_.step;
    state_.initialized = true;
    snapshot_best();
    result.history.push_back({state_.step, state_.initial_valid_elbo, 0.0});
  } else if (best_params_.empty()) {
    snapshot_best();
  }

  double last_loss = 0.0;
  while (state_.step < config_.steps) {
    try {
      last_loss = train_step();
    } catch (const NumericError& e) {
      restore_best();
      state_.rng_state = rng_.serialize();
      throw DivergenceError(state_.step, e.what());
    }
    if (state_.step % config_.eval_every == 0 || state_.step == config_.steps) {
      const double v = validation_elbo();
      result.history.push_back({state_.step, v, last_loss});
      if (v > state_.best_valid_elbo) {
        state_.best_valid_elbo = v;
        state_.best_step = state_.step;
        state_.evals_since_best = 0;
        snapshot_best();
      } else {
        ++state_.evals_since_best;
        if (config_.patience > 0 && state_.evals_since_best >= config_.patience) {
          result.stopped_early = true;
          break;
        }
      }
    }
  }
  restore_best();
  state_.rng_state = rng_.serialize();
  result.initial_valid_elbo = state_.initial_valid_elbo;
  result.best_valid_elbo = state_.best_valid_elbo;
  result.best_step = state_.best_step;
  result.steps_run = state_.step;
  return result;
}

}  // namespace ncp
