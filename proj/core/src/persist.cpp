#include "ncp/persist.hpp"

#include "ncp/error.hpp"

namespace ncp {

nlohmann::json spec_to_json(const HierarchySpec& spec) {
  return {{"data_dim", spec.data_dim},
          {"latent_dims", spec.latent_dims},
          {"context_dim", spec.context_dim},
          {"encoder_hidden", spec.encoder_hidden},
          {"decoder_hidden", spec.decoder_hidden},
          {"prior_hidden", spec.prior_hidden},
          {"likelihood", to_string(spec.likelihood)}};
}

HierarchySpec spec_from_json(const nlohmann::json& j) {
  try {
    HierarchySpec s;
    s.data_dim = j.at("data_dim").get<std::size_t>();
    s.latent_dims = j.at("latent_dims").get<std::vector<std::size_t>>();
    s.context_dim = j.at("context_dim").get<std::size_t>();
    s.encoder_hidden = j.at("encoder_hidden").get<std::vector<std::size_t>>();
    s.decoder_hidden = j.at("decoder_hidden").get<std::vector<std::size_t>>();
    s.prior_hidden = j.at("prior_hidden").get<std::vector<std::size_t>>();
    s.likelihood = likelihood_from_string(j.at("likelihood").get<std::string>());
    s.validate();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("checkpoint: malformed model spec: ") + e.what());
  }
}

void store_parameters(Checkpoint& ckpt, const std::string& prefix, std::vector<NamedParam> params) {
  for (auto& p : params) ckpt.add(prefix + p.name, *p.tensor);
}

void load_parameters(const Checkpoint& ckpt, const std::string& prefix,
                     std::vector<NamedParam> params) {
  for (auto& p : params) {
    Tensor t = ckpt.tensor(prefix + p.name);
    if (t.shape() != p.tensor->shape()) {
      throw IoError("checkpoint: tensor '" + prefix + p.name + "' has shape " +
                    shape_string(t.shape()) + ", model expects " + shape_string(p.tensor->shape()));
    }
    p.tensor->storage() = t.storage();
    p.tensor->clear_grad();
  }
}

namespace {

std::string require_kind(const Checkpoint& ckpt, const std::string& kind) {
  const auto it = ckpt.metadata.find("kind");
  if (it == ckpt.metadata.end() || !it->is_string() || it->get<std::string>() != kind) {
    throw IoError("checkpoint is not a " + kind + " checkpoint");
  }
  return kind;
}

RunConfig config_from_meta(const Checkpoint& ckpt) {
  try {
    return parse_run_config(ckpt.metadata.at("config").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("checkpoint: missing config: ") + e.what());
  }
}

}  // namespace

Checkpoint make_stage1_checkpoint(HierarchicalVae& model, const RunConfig& config,
                                  const Stage1State& state) {
  Checkpoint ckpt;
  auto params = model.parameters();
  std::vector<std::string> order;
  for (auto& p : params) {
    if (p.tensor->requires_grad()) order.push_back(p.name);
  }
  ckpt.metadata = {{"kind", "stage1"},
                   {"spec", spec_to_json(model.spec())},
                   {"config", to_ini(config)},
                   {"digest", parameter_digest(model)},
                   {"state",
                    {{"step", state.step},
                     {"batches_served", state.batches_served},
                     {"rng", state.rng_state},
                     {"adam_steps", state.adam.step_count},
                     {"adam_order", order},
                     {"initial_valid_elbo", state.initial_valid_elbo},
                     {"best_valid_elbo", state.best_valid_elbo},
                     {"best_step", state.best_step},
                     {"evals_since_best", state.evals_since_best},
                     {"initialized", state.initialized}}}};
  store_parameters(ckpt, "vae.", params);
  if (state.adam.first_moment.size() == order.size()) {
    for (std::size_t i = 0; i < order.size(); ++i) {
      ckpt.add("adam.m." + order[i], state.adam.first_moment[i]);
      ckpt.add("adam.v." + order[i], state.adam.second_moment[i]);
    }
  }
  return ckpt;
}

Stage1Snapshot read_stage1_checkpoint(const Checkpoint& ckpt) {
  require_kind(ckpt, "stage1");
  Stage1Snapshot out;
  out.config = config_from_meta(ckpt);
  out.model = HierarchicalVae(spec_from_json(ckpt.metadata.at("spec")));
  load_parameters(ckpt, "vae.", out.model.parameters());
  try {
    const auto& s = ckpt.metadata.at("state");
    out.state.step = s.at("step").get<std::uint64_t>();
    out.state.batches_served = s.at("batches_served").get<std::uint64_t>();
    out.state.rng_state = s.at("rng").get<std::string>();
    out.state.adam.step_count = s.at("adam_steps").get<std::uint64_t>();
    out.state.initial_valid_elbo = s.at("initial_valid_elbo").get<double>();
    out.state.best_valid_elbo = s.at("best_valid_elbo").get<double>();
    out.state.best_step = s.at("best_step").get<std::uint64_t>();
    out.state.evals_since_best = s.at("evals_since_best").get<std::size_t>();
    out.state.initialized = s.at("initialized").get<bool>();
    for (const auto& name : s.at("adam_order").get<std::vector<std::string>>()) {
      if (!ckpt.contains("adam.m." + name)) break;
      out.state.adam.first_moment.push_back(ckpt.tensor("adam.m." + name));
      out.state.adam.second_moment.push_back(ckpt.tensor("adam.v." + name));
    }
    out.digest = ckpt.metadata.at("digest").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("checkpoint: malformed stage-1 state: ") + e.what());
  }
  if (parameter_digest(out.model) != out.digest) {
    throw IoError("checkpoint: stage-1 parameter digest mismatch");
  }
  return out;
}

Checkpoint make_ncp_checkpoint(NcpModel& model, const RunConfig& config) {
  if (model.classifiers.size() != model.vae.groups()) {
    throw ShapeError("NcpModel: one classifier per group");
  }
  Checkpoint ckpt;
  nlohmann::json hidden = nlohmann::json::array();
  for (auto& c : model.classifiers) hidden.push_back(c.hidden());
  ckpt.metadata = {{"kind", "ncp"},
                   {"spec", spec_to_json(model.vae.spec())},
                   {"config", to_ini(config)},
                   {"stage1_digest", model.stage1_digest},
                   {"classifier_hidden", hidden}};
  if (model.log_z) {
    ckpt.metadata["log_z"] = {{"value", model.log_z->value},
                              {"std", model.log_z->std},
                              {"n_samples", model.log_z->n_samples},
                              {"repetitions", model.log_z->repetitions},
                              {"per_group", model.log_z->per_group}};
  }
  store_parameters(ckpt, "vae.", model.vae.parameters());
  for (auto& c : model.classifiers) store_parameters(ckpt, "", c.parameters());
  return ckpt;
}

NcpSnapshot read_ncp_checkpoint(const Checkpoint& ckpt) {
  require_kind(ckpt, "ncp");
  NcpSnapshot out;
  out.config = config_from_meta(ckpt);
  auto& m = out.model;
  m.vae = HierarchicalVae(spec_from_json(ckpt.metadata.at("spec")));
  load_parameters(ckpt, "vae.", m.vae.parameters());
  m.vae.set_trainable(false);
  try {
    m.stage1_digest = ckpt.metadata.at("stage1_digest").get<std::string>();
    const auto hidden = ckpt.metadata.at("classifier_hidden").get<std::vector<std::vector<std::size_t>>>();
    if (hidden.size() != m.vae.groups()) throw IoError("checkpoint: classifier count mismatch");
    const auto& spec = m.vae.spec();
    for (std::size_t k = 0; k < hidden.size(); ++k) {
      m.classifiers.emplace_back(k, spec.latent_dims[k], k == 0 ? 0 : spec.context_dim, hidden[k]);
      auto params = m.classifiers.back().parameters();
      load_parameters(ckpt, "", params);
      set_requires_grad(params, false);
    }
    if (ckpt.metadata.contains("log_z")) {
      const auto& j = ckpt.metadata.at("log_z");
      LogZEstimate z;
      z.value = j.at("value").get<double>();
      z.std = j.at("std").get<double>();
      z.n_samples = j.at("n_samples").get<std::size_t>();
      z.repetitions = j.at("repetitions").get<std::size_t>();
      z.per_group = j.at("per_group").get<std::vector<double>>();
      m.log_z = z;
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("checkpoint: malformed NCP metadata: ") + e.what());
  }
  if (parameter_digest(m.vae) != m.stage1_digest) {
    throw IoError("checkpoint: VAE parameters do not match the recorded stage-1 digest");
  }
  return out;
}

}  // namespace ncp
