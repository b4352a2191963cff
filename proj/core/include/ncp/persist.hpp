#pragma once

#include <string>

#include <nlohmann/json.hpp>

#include "ncp/checkpoint.hpp"
#include "ncp/config.hpp"
#include "ncp/ncp.hpp"
#include "ncp/stage1.hpp"
#include "ncp/stage2.hpp"

namespace ncp {

nlohmann::json spec_to_json(const HierarchySpec& spec);
HierarchySpec spec_from_json(const nlohmann::json& j);

/// Copies named parameters into a checkpoint under `prefix`.
void store_parameters(Checkpoint& ckpt, const std::string& prefix, std::vector<NamedParam> params);
/// Loads them back; shapes must match exactly.
void load_parameters(const Checkpoint& ckpt, const std::string& prefix, std::vector<NamedParam> params);

Checkpoint make_stage1_checkpoint(HierarchicalVae& model, const RunConfig& config,
                                  const Stage1State& state);

struct Stage1Snapshot {
  HierarchicalVae model;
  RunConfig config;
  Stage1State state;
  std::string digest;
};

/// Throws IoError when the checkpoint is not a stage-1 checkpoint.
Stage1Snapshot read_stage1_checkpoint(const Checkpoint& ckpt);

Checkpoint make_ncp_checkpoint(NcpModel& model, const RunConfig& config);

struct NcpSnapshot {
  NcpModel model;
  RunConfig config;
};

/// Verifies the stored VAE digest against the loaded parameters.
NcpSnapshot read_ncp_checkpoint(const Checkpoint& ckpt);

}  // namespace ncp
