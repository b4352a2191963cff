#pragma once

#include <optional>

#include "ncp/config.hpp"
#include "ncp/datasets.hpp"
#include "ncp/vae.hpp"

namespace ncp {

/// Train/validation/held-out views for a run, regenerated from its config.
struct RunData {
  DataView train;
  DataView valid;
  /// Held-out rows. Images are binarized once with a fixed stream.
  Tensor heldout;
  std::optional<GaussianMixture> density;
};

RunData load_run_data(const RunConfig& config);

/// Fresh stage-1 model with seeded initial parameters.
HierarchicalVae make_initial_model(const RunConfig& config);

}  // namespace ncp
