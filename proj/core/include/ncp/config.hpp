#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "ncp/datasets.hpp"
#include "ncp/eval.hpp"
#include "ncp/stage1.hpp"
#include "ncp/stage2.hpp"
#include "ncp/vae.hpp"

namespace ncp {

struct DatasetConfig {
  /// "gaussian_ring" or "mnist_idx".
  std::string family = "gaussian_ring";
  std::size_t n = 20000;
  std::size_t heldout_n = 10000;
  std::size_t k_modes = 8;
  double radius = 2.0;
  double sigma = 0.1;
  double valid_fraction = 0.1;
  std::string train_images;
  std::string test_images;
};

struct SamplerDefaults {
  std::string method = "sir";
  std::size_t sir_m = 5000;
  double ld_lambda = 0.01;
  std::size_t ld_steps = 100;
  double temperature = 1.0;
};

struct EvalConfig {
  std::size_t n_importance = 1000;
  std::size_t quality_samples = 5000;
  std::size_t nll_rows = 1000;
  GridSpec grid;
};

/// Everything a pipeline run needs. Section seeds derive from `seed`:
/// dataset = seed, stage 1 = seed + 1, stage 2 = seed + 2.
struct RunConfig {
  DatasetConfig dataset;
  HierarchySpec model;
  Stage1Config stage1;
  Stage2Config stage2;
  SamplerDefaults sampler;
  EvalConfig eval;
  std::uint64_t seed = 1;
  std::string output_dir = "runs";

  /// Propagates `seed` into the stage configs.
  void derive_seeds();
  void validate() const;
};

/// Parses the INI text. Unknown sections or keys raise ConfigError.
RunConfig parse_run_config(std::string_view text);
RunConfig load_run_config(const std::filesystem::path& path);
/// Canonical INI text; parse_run_config(to_ini(c)) reproduces c.
std::string to_ini(const RunConfig& config);

/// Applies NCP_SEED (when set) on top of the parsed seed.
void apply_env_overrides(RunConfig& config);

}  // namespace ncp
