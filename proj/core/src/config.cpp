#include "ncp/config.hpp"

#include <charconv>
#include <cstdlib>
#include <functional>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "ncp/checkpoint.hpp"
#include "ncp/error.hpp"

namespace ncp {

namespace {

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string where(const std::string& key) { return "config key '" + key + "'"; }

std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError(where(key) + ": expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError(where(key) + ": expected a number, got '" + v + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(where(key) + ": expected true/false, got '" + v + "'");
}

std::vector<std::size_t> parse_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    out.push_back(parse_uint(key, item));
  }
  return out;
}

std::string fmt(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

std::string fmt(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

struct Binding {
  std::string section;
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define NCP_UINT(sec, name, field)                                                          \
  Binding {                                                                                 \
    sec, name,                                                                              \
        [](RunConfig& c, const std::string& v) {                                            \
          c.field = static_cast<decltype(c.field)>(parse_uint(sec "." name, v));            \
        },                                                                                  \
        [](const RunConfig& c) { return std::to_string(c.field); }                          \
  }
#define NCP_DOUBLE(sec, name, field)                                                        \
  Binding {                                                                                 \
    sec, name, [](RunConfig& c, const std::string& v) { c.field = parse_double(sec "." name, v); }, \
        [](const RunConfig& c) { return fmt(c.field); }                                     \
  }
#define NCP_STRING(sec, name, field)                                                        \
  Binding {                                                                                 \
    sec, name, [](RunConfig& c, const std::string& v) { c.field = v; },                     \
        [](const RunConfig& c) { return c.field; }                                          \
  }
#define NCP_LIST(sec, name, field)                                                          \
  Binding {                                                                                 \
    sec, name, [](RunConfig& c, const std::string& v) { c.field = parse_list(sec "." name, v); }, \
        [](const RunConfig& c) { return fmt(c.field); }                                     \
  }

const std::vector<Binding>& bindings() {
  static const std::vector<Binding> table = {
      NCP_UINT("run", "seed", seed),
      NCP_STRING("run", "output_dir", output_dir),

      NCP_STRING("dataset", "family", dataset.family),
      NCP_UINT("dataset", "n", dataset.n),
      NCP_UINT("dataset", "heldout_n", dataset.heldout_n),
      NCP_UINT("dataset", "k_modes", dataset.k_modes),
      NCP_DOUBLE("dataset", "radius", dataset.radius),
      NCP_DOUBLE("dataset", "sigma", dataset.sigma),
      NCP_DOUBLE("dataset", "valid_fraction", dataset.valid_fraction),
      NCP_STRING("dataset", "train_images", dataset.train_images),
      NCP_STRING("dataset", "test_images", dataset.test_images),

      NCP_UINT("model", "data_dim", model.data_dim),
      NCP_LIST("model", "latent_dims", model.latent_dims),
      NCP_UINT("model", "context_dim", model.context_dim),
      NCP_LIST("model", "encoder_hidden", model.encoder_hidden),
      NCP_LIST("model", "decoder_hidden", model.decoder_hidden),
      NCP_LIST("model", "prior_hidden", model.prior_hidden),
      Binding{"model", "likelihood",
              [](RunConfig& c, const std::string& v) { c.model.likelihood = likelihood_from_string(v); },
              [](const RunConfig& c) { return to_string(c.model.likelihood); }},

      NCP_UINT("stage1", "steps", stage1.steps),
      NCP_UINT("stage1", "batch_size", stage1.batch_size),
      NCP_DOUBLE("stage1", "lr_init", stage1.lr_init),
      NCP_DOUBLE("stage1", "lr_final", stage1.lr_final),
      NCP_DOUBLE("stage1", "kl_warmup_fraction", stage1.kl_warmup_fraction),
      NCP_UINT("stage1", "eval_every", stage1.eval_every),
      NCP_UINT("stage1", "patience", stage1.patience),
      NCP_UINT("stage1", "valid_max_rows", stage1.valid_max_rows),

      NCP_UINT("stage2", "steps", stage2.steps),
      NCP_UINT("stage2", "batch_size", stage2.batch_size),
      NCP_DOUBLE("stage2", "lr_init", stage2.lr_init),
      NCP_DOUBLE("stage2", "lr_final", stage2.lr_final),
      NCP_LIST("stage2", "hidden", stage2.hidden),
      NCP_UINT("stage2", "log_every", stage2.log_every),
      NCP_UINT("stage2", "eval_batch", stage2.eval_batch),
      NCP_UINT("stage2", "latent_bank", stage2.latent_bank),
      Binding{"stage2", "positive_arm",
              [](RunConfig& c, const std::string& v) { c.stage2.positive_arm = positive_arm_from_string(v); },
              [](const RunConfig& c) { return to_string(c.stage2.positive_arm); }},
      Binding{"stage2", "parallel_groups",
              [](RunConfig& c, const std::string& v) {
                c.stage2.parallel_groups = parse_bool("stage2.parallel_groups", v);
              },
              [](const RunConfig& c) { return std::string(c.stage2.parallel_groups ? "true" : "false"); }},
      NCP_UINT("stage2", "logz_samples", stage2.logz_samples),
      NCP_UINT("stage2", "logz_repetitions", stage2.logz_repetitions),

      NCP_STRING("sampler", "method", sampler.method),
      NCP_UINT("sampler", "sir_m", sampler.sir_m),
      NCP_DOUBLE("sampler", "ld_lambda", sampler.ld_lambda),
      NCP_UINT("sampler", "ld_steps", sampler.ld_steps),
      NCP_DOUBLE("sampler", "temperature", sampler.temperature),

      NCP_UINT("eval", "n_importance", eval.n_importance),
      NCP_UINT("eval", "quality_samples", eval.quality_samples),
      NCP_UINT("eval", "nll_rows", eval.nll_rows),
      NCP_DOUBLE("eval", "grid_lo", eval.grid.lo),
      NCP_DOUBLE("eval", "grid_hi", eval.grid.hi),
      NCP_UINT("eval", "grid_bins", eval.grid.bins),
  };
  return table;
}

#undef NCP_UINT
#undef NCP_DOUBLE
#undef NCP_STRING
#undef NCP_LIST

}  // namespace

void RunConfig::derive_seeds() {
  stage1.seed = seed + 1;
  stage2.seed = seed + 2;
}

void RunConfig::validate() const {
  if (dataset.family != "gaussian_ring" && dataset.family != "mnist_idx") {
    throw ConfigError("dataset.family must be gaussian_ring or mnist_idx, got '" + dataset.family + "'");
  }
  if (dataset.family == "mnist_idx" && dataset.train_images.empty()) {
    throw ConfigError("dataset.train_images is required for mnist_idx");
  }
  if (dataset.family == "gaussian_ring" && (dataset.n == 0 || dataset.k_modes == 0 || !(dataset.sigma > 0))) {
    throw ConfigError("gaussian_ring needs n > 0, k_modes > 0 and sigma > 0");
  }
  if (!(dataset.valid_fraction > 0.0 && dataset.valid_fraction < 1.0)) {
    throw ConfigError("dataset.valid_fraction must lie in (0, 1)");
  }
  model.validate();
  if (stage1.batch_size == 0 || stage2.batch_size == 0) throw ConfigError("batch sizes must be positive");
  if (stage1.eval_every == 0) throw ConfigError("stage1.eval_every must be positive");
  if (stage2.log_every == 0) throw ConfigError("stage2.log_every must be positive");
  if (!(stage1.lr_init >= stage1.lr_final && stage1.lr_final > 0)) {
    throw ConfigError("stage1 needs lr_init >= lr_final > 0");
  }
  if (!(stage2.lr_init >= stage2.lr_final && stage2.lr_final > 0)) {
    throw ConfigError("stage2 needs lr_init >= lr_final > 0");
  }
  if (stage2.hidden.size() != 3) throw ConfigError("stage2.hidden lists three layer widths");
  if (sampler.method != "sir" && sampler.method != "ld") throw ConfigError("sampler.method must be sir or ld");
  if (sampler.sir_m == 0) throw ConfigError("sampler.sir_m must be >= 1");
  if (!(sampler.ld_lambda > 0)) throw ConfigError("sampler.ld_lambda must be > 0");
  if (!(sampler.temperature >= 0 && sampler.temperature <= 1)) {
    throw ConfigError("sampler.temperature must lie in [0, 1]");
  }
  if (eval.grid.bins == 0 || !(eval.grid.hi > eval.grid.lo)) throw ConfigError("eval grid is empty");
}

RunConfig parse_run_config(std::string_view text) {
  boost::property_tree::ptree tree;
  std::istringstream in{std::string(text)};
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(std::string("config parse error: ") + e.message() + " at line " +
                      std::to_string(e.line()));
  }
  RunConfig cfg;
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) {
      throw ConfigError("config key '" + section + "' must sit inside a [section]");
    }
    for (const auto& [key, value] : body) {
      const Binding* b = nullptr;
      for (const auto& cand : bindings()) {
        if (cand.section == section && cand.key == key) b = &cand;
      }
      if (!b) throw ConfigError("unknown config key '" + section + "." + key + "'");
      b->set(cfg, trim(value.get_value<std::string>()));
    }
  }
  cfg.derive_seeds();
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("config file '" + path.string() + "' not found");
  return parse_run_config(read_file_bytes(path));
}

std::string to_ini(const RunConfig& config) {
  std::string out;
  std::string current;
  for (const auto& b : bindings()) {
    if (b.section != current) {
      if (!current.empty()) out += "\n";
      out += "[" + b.section + "]\n";
      current = b.section;
    }
    out += b.key + " = " + b.get(config) + "\n";
  }
  return out;
}

void apply_env_overrides(RunConfig& config) {
  if (const char* s = std::getenv("NCP_SEED"); s && *s) {
    config.seed = parse_uint("NCP_SEED", s);
    config.derive_seeds();
  }
}

}  // namespace ncp
