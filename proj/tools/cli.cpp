#include "cli.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "ncp/checkpoint.hpp"
#include "ncp/config.hpp"
#include "ncp/error.hpp"
#include "ncp/eval.hpp"
#include "ncp/image.hpp"
#include "ncp/numeric.hpp"
#include "ncp/persist.hpp"
#include "ncp/pipeline.hpp"
#include "ncp/samplers.hpp"
#include "ncp/stage1.hpp"
#include "ncp/stage2.hpp"

namespace ncp::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kValidMetrics = "nll, quality2d, logz, ess";

RunConfig load_config(const std::string& path) {
  RunConfig cfg = load_run_config(path);
  apply_env_overrides(cfg);
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) { write_file_bytes(path, text); }

std::string csv_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

/// Seed for sampling/evaluation commands: NCP_SEED, then --seed, then the checkpoint config.
std::uint64_t command_seed(RunConfig& cfg, std::optional<std::uint64_t> flag) {
  if (flag) {
    cfg.seed = *flag;
    cfg.derive_seeds();
  }
  apply_env_overrides(cfg);
  return cfg.seed;
}

/// Data-space draws for latent rows: x ~ p(x | z) for Normal decoders,
/// Bernoulli means for binary data.
Tensor decode_samples(HierarchicalVae& vae, const Tensor& z, Rng& rng) {
  Tensor x = decode_mean(vae, z);
  if (vae.spec().likelihood == Likelihood::kNormal) {
    Tape tape;
    Tensor ls = vae.decoder_log_sigma(tape).value();
    for (std::size_t i = 0; i < x.rows(); ++i) {
      for (std::size_t j = 0; j < x.cols(); ++j) x.at(i, j) += std::exp(ls[j]) * rng.normal();
    }
  }
  return x;
}

std::string rows_csv(const Tensor& x, const std::string& prefix) {
  if (x.rows() == 0) return "";
  std::ostringstream os;
  os.precision(9);
  for (std::size_t j = 0; j < x.cols(); ++j) os << (j ? "," : "") << prefix << j;
  os << '\n';
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t j = 0; j < x.cols(); ++j) os << (j ? "," : "") << x.at(i, j);
    os << '\n';
  }
  return os.str();
}

AncestralConfig sampler_config(const SamplerDefaults& d) {
  AncestralConfig ac;
  if (d.method == "sir") {
    ac.method = SamplerKind::kSir;
  } else if (d.method == "ld") {
    ac.method = SamplerKind::kLd;
  } else {
    throw ConfigError("unknown sampler '" + d.method + "' (expected sir or ld)");
  }
  ac.sir.M = d.sir_m;
  ac.ld.lambda = d.ld_lambda;
  ac.ld.T = d.ld_steps;
  ac.temperature.t = d.temperature;
  ac.sir.validate();
  ac.ld.validate();
  ac.temperature.validate();
  return ac;
}

// ---------------------------------------------------------------------------

struct TrainVaeArgs {
  std::string config;
  std::string out;
  std::string resume;
  std::string history;
};

int cmd_train_vae(const TrainVaeArgs& a, std::ostream& out) {
  RunConfig cfg = load_config(a.config);
  RunData data = load_run_data(cfg);
  std::optional<Stage1Snapshot> snap;
  HierarchicalVae model;
  if (!a.resume.empty()) {
    snap = read_stage1_checkpoint(load_checkpoint(a.resume));
    if (spec_to_json(snap->model.spec()) != spec_to_json(cfg.model)) {
      throw ConfigError("--resume checkpoint was trained with a different [model] section");
    }
    model = snap->model;
  } else {
    model = make_initial_model(cfg);
  }
  Stage1Trainer trainer(model, data.train, data.valid, cfg.stage1);
  if (snap) trainer.restore(snap->state);

  Stage1Result result;
  try {
    result = trainer.run();
  } catch (const DivergenceError&) {
    save_checkpoint(a.out, make_stage1_checkpoint(model, cfg, trainer.state()));
    throw;
  }
  save_checkpoint(a.out, make_stage1_checkpoint(model, cfg, trainer.state()));
  if (!a.history.empty()) {
    std::ostringstream os;
    os << "#schema=ncp.stage1_history/1\nstep,valid_elbo,train_loss\n";
    for (const auto& p : result.history) {
      os << p.step << ',' << csv_double(p.valid_elbo) << ',' << csv_double(p.train_loss) << '\n';
    }
    write_text(a.history, os.str());
  }
  out << "stage1: steps " << result.steps_run << ", valid ELBO " << result.initial_valid_elbo
      << " -> " << result.best_valid_elbo << " (best at step " << result.best_step << ")"
      << (result.stopped_early ? ", stopped early" : "") << "\n";
  out << "digest " << parameter_digest(model) << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct TrainNcpArgs {
  std::string config;
  std::string stage1;
  std::string out;
  std::string report;
};

int cmd_train_ncp(const TrainNcpArgs& a, std::ostream& out, std::ostream& err) {
  RunConfig cfg = load_config(a.config);
  Stage1Snapshot snap = read_stage1_checkpoint(load_checkpoint(a.stage1));
  cfg.model = snap.model.spec();
  RunData data = load_run_data(cfg);
  NcpModel model;
  model.vae = snap.model;
  Stage2Result res = train_stage2(model, data.train, cfg.stage2);
  if (model.stage1_digest != snap.digest) {
    throw NumericError("stage-1 digest changed during stage 2");
  }
  save_checkpoint(a.out, make_ncp_checkpoint(model, cfg));

  const std::string report = a.report.empty() ? a.out + ".report.csv" : a.report;
  std::ostringstream csv;
  res.report.write_csv(csv);
  write_text(report, csv.str());

  json summary = {{"stage1_digest", model.stage1_digest}, {"groups", json::array()}};
  bool diverged = false;
  for (std::size_t k = 0; k < res.report.final_loss.size(); ++k) {
    summary["groups"].push_back({{"group", k},
                                 {"final_loss", res.report.final_loss[k]},
                                 {"jsd", res.report.final_jsd[k]},
                                 {"diverged", static_cast<bool>(res.report.diverged[k])}});
    out << "group " << k << ": L* " << res.report.final_loss[k] << ", JSD "
        << res.report.final_jsd[k] << "\n";
    if (res.report.diverged[k]) {
      err << res.report.messages[k] << "\n";
      diverged = true;
    }
  }
  if (model.log_z) {
    summary["log_z"] = {{"value", model.log_z->value},
                        {"std", model.log_z->std},
                        {"n", model.log_z->n_samples}};
    out << "log Z " << model.log_z->value << " (std " << model.log_z->std << ")\n";
  }
  write_text(report + ".json", summary.dump(2) + "\n");
  return diverged ? kExitNumeric : kExitOk;
}

// ---------------------------------------------------------------------------

struct SampleArgs {
  std::string ncp;
  std::string sampler;
  std::size_t n = 0;
  std::optional<double> temperature;
  std::optional<std::size_t> sir_m;
  std::optional<double> ld_lambda;
  std::optional<std::size_t> ld_steps;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string grid;
  std::size_t grid_cols = 10;
  std::string latents;
  bool base = false;
};

int cmd_sample(const SampleArgs& a, std::ostream& out) {
  NcpSnapshot snap = read_ncp_checkpoint(load_checkpoint(a.ncp));
  RunConfig& cfg = snap.config;
  SamplerDefaults d = cfg.sampler;
  if (!a.sampler.empty()) d.method = a.sampler;
  if (a.temperature) d.temperature = *a.temperature;
  if (a.sir_m) d.sir_m = *a.sir_m;
  if (a.ld_lambda) d.ld_lambda = *a.ld_lambda;
  if (a.ld_steps) d.ld_steps = *a.ld_steps;
  AncestralConfig ac = sampler_config(d);
  Rng rng(command_seed(cfg, a.seed), 0x53414d50);

  Tensor z;
  std::vector<double> ess;
  if (a.n == 0) {
    z = Tensor::matrix(0, snap.model.vae.spec().total_latent());
  } else if (a.base) {
    z = sample_base_prior(snap.model.vae, a.n, rng, ac.temperature);
  } else {
    AncestralResult r = ancestral_ncp_sample(snap.model, a.n, ac, rng);
    z = r.z;
    ess = r.mean_ess();
  }
  Rng decode_rng = rng.fork(1);
  Tensor x = a.n == 0 ? Tensor::matrix(0, snap.model.vae.spec().data_dim)
                      : decode_samples(snap.model.vae, z, decode_rng);
  write_text(a.out, rows_csv(x, "x"));
  if (!a.latents.empty()) write_text(a.latents, rows_csv(z, "z"));
  if (!a.grid.empty()) {
    const std::size_t dim = snap.model.vae.spec().data_dim;
    const auto side = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(dim))));
    if (side * side != dim) throw ConfigError("--grid needs square images (data_dim = side^2)");
    write_pgm_grid(a.grid, decode_mean(snap.model.vae, z), side, side, a.grid_cols);
  }
  out << "wrote " << a.n << " samples to " << a.out << "\n";
  for (std::size_t k = 0; k < ess.size(); ++k) out << "group " << k << " mean ESS " << ess[k] << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string ncp;
  std::string metric;
  std::string out;
  std::optional<std::size_t> n;
  std::optional<std::size_t> repetitions;
  std::optional<std::uint64_t> seed;
};

void write_metric(const fs::path& dir, const std::string& metric, const std::string& csv,
                  const json& summary) {
  write_text(dir / (metric + ".csv"), "#schema=ncp.eval." + metric + "/1\n" + csv);
  write_text(dir / (metric + ".json"), summary.dump(2) + "\n");
}

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  if (a.metric != "nll" && a.metric != "quality2d" && a.metric != "logz" && a.metric != "ess") {
    throw ConfigError("unknown metric '" + a.metric + "'; valid metrics: " + kValidMetrics);
  }
  NcpSnapshot snap = read_ncp_checkpoint(load_checkpoint(a.ncp));
  RunConfig& cfg = snap.config;
  NcpModel& model = snap.model;
  Rng rng(command_seed(cfg, a.seed), 0x4556414c);
  const fs::path dir = a.out;

  if (a.metric == "logz") {
    const std::size_t n = a.n.value_or(cfg.stage2.logz_samples);
    const std::size_t reps = a.repetitions.value_or(cfg.stage2.logz_repetitions);
    LogZEstimate z = estimate_log_z(model, n, reps, rng);
    std::ostringstream csv;
    csv << "value,std,n,repetitions\n"
        << csv_double(z.value) << ',' << csv_double(z.std) << ',' << z.n_samples << ','
        << z.repetitions << '\n';
    write_metric(dir, "logz", csv.str(),
                 {{"metric", "logz"}, {"value", z.value}, {"std", z.std}, {"n", z.n_samples},
                  {"repetitions", z.repetitions}, {"per_group", z.per_group}});
    out << "log Z " << z.value << " (std " << z.std << ", n " << z.n_samples << ")\n";
    return kExitOk;
  }

  if (a.metric == "ess") {
    const std::size_t n = a.n.value_or(1000);
    AncestralConfig ac = sampler_config(cfg.sampler);
    ac.method = SamplerKind::kSir;
    AncestralResult r = ancestral_ncp_sample(model, n, ac, rng);
    std::ostringstream csv;
    csv << "group,mean_ess,std_ess,M\n";
    json groups = json::array();
    for (std::size_t k = 0; k < r.ess.size(); ++k) {
      csv << k << ',' << csv_double(mean_of(r.ess[k])) << ',' << csv_double(stddev_of(r.ess[k]))
          << ',' << ac.sir.M << '\n';
      groups.push_back(mean_of(r.ess[k]));
    }
    const double overall = mean_of(groups.get<std::vector<double>>());
    write_metric(dir, "ess", csv.str(),
                 {{"metric", "ess"}, {"value", overall}, {"std", stddev_of(r.ess.front())},
                  {"n", n}, {"per_group", groups}});
    out << "mean ESS " << overall << " over " << n << " draws (M = " << ac.sir.M << ")\n";
    return kExitOk;
  }

  RunData data = load_run_data(cfg);
  if (data.heldout.rows() == 0) throw ConfigError("the run config has no held-out data");

  if (a.metric == "nll") {
    if (!model.log_z) throw ConfigError("checkpoint carries no log-Z estimate");
    const std::size_t rows = std::min<std::size_t>(cfg.eval.nll_rows, data.heldout.rows());
    std::vector<std::size_t> idx(rows);
    for (std::size_t i = 0; i < rows; ++i) idx[i] = i;
    Tensor x = gather_rows(data.heldout, idx);
    const std::size_t n = a.n.value_or(cfg.eval.n_importance);
    Rng r1 = rng.fork(1);
    Rng r2 = rng.fork(1);
    NllResult ncp = iw_nll(x, model, n, r1);
    NllResult base = iw_nll_base(x, model.vae, n, r2);
    std::ostringstream csv;
    csv << "prior,nll,std_error,rows,n_importance\n"
        << "ncp," << csv_double(ncp.mean) << ',' << csv_double(ncp.std_error) << ',' << rows << ','
        << n << '\n'
        << "base," << csv_double(base.mean) << ',' << csv_double(base.std_error) << ',' << rows
        << ',' << n << '\n';
    write_metric(dir, "nll", csv.str(),
                 {{"metric", "nll"}, {"value", ncp.mean}, {"std", ncp.std_error}, {"n", rows},
                  {"n_importance", n}, {"base_value", base.mean}, {"log_z", model.log_z->value}});
    out << "IW-" << n << " NLL: NCP " << ncp.mean << ", base " << base.mean << " nats\n";
    return kExitOk;
  }

  // quality2d
  if (model.vae.spec().data_dim != 2 || !data.density) {
    throw ConfigError("quality2d needs a 2-d synthetic dataset");
  }
  const std::size_t n = a.n.value_or(cfg.eval.quality_samples);
  AncestralConfig ac = sampler_config(cfg.sampler);
  ModeSpec modes{data.density->means, data.density->sigma, 3.0};
  Rng zr = rng.fork(1);
  Rng zb = rng.fork(1);
  AncestralResult r = ancestral_ncp_sample(model, n, ac, zr);
  Tensor base_z = sample_base_prior(model.vae, n, zb, ac.temperature);
  Rng d1 = rng.fork(2);
  Rng d2 = rng.fork(2);
  QualityReport q_ncp = quality_2d(decode_samples(model.vae, r.z, d1), data.heldout, cfg.eval.grid, &modes);
  QualityReport q_base =
      quality_2d(decode_samples(model.vae, base_z, d2), data.heldout, cfg.eval.grid, &modes);
  const auto ess = r.mean_ess();
  std::ostringstream csv;
  csv << "prior,hist_kl,mode_coverage,modes,n\n"
      << "ncp," << csv_double(q_ncp.hist_kl) << ',' << q_ncp.mode_coverage << ',' << q_ncp.modes
      << ',' << n << '\n'
      << "base," << csv_double(q_base.hist_kl) << ',' << q_base.mode_coverage << ','
      << q_base.modes << ',' << n << '\n';
  write_metric(dir, "quality2d", csv.str(),
               {{"metric", "quality2d"}, {"value", q_ncp.hist_kl}, {"std", 0.0}, {"n", n},
                {"mode_coverage", q_ncp.mode_coverage}, {"base_value", q_base.hist_kl},
                {"base_mode_coverage", q_base.mode_coverage}, {"ess_means", ess}});
  out << "hist-KL: NCP " << q_ncp.hist_kl << " (" << q_ncp.mode_coverage << "/" << q_ncp.modes
      << " modes), base " << q_base.hist_kl << " (" << q_base.mode_coverage << "/" << q_base.modes
      << " modes)\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct InspectArgs {
  std::string ckpt;
  bool verify = false;
};

int cmd_inspect(const InspectArgs& a, std::ostream& out) {
  const std::string bytes = read_file_bytes(a.ckpt);
  Checkpoint ckpt = decode_checkpoint(bytes);
  json meta = ckpt.metadata;
  if (meta.contains("config")) meta.erase("config");
  std::size_t floats = 0;
  for (const auto& t : ckpt.tensors) floats += t.values.size();
  out << "format NCPV v" << kCheckpointVersion << ", " << ckpt.tensors.size() << " tensors, "
      << floats << " values\n";
  out << meta.dump(2) << "\n";
  for (const auto& t : ckpt.tensors) out << "  " << t.name << " " << shape_string(t.shape) << "\n";
  if (a.verify) {
    if (encode_checkpoint(ckpt) != bytes) throw IoError("round trip changed the checkpoint bytes");
    out << "verify: load -> save is byte-identical\n";
  }
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Two-stage VAE training with noise-contrastive energy-based priors", "ncp"};
  app.require_subcommand(1);

  TrainVaeArgs tv;
  auto* train_vae = app.add_subcommand("train-vae", "stage 1: train the VAE with its base prior");
  train_vae->add_option("--config", tv.config, "run config (INI)")->required();
  train_vae->add_option("--out", tv.out, "stage-1 checkpoint to write")->required();
  train_vae->add_option("--resume", tv.resume, "continue from a stage-1 checkpoint");
  train_vae->add_option("--history", tv.history, "validation history CSV");

  TrainNcpArgs tn;
  auto* train_ncp = app.add_subcommand("train-ncp", "stage 2: train the per-group classifiers");
  train_ncp->add_option("--config", tn.config, "run config (INI)")->required();
  train_ncp->add_option("--stage1", tn.stage1, "stage-1 checkpoint")->required();
  train_ncp->add_option("--out", tn.out, "NCP checkpoint to write")->required();
  train_ncp->add_option("--report", tn.report, "classifier report CSV (default <out>.report.csv)");

  SampleArgs sa;
  auto* sample = app.add_subcommand("sample", "draw samples from an NCP checkpoint");
  sample->add_option("--ncp", sa.ncp, "NCP checkpoint")->required();
  sample->add_option("--sampler", sa.sampler, "sir or ld");
  sample->add_option("--n", sa.n, "number of samples")->required();
  sample->add_option("--temperature", sa.temperature, "base-prior temperature in [0, 1]");
  sample->add_option("--sir-m", sa.sir_m, "SIR proposal count");
  sample->add_option("--ld-lambda", sa.ld_lambda, "Langevin step size");
  sample->add_option("--ld-steps", sa.ld_steps, "Langevin iterations");
  sample->add_option("--seed", sa.seed, "sampling seed (NCP_SEED takes precedence)");
  sample->add_option("--out", sa.out, "sample CSV")->required();
  sample->add_option("--grid", sa.grid, "PGM image grid of decoded means");
  sample->add_option("--grid-cols", sa.grid_cols, "images per grid row");
  sample->add_option("--latents", sa.latents, "latent CSV");
  sample->add_flag("--base", sa.base, "sample the base prior instead of the NCP");

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "evaluate an NCP checkpoint");
  eval->add_option("--ncp", ea.ncp, "NCP checkpoint")->required();
  eval->add_option("--metric", ea.metric, std::string("one of ") + kValidMetrics)->required();
  eval->add_option("--out", ea.out, "output directory")->required();
  eval->add_option("--n", ea.n, "sample / importance count override");
  eval->add_option("--repetitions", ea.repetitions, "log-Z repetitions override");
  eval->add_option("--seed", ea.seed, "evaluation seed (NCP_SEED takes precedence)");

  InspectArgs ia;
  auto* inspect = app.add_subcommand("inspect", "print checkpoint metadata");
  inspect->add_option("ckpt", ia.ckpt, "checkpoint path")->required();
  inspect->add_flag("--verify", ia.verify, "check that load -> save is byte-identical");

  std::vector<std::string> rev(args.begin() + (args.empty() ? 0 : 1), args.end());
  std::reverse(rev.begin(), rev.end());
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*train_vae) return cmd_train_vae(tv, out);
    if (*train_ncp) return cmd_train_ncp(tn, out, err);
    if (*sample) return cmd_sample(sa, out);
    if (*eval) return cmd_eval(ea, out);
    if (*inspect) return cmd_inspect(ia, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const IoError& e) {
    err << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const ShapeError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const fs::filesystem_error& e) {
    err << "I/O error: " << e.what() << "\n";
    return kExitIo;
  }
  return kExitConfig;
}

}  // namespace ncp::cli
