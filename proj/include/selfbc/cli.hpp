#pragma once

// Command-line front end. Every command resolves a RunConfig (file plus
// flag overrides), builds its outputs in a staging directory, and renames
// it into place only on success.

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "selfbc/checkpoint.hpp"
#include "selfbc/config.hpp"
#include "selfbc/dataset.hpp"
#include "selfbc/evaluation.hpp"
#include "selfbc/theory.hpp"
#include "selfbc/trainers.hpp"

namespace selfbc::cli {

namespace fs = std::filesystem;

inline void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw LoadError(LoadErrorKind::kIo, "cannot write '" + path.string() + "'");
  out << j.dump(2) << "\n";
}

inline json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError(LoadErrorKind::kIo, "cannot open '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw LoadError(LoadErrorKind::kFormat, "bad JSON in '" + path.string() + "': " + e.what());
  }
}

inline fs::path output_root() {
  const char* env = std::getenv("SELFBC_OUTPUT_ROOT");
  return env && *env ? fs::path(env) : fs::path("runs");
}

/// output_dir from the config, or the first unused <root>/<command>-seed<seed>-<k>.
inline fs::path choose_output_dir(const json& cfg) {
  const std::string given = cfg.at("output_dir");
  if (!given.empty()) return given;
  const fs::path root = output_root();
  const std::string stem = cfg.at("command").get<std::string>() + "-seed" + std::to_string(cfg.at("seed").get<std::uint64_t>());
  for (int k = 0;; ++k) {
    fs::path p = root / (stem + "-" + std::to_string(k));
    if (!fs::exists(p)) return p;
  }
}

inline std::string grid_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

/// Staging directory that disappears unless commit() is reached.
class StagedOutput {
 public:
  explicit StagedOutput(fs::path final_dir) : final_(std::move(final_dir)) {
    if (fs::exists(final_)) throw InvalidInput("output_dir '" + final_.string() + "' already exists");
    staging_ = final_;
    staging_ += ".partial";
    if (fs::exists(staging_)) fs::remove_all(staging_);
    fs::create_directories(staging_ / "checkpoints");
  }
  StagedOutput(const StagedOutput&) = delete;
  StagedOutput& operator=(const StagedOutput&) = delete;

  ~StagedOutput() {
    if (!committed_) {
      std::error_code ec;
      fs::remove_all(staging_, ec);
    }
  }

  const fs::path& dir() const { return staging_; }
  const fs::path& final_dir() const { return final_; }

  void commit() {
    fs::rename(staging_, final_);
    committed_ = true;
  }

 private:
  fs::path final_;
  fs::path staging_;
  bool committed_ = false;
};

inline OfflineDataset load_dataset(const json& cfg) {
  const std::string path = cfg.at("dataset");
  if (path.empty()) throw InvalidInput("dataset: a dataset path is required");
  if (!fs::exists(path)) throw LoadError(LoadErrorKind::kIo, "dataset '" + path + "' does not exist");
  return dataset_deserialize(path);
}

inline std::vector<TrainerState> load_checkpoints(const std::vector<std::string>& paths) {
  std::vector<TrainerState> out;
  for (const auto& p : paths) {
    if (!fs::exists(p)) throw LoadError(LoadErrorKind::kIo, "checkpoint '" + p + "' does not exist");
    out.push_back(checkpoint_load(p));
  }
  return out;
}

inline json metrics_summary(const std::vector<MetricsRecord>& recs) {
  if (recs.empty()) return json::object();
  return {{"first", to_json(recs.front())}, {"final", to_json(recs.back())}, {"n_evaluations", recs.size()}};
}

/// Runs a training procedure with metrics written into `dir` and returns
/// the recorded stream.
template <typename Fn>
std::vector<MetricsRecord> with_metrics(const fs::path& dir, Fn&& fn) {
  fs::create_directories(dir / "checkpoints");
  MetricsWriter writer = MetricsWriter::in_directory(dir);
  std::vector<MetricsRecord> recs;
  fn([&](const MetricsRecord& r) {
    writer.write(r);
    recs.push_back(r);
  });
  return recs;
}

// ---------------------------------------------------------------------------
// Commands. Each receives the resolved config, the staging directory, and
// the already-loaded inputs, and returns report.json contents.

inline json cmd_gen_data(const json& cfg, const fs::path& out) {
  const auto kind = behavior_kind_from_string(cfg.at("behavior"));
  const auto ds = generate_dataset(BehaviorSpec::of(kind), cfg.at("n_transitions"), cfg.at("seed"));
  dataset_serialize(ds, out / "dataset.sbc1");
  const double ret = dataset_mean_episode_return(ds);
  return {{"dataset", (out / "dataset.sbc1").filename().string()},
          {"n_transitions", ds.n},
          {"behavior", to_string(kind)},
          {"mean_episode_return", ret},
          {"normalized_score", pointmass_normalized_score(ret)}};
}

inline json cmd_pretrain(const json& cfg, const fs::path& out, const OfflineDataset& ds) {
  const TrainerConfig tc = trainer_config_from(cfg);
  TrainerState st;
  const auto recs = with_metrics(out, [&](MetricsSink sink) { st = run_pretrain(ds, tc, cfg.at("seed"), sink); });
  checkpoint_save(st, out / "checkpoints" / "pretrain.sbck");
  return {{"pretrainer", to_string(tc.pretrainer)}, {"metrics", metrics_summary(recs)}};
}

/// Loads the configured checkpoint, or pretrains one into the run when none is given.
inline TrainerState pretrained_or_fresh(const json& cfg, const TrainerConfig& tc, const OfflineDataset& ds,
                                        std::uint64_t seed, const fs::path& out, const std::string& name,
                                        const std::string& given) {
  if (!given.empty()) return load_checkpoints({given}).front();
  TrainerState st;
  with_metrics(out / name, [&](MetricsSink sink) { st = run_pretrain(ds, tc, seed, sink); });
  checkpoint_save(st, out / "checkpoints" / (name + ".sbck"));
  (void)cfg;
  return st;
}

inline json cmd_train_selfbc(const json& cfg, const fs::path& out, const OfflineDataset& ds) {
  const TrainerConfig tc = trainer_config_from(cfg);
  const std::uint64_t seed = cfg.at("seed");
  TrainerState st = pretrained_or_fresh(cfg, tc, ds, seed, out, "pretrain", cfg.at("checkpoint"));
  const auto recs = with_metrics(out, [&](MetricsSink sink) { st = run_selfbc(ds, st, tc, seed, sink); });
  checkpoint_save(st, out / "checkpoints" / "selfbc.sbck");
  return {{"use_ema", tc.use_ema},
          {"reference_init", to_string(tc.reference_init)},
          {"tau_ref", tc.tau_ref()},
          {"metrics", metrics_summary(recs)}};
}

inline json cmd_train_esbc(const json& cfg, const fs::path& out, const OfflineDataset& ds) {
  const TrainerConfig tc = trainer_config_from(cfg);
  const std::uint64_t seed = cfg.at("seed");
  const auto paths = cfg.at("checkpoints").get<std::vector<std::string>>();
  std::vector<TrainerState> trainers;
  if (!paths.empty()) {
    trainers = load_checkpoints(paths);
  } else {
    for (int i = 0; i < tc.n_ens; ++i) {
      trainers.push_back(
          pretrained_or_fresh(cfg, tc, ds, seed + static_cast<std::uint64_t>(i), out, "pretrain-" + std::to_string(i), ""));
    }
  }
  const auto recs =
      with_metrics(out, [&](MetricsSink sink) { trainers = run_esbc(ds, std::move(trainers), tc, seed, sink); });
  for (std::size_t i = 0; i < trainers.size(); ++i) {
    checkpoint_save(trainers[i], out / "checkpoints" / ("esbc-" + std::to_string(i) + ".sbck"));
  }
  return {{"n_ens", tc.n_ens}, {"metrics", metrics_summary(recs)}};
}

inline json grid_summary(const std::vector<double>& grid, const std::vector<std::vector<MetricsRecord>>& finals) {
  json rows = json::array();
  for (std::size_t g = 0; g < grid.size(); ++g) {
    double mse = 0.0, score = 0.0;
    json per_seed = json::array();
    for (const auto& r : finals[g]) {
      mse += r.dataset_bc_mse;
      score += r.normalized_score;
      per_seed.push_back(to_json(r));
    }
    const double n = static_cast<double>(finals[g].size());
    rows.push_back({{"value", grid[g]},
                    {"mean_final_dataset_bc_mse", mse / n},
                    {"mean_final_log10_bc_mse", log10_mse(mse / n)},
                    {"mean_final_normalized_score", score / n},
                    {"per_seed_final", per_seed}});
  }
  return rows;
}

inline json cmd_sweep_beta(const json& cfg, const fs::path& out, const OfflineDataset& ds) {
  TrainerConfig tc = trainer_config_from(cfg);
  tc.pretrainer = Pretrainer::kTd3Bc;
  const auto grid = cfg.at("grid").get<std::vector<double>>();
  const auto seeds = cfg.at("seeds").get<std::vector<std::uint64_t>>();
  std::vector<std::vector<MetricsRecord>> finals(grid.size());
  for (std::size_t g = 0; g < grid.size(); ++g) {
    tc.beta = grid[g];
    for (std::uint64_t seed : seeds) {
      const fs::path dir = out / ("beta-" + grid_label(grid[g])) / ("seed-" + std::to_string(seed));
      TrainerState st;
      const auto recs = with_metrics(dir, [&](MetricsSink sink) { st = run_pretrain(ds, tc, seed, sink); });
      checkpoint_save(st, dir / "checkpoints" / "td3bc.sbck");
      finals[g].push_back(recs.back());
    }
  }
  return {{"sweep", "beta"}, {"seeds", seeds}, {"results", grid_summary(grid, finals)}};
}

inline json cmd_sweep_scale_ref(const json& cfg, const fs::path& out, const OfflineDataset& ds) {
  TrainerConfig tc = trainer_config_from(cfg);
  const auto grid = cfg.at("grid").get<std::vector<double>>();
  const auto seeds = cfg.at("seeds").get<std::vector<std::uint64_t>>();
  const auto given = cfg.at("checkpoints").get<std::vector<std::string>>();
  if (!given.empty() && given.size() != seeds.size()) {
    throw InvalidInput("checkpoints: expected one checkpoint per seed (" + std::to_string(seeds.size()) + ")");
  }
  std::vector<TrainerState> pre;
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    pre.push_back(pretrained_or_fresh(cfg, tc, ds, seeds[i], out, "pretrain-seed-" + std::to_string(seeds[i]),
                                      given.empty() ? "" : given[i]));
  }
  std::vector<std::vector<MetricsRecord>> finals(grid.size());
  for (std::size_t g = 0; g < grid.size(); ++g) {
    tc.scale_ref = grid[g];
    for (std::size_t i = 0; i < seeds.size(); ++i) {
      const fs::path dir = out / ("scale_ref-" + grid_label(grid[g])) / ("seed-" + std::to_string(seeds[i]));
      TrainerState st;
      const auto recs = with_metrics(dir, [&](MetricsSink sink) { st = run_selfbc(ds, pre[i], tc, seeds[i], sink); });
      checkpoint_save(st, dir / "checkpoints" / "selfbc.sbck");
      finals[g].push_back(recs.back());
    }
  }
  return {{"sweep", "scale_ref"}, {"seeds", seeds}, {"results", grid_summary(grid, finals)}};
}

inline json cmd_verify_theory(const json& cfg) {
  return verify_theory(cfg.at("instances").get<int>(), cfg.at("kappas").get<std::vector<double>>(), cfg.at("seed"));
}

inline json cmd_eval(const json& cfg, const OfflineDataset& ds) {
  const TrainerConfig tc = trainer_config_from(cfg);
  const std::string path = cfg.at("checkpoint");
  if (path.empty()) throw InvalidInput("checkpoint: a checkpoint path is required");
  const TrainerState st = load_checkpoints({path}).front();
  const NormStats stats = compute_norm_stats(ds);
  json out;
  for (const auto& [name, net] : {std::pair<const char*, const MlpParams*>{"policy", &st.policy},
                                  {"behavior", &st.behavior},
                                  {"reference", &st.reference}}) {
    const double ret = evaluate_policy(*net, stats, tc.eval_episodes, cfg.at("seed"));
    out[name] = {{"mean_return", ret},
                 {"normalized_score", pointmass_normalized_score(ret)},
                 {"dataset_bc_mse", dataset_bc_mse(*net, ds, stats)}};
  }
  out["checkpoint_step"] = st.step;
  return out;
}

/// Collects every metrics.csv under the given run directories into one
/// long-format curves.csv.
inline json cmd_export_curves(const json& cfg, const fs::path& out) {
  const auto runs = cfg.at("runs").get<std::vector<std::string>>();
  if (runs.empty()) throw InvalidInput("runs: at least one run directory is required");
  std::vector<fs::path> files;
  for (const auto& r : runs) {
    if (!fs::is_directory(r)) throw LoadError(LoadErrorKind::kIo, "run directory '" + r + "' does not exist");
    for (const auto& e : fs::recursive_directory_iterator(r)) {
      if (e.is_regular_file() && e.path().filename() == "metrics.csv") files.push_back(e.path());
    }
  }
  std::sort(files.begin(), files.end());
  std::ofstream csv(out / "curves.csv");
  csv << "run," << kMetricsCsvHeader << ",log10_dataset_bc_mse\n";
  std::size_t rows = 0;
  for (const auto& f : files) {
    for (const auto& rec : read_metrics_csv(f)) {
      csv << f.parent_path().string() << "," << metrics_csv_row(rec) << "," << format_double(log10_mse(rec.dataset_bc_mse))
          << "\n";
      ++rows;
    }
  }
  return {{"curves", "curves.csv"}, {"files", files.size()}, {"rows", rows}};
}

inline bool needs_dataset(const std::string& cmd) {
  return cmd != "gen-data" && cmd != "verify-theory" && cmd != "export-curves";
}

struct RunResult {
  fs::path output_dir;
  json report;
  bool ok = true;
};

/// Executes a resolved config. Inputs are loaded before any output exists,
/// so a missing input leaves nothing behind.
inline RunResult run_command(const json& user_cfg) {
  json cfg = resolve_config(user_cfg);
  const std::string cmd = cfg.at("command");
  std::optional<OfflineDataset> ds;
  if (needs_dataset(cmd)) ds = load_dataset(cfg);

  const fs::path final_dir = choose_output_dir(cfg);
  cfg["output_dir"] = final_dir.string();
  StagedOutput staged(final_dir);
  write_json(staged.dir() / "config.json", cfg);

  json report;
  if (cmd == "gen-data") report = cmd_gen_data(cfg, staged.dir());
  else if (cmd == "pretrain") report = cmd_pretrain(cfg, staged.dir(), *ds);
  else if (cmd == "train-selfbc") report = cmd_train_selfbc(cfg, staged.dir(), *ds);
  else if (cmd == "train-esbc") report = cmd_train_esbc(cfg, staged.dir(), *ds);
  else if (cmd == "sweep-beta") report = cmd_sweep_beta(cfg, staged.dir(), *ds);
  else if (cmd == "sweep-scale-ref") report = cmd_sweep_scale_ref(cfg, staged.dir(), *ds);
  else if (cmd == "verify-theory") report = cmd_verify_theory(cfg);
  else if (cmd == "eval") report = cmd_eval(cfg, *ds);
  else if (cmd == "export-curves") report = cmd_export_curves(cfg, staged.dir());
  else throw InvalidInput("unknown command '" + cmd + "'");

  report["command"] = cmd;
  write_json(staged.dir() / "report.json", report);
  staged.commit();
  RunResult r{final_dir, report, true};
  if (cmd == "verify-theory") r.ok = report.at("all_pass").get<bool>();
  return r;
}

// ---------------------------------------------------------------------------
// argv

inline json parse_override_value(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::exception&) {
    return text;
  }
}

inline std::vector<double> parse_grid(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != item.size()) throw InvalidInput("grid: cannot parse '" + item + "' as a number");
    out.push_back(v);
  }
  return out;
}

inline int dispatch(int argc, char** argv) {
  CLI::App app{"Offline RL lab: TD3+BC, EBC, SelfBC and ESBC on a point mass, plus exact tabular checks"};
  app.require_subcommand(1);

  struct Common {
    std::string config_path;
    std::string output_dir;
    std::string dataset;
    std::vector<std::string> sets;
    std::optional<std::uint64_t> seed;
  };
  Common common;
  json flags = json::object();

  auto add_common = [&](CLI::App* sub, bool with_dataset) {
    sub->add_option("--config", common.config_path, "JSON run config");
    sub->add_option("--output-dir", common.output_dir, "fresh output directory");
    sub->add_option("--seed", common.seed, "root seed");
    sub->add_option("--set", common.sets, "override a config key, key=value (repeatable)");
    if (with_dataset) sub->add_option("--dataset", common.dataset, "dataset file");
  };

  auto* gen = app.add_subcommand("gen-data", "generate a point-mass dataset");
  add_common(gen, false);
  std::string behavior;
  std::optional<std::uint64_t> n_transitions;
  gen->add_option("--behavior", behavior, "expert, medium or random");
  gen->add_option("--n", n_transitions, "number of transitions");

  auto* pre = app.add_subcommand("pretrain", "behavior cloning then TD3+EBC / TD3+BC");
  add_common(pre, true);
  std::string algo;
  pre->add_option("--algo", algo, "bc, td3bc or td3ebc");

  auto* sbc = app.add_subcommand("train-selfbc", "self behavior cloning from a pretrained checkpoint");
  add_common(sbc, true);
  std::string checkpoint, ref_init;
  bool no_ema = false;
  sbc->add_option("--checkpoint", checkpoint, "pretrained checkpoint (pretrains in-run when omitted)");
  sbc->add_flag("--no-ema", no_ema, "keep the reference policy fixed");
  sbc->add_option("--ref-init", ref_init, "pretrained or behavior");

  auto* esbc = app.add_subcommand("train-esbc", "ensemble self behavior cloning");
  add_common(esbc, true);
  std::optional<std::uint64_t> n_ens;
  std::vector<std::string> checkpoints;
  esbc->add_option("--n-ens", n_ens, "ensemble size");
  esbc->add_option("--checkpoints", checkpoints, "one pretrained checkpoint per member");

  auto* sbeta = app.add_subcommand("sweep-beta", "TD3+BC with a beta-weighted BC term over a grid");
  add_common(sbeta, true);
  std::string beta_grid;
  sbeta->add_option("--grid", beta_grid, "comma-separated beta values");

  auto* sref = app.add_subcommand("sweep-scale-ref", "SelfBC over a grid of reference update ratios");
  add_common(sref, true);
  std::string ref_grid;
  sref->add_option("--grid", ref_grid, "comma-separated scale_ref values");
  sref->add_option("--checkpoints", checkpoints, "one pretrained checkpoint per seed");

  auto* vt = app.add_subcommand("verify-theory", "exact checks on random tabular MDPs");
  add_common(vt, false);
  std::optional<std::uint64_t> instances;
  std::string kappa;
  vt->add_option("--instances", instances, "number of random configurations");
  vt->add_option("--kappa", kappa, "comma-separated mixture weights");

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint's policies");
  add_common(ev, true);
  ev->add_option("--checkpoint", checkpoint, "checkpoint file");

  auto* ex = app.add_subcommand("export-curves", "collect metrics.csv files into one table");
  add_common(ex, false);
  std::vector<std::string> runs;
  ex->add_option("--runs", runs, "run directories")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    CLI::App* chosen = app.get_subcommands().front();
    json cfg = common.config_path.empty() ? json::object() : read_json(common.config_path);
    if (!cfg.is_object()) throw ConfigError({"config must be a JSON object"});
    cfg["command"] = chosen->get_name();
    for (const auto& s : common.sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos || eq == 0) throw InvalidInput("--set expects key=value, got '" + s + "'");
      cfg[s.substr(0, eq)] = parse_override_value(s.substr(eq + 1));
    }
    if (!common.output_dir.empty()) cfg["output_dir"] = common.output_dir;
    if (!common.dataset.empty()) cfg["dataset"] = common.dataset;
    if (common.seed) cfg["seed"] = *common.seed;
    if (!behavior.empty()) cfg["behavior"] = behavior;
    if (n_transitions) cfg["n_transitions"] = *n_transitions;
    if (!algo.empty()) cfg["pretrainer"] = algo;
    if (!checkpoint.empty()) cfg["checkpoint"] = checkpoint;
    if (no_ema) cfg["use_ema"] = false;
    if (!ref_init.empty()) cfg["reference_init"] = ref_init;
    if (n_ens) cfg["n_ens"] = *n_ens;
    if (!checkpoints.empty()) cfg["checkpoints"] = checkpoints;
    if (!beta_grid.empty()) cfg["grid"] = parse_grid(beta_grid);
    if (!ref_grid.empty()) cfg["grid"] = parse_grid(ref_grid);
    if (instances) cfg["instances"] = *instances;
    if (!kappa.empty()) cfg["kappas"] = parse_grid(kappa);
    if (!runs.empty()) cfg["runs"] = runs;

    const RunResult r = run_command(cfg);
    std::cout << r.output_dir.string() << "\n";
    if (!r.ok) {
      std::cerr << "error: not every check passed; see " << (r.output_dir / "report.json").string() << "\n";
      return 1;
    }
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace selfbc::cli
