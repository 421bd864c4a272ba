#pragma once

// Command implementations behind the merge-shield executable: train, eval,
// sweep-lambda, demo and plot. Each command resolves its configuration,
// creates a run directory with a manifest, and writes all artifacts there.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mshield/config.hpp"
#include "mshield/eval.hpp"
#include "mshield/runio.hpp"

namespace mshield {

namespace fs = std::filesystem;

inline AppConfig resolve_config(const std::string& config_path) {
  return config_path.empty() ? default_config() : load_config(config_path);
}

inline bool parse_on_off(const std::string& v, const std::string& flag) {
  if (v == "on") return true;
  if (v == "off") return false;
  throw ConfigError(flag + " must be 'on' or 'off', got '" + v + "'");
}

// --- train -----------------------------------------------------------------------

struct TrainArgs {
  std::string config_path;
  std::string density = "sparse";
  std::optional<long> iters;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> safety_reward;  // "on" / "off"
  std::optional<int> actors;
};

inline std::string cmd_train(const TrainArgs& args) {
  AppConfig cfg = resolve_config(args.config_path);
  if (args.iters) cfg.train.total_iterations = *args.iters;
  if (args.seed) cfg.train.seed = *args.seed;
  if (args.safety_reward) {
    cfg.safety_reward = parse_on_off(*args.safety_reward, "--safety-reward");
  }
  if (args.actors) cfg.train.actors = *args.actors;
  const Density density = density_from_string(args.density);
  cfg.train.validate();

  const std::string dir = make_run_dir("train");
  Json manifest_cfg = config_to_json(cfg);
  manifest_cfg["density"] = args.density;
  RunManifest manifest(dir, "train", manifest_cfg, cfg.train.seed);
  save_config(cfg, (fs::path(dir) / "resolved_config.json").string());
  manifest.add_artifact("resolved_config.json");

  std::ofstream metrics(fs::path(dir) / "metrics.csv");
  metrics << "iteration,mean_eval_return,critic_loss,actor_loss,alpha,success_rate\n";
  manifest.add_artifact("metrics.csv");

  const EnvParams env = cfg.env_params();
  DsacTrainer trainer(merge_env_factory(env, density, TimeoutMode::kTraining),
                      merge_env_factory(env, density, TimeoutMode::kEvaluation),
                      cfg.train);
  TrainCallbacks callbacks;
  callbacks.on_eval = [&](const MetricsRow& row, const Checkpoint& ckpt) {
    metrics << row.iteration << ',' << fmt_g17(row.mean_eval_return) << ','
            << fmt_g17(row.critic_loss) << ',' << fmt_g17(row.actor_loss) << ','
            << fmt_g17(row.alpha) << ',' << fmt_g17(row.success_rate) << '\n';
    metrics.flush();
    ckpt.save((fs::path(dir) / "checkpoint_latest.ckpt").string());
    std::cout << "iter " << row.iteration << "  eval_return " << row.mean_eval_return
              << "  success " << row.success_rate << "  alpha " << row.alpha << "\n";
  };
  const TrainResult result = trainer.run(callbacks);
  result.checkpoint.save((fs::path(dir) / "checkpoint_final.ckpt").string());
  manifest.add_artifact("checkpoint_latest.ckpt");
  manifest.add_artifact("checkpoint_final.ckpt");
  manifest.finalize();
  std::cout << "train: " << result.env_steps << " env steps, " << result.episodes
            << " episodes, artifacts in " << dir << "\n";
  return dir;
}

// --- eval ------------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint;
  std::string config_path;
  std::string shield = "off";
  std::optional<double> lambda;
  long trials = 500;
  std::string density = "sparse";
  std::uint64_t seed = 0;
  int threads = 1;
  std::string label;
};

inline std::string cmd_eval(const EvalArgs& args) {
  AppConfig cfg = resolve_config(args.config_path);
  const Density density = density_from_string(args.density);
  const bool shield_on = parse_on_off(args.shield, "--shield");
  std::optional<ShieldConfig> shield;
  if (shield_on) {
    shield = cfg.shield;
    if (args.lambda) shield->lambda = *args.lambda;
    shield->validate();
  } else if (args.lambda) {
    throw ConfigError("--lambda requires --shield on");
  }
  if (args.trials < 1) throw ConfigError("--trials must be >= 1");

  const Checkpoint ckpt = Checkpoint::load(args.checkpoint);
  auto policy_net = std::make_shared<GaussianPolicy>(ckpt.policy);
  const PolicyFn policy = mean_policy(policy_net);

  const std::string dir = make_run_dir("eval");
  Json manifest_cfg = config_to_json(cfg);
  manifest_cfg["checkpoint"] = args.checkpoint;
  manifest_cfg["density"] = args.density;
  manifest_cfg["shield"] = shield_on;
  manifest_cfg["trials"] = args.trials;
  manifest_cfg["threads"] = args.threads;
  if (shield) manifest_cfg["lambda"] = shield->lambda;
  RunManifest manifest(dir, "eval", manifest_cfg, args.seed);

  std::vector<TrialRecord> records;
  const TrialStats stats = run_trials(cfg.env_params(), density, policy, shield,
                                      args.trials, args.seed, args.threads, &records);

  std::ofstream trials(fs::path(dir) / "trials.csv");
  trials << trials_csv_header();
  for (const auto& r : records) trials << trial_record_csv(r);
  manifest.add_artifact("trials.csv");

  std::string label = args.label;
  if (label.empty()) {
    label = shield_on ? "shielded lambda=" + fmt_g17(shield->lambda) : "unshielded";
  }
  std::ofstream summary(fs::path(dir) / "summary.csv");
  summary << stats_csv_header() << stats_csv_row(label, stats);
  manifest.add_artifact("summary.csv");
  const std::string table = stats_table({{label, stats}});
  std::ofstream(fs::path(dir) / "summary.txt") << table;
  manifest.add_artifact("summary.txt");
  manifest.finalize();
  std::cout << table << "results in " << dir << "\n";
  return dir;
}

// --- sweep-lambda ------------------------------------------------------------------

struct SweepArgs {
  std::string checkpoint;
  std::string config_path;
  std::vector<double> lambdas;
  long trials = 500;
  std::string density = "sparse";
  std::uint64_t seed = 0;
  int threads = 1;
};

inline std::string cmd_sweep_lambda(const SweepArgs& args) {
  if (args.lambdas.empty()) throw ConfigError("--lambdas must list at least one value");
  AppConfig cfg = resolve_config(args.config_path);
  const Density density = density_from_string(args.density);
  std::vector<double> lambdas;
  for (double l : args.lambdas) {
    if (std::find(lambdas.begin(), lambdas.end(), l) != lambdas.end()) {
      std::cerr << "warning: duplicate lambda " << l << " ignored\n";
      continue;
    }
    ShieldConfig probe = cfg.shield;
    probe.lambda = l;
    probe.validate();
    lambdas.push_back(l);
  }

  const Checkpoint ckpt = Checkpoint::load(args.checkpoint);
  auto policy_net = std::make_shared<GaussianPolicy>(ckpt.policy);
  const PolicyFn policy = mean_policy(policy_net);

  const std::string dir = make_run_dir("sweep-lambda");
  Json manifest_cfg = config_to_json(cfg);
  manifest_cfg["checkpoint"] = args.checkpoint;
  manifest_cfg["density"] = args.density;
  manifest_cfg["lambdas"] = lambdas;
  manifest_cfg["trials"] = args.trials;
  RunManifest manifest(dir, "sweep-lambda", manifest_cfg, args.seed);

  std::vector<std::pair<std::string, TrialStats>> rows;
  std::ofstream sweep_csv(fs::path(dir) / "sweep.csv");
  sweep_csv << stats_csv_header();
  for (double l : lambdas) {
    ShieldConfig shield = cfg.shield;
    shield.lambda = l;
    std::vector<TrialRecord> records;
    const TrialStats stats = run_trials(cfg.env_params(), density, policy, shield,
                                        args.trials, args.seed, args.threads, &records);
    const std::string label = "lambda=" + fmt_g17(l);
    rows.emplace_back(label, stats);
    sweep_csv << stats_csv_row(label, stats);
    std::ofstream trials(fs::path(dir) / ("trials_lambda_" + fmt_g17(l) + ".csv"));
    trials << trials_csv_header();
    for (const auto& r : records) trials << trial_record_csv(r);
    manifest.add_artifact("trials_lambda_" + fmt_g17(l) + ".csv");
  }
  manifest.add_artifact("sweep.csv");
  const std::string table = stats_table(rows);
  std::ofstream(fs::path(dir) / "sweep.txt") << table;
  manifest.add_artifact("sweep.txt");
  manifest.finalize();
  std::cout << table << "results in " << dir << "\n";
  return dir;
}

// --- demo --------------------------------------------------------------------------

struct DemoArgs {
  std::string checkpoint;
  std::string config_path;
  std::string density = "sparse";
  std::uint64_t seed = 0;
  std::string shield = "on";
  std::optional<double> lambda;
};

inline std::string cmd_demo(const DemoArgs& args) {
  AppConfig cfg = resolve_config(args.config_path);
  const Density density = density_from_string(args.density);
  const bool shield_on = parse_on_off(args.shield, "--shield");
  std::optional<ShieldConfig> shield;
  if (shield_on) {
    shield = cfg.shield;
    if (args.lambda) shield->lambda = *args.lambda;
    shield->validate();
  }
  const Checkpoint ckpt = Checkpoint::load(args.checkpoint);
  auto policy_net = std::make_shared<GaussianPolicy>(ckpt.policy);
  const PolicyFn policy = mean_policy(policy_net);

  const std::string dir = make_run_dir("demo");
  Json manifest_cfg = config_to_json(cfg);
  manifest_cfg["checkpoint"] = args.checkpoint;
  manifest_cfg["density"] = args.density;
  manifest_cfg["shield"] = shield_on;
  RunManifest manifest(dir, "demo", manifest_cfg, args.seed);

  const TraceBundle bundle = record_demo(cfg.env_params(), density, args.seed, policy,
                                         shield);
  write_trace_csv((fs::path(dir) / "trace.csv").string(), bundle);
  manifest.add_artifact("trace.csv");
  if (shield) {
    write_shield_log_csv((fs::path(dir) / "shield_log.csv").string(), bundle);
    manifest.add_artifact("shield_log.csv");
  }
  const RoadGeometry road(cfg.road);
  write_demo_plots(dir, road, bundle);
  for (const char* name : {"velocity.svg", "heading.svg", "acceleration.svg",
                           "wheel_angle.svg", "trajectory.svg"}) {
    manifest.add_artifact(name);
  }
  manifest.finalize();
  std::cout << "demo: " << event_name(bundle.final_event) << " after "
            << bundle.duration_s << " s (" << bundle.rows.size() << " steps), plots in "
            << dir << "\n";
  return dir;
}

// --- plot --------------------------------------------------------------------------

struct PlotArgs {
  std::string trace_path;
  std::string config_path;
};

// Re-renders the demo plots from a previously written trace.csv.
inline std::string cmd_plot(const PlotArgs& args) {
  AppConfig cfg = resolve_config(args.config_path);
  std::ifstream is(args.trace_path);
  if (!is) throw ConfigError("cannot open trace file: " + args.trace_path);
  std::string header;
  std::getline(is, header);
  TraceBundle bundle;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cols.push_back(cell);
    if (cols.size() < 8) throw ConfigError("malformed trace row: " + line);
    StepTrace row;
    row.step = std::stol(cols[0]);
    row.t = std::stod(cols[1]);
    row.x = std::stod(cols[2]);
    row.y = std::stod(cols[3]);
    row.v = std::stod(cols[4]);
    row.phi = std::stod(cols[5]);
    row.a_x = std::stod(cols[6]);
    row.delta = std::stod(cols[7]);
    bundle.rows.push_back(row);
  }
  if (bundle.rows.empty()) throw ConfigError("trace file has no rows");

  const std::string dir = make_run_dir("plot");
  Json manifest_cfg = config_to_json(cfg);
  manifest_cfg["trace"] = args.trace_path;
  RunManifest manifest(dir, "plot", manifest_cfg, 0);
  const RoadGeometry road(cfg.road);
  write_demo_plots(dir, road, bundle);
  for (const char* name : {"velocity.svg", "heading.svg", "acceleration.svg",
                           "wheel_angle.svg", "trajectory.svg"}) {
    manifest.add_artifact(name);
  }
  manifest.finalize();
  std::cout << "plots in " << dir << "\n";
  return dir;
}

}  // namespace mshield
