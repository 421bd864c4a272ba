// merge-shield: train, evaluate, sweep, demo and plot the shielded
// distributional soft actor-critic on-ramp merge stack.

#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "mshield/cli.hpp"

int main(int argc, char** argv) {
  using namespace mshield;
  CLI::App app{"Shielded distributional soft actor-critic for on-ramp merging"};
  app.require_subcommand(1);

  TrainArgs train_args;
  long train_iters = -1;
  long long train_seed = -1;
  int train_actors = -1;
  std::string train_safety;
  auto* train = app.add_subcommand("train", "Run offline training");
  train->add_option("--config", train_args.config_path, "Config file (JSON)");
  train->add_option("--density", train_args.density, "Traffic density: sparse|dense");
  train->add_option("--iters", train_iters, "Override train.total_iterations");
  train->add_option("--seed", train_seed, "Override train.seed");
  train->add_option("--safety-reward", train_safety, "Enable the safety reward: on|off");
  train->add_option("--actors", train_actors, "Override train.actors");

  EvalArgs eval_args;
  auto* eval = app.add_subcommand("eval", "Run seeded evaluation trials");
  eval->add_option("--checkpoint", eval_args.checkpoint, "Checkpoint file")->required();
  eval->add_option("--config", eval_args.config_path, "Config file (JSON)");
  eval->add_option("--shield", eval_args.shield, "Apply the safety shield: on|off");
  double eval_lambda = -1.0;
  eval->add_option("--lambda", eval_lambda, "Shield lambda in (0,1]");
  eval->add_option("--trials", eval_args.trials, "Number of trials");
  eval->add_option("--density", eval_args.density, "Traffic density: sparse|dense");
  eval->add_option("--seed", eval_args.seed, "Base seed");
  eval->add_option("--threads", eval_args.threads, "Worker threads");
  eval->add_option("--label", eval_args.label, "Row label for the summary");

  SweepArgs sweep_args;
  auto* sweep = app.add_subcommand("sweep-lambda", "Evaluate a list of lambda values");
  sweep->add_option("--checkpoint", sweep_args.checkpoint, "Checkpoint file")->required();
  sweep->add_option("--config", sweep_args.config_path, "Config file (JSON)");
  sweep->add_option("--lambdas", sweep_args.lambdas, "Lambda values")->delimiter(',');
  sweep->add_option("--trials", sweep_args.trials, "Trials per lambda");
  sweep->add_option("--density", sweep_args.density, "Traffic density: sparse|dense");
  sweep->add_option("--seed", sweep_args.seed, "Base seed");
  sweep->add_option("--threads", sweep_args.threads, "Worker threads");

  DemoArgs demo_args;
  auto* demo = app.add_subcommand("demo", "Record one episode with plots");
  demo->add_option("--checkpoint", demo_args.checkpoint, "Checkpoint file")->required();
  demo->add_option("--config", demo_args.config_path, "Config file (JSON)");
  demo->add_option("--density", demo_args.density, "Traffic density: sparse|dense");
  demo->add_option("--seed", demo_args.seed, "Episode seed");
  demo->add_option("--shield", demo_args.shield, "Apply the safety shield: on|off");
  double demo_lambda = -1.0;
  demo->add_option("--lambda", demo_lambda, "Shield lambda in (0,1]");

  PlotArgs plot_args;
  auto* plot = app.add_subcommand("plot", "Re-render plots from a trace.csv");
  plot->add_option("--trace", plot_args.trace_path, "trace.csv from a demo run")
      ->required();
  plot->add_option("--config", plot_args.config_path, "Config file (JSON)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) {
      if (train_iters >= 0) train_args.iters = train_iters;
      if (train_seed >= 0) train_args.seed = static_cast<std::uint64_t>(train_seed);
      if (train_actors >= 1) train_args.actors = train_actors;
      if (!train_safety.empty()) train_args.safety_reward = train_safety;
      cmd_train(train_args);
    } else if (*eval) {
      if (eval_lambda >= 0.0) eval_args.lambda = eval_lambda;
      cmd_eval(eval_args);
    } else if (*sweep) {
      cmd_sweep_lambda(sweep_args);
    } else if (*demo) {
      if (demo_lambda >= 0.0) demo_args.lambda = demo_lambda;
      cmd_demo(demo_args);
    } else if (*plot) {
      cmd_plot(plot_args);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
