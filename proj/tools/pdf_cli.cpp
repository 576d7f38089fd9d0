// pdf: command-line front end for behavior cloning, adaptation runs and
// ablation sweeps.
//
// Exit codes: 0 success, 2 configuration error, 3 numeric error, 1 other.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pdf/config.hpp"
#include "pdf/env_sim.hpp"
#include "pdf/frozen_policy.hpp"
#include "pdf/harness.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;

struct Overrides {
  std::string config_path;
  std::string snapshot;
  std::string out;
  std::string format = "csv";
  std::optional<double> lambda, lambda_kl, lr;
  std::optional<std::string> baseline, vote, shift;
  std::optional<std::size_t> batch, steps_per_episode, n_max, episodes, eval_rollouts, tasks;
  std::vector<std::uint64_t> seeds;
  std::size_t jobs = 1;
  bool no_timing = false;

  void add_to(CLI::App* app, bool with_output = true) {
    app->add_option("-c,--config", config_path, "JSON experiment config")->check(CLI::ExistingFile);
    app->add_option("--snapshot", snapshot, "frozen policy weight file (overrides config)");
    if (with_output) {
      app->add_option("-o,--out", out, "metrics output path")->required();
      app->add_option("--format", format, "csv or jsonl")->check(CLI::IsMember({"csv", "jsonl"}));
    }
    app->add_option("--lambda", lambda, "perturbation scale");
    app->add_option("--lambda-kl", lambda_kl, "KL weight");
    app->add_option("--baseline", baseline, "fixed:<v> or mean:<w>");
    app->add_option("--lr", lr, "perturbation head learning rate");
    app->add_option("--batch", batch, "records per gradient step");
    app->add_option("--steps-per-episode", steps_per_episode, "gradient steps after each episode");
    app->add_option("--vote", vote, "dim or action")->check(CLI::IsMember({"dim", "action"}));
    app->add_option("--n-max", n_max, "maximum augmentation budget");
    app->add_option("--episodes", episodes, "adaptation episodes per task");
    app->add_option("--eval-rollouts", eval_rollouts, "evaluation rollouts per task");
    app->add_option("--tasks", tasks, "layouts per seed");
    app->add_option("--seeds", seeds, "experiment seeds")->delimiter(',');
    app->add_option("--shift", shift, "none | pose_shift:<n> | distractor:<n> | mask_target");
    app->add_option("-j,--jobs", jobs, "worker threads")->check(CLI::PositiveNumber);
    app->add_flag("--no-timing", no_timing, "write wall_time_ms as 0");
  }

  pdf::FileConfig load() const {
    pdf::FileConfig fc = config_path.empty() ? pdf::FileConfig{} : pdf::load_config(config_path);
    auto& x = fc.experiment;
    if (!snapshot.empty()) x.snapshot_path = snapshot;
    if (lambda) x.hp.lambda = *lambda;
    if (lambda_kl) x.hp.lambda_kl = *lambda_kl;
    if (lr) x.hp.learning_rate = *lr;
    if (baseline) x.hp.baseline_mode = pdf::parse_baseline(*baseline);
    if (batch) x.hp.batch_size = *batch;
    if (steps_per_episode) x.hp.grad_steps_per_episode = *steps_per_episode;
    if (vote) x.vote = pdf::parse_vote(*vote);
    if (n_max) x.hp.n_max = *n_max;
    if (episodes) x.episodes = *episodes;
    if (eval_rollouts) x.eval_rollouts = *eval_rollouts;
    if (tasks) x.tasks = *tasks;
    if (!seeds.empty()) x.seeds = seeds;
    if (shift) x.env.shift = pdf::parse_shift(*shift);
    x.validate();
    return fc;
  }

  void emit(std::vector<pdf::MetricsRow> rows) const {
    if (no_timing)
      for (auto& r : rows) r.wall_time_ms = 0;
    pdf::emit_metrics(rows, out, format == "jsonl" ? pdf::MetricsFormat::jsonl : pdf::MetricsFormat::csv);
    double total = 0.0;
    for (const auto& r : rows) total += r.success_rate;
    std::printf("%zu rows, mean success %.4f -> %s\n", rows.size(), total / static_cast<double>(rows.size()),
                out.c_str());
  }
};

pdf::PolicySnapshot require_snapshot(const pdf::ExperimentConfig& x) {
  if (x.snapshot_path.empty() || !std::filesystem::exists(x.snapshot_path))
    throw pdf::Error(pdf::ErrorCode::missing_snapshot,
                     "snapshot '" + x.snapshot_path + "' not found; run `pdf train-bc` first");
  return pdf::load_snapshot(x.snapshot_path);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Test-time adaptation harness for a frozen tokenized policy"};
  app.require_subcommand(1);

  // train-bc
  auto* train = app.add_subcommand("train-bc", "clone the scripted expert on the canonical layout");
  std::string train_config, train_out;
  std::optional<std::uint64_t> train_seed;
  std::optional<std::size_t> train_epochs;
  std::optional<double> train_smoothing;
  train->add_option("-c,--config", train_config, "JSON config (env and bc sections)")->check(CLI::ExistingFile);
  train->add_option("-o,--out", train_out, "weight file to write")->required();
  train->add_option("--seed", train_seed, "initialization seed");
  train->add_option("--epochs", train_epochs, "full-batch epochs");
  train->add_option("--label-smoothing", train_smoothing, "label smoothing in [0,1)");

  // run
  auto* run = app.add_subcommand("run", "run one variant over all seeds and tasks");
  Overrides run_opts;
  std::string variant;
  run->add_option("--variant", variant, "baseline | pdf_wo_df | pdf_wo_da | pdf_wo_kl | pdf_wo_re | pdf_full");
  run_opts.add_to(run);

  // sweep-budget
  auto* sweep = app.add_subcommand("sweep-budget", "pdf_full once per maximum augmentation budget");
  Overrides sweep_opts;
  std::vector<std::size_t> budgets = {0, 1, 2, 3, 4};
  sweep->add_option("--budgets", budgets, "comma-separated N_max values")->delimiter(',');
  sweep_opts.add_to(sweep);

  // compare-voting
  auto* voting = app.add_subcommand("compare-voting", "pdf_full with dim-wise and action-wise voting");
  Overrides vote_opts;
  vote_opts.add_to(voting);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*train) {
      pdf::FileConfig fc = train_config.empty() ? pdf::FileConfig{} : pdf::load_config(train_config);
      if (train_seed) fc.bc_seed = *train_seed;
      if (train_epochs) fc.bc.epochs = *train_epochs;
      if (train_smoothing) fc.bc.label_smoothing = *train_smoothing;
      pdf::EnvConfig env = fc.experiment.env;
      env.shift = pdf::ShiftSpec::none();
      const std::vector<pdf::Demonstration> demos{pdf::scripted_expert(env)};
      auto snapshot = pdf::train_bc(demos, env.policy_header(), fc.bc_seed, fc.bc);
      pdf::save_snapshot(snapshot, train_out);
      std::printf("trained on %zu steps, greedy accuracy %.4f, checksum %016llx -> %s\n", demos[0].steps.size(),
                  pdf::greedy_accuracy(snapshot, demos), static_cast<unsigned long long>(snapshot.checksum()),
                  train_out.c_str());
    } else if (*run) {
      auto fc = run_opts.load();
      if (!variant.empty()) fc.experiment.variant = pdf::parse_variant(variant);
      const auto snapshot = require_snapshot(fc.experiment);
      run_opts.emit(pdf::run_variant(snapshot, fc.experiment, run_opts.jobs));
    } else if (*sweep) {
      auto fc = sweep_opts.load();
      const auto snapshot = require_snapshot(fc.experiment);
      sweep_opts.emit(pdf::budget_sweep(snapshot, fc.experiment, budgets, sweep_opts.jobs));
    } else if (*voting) {
      auto fc = vote_opts.load();
      const auto snapshot = require_snapshot(fc.experiment);
      vote_opts.emit(pdf::compare_voting(snapshot, fc.experiment, vote_opts.jobs));
    }
  } catch (const pdf::Error& e) {
    std::fprintf(stderr, "pdf: %s\n", e.what());
    switch (e.code()) {
      case pdf::ErrorCode::invalid_config:
      case pdf::ErrorCode::missing_snapshot:
      case pdf::ErrorCode::unsupported_shift:
        return kExitConfig;
      case pdf::ErrorCode::numeric:
      case pdf::ErrorCode::divergence:
        return kExitNumeric;
      default:
        return 1;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "pdf: %s\n", e.what());
    return 1;
  }
  return 0;
}
