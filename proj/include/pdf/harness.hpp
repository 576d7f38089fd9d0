#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <future>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pdf/adaptation.hpp"
#include "pdf/augment.hpp"
#include "pdf/core_types.hpp"
#include "pdf/env_sim.hpp"
#include "pdf/frozen_policy.hpp"
#include "pdf/perturb_vote.hpp"
#include "pdf/rng.hpp"

namespace pdf {

enum class Variant { baseline, pdf_wo_df, pdf_wo_da, pdf_wo_kl, pdf_wo_re, pdf_full };

inline const char* to_string(Variant v) {
  switch (v) {
    case Variant::baseline: return "baseline";
    case Variant::pdf_wo_df: return "pdf_wo_df";
    case Variant::pdf_wo_da: return "pdf_wo_da";
    case Variant::pdf_wo_kl: return "pdf_wo_kl";
    case Variant::pdf_wo_re: return "pdf_wo_re";
    case Variant::pdf_full: return "pdf_full";
  }
  return "?";
}

inline Variant parse_variant(const std::string& s) {
  for (auto v : {Variant::baseline, Variant::pdf_wo_df, Variant::pdf_wo_da, Variant::pdf_wo_kl, Variant::pdf_wo_re,
                 Variant::pdf_full})
    if (s == to_string(v)) return v;
  throw Error(ErrorCode::invalid_config, "unknown variant '" + s + "'");
}

inline const char* to_string(VoteMode m) { return m == VoteMode::dim_wise ? "dim" : "action"; }

struct ExperimentConfig {
  Variant variant = Variant::pdf_full;
  EnvConfig env;
  HyperParams hp;
  AugmentConfig augment;
  VoteMode vote = VoteMode::dim_wise;
  UncertaintyAggregation aggregation = UncertaintyAggregation::mean;
  std::size_t episodes = 50;
  std::size_t eval_rollouts = 50;
  std::size_t tasks = 10;
  std::vector<std::uint64_t> seeds = {0};
  std::size_t head_hidden = 32;
  std::size_t buffer_capacity = 4096;
  bool keep_buffer = false;         // keep records across episodes
  bool adapt_during_eval = false;   // keep adapting while evaluating
  bool adapt_enabled = true;        // false turns every adapting variant into pure voting
  std::string snapshot_path;

  void validate() const {
    using detail::require;
    require(episodes >= 1, ErrorCode::invalid_config, "episodes must be >= 1");
    require(eval_rollouts >= 1, ErrorCode::invalid_config, "eval_rollouts must be >= 1");
    require(tasks >= 1, ErrorCode::invalid_config, "tasks must be >= 1");
    require(!seeds.empty(), ErrorCode::invalid_config, "seeds must be non-empty");
    require(head_hidden >= 1, ErrorCode::invalid_config, "head_hidden must be >= 1");
    hp.validate();
    augment.validate();
    env.validate();
  }
};

struct MetricsRow {
  std::string variant;
  std::string vote;
  std::size_t n_max = 0;
  std::uint64_t seed = 0;
  std::size_t task = 0;
  double success_rate = 0.0;
  double mean_uncertainty = 0.0;
  double mean_budget = 0.0;
  std::size_t episodes_adapted = 0;
  std::int64_t wall_time_ms = 0;

  friend bool operator==(const MetricsRow&, const MetricsRow&) = default;
};

/// What a variant switches on.
struct VariantSettings {
  bool use_views = true;
  bool use_head = true;
  bool adapt = true;
  std::size_t n_max = 0;
  double lambda_kl = 0.0;
  double reinforce_coef = 1.0;
};

inline VariantSettings settings_for(const ExperimentConfig& cfg) {
  VariantSettings s;
  s.n_max = cfg.hp.n_max;
  s.lambda_kl = cfg.hp.lambda_kl;
  s.reinforce_coef = cfg.hp.reinforce_coef;
  switch (cfg.variant) {
    case Variant::baseline:
      s.use_views = false;
      s.use_head = false;
      s.adapt = false;
      s.n_max = 0;
      break;
    case Variant::pdf_wo_df:
      s.adapt = false;
      break;
    case Variant::pdf_wo_da:
      s.n_max = 0;
      break;
    case Variant::pdf_wo_kl:
      s.lambda_kl = 0.0;
      break;
    case Variant::pdf_wo_re:
      s.reinforce_coef = 0.0;
      break;
    case Variant::pdf_full:
      break;
  }
  if (!cfg.adapt_enabled) s.adapt = false;
  return s;
}

struct StepDecision {
  Action action;
  double uncertainty = 0.0;
  std::size_t views = 0;  // augmented views used, excluding the original
};

/// One decision step: uncertainty from the frozen logits of the original
/// view, budgeted augmentation, per-view perturbed logits, vote.
/// Records for every view go to `buffer` when non-null.
inline StepDecision decide(const PolicySnapshot& snapshot, const PerturbationHead& head, const Observation& obs,
                           const Instruction& instr, const ExperimentConfig& cfg, const VariantSettings& vs,
                           std::uint64_t view_seed, std::size_t timestep, RolloutBuffer* buffer) {
  StepDecision out;
  const Feature f0 = encode(snapshot, obs, instr);
  const LogitsMatrix base0 = lm_logits(snapshot, f0);
  out.uncertainty = uncertainty(base0, cfg.aggregation);
  if (!vs.use_views && !vs.use_head) {
    out.action = greedy_action(base0);
    return out;
  }
  out.views = vs.use_views ? budget(out.uncertainty, vs.n_max, cfg.hp.rounding) : 0;
  auto augmented = generate_views(obs, out.views, view_seed, cfg.augment);

  std::vector<Feature> features;
  std::vector<LogitsMatrix> logits;
  features.reserve(out.views + 1);
  logits.reserve(out.views + 1);
  features.push_back(f0);
  logits.push_back(perturbed_logits(base0, head, f0, cfg.hp.lambda));
  for (const auto& view : augmented) {
    features.push_back(encode(snapshot, view, instr));
    logits.push_back(perturbed_logits(lm_logits(snapshot, features.back()), head, features.back(), cfg.hp.lambda));
  }
  const auto candidates = decode_candidates(logits);
  out.action = vote(candidates, cfg.vote);
  if (buffer)
    for (std::size_t j = 0; j < features.size(); ++j)
      buffer->push({std::move(features[j]), std::move(logits[j]), out.action, timestep, j});
  return out;
}

struct EpisodeLog {
  std::vector<Action> actions;
  bool success = false;
  Feedback feedback;
  double uncertainty_sum = 0.0;
  std::size_t views_sum = 0;
};

inline EpisodeLog run_episode(const PolicySnapshot& snapshot, const PerturbationHead& head, const EnvConfig& env,
                              const ExperimentConfig& cfg, const VariantSettings& vs, std::uint64_t episode_seed,
                              RolloutBuffer* buffer) {
  auto r = reset(env);
  EnvState s = std::move(r.state);
  Observation obs = std::move(r.observation);
  EpisodeLog log;
  for (std::size_t t = 0; !s.done; ++t) {
    auto d = decide(snapshot, head, obs, r.instruction, cfg, vs, derive_seed({episode_seed, t}), t, buffer);
    log.uncertainty_sum += d.uncertainty;
    log.views_sum += d.views;
    log.actions.push_back(d.action);
    auto next = step(std::move(s), d.action);
    obs = std::move(next.observation);
    s = std::move(next.state);
  }
  log.success = s.success;
  log.feedback = episode_feedback(s);
  return log;
}

/// Everything one (seed, task) run produced; `actions` holds the executed
/// action sequence of every adaptation and evaluation episode in order.
struct TaskRun {
  MetricsRow row;
  std::vector<std::vector<Action>> actions;
  PerturbationHead head;
};

inline EnvConfig task_env(const ExperimentConfig& cfg, std::uint64_t seed, std::size_t task) {
  EnvConfig env = cfg.env;
  env.seed = derive_seed({cfg.env.seed, seed, task});
  return env;
}

inline TaskRun run_task(const PolicySnapshot& snapshot, const ExperimentConfig& cfg, std::uint64_t seed, std::size_t task) {
  const auto start = std::chrono::steady_clock::now();
  const VariantSettings vs = settings_for(cfg);
  const EnvConfig env = task_env(cfg, seed, task);
  HyperParams hp = cfg.hp;
  hp.lambda_kl = vs.lambda_kl;
  hp.reinforce_coef = vs.reinforce_coef;
  hp.n_max = vs.n_max;

  TaskRun out;
  out.head = PerturbationHead::zero_init(snapshot.header(), cfg.head_hidden, derive_seed({seed, task, 0x4EAD}));
  RolloutBuffer buffer(cfg.buffer_capacity);
  BaselineTracker tracker(hp.baseline_mode);

  auto adapt_after = [&](const EpisodeLog& log, std::uint64_t adapt_seed) {
    adapt(out.head, buffer, snapshot, log.feedback, tracker, hp, adapt_seed, std::nullopt, cfg.keep_buffer);
    ++out.row.episodes_adapted;
  };

  if (vs.adapt) {
    for (std::size_t e = 0; e < cfg.episodes; ++e) {
      auto log = run_episode(snapshot, out.head, env, cfg, vs, derive_seed({seed, task, 1, e}), &buffer);
      adapt_after(log, derive_seed({seed, task, 2, e}));
      out.actions.push_back(std::move(log.actions));
    }
  }

  std::size_t successes = 0, steps = 0, views = 0;
  double u_sum = 0.0;
  const bool keep_adapting = vs.adapt && cfg.adapt_during_eval;
  for (std::size_t k = 0; k < cfg.eval_rollouts; ++k) {
    auto log = run_episode(snapshot, out.head, env, cfg, vs, derive_seed({seed, task, 3, k}),
                           keep_adapting ? &buffer : nullptr);
    successes += log.success ? 1 : 0;
    steps += log.actions.size();
    views += log.views_sum;
    u_sum += log.uncertainty_sum;
    if (keep_adapting) adapt_after(log, derive_seed({seed, task, 4, k}));
    out.actions.push_back(std::move(log.actions));
  }

  auto& row = out.row;
  row.variant = to_string(cfg.variant);
  row.vote = to_string(cfg.vote);
  row.n_max = vs.n_max;
  row.seed = seed;
  row.task = task;
  row.success_rate = static_cast<double>(successes) / static_cast<double>(cfg.eval_rollouts);
  row.mean_uncertainty = steps ? u_sum / static_cast<double>(steps) : 0.0;
  row.mean_budget = steps ? static_cast<double>(views) / static_cast<double>(steps) : 0.0;
  row.wall_time_ms =
      std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start).count();
  return out;
}

/// Runs every (seed, task) pair; rows come back in (seed, task) order
/// regardless of `jobs`.
inline std::vector<MetricsRow> run_variant(const PolicySnapshot& snapshot, const ExperimentConfig& cfg,
                                           std::size_t jobs = 1) {
  cfg.validate();
  const auto& h = snapshot.header();
  detail::require(h.height == cfg.env.obs_height() && h.width == cfg.env.obs_width() && h.channels == 3 &&
                      h.vocab == cfg.env.vocab && h.instr_len == cfg.env.instr_len &&
                      h.action_dims == cfg.env.action_dims && h.action_tokens == cfg.env.action_tokens,
                  ErrorCode::invalid_config, "snapshot architecture does not match the environment");

  std::vector<std::pair<std::uint64_t, std::size_t>> work;
  for (auto seed : cfg.seeds)
    for (std::size_t t = 0; t < cfg.tasks; ++t) work.emplace_back(seed, t);

  std::vector<MetricsRow> rows(work.size());
  if (jobs <= 1) {
    for (std::size_t i = 0; i < work.size(); ++i) rows[i] = run_task(snapshot, cfg, work[i].first, work[i].second).row;
    return rows;
  }
  for (std::size_t begin = 0; begin < work.size(); begin += jobs) {
    std::vector<std::future<MetricsRow>> pending;
    for (std::size_t i = begin; i < std::min(work.size(), begin + jobs); ++i)
      pending.push_back(std::async(std::launch::async, [&, i] { return run_task(snapshot, cfg, work[i].first, work[i].second).row; }));
    for (std::size_t i = 0; i < pending.size(); ++i) rows[begin + i] = pending[i].get();
  }
  return rows;
}

inline std::vector<MetricsRow> run_variant(const ExperimentConfig& cfg, std::size_t jobs = 1) {
  detail::require(!cfg.snapshot_path.empty() && std::filesystem::exists(cfg.snapshot_path), ErrorCode::missing_snapshot,
                  "snapshot '" + cfg.snapshot_path + "' not found; run `pdf train-bc` first");
  return run_variant(load_snapshot(cfg.snapshot_path), cfg, jobs);
}

/// pdf_full once per N_max value.
inline std::vector<MetricsRow> budget_sweep(const PolicySnapshot& snapshot, ExperimentConfig cfg,
                                            const std::vector<std::size_t>& budgets, std::size_t jobs = 1) {
  detail::require(!budgets.empty(), ErrorCode::invalid_config, "budget list is empty");
  cfg.variant = Variant::pdf_full;
  std::vector<MetricsRow> rows;
  for (auto b : budgets) {
    cfg.hp.n_max = b;
    auto part = run_variant(snapshot, cfg, jobs);
    rows.insert(rows.end(), part.begin(), part.end());
  }
  return rows;
}

/// pdf_full under dim-wise then action-wise voting.
inline std::vector<MetricsRow> compare_voting(const PolicySnapshot& snapshot, ExperimentConfig cfg, std::size_t jobs = 1) {
  std::vector<MetricsRow> rows;
  for (auto mode : {VoteMode::dim_wise, VoteMode::action_wise}) {
    cfg.vote = mode;
    auto part = run_variant(snapshot, cfg, jobs);
    rows.insert(rows.end(), part.begin(), part.end());
  }
  return rows;
}

// ---- metrics files -------------------------------------------------------

enum class MetricsFormat { csv, jsonl };

inline const std::vector<std::string>& metrics_columns() {
  static const std::vector<std::string> cols = {"variant",          "vote",        "n_max",           "seed",
                                                "task",             "success_rate", "mean_uncertainty", "mean_budget",
                                                "episodes_adapted", "wall_time_ms"};
  return cols;
}

namespace detail {

inline std::string fixed6(double v) {
  std::ostringstream os;
  os.imbue(std::locale::classic());
  os << std::fixed << std::setprecision(6) << v;
  return os.str();
}

}  // namespace detail

inline std::string format_metrics(const std::vector<MetricsRow>& rows, MetricsFormat format) {
  std::ostringstream os;
  if (format == MetricsFormat::csv) {
    const auto& cols = metrics_columns();
    for (std::size_t i = 0; i < cols.size(); ++i) os << (i ? "," : "") << cols[i];
    os << '\n';
    for (const auto& r : rows)
      os << r.variant << ',' << r.vote << ',' << r.n_max << ',' << r.seed << ',' << r.task << ','
         << detail::fixed6(r.success_rate) << ',' << detail::fixed6(r.mean_uncertainty) << ','
         << detail::fixed6(r.mean_budget) << ',' << r.episodes_adapted << ',' << r.wall_time_ms << '\n';
    return os.str();
  }
  // Reals are emitted as raw fixed-point tokens so they keep six decimals.
  for (const auto& r : rows) {
    os << "{\"variant\":" << nlohmann::json(r.variant).dump() << ",\"vote\":" << nlohmann::json(r.vote).dump()
       << ",\"n_max\":" << r.n_max << ",\"seed\":" << r.seed << ",\"task\":" << r.task
       << ",\"success_rate\":" << detail::fixed6(r.success_rate)
       << ",\"mean_uncertainty\":" << detail::fixed6(r.mean_uncertainty)
       << ",\"mean_budget\":" << detail::fixed6(r.mean_budget) << ",\"episodes_adapted\":" << r.episodes_adapted
       << ",\"wall_time_ms\":" << r.wall_time_ms << "}\n";
  }
  return os.str();
}

inline void emit_metrics(const std::vector<MetricsRow>& rows, const std::filesystem::path& path, MetricsFormat format) {
  detail::require(!rows.empty(), ErrorCode::empty_input, "no metrics rows to emit");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  detail::require(out.good(), ErrorCode::io, "cannot open '" + path.string() + "' for writing");
  out << format_metrics(rows, format);
  detail::require(out.good(), ErrorCode::io, "write failed for '" + path.string() + "'");
}

inline std::vector<MetricsRow> parse_metrics_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  std::string header;
  for (std::size_t i = 0; i < metrics_columns().size(); ++i) header += (i ? "," : "") + metrics_columns()[i];
  detail::require(line == header, ErrorCode::malformed_header, "unexpected metrics CSV header");
  std::vector<MetricsRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    detail::require(f.size() == metrics_columns().size(), ErrorCode::malformed_header, "metrics row has wrong arity");
    MetricsRow r;
    r.variant = f[0];
    r.vote = f[1];
    r.n_max = std::stoull(f[2]);
    r.seed = std::stoull(f[3]);
    r.task = std::stoull(f[4]);
    r.success_rate = std::stod(f[5]);
    r.mean_uncertainty = std::stod(f[6]);
    r.mean_budget = std::stod(f[7]);
    r.episodes_adapted = std::stoull(f[8]);
    r.wall_time_ms = std::stoll(f[9]);
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace pdf
