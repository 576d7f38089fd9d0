#pragma once

// JSON experiment configuration. Unknown keys are rejected so that typos
// surface as config errors instead of silently falling back to defaults.

#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <string>

#include <json.hpp>

#include "pdf/core_types.hpp"
#include "pdf/frozen_policy.hpp"
#include "pdf/harness.hpp"

namespace pdf {

struct FileConfig {
  ExperimentConfig experiment;
  BcOptions bc;
  std::uint64_t bc_seed = 0;
};

namespace detail {

using json = nlohmann::json;

inline void only_keys(const json& j, std::initializer_list<const char*> keys, const std::string& where) {
  require(j.is_object(), ErrorCode::invalid_config, where + " must be an object");
  for (const auto& [k, _] : j.items()) {
    bool known = false;
    for (const char* allowed : keys) known = known || k == allowed;
    require(known, ErrorCode::invalid_config, "unknown key '" + k + "' in " + where);
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::invalid_config, std::string("bad value for '") + key + "': " + e.what());
  }
}

inline Cell read_cell(const json& j, const std::string& what) {
  require(j.is_array() && j.size() == 2 && j[0].is_number_integer() && j[1].is_number_integer(),
          ErrorCode::invalid_config, what + " must be [x, y]");
  return {j[0].get<int>(), j[1].get<int>()};
}

}  // namespace detail

/// "fixed:<v>" or "mean:<w>"
inline BaselineMode parse_baseline(const std::string& s) {
  const auto colon = s.find(':');
  detail::require(colon != std::string::npos, ErrorCode::invalid_config, "baseline must be fixed:<v> or mean:<w>");
  const auto kind = s.substr(0, colon), arg = s.substr(colon + 1);
  try {
    std::size_t used = 0;
    if (kind == "fixed") {
      const double v = std::stod(arg, &used);
      if (used == arg.size()) return BaselineMode::fixed(v);
    } else if (kind == "mean") {
      const long w = std::stol(arg, &used);
      if (used == arg.size() && w >= 1) return BaselineMode::running_mean(static_cast<std::size_t>(w));
    }
  } catch (const std::exception&) {
  }
  throw Error(ErrorCode::invalid_config, "bad baseline '" + s + "'");
}

/// "none", "pose_shift:<n>", "distractor:<n>" or "mask_target"
inline ShiftSpec parse_shift(const std::string& s) {
  if (s == "none") return ShiftSpec::none();
  if (s == "mask_target") return ShiftSpec::mask_target();
  const auto colon = s.find(':');
  if (colon != std::string::npos) {
    const auto kind = s.substr(0, colon), arg = s.substr(colon + 1);
    try {
      std::size_t used = 0;
      const int n = std::stoi(arg, &used);
      if (used == arg.size() && n >= 0) {
        if (kind == "pose_shift") return ShiftSpec::pose_shift(n);
        if (kind == "distractor") return ShiftSpec::distractor(n);
      }
    } catch (const std::exception&) {
    }
  }
  throw Error(ErrorCode::invalid_config, "bad shift '" + s + "'");
}

inline VoteMode parse_vote(const std::string& s) {
  if (s == "dim") return VoteMode::dim_wise;
  if (s == "action") return VoteMode::action_wise;
  throw Error(ErrorCode::invalid_config, "vote must be 'dim' or 'action', got '" + s + "'");
}

namespace detail {

inline FileConfig parse_config_unchecked(const nlohmann::json& j) {
  using detail::read;
  FileConfig fc;
  auto& x = fc.experiment;
  detail::only_keys(j,
                    {"snapshot", "variant", "episodes", "eval_rollouts", "tasks", "seeds", "vote", "uncertainty",
                     "head_hidden", "buffer_capacity", "keep_buffer", "adapt_during_eval", "adapt", "env", "hp",
                     "augment", "bc"},
                    "config");
  read(j, "snapshot", x.snapshot_path);
  if (j.contains("variant")) x.variant = parse_variant(j["variant"].get<std::string>());
  read(j, "episodes", x.episodes);
  read(j, "eval_rollouts", x.eval_rollouts);
  read(j, "tasks", x.tasks);
  read(j, "seeds", x.seeds);
  if (j.contains("vote")) x.vote = parse_vote(j["vote"].get<std::string>());
  if (j.contains("uncertainty")) {
    const auto s = j["uncertainty"].get<std::string>();
    detail::require(s == "mean" || s == "max", ErrorCode::invalid_config, "uncertainty must be 'mean' or 'max'");
    x.aggregation = s == "max" ? UncertaintyAggregation::max : UncertaintyAggregation::mean;
  }
  read(j, "head_hidden", x.head_hidden);
  read(j, "buffer_capacity", x.buffer_capacity);
  read(j, "keep_buffer", x.keep_buffer);
  read(j, "adapt_during_eval", x.adapt_during_eval);
  read(j, "adapt", x.adapt_enabled);

  if (j.contains("env")) {
    const auto& e = j["env"];
    detail::only_keys(e,
                      {"grid_h", "grid_w", "cell_px", "horizon", "grasp_radius", "max_move", "agent_start", "goal",
                       "target_kind", "objects", "shift", "seed", "feedback", "action_dims", "action_tokens", "vocab",
                       "instr_len"},
                      "env");
    auto& env = x.env;
    read(e, "grid_h", env.grid_h);
    read(e, "grid_w", env.grid_w);
    read(e, "cell_px", env.cell_px);
    read(e, "horizon", env.horizon);
    read(e, "grasp_radius", env.grasp_radius);
    read(e, "max_move", env.max_move);
    if (e.contains("agent_start")) env.agent_start = detail::read_cell(e["agent_start"], "env.agent_start");
    if (e.contains("goal")) env.goal = detail::read_cell(e["goal"], "env.goal");
    read(e, "target_kind", env.target_kind);
    if (e.contains("objects")) {
      env.objects.clear();
      for (const auto& o : e["objects"]) {
        detail::only_keys(o, {"kind", "position", "color"}, "env.objects[]");
        ObjectSpec spec;
        read(o, "kind", spec.kind);
        detail::require(o.contains("position"), ErrorCode::invalid_config, "object needs a position");
        spec.position = detail::read_cell(o["position"], "object position");
        read(o, "color", spec.color);
        env.objects.push_back(spec);
      }
    }
    if (e.contains("shift")) env.shift = parse_shift(e["shift"].get<std::string>());
    read(e, "seed", env.seed);
    if (e.contains("feedback")) {
      const auto s = e["feedback"].get<std::string>();
      detail::require(s == "binary" || s == "shaped", ErrorCode::invalid_config, "feedback must be binary or shaped");
      env.feedback = s == "shaped" ? FeedbackMode::shaped : FeedbackMode::binary;
    }
    read(e, "action_dims", env.action_dims);
    read(e, "action_tokens", env.action_tokens);
    read(e, "vocab", env.vocab);
    read(e, "instr_len", env.instr_len);
  }

  if (j.contains("hp")) {
    const auto& h = j["hp"];
    detail::only_keys(h,
                      {"lambda", "lambda_kl", "n_max", "learning_rate", "baseline", "rounding", "batch_size",
                       "grad_steps_per_episode", "reinforce_coef"},
                      "hp");
    auto& hp = x.hp;
    read(h, "lambda", hp.lambda);
    read(h, "lambda_kl", hp.lambda_kl);
    read(h, "n_max", hp.n_max);
    read(h, "learning_rate", hp.learning_rate);
    if (h.contains("baseline")) hp.baseline_mode = parse_baseline(h["baseline"].get<std::string>());
    if (h.contains("rounding")) {
      const auto s = h["rounding"].get<std::string>();
      detail::require(s == "floor" || s == "round", ErrorCode::invalid_config, "rounding must be floor or round");
      hp.rounding = s == "round" ? Rounding::round : Rounding::floor;
    }
    read(h, "batch_size", hp.batch_size);
    read(h, "grad_steps_per_episode", hp.grad_steps_per_episode);
    read(h, "reinforce_coef", hp.reinforce_coef);
  }

  if (j.contains("augment")) {
    const auto& a = j["augment"];
    detail::only_keys(a,
                      {"pixel_shift", "gaussian_noise", "brightness", "occlusion", "max_shift", "max_sigma",
                       "max_brightness", "max_occlusion_area", "identity_only"},
                      "augment");
    auto& ac = x.augment;
    read(a, "pixel_shift", ac.pixel_shift);
    read(a, "gaussian_noise", ac.gaussian_noise);
    read(a, "brightness", ac.brightness);
    read(a, "occlusion", ac.occlusion);
    read(a, "max_shift", ac.max_shift);
    read(a, "max_sigma", ac.max_sigma);
    read(a, "max_brightness", ac.max_brightness);
    read(a, "max_occlusion_area", ac.max_occlusion_area);
    read(a, "identity_only", ac.identity_only);
  }

  if (j.contains("bc")) {
    const auto& b = j["bc"];
    detail::only_keys(b, {"epochs", "learning_rate", "label_smoothing", "hidden", "feature", "seed"}, "bc");
    read(b, "epochs", fc.bc.epochs);
    read(b, "learning_rate", fc.bc.learning_rate);
    read(b, "label_smoothing", fc.bc.label_smoothing);
    read(b, "hidden", fc.bc.hidden);
    read(b, "feature", fc.bc.feature);
    read(b, "seed", fc.bc_seed);
  }
  return fc;
}

}  // namespace detail

inline FileConfig parse_config(const nlohmann::json& j) {
  try {
    return detail::parse_config_unchecked(j);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::invalid_config, std::string("malformed config: ") + e.what());
  }
}

inline FileConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  detail::require(in.good(), ErrorCode::invalid_config, "cannot open config '" + path.string() + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::invalid_config, "config '" + path.string() + "' is not valid JSON: " + e.what());
  }
  auto fc = parse_config(j);
  // Relative snapshot paths resolve against the config file's directory.
  if (!fc.experiment.snapshot_path.empty() && std::filesystem::path(fc.experiment.snapshot_path).is_relative())
    fc.experiment.snapshot_path = (path.parent_path() / fc.experiment.snapshot_path).string();
  return fc;
}

}  // namespace pdf
