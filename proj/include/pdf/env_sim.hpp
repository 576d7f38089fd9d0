#pragma once

// Rendered gridworld pick-and-place with delayed episodic feedback.
//
// Action dims: 0 = dx token, 1 = dy token, 2 = gripper (token >= K/2 closes),
// 3.. = reserved. Motion is (token - K/2) clamped to +-max_move cells.
// Channels: 0 agent (1.0 empty-handed, 0.5 holding), 1 objects (intensity =
// colour), 2 goal.

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pdf/core_types.hpp"
#include "pdf/frozen_policy.hpp"
#include "pdf/rng.hpp"

namespace pdf {

struct Cell {
  int x = 0;
  int y = 0;
  friend bool operator==(const Cell&, const Cell&) = default;
};

inline int chebyshev(Cell a, Cell b) { return std::max(std::abs(a.x - b.x), std::abs(a.y - b.y)); }

struct ObjectSpec {
  std::uint32_t kind = 0;
  Cell position;
  float color = 1.0f;
};

struct ShiftSpec {
  enum class Mode { none, pose_shift, distractor, mask_target };
  Mode mode = Mode::none;
  int amount = 0;  // max_cells for pose_shift, count for distractor

  static ShiftSpec none() { return {}; }
  static ShiftSpec pose_shift(int max_cells) { return {Mode::pose_shift, max_cells}; }
  static ShiftSpec distractor(int count) { return {Mode::distractor, count}; }
  static ShiftSpec mask_target() { return {Mode::mask_target, 0}; }
};

enum class FeedbackMode { binary, shaped };

struct EnvConfig {
  int grid_h = 8;
  int grid_w = 8;
  int cell_px = 2;
  std::vector<ObjectSpec> objects = {{0, {5, 2}, 1.0f}, {1, {2, 5}, 0.5f}};
  std::uint32_t target_kind = 0;
  Cell agent_start{1, 1};
  Cell goal{6, 6};
  int horizon = 30;
  ShiftSpec shift;
  std::uint64_t seed = 0;
  int grasp_radius = 1;
  int max_move = 1;
  std::size_t action_dims = 4;
  std::size_t action_tokens = 16;
  std::size_t vocab = 8;
  std::size_t instr_len = 4;
  FeedbackMode feedback = FeedbackMode::binary;

  bool in_grid(Cell c) const { return c.x >= 0 && c.y >= 0 && c.x < grid_w && c.y < grid_h; }

  void validate() const {
    using detail::require;
    require(grid_h >= 2 && grid_w >= 2 && cell_px >= 1, ErrorCode::invalid_config, "grid must be at least 2x2");
    require(horizon >= 1, ErrorCode::invalid_config, "horizon must be >= 1");
    require(in_grid(agent_start) && in_grid(goal), ErrorCode::invalid_config, "agent start and goal must lie in the grid");
    require(action_dims >= 3, ErrorCode::invalid_config, "need at least 3 action dims (dx, dy, gripper)");
    require(action_tokens >= 4 && action_tokens % 2 == 0, ErrorCode::invalid_config, "K must be even and >= 4");
    require(max_move >= 1, ErrorCode::invalid_config, "max_move must be >= 1");
    require(grasp_radius >= 0, ErrorCode::invalid_config, "grasp_radius must be >= 0");
    require(instr_len >= 2 && vocab >= 3, ErrorCode::invalid_config, "instruction needs length >= 2 and vocab >= 3");
    require(shift.amount >= 0, ErrorCode::invalid_config, "shift amount must be >= 0");
    bool has_target = false;
    for (const auto& o : objects) {
      require(in_grid(o.position), ErrorCode::invalid_config, "object position outside the grid");
      require(o.kind + 2 < vocab, ErrorCode::invalid_config, "object kind does not fit the instruction vocabulary");
      require(o.color > 0.0f && o.color <= 1.0f, ErrorCode::invalid_config, "object colour must be in (0,1]");
      has_target = has_target || o.kind == target_kind;
    }
    require(has_target, ErrorCode::invalid_config, "no object of the target kind");
  }

  std::size_t obs_height() const { return static_cast<std::size_t>(grid_h * cell_px); }
  std::size_t obs_width() const { return static_cast<std::size_t>(grid_w * cell_px); }

  /// Policy architecture matching this environment's observation/action shapes.
  PolicyHeader policy_header() const {
    PolicyHeader h;
    h.height = obs_height();
    h.width = obs_width();
    h.channels = 3;
    h.vocab = vocab;
    h.instr_len = instr_len;
    h.action_dims = action_dims;
    h.action_tokens = action_tokens;
    return h;
  }
};

struct EnvObject {
  std::uint32_t kind = 0;
  Cell position;
  float color = 1.0f;
  bool visible = true;
};

/// Full simulator state; a value type, so snapshots of an episode are cheap to keep.
struct EnvState {
  std::shared_ptr<const EnvConfig> config;
  Cell agent;
  std::vector<EnvObject> objects;
  std::size_t target_index = 0;
  std::optional<std::size_t> held;
  int steps = 0;
  bool done = false;
  bool success = false;
};

struct ResetResult {
  Observation observation;
  Instruction instruction;
  EnvState state;
};

struct StepResult {
  Observation observation;
  bool done = false;
  EnvState state;
};

inline Instruction make_instruction(const EnvConfig& cfg) {
  std::vector<std::uint32_t> toks(cfg.instr_len, Instruction::kPad);
  toks[0] = 1;  // "pick and place"
  toks[1] = 2 + cfg.target_kind;
  return Instruction(std::move(toks), cfg.vocab);
}

inline Observation render(const EnvState& s) {
  const auto& cfg = *s.config;
  const std::size_t H = cfg.obs_height(), W = cfg.obs_width(), C = 3;
  std::vector<float> px(H * W * C, 0.0f);
  auto paint = [&](Cell c, std::size_t channel, float v) {
    for (int dy = 0; dy < cfg.cell_px; ++dy)
      for (int dx = 0; dx < cfg.cell_px; ++dx) {
        const auto y = static_cast<std::size_t>(c.y * cfg.cell_px + dy);
        const auto x = static_cast<std::size_t>(c.x * cfg.cell_px + dx);
        float& p = px[(y * W + x) * C + channel];
        p = std::max(p, v);
      }
  };
  paint(cfg.goal, 2, 1.0f);
  for (const auto& o : s.objects)
    if (o.visible) paint(o.position, 1, o.color);
  paint(s.agent, 0, s.held ? 0.5f : 1.0f);
  return Observation(H, W, C, std::move(px));
}

namespace detail {

inline bool cell_free(const std::vector<EnvObject>& objs, Cell c, std::size_t skip) {
  for (std::size_t i = 0; i < objs.size(); ++i)
    if (i != skip && objs[i].position == c) return false;
  return true;
}

}  // namespace detail

/// Initial state for `config`; layout perturbations are drawn from config.seed.
inline ResetResult reset(const EnvConfig& config) {
  config.validate();
  auto cfg = std::make_shared<const EnvConfig>(config);
  EnvState s;
  s.config = cfg;
  s.agent = cfg->agent_start;
  bool found = false;
  for (std::size_t i = 0; i < cfg->objects.size(); ++i) {
    const auto& o = cfg->objects[i];
    s.objects.push_back({o.kind, o.position, o.color, true});
    if (!found && o.kind == cfg->target_kind) {
      s.target_index = i;
      found = true;
    }
  }

  Rng rng(derive_seed({cfg->seed, 0xE4F}));
  const auto blocked = [&](Cell c, std::size_t skip) {
    return !cfg->in_grid(c) || c == cfg->agent_start || c == cfg->goal || !detail::cell_free(s.objects, c, skip);
  };

  switch (cfg->shift.mode) {
    case ShiftSpec::Mode::none:
      break;
    case ShiftSpec::Mode::pose_shift: {
      const int m = cfg->shift.amount;
      const Cell canonical = s.objects[s.target_index].position;
      std::vector<Cell> options;
      for (int dy = -m; dy <= m; ++dy)
        for (int dx = -m; dx <= m; ++dx) {
          const Cell c{canonical.x + dx, canonical.y + dy};
          if ((dx != 0 || dy != 0) && !blocked(c, s.target_index)) options.push_back(c);
        }
      if (!options.empty()) s.objects[s.target_index].position = options[rng.below(options.size())];
      break;
    }
    case ShiftSpec::Mode::distractor: {
      std::uint32_t kinds = static_cast<std::uint32_t>(cfg->vocab - 2);
      for (int i = 0; i < cfg->shift.amount; ++i) {
        std::vector<Cell> free;
        for (int y = 0; y < cfg->grid_h; ++y)
          for (int x = 0; x < cfg->grid_w; ++x)
            if (!blocked({x, y}, s.objects.size())) free.push_back({x, y});
        if (free.empty()) break;
        const std::uint32_t kind = (cfg->target_kind + 1 + static_cast<std::uint32_t>(rng.below(kinds - 1))) % kinds;
        const float color = static_cast<float>(rng.uniform(0.3, 1.0));
        s.objects.push_back({kind, free[rng.below(free.size())], color, true});
      }
      break;
    }
    case ShiftSpec::Mode::mask_target:
      s.objects[s.target_index].visible = false;
      break;
  }
  auto obs = render(s);
  return {std::move(obs), make_instruction(*cfg), std::move(s)};
}

inline int motion_from_token(const EnvConfig& cfg, std::uint32_t token) {
  const int centre = static_cast<int>(cfg.action_tokens / 2);
  return std::clamp(static_cast<int>(token) - centre, -cfg.max_move, cfg.max_move);
}

inline bool gripper_closed(const EnvConfig& cfg, std::uint32_t token) { return token >= cfg.action_tokens / 2; }

inline StepResult step(EnvState s, const Action& action) {
  detail::require(!s.done, ErrorCode::step_after_done, "episode already finished");
  const auto& cfg = *s.config;
  detail::require(action.size() == cfg.action_dims, ErrorCode::shape_mismatch, "action has wrong D for this environment");
  for (auto t : action.dims())
    detail::require(t < cfg.action_tokens, ErrorCode::invalid_value, "action token >= K");

  s.agent.x = std::clamp(s.agent.x + motion_from_token(cfg, action[0]), 0, cfg.grid_w - 1);
  s.agent.y = std::clamp(s.agent.y + motion_from_token(cfg, action[1]), 0, cfg.grid_h - 1);
  if (s.held) s.objects[*s.held].position = s.agent;

  const bool close = gripper_closed(cfg, action[2]);
  if (close && !s.held) {
    std::optional<std::size_t> pick;
    int best = cfg.grasp_radius + 1;
    for (std::size_t i = 0; i < s.objects.size(); ++i) {
      const int d = chebyshev(s.objects[i].position, s.agent);
      if (d <= cfg.grasp_radius && d < best) {
        best = d;
        pick = i;
      }
    }
    if (pick) {
      s.held = pick;
      s.objects[*pick].position = s.agent;
    }
  } else if (!close && s.held) {
    const bool placed = s.agent == cfg.goal && *s.held == s.target_index;
    s.held.reset();
    s.done = true;  // a drop anywhere else is invalid and ends the episode
    s.success = placed;
  }

  ++s.steps;
  if (s.steps >= cfg.horizon) s.done = true;
  auto obs = render(s);
  return {std::move(obs), s.done, std::move(s)};
}

/// Delayed feedback; only available once the episode has finished.
inline Feedback episode_feedback(const EnvState& s) {
  detail::require(s.done, ErrorCode::called_before_done, "feedback requested before the episode finished");
  const auto& cfg = *s.config;
  if (cfg.feedback == FeedbackMode::binary || s.success) return Feedback(s.success ? 1.0 : 0.0);
  const double far = static_cast<double>(std::max(cfg.grid_w, cfg.grid_h) - 1);
  const double d = static_cast<double>(chebyshev(s.objects[s.target_index].position, cfg.goal));
  return Feedback(0.5 * (1.0 - d / far));
}

struct EpisodeResult {
  bool success = false;
  int steps_taken = 0;
  Feedback feedback;
  std::vector<std::pair<Observation, Action>> trace;
};

inline Action expert_action(const EnvState& s) {
  const auto& cfg = *s.config;
  const auto centre = static_cast<std::uint32_t>(cfg.action_tokens / 2);
  const auto open = std::uint32_t{0};
  const auto close = static_cast<std::uint32_t>(cfg.action_tokens - 1);
  auto toward = [&](int from, int to) {
    return static_cast<std::uint32_t>(static_cast<int>(centre) + std::clamp(to - from, -1, 1));
  };
  std::vector<std::uint32_t> dims(cfg.action_dims, centre);
  if (!s.held) {
    const Cell t = s.objects[s.target_index].position;
    if (s.agent == t) {
      dims[2] = close;
    } else {
      dims[0] = toward(s.agent.x, t.x);
      dims[1] = toward(s.agent.y, t.y);
      dims[2] = open;
    }
  } else {
    if (s.agent == cfg.goal) {
      dims[2] = open;
    } else {
      dims[0] = toward(s.agent.x, cfg.goal.x);
      dims[1] = toward(s.agent.y, cfg.goal.y);
      dims[2] = close;
    }
  }
  return Action(std::move(dims), cfg.action_tokens);
}

/// Expert demonstration on the canonical layout.
inline Demonstration scripted_expert(const EnvConfig& config) {
  detail::require(config.shift.mode == ShiftSpec::Mode::none, ErrorCode::unsupported_shift,
                  "the scripted expert is only defined on canonical layouts");
  auto r = reset(config);
  Demonstration demo;
  EnvState s = r.state;
  Observation obs = r.observation;
  while (!s.done) {
    auto a = expert_action(s);
    demo.steps.push_back({obs, r.instruction, a});
    auto next = step(std::move(s), a);
    obs = std::move(next.observation);
    s = std::move(next.state);
  }
  detail::require(s.success, ErrorCode::invalid_config, "scripted expert failed on this layout");
  return demo;
}

/// Replays a fixed action sequence from reset until done or the sequence ends.
inline EpisodeResult replay(const EnvConfig& config, std::span<const Action> actions) {
  auto r = reset(config);
  EnvState s = r.state;
  Observation obs = r.observation;
  EpisodeResult out;
  for (const auto& a : actions) {
    if (s.done) break;
    out.trace.emplace_back(obs, a);
    auto next = step(std::move(s), a);
    obs = std::move(next.observation);
    s = std::move(next.state);
  }
  out.steps_taken = s.steps;
  out.success = s.success;
  if (s.done) out.feedback = episode_feedback(s);
  return out;
}

inline void write_trace_jsonl(const EpisodeResult& result, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  detail::require(out.good(), ErrorCode::io, "cannot open '" + path.string() + "' for writing");
  for (std::size_t t = 0; t < result.trace.size(); ++t) {
    const auto& [obs, action] = result.trace[t];
    nlohmann::ordered_json j;
    j["t"] = t;
    j["action"] = std::vector<std::uint32_t>(action.dims().begin(), action.dims().end());
    j["shape"] = {obs.height(), obs.width(), obs.channels()};
    j["pixels"] = std::vector<float>(obs.pixels().begin(), obs.pixels().end());
    out << j.dump() << '\n';
  }
  nlohmann::ordered_json summary;
  summary["success"] = result.success;
  summary["steps_taken"] = result.steps_taken;
  summary["feedback"] = result.feedback.value;
  out << summary.dump() << '\n';
}

}  // namespace pdf
