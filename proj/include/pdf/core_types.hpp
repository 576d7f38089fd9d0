#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace pdf {

enum class ErrorCode {
  io,
  malformed_header,
  dimension_mismatch,
  shape_mismatch,
  invalid_value,
  invalid_config,
  numeric,
  divergence,
  empty_input,
  inconsistent_d,
  empty_buffer,
  step_after_done,
  called_before_done,
  unsupported_shift,
  missing_snapshot,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::io: return "io-error";
    case ErrorCode::malformed_header: return "malformed-header";
    case ErrorCode::dimension_mismatch: return "dimension-mismatch";
    case ErrorCode::shape_mismatch: return "shape-mismatch";
    case ErrorCode::invalid_value: return "invalid-value";
    case ErrorCode::invalid_config: return "invalid-config";
    case ErrorCode::numeric: return "numeric-error";
    case ErrorCode::divergence: return "divergence";
    case ErrorCode::empty_input: return "empty-input";
    case ErrorCode::inconsistent_d: return "inconsistent-D";
    case ErrorCode::empty_buffer: return "empty-buffer";
    case ErrorCode::step_after_done: return "step-after-done";
    case ErrorCode::called_before_done: return "called-before-done";
    case ErrorCode::unsupported_shift: return "unsupported-shift";
    case ErrorCode::missing_snapshot: return "missing-snapshot";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

namespace detail {

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) throw Error(code, what);
}

inline bool all_finite(std::span<const double> xs) {
  for (double x : xs)
    if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace detail

/// Pixel observation, H x W x C, channel-last, values in [0, 1].
class Observation {
 public:
  Observation() = default;

  Observation(std::size_t height, std::size_t width, std::size_t channels, std::vector<float> pixels)
      : height_(height), width_(width), channels_(channels), pixels_(std::move(pixels)) {
    detail::require(pixels_.size() == height_ * width_ * channels_, ErrorCode::shape_mismatch,
                    "observation has " + std::to_string(pixels_.size()) + " values, expected " +
                        std::to_string(height_ * width_ * channels_));
    for (float v : pixels_)
      detail::require(std::isfinite(v) && v >= 0.0f && v <= 1.0f, ErrorCode::invalid_value,
                      "observation value outside [0,1]");
  }

  static Observation zeros(std::size_t height, std::size_t width, std::size_t channels) {
    return Observation(height, width, channels, std::vector<float>(height * width * channels, 0.0f));
  }

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t channels() const noexcept { return channels_; }
  std::size_t size() const noexcept { return pixels_.size(); }
  std::span<const float> pixels() const noexcept { return pixels_; }

  float at(std::size_t y, std::size_t x, std::size_t c) const {
    return pixels_[(y * width_ + x) * channels_ + c];
  }

  bool same_shape(const Observation& other) const noexcept {
    return height_ == other.height_ && width_ == other.width_ && channels_ == other.channels_;
  }

  friend bool operator==(const Observation&, const Observation&) = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::size_t channels_ = 0;
  std::vector<float> pixels_;
};

/// Fixed-length token sequence; pad ids may only form a suffix.
class Instruction {
 public:
  static constexpr std::uint32_t kPad = 0;

  Instruction() = default;

  Instruction(std::vector<std::uint32_t> tokens, std::size_t vocab) : tokens_(std::move(tokens)) {
    bool in_pad = false;
    for (auto t : tokens_) {
      detail::require(t < vocab, ErrorCode::invalid_value,
                      "instruction token " + std::to_string(t) + " >= vocab " + std::to_string(vocab));
      if (t == kPad) {
        in_pad = true;
      } else {
        detail::require(!in_pad, ErrorCode::invalid_value, "pad token before a content token");
      }
    }
  }

  std::size_t size() const noexcept { return tokens_.size(); }
  std::span<const std::uint32_t> tokens() const noexcept { return tokens_; }

  friend bool operator==(const Instruction&, const Instruction&) = default;

 private:
  std::vector<std::uint32_t> tokens_;
};

/// One token index per action dimension.
class Action {
 public:
  Action() = default;

  Action(std::vector<std::uint32_t> dims, std::size_t num_tokens) : dims_(std::move(dims)) {
    detail::require(!dims_.empty(), ErrorCode::invalid_value, "action has no dimensions");
    for (auto d : dims_)
      detail::require(d < num_tokens, ErrorCode::invalid_value,
                      "action token " + std::to_string(d) + " >= K " + std::to_string(num_tokens));
  }

  std::size_t size() const noexcept { return dims_.size(); }
  std::uint32_t operator[](std::size_t i) const { return dims_[i]; }
  std::span<const std::uint32_t> dims() const noexcept { return dims_; }

  friend bool operator==(const Action&, const Action&) = default;
  friend auto operator<=>(const Action&, const Action&) = default;

 private:
  std::vector<std::uint32_t> dims_;
};

/// D x K matrix of per-dimension token scores, row-major.
class LogitsMatrix {
 public:
  LogitsMatrix() = default;

  LogitsMatrix(std::size_t dims, std::size_t tokens, std::vector<double> values)
      : dims_(dims), tokens_(tokens), values_(std::move(values)) {
    detail::require(dims_ > 0 && tokens_ > 0, ErrorCode::shape_mismatch, "logits need D>0 and K>0");
    detail::require(values_.size() == dims_ * tokens_, ErrorCode::shape_mismatch,
                    "logits have " + std::to_string(values_.size()) + " values, expected D*K=" +
                        std::to_string(dims_ * tokens_));
    detail::require(detail::all_finite(values_), ErrorCode::numeric, "non-finite logit");
  }

  std::size_t dims() const noexcept { return dims_; }
  std::size_t tokens() const noexcept { return tokens_; }
  std::span<const double> values() const noexcept { return values_; }
  std::span<const double> row(std::size_t d) const {
    return std::span<const double>(values_).subspan(d * tokens_, tokens_);
  }
  double operator()(std::size_t d, std::size_t k) const { return values_[d * tokens_ + k]; }

  bool same_shape(const LogitsMatrix& other) const noexcept {
    return dims_ == other.dims_ && tokens_ == other.tokens_;
  }

  friend bool operator==(const LogitsMatrix&, const LogitsMatrix&) = default;

 private:
  std::size_t dims_ = 0;
  std::size_t tokens_ = 0;
  std::vector<double> values_;
};

/// Numerically stable softmax of one row, written into `out`.
inline void softmax_row(std::span<const double> logits, std::span<double> out) {
  double hi = logits[0];
  for (double z : logits) hi = z > hi ? z : hi;
  double total = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    out[k] = std::exp(logits[k] - hi);
    total += out[k];
  }
  for (auto& p : out) p /= total;
}

/// Row-wise log-softmax of one row.
inline void log_softmax_row(std::span<const double> logits, std::span<double> out) {
  double hi = logits[0];
  for (double z : logits) hi = z > hi ? z : hi;
  double total = 0.0;
  for (double z : logits) total += std::exp(z - hi);
  const double log_norm = hi + std::log(total);
  for (std::size_t k = 0; k < logits.size(); ++k) out[k] = logits[k] - log_norm;
}

class Feature {
 public:
  Feature() = default;

  explicit Feature(std::vector<double> values) : values_(std::move(values)) {
    detail::require(detail::all_finite(values_), ErrorCode::numeric, "non-finite feature");
  }

  std::size_t size() const noexcept { return values_.size(); }
  std::span<const double> values() const noexcept { return values_; }
  double operator[](std::size_t i) const { return values_[i]; }

  friend bool operator==(const Feature&, const Feature&) = default;

 private:
  std::vector<double> values_;
};

struct Feedback {
  double value = 0.0;

  Feedback() = default;
  explicit Feedback(double v) : value(v) {
    detail::require(std::isfinite(v), ErrorCode::numeric, "non-finite feedback");
  }
};

struct RolloutRecord {
  Feature feature;
  LogitsMatrix final_logits;
  Action executed_action;
  std::size_t timestep = 0;
  std::size_t view_index = 0;  // 0 = original view
};

struct BaselineMode {
  enum class Kind { fixed, running_mean };
  Kind kind = Kind::running_mean;
  double fixed_value = 0.0;
  std::size_t window = 10;
  double prior = 0.0;

  static BaselineMode fixed(double v) { return {Kind::fixed, v, 1, 0.0}; }
  static BaselineMode running_mean(std::size_t window, double prior = 0.0) {
    return {Kind::running_mean, 0.0, window, prior};
  }
};

enum class Rounding { floor, round };

struct HyperParams {
  double lambda = 1.0;
  double lambda_kl = 0.1;
  std::size_t n_max = 3;
  double learning_rate = 1e-2;
  BaselineMode baseline_mode = BaselineMode::running_mean(10);
  Rounding rounding = Rounding::floor;
  std::size_t batch_size = 32;
  std::size_t grad_steps_per_episode = 4;
  // Scale on the REINFORCE term; 0 removes it while leaving the KL gate intact.
  double reinforce_coef = 1.0;

  void validate() const {
    using detail::require;
    require(std::isfinite(lambda) && lambda >= 0.0, ErrorCode::invalid_config, "lambda must be >= 0");
    require(std::isfinite(lambda_kl) && lambda_kl >= 0.0, ErrorCode::invalid_config, "lambda_kl must be >= 0");
    require(std::isfinite(learning_rate) && learning_rate > 0.0, ErrorCode::invalid_config,
            "learning_rate must be > 0");
    require(batch_size >= 1, ErrorCode::invalid_config, "batch_size must be >= 1");
    require(grad_steps_per_episode >= 1, ErrorCode::invalid_config, "grad_steps_per_episode must be >= 1");
    require(std::isfinite(reinforce_coef), ErrorCode::invalid_config, "reinforce_coef must be finite");
    if (baseline_mode.kind == BaselineMode::Kind::running_mean)
      require(baseline_mode.window >= 1, ErrorCode::invalid_config, "baseline window must be >= 1");
    else
      require(std::isfinite(baseline_mode.fixed_value), ErrorCode::invalid_config, "baseline must be finite");
  }
};

}  // namespace pdf
