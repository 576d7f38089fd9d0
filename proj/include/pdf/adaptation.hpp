#pragma once

#include <cmath>
#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pdf/core_types.hpp"
#include "pdf/frozen_policy.hpp"
#include "pdf/perturb_vote.hpp"
#include "pdf/rng.hpp"

namespace pdf {

/// FIFO of rollout records awaiting delayed feedback.
class RolloutBuffer {
 public:
  explicit RolloutBuffer(std::size_t capacity = 4096) : capacity_(capacity) {
    detail::require(capacity_ >= 1, ErrorCode::invalid_config, "buffer capacity must be >= 1");
  }

  void push(RolloutRecord record) {
    records_.push_back(std::move(record));
    if (records_.size() > capacity_) records_.pop_front();
  }

  void clear() { records_.clear(); }
  bool empty() const noexcept { return records_.empty(); }
  std::size_t size() const noexcept { return records_.size(); }
  std::size_t capacity() const noexcept { return capacity_; }
  const RolloutRecord& operator[](std::size_t i) const { return records_[i]; }
  auto begin() const { return records_.begin(); }
  auto end() const { return records_.end(); }

 private:
  std::size_t capacity_;
  std::deque<RolloutRecord> records_;
};

/// Tracks the baseline b subtracted from delayed feedback.
class BaselineTracker {
 public:
  explicit BaselineTracker(BaselineMode mode = BaselineMode::running_mean(10)) : mode_(mode) {
    if (mode_.kind == BaselineMode::Kind::running_mean)
      detail::require(mode_.window >= 1, ErrorCode::invalid_config, "baseline window must be >= 1");
  }

  double value() const {
    if (mode_.kind == BaselineMode::Kind::fixed) return mode_.fixed_value;
    if (history_.empty()) return mode_.prior;
    double total = 0.0;
    for (double v : history_) total += v;
    return total / static_cast<double>(history_.size());
  }

  void update(double feedback) {
    if (mode_.kind == BaselineMode::Kind::fixed) return;
    history_.push_back(feedback);
    if (history_.size() > mode_.window) history_.pop_front();
  }

  const BaselineMode& mode() const noexcept { return mode_; }

 private:
  BaselineMode mode_;
  std::deque<double> history_;
};

inline double baseline_value(const BaselineTracker& tracker) { return tracker.value(); }

struct LossOptions {
  double reinforce_coef = 1.0;
  // Forces the KL gate open (true) or closed (false) instead of testing r > b.
  std::optional<bool> gate_override;
};

struct PdfLoss {
  double loss = 0.0;
  double reinforce = 0.0;  // -(r-b) * sum_d log pi~_d(a_d), before reinforce_coef
  double kl = 0.0;         // sum_d KL(pi_d || pi~_d), before gating and lambda_kl
  bool gate_open = false;
  HeadGrad grad;
};

/// Delayed-feedback loss for one record and its exact gradient w.r.t. the
/// perturbation head parameters:
///   -(r-b) sum_d log pi~_d(a_d) + lambda_kl [r>b] sum_d KL(pi_d || pi~_d)
/// with pi = softmax(base), pi~ = softmax(base + lambda h(feature)).
inline PdfLoss pdf_loss(const PerturbationHead& head, const LogitsMatrix& base, const Feature& feature,
                        const Action& executed_action, double r, double b, double lambda, double lambda_kl,
                        const LossOptions& opts = {}) {
  const std::size_t D = base.dims(), K = base.tokens();
  detail::require(head.dims() == D && head.tokens() == K, ErrorCode::shape_mismatch,
                  "perturbation head output shape does not match base logits");
  detail::require(executed_action.size() == D, ErrorCode::shape_mismatch, "executed action has wrong D");

  const auto trace = head.forward_trace(feature);
  const bool gate = opts.gate_override.value_or(r > b);
  const double advantage = r - b;

  PdfLoss out;
  out.gate_open = gate;
  std::vector<double> d_output(D * K);
  std::vector<double> z(K), log_pt(K), log_p(K), p(K), pt(K);
  for (std::size_t d = 0; d < D; ++d) {
    const auto base_row = base.row(d);
    for (std::size_t k = 0; k < K; ++k) z[k] = base_row[k] + lambda * trace.output[d * K + k];
    log_softmax_row(z, log_pt);
    log_softmax_row(base_row, log_p);
    double kl_d = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      pt[k] = std::exp(log_pt[k]);
      p[k] = std::exp(log_p[k]);
      if (p[k] > 0.0) kl_d += p[k] * (log_p[k] - log_pt[k]);
    }
    const std::size_t a = executed_action[d];
    out.reinforce -= advantage * log_pt[a];
    out.kl += kl_d;

    // dL/dz~ then chain through z~ = base + lambda h
    for (std::size_t k = 0; k < K; ++k) {
      const double onehot = k == a ? 1.0 : 0.0;
      double g = -opts.reinforce_coef * advantage * (onehot - pt[k]);
      if (gate) g += lambda_kl * (pt[k] - p[k]);
      d_output[d * K + k] = lambda * g;
    }
  }
  if (!std::isfinite(out.reinforce)) throw Error(ErrorCode::numeric, "non-finite REINFORCE term in pdf_loss");
  if (!std::isfinite(out.kl)) throw Error(ErrorCode::numeric, "non-finite KL term in pdf_loss");
  // Round-off can leave a tiny negative KL when pi~ == pi.
  if (out.kl < 0.0) out.kl = 0.0;

  out.loss = opts.reinforce_coef * out.reinforce + (gate ? lambda_kl * out.kl : 0.0);
  out.grad = head.zero_grad();
  head.backward(feature, trace, d_output, out.grad);
  for (double g : out.grad.flatten())
    if (!std::isfinite(g)) throw Error(ErrorCode::numeric, "non-finite gradient in pdf_loss");
  return out;
}

struct AdaptStats {
  double baseline = 0.0;
  double mean_loss = 0.0;
  std::size_t steps = 0;
};

/// One adaptation phase after an episode's delayed feedback `r`.
inline AdaptStats adapt(PerturbationHead& head, RolloutBuffer& buffer, const PolicySnapshot& snapshot, Feedback r,
                        BaselineTracker& baseline, const HyperParams& hp, std::uint64_t rng_seed,
                        std::optional<bool> gate_override = std::nullopt, bool keep_buffer = false) {
  detail::require(!buffer.empty(), ErrorCode::empty_buffer, "adapt called with an empty rollout buffer");
  detail::require(hp.learning_rate >= 0.0 && hp.batch_size >= 1 && hp.grad_steps_per_episode >= 1,
                  ErrorCode::invalid_config, "invalid adaptation hyper-parameters");

  const LossOptions opts{hp.reinforce_coef, gate_override};
  AdaptStats stats;
  stats.baseline = baseline.value();
  Rng rng(derive_seed({rng_seed, 0xADA7}));
  const double inv_batch = 1.0 / static_cast<double>(hp.batch_size);
  double loss_total = 0.0;

  for (std::size_t step = 0; step < hp.grad_steps_per_episode; ++step) {
    HeadGrad total = head.zero_grad();
    for (std::size_t i = 0; i < hp.batch_size; ++i) {
      const auto& rec = buffer[rng.below(buffer.size())];
      const auto base = lm_logits(snapshot, rec.feature);
      auto term = pdf_loss(head, base, rec.feature, rec.executed_action, r.value, stats.baseline, hp.lambda,
                           hp.lambda_kl, opts);
      loss_total += term.loss;
      total.add(term.grad);
    }
    total.scale(inv_batch);
    head.apply_step(total, hp.learning_rate);
    ++stats.steps;
  }
  stats.mean_loss = loss_total / static_cast<double>(hp.batch_size * hp.grad_steps_per_episode);
  baseline.update(r.value);
  if (!keep_buffer) buffer.clear();
  return stats;
}

}  // namespace pdf
