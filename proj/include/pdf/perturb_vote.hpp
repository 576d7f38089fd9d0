#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <vector>

#include "pdf/core_types.hpp"
#include "pdf/frozen_policy.hpp"
#include "pdf/nn.hpp"
#include "pdf/rng.hpp"
#include "pdf/weight_file.hpp"

namespace pdf {

struct HeadGrad {
  nn::DenseGrad l1;
  nn::DenseGrad l2;

  void scale(double s) {
    l1.scale(s);
    l2.scale(s);
  }
  void add(const HeadGrad& o) {
    l1.add(o.l1);
    l2.add(o.l2);
  }

  // Flat view order: l1.w, l1.b, l2.w, l2.b (same as PerturbationHead::parameter)
  std::vector<double> flatten() const {
    std::vector<double> out;
    for (const auto* v : {&l1.w, &l1.b, &l2.w, &l2.b}) out.insert(out.end(), v->begin(), v->end());
    return out;
  }
};

/// Trainable two-layer tanh network F -> D*K whose scaled output is added to
/// the frozen logits.
class PerturbationHead {
 public:
  PerturbationHead() = default;

  PerturbationHead(std::size_t feature, std::size_t hidden, std::size_t dims, std::size_t tokens, nn::Dense l1, nn::Dense l2)
      : feature_(feature), hidden_(hidden), dims_(dims), tokens_(tokens), l1_(std::move(l1)), l2_(std::move(l2)) {
    detail::require(l1_.in == feature_ && l1_.out == hidden_, ErrorCode::dimension_mismatch, "perturbation head layer 1 shape");
    detail::require(l2_.in == hidden_ && l2_.out == dims_ * tokens_, ErrorCode::dimension_mismatch,
                    "perturbation head layer 2 shape");
  }

  /// Random first layer, all-zero output layer: the head outputs exactly 0.
  static PerturbationHead zero_init(std::size_t feature, std::size_t hidden, std::size_t dims, std::size_t tokens,
                                    std::uint64_t seed) {
    Rng rng(derive_seed({seed, 0x4EAD}));
    return PerturbationHead(feature, hidden, dims, tokens, nn::Dense::random(feature, hidden, rng),
                            nn::Dense(hidden, dims * tokens));
  }

  static PerturbationHead zero_init(const PolicyHeader& policy, std::size_t hidden, std::uint64_t seed) {
    return zero_init(policy.feature, hidden, policy.action_dims, policy.action_tokens, seed);
  }

  std::size_t feature() const noexcept { return feature_; }
  std::size_t hidden() const noexcept { return hidden_; }
  std::size_t dims() const noexcept { return dims_; }
  std::size_t tokens() const noexcept { return tokens_; }
  const nn::Dense& layer1() const noexcept { return l1_; }
  const nn::Dense& layer2() const noexcept { return l2_; }

  std::size_t parameter_count() const { return l1_.w.size() + l1_.b.size() + l2_.w.size() + l2_.b.size(); }

  float& parameter(std::size_t i) {
    for (auto* v : {&l1_.w, &l1_.b, &l2_.w, &l2_.b}) {
      if (i < v->size()) return (*v)[i];
      i -= v->size();
    }
    throw Error(ErrorCode::invalid_value, "parameter index out of range");
  }

  struct Trace {
    std::vector<double> hidden;  // post-tanh
    std::vector<double> output;  // D*K
  };

  Trace forward_trace(const Feature& f) const {
    detail::require(f.size() == feature_, ErrorCode::shape_mismatch, "feature length does not match perturbation head");
    Trace t;
    t.hidden = l1_.forward(f.values());
    nn::tanh_inplace(t.hidden);
    t.output = l2_.forward(t.hidden);
    return t;
  }

  std::vector<double> forward(const Feature& f) const { return forward_trace(f).output; }

  /// Accumulates d(loss)/d(params) given d(loss)/d(output).
  void backward(const Feature& f, const Trace& t, std::span<const double> d_output, HeadGrad& grad) const {
    std::vector<double> d_hidden(hidden_);
    l2_.backward(t.hidden, d_output, grad.l2, d_hidden);
    nn::tanh_backward(t.hidden, d_hidden);
    l1_.backward(f.values(), d_hidden, grad.l1);
  }

  HeadGrad zero_grad() const { return {nn::DenseGrad(hidden_, feature_), nn::DenseGrad(dims_ * tokens_, hidden_)}; }

  void apply_step(const HeadGrad& grad, double step) {
    l1_.apply_step(grad.l1, step);
    l2_.apply_step(grad.l2, step);
  }

  WeightFile to_weight_file() const {
    WeightFile wf;
    wf.tensors.push_back({"phead.arch",
                          {4},
                          {static_cast<float>(feature_), static_cast<float>(hidden_), static_cast<float>(dims_),
                           static_cast<float>(tokens_)}});
    l1_.append_tensors(wf, "p1");
    l2_.append_tensors(wf, "p2");
    return wf;
  }

  static PerturbationHead from_weight_file(const WeightFile& wf) {
    const auto& arch = wf.at("phead.arch");
    detail::require(arch.dims == std::vector<std::uint32_t>{4}, ErrorCode::dimension_mismatch, "phead.arch must hold 4 values");
    std::size_t v[4];
    for (std::size_t i = 0; i < 4; ++i) {
      detail::require(arch.data[i] >= 1.0f && arch.data[i] == std::floor(arch.data[i]), ErrorCode::malformed_header,
                      "phead.arch holds a non-integer");
      v[i] = static_cast<std::size_t>(arch.data[i]);
    }
    return PerturbationHead(v[0], v[1], v[2], v[3], nn::Dense::from_tensors(wf, "p1", v[0], v[1]),
                            nn::Dense::from_tensors(wf, "p2", v[1], v[2] * v[3]));
  }

  std::uint64_t checksum() const { return pdf::checksum(to_weight_file()); }

  friend bool operator==(const PerturbationHead&, const PerturbationHead&) = default;

 private:
  std::size_t feature_ = 0;
  std::size_t hidden_ = 0;
  std::size_t dims_ = 0;
  std::size_t tokens_ = 0;
  nn::Dense l1_;
  nn::Dense l2_;
};

inline void save_head(const PerturbationHead& head, const std::filesystem::path& path) {
  write_weight_file(head.to_weight_file(), path);
}

inline PerturbationHead load_head(const std::filesystem::path& path) {
  return PerturbationHead::from_weight_file(read_weight_file(path));
}

/// base + lambda * head(feature)
inline LogitsMatrix perturbed_logits(const LogitsMatrix& base, const PerturbationHead& head, const Feature& feature,
                                     double lambda) {
  detail::require(base.dims() == head.dims() && base.tokens() == head.tokens(), ErrorCode::shape_mismatch,
                  "perturbation head output shape does not match base logits");
  std::vector<double> out(base.values().begin(), base.values().end());
  if (lambda == 0.0) return LogitsMatrix(base.dims(), base.tokens(), std::move(out));
  const auto delta = head.forward(feature);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += lambda * delta[i];
  return LogitsMatrix(base.dims(), base.tokens(), std::move(out));
}

inline std::vector<Action> decode_candidates(std::span<const LogitsMatrix> view_logits) {
  detail::require(!view_logits.empty(), ErrorCode::empty_input, "no view logits to decode");
  std::vector<Action> out;
  out.reserve(view_logits.size());
  for (const auto& z : view_logits) out.push_back(greedy_action(z));
  return out;
}

enum class VoteMode { dim_wise, action_wise };

/// Majority vote over candidate actions. Candidate 0 is the original view and
/// wins every tie.
inline Action vote(std::span<const Action> candidates, VoteMode mode) {
  detail::require(!candidates.empty(), ErrorCode::empty_input, "no candidates to vote over");
  const Action& original = candidates.front();
  const std::size_t D = original.size();
  std::uint32_t max_token = 0;
  for (const auto& c : candidates) {
    detail::require(c.size() == D, ErrorCode::inconsistent_d, "candidates disagree on action dimension count");
    for (auto t : c.dims()) max_token = std::max(max_token, t);
  }

  if (mode == VoteMode::action_wise) {
    std::map<Action, std::size_t> counts;
    for (const auto& c : candidates) ++counts[c];
    const Action* best = &original;
    std::size_t best_count = counts[original];
    for (const auto& [action, count] : counts)
      if (count > best_count) {
        best = &action;
        best_count = count;
      }
    return *best;
  }

  std::vector<std::uint32_t> out(D);
  std::vector<std::size_t> counts(max_token + 1);
  for (std::size_t d = 0; d < D; ++d) {
    std::fill(counts.begin(), counts.end(), 0);
    for (const auto& c : candidates) ++counts[c[d]];
    std::uint32_t best = original[d];
    for (std::uint32_t t = 0; t <= max_token; ++t)
      if (counts[t] > counts[best]) best = t;
    out[d] = best;
  }
  return Action(std::move(out), max_token + 1);
}

}  // namespace pdf
