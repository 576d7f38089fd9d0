#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pdf/core_types.hpp"
#include "pdf/nn.hpp"
#include "pdf/rng.hpp"
#include "pdf/weight_file.hpp"

namespace pdf {

/// Architecture of the frozen base model.
struct PolicyHeader {
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t channels = 3;
  std::size_t vocab = 8;
  std::size_t instr_len = 4;
  std::size_t embed = 4;
  std::size_t hidden = 64;
  std::size_t feature = 32;
  std::size_t action_dims = 4;
  std::size_t action_tokens = 16;

  std::size_t pixel_count() const { return height * width * channels; }
  std::size_t input_size() const { return pixel_count() + instr_len * embed; }

  void validate() const {
    for (std::size_t v : {height, width, channels, vocab, instr_len, embed, hidden, feature, action_dims, action_tokens})
      detail::require(v > 0, ErrorCode::invalid_config, "policy header fields must be positive");
    detail::require(action_tokens >= 2, ErrorCode::invalid_config, "K must be >= 2");
  }

  friend bool operator==(const PolicyHeader&, const PolicyHeader&) = default;
};

struct DemoStep {
  Observation observation;
  Instruction instruction;
  Action action;
};

struct Demonstration {
  std::vector<DemoStep> steps;

  void validate() const {
    detail::require(!steps.empty(), ErrorCode::empty_input, "demonstration is empty");
    for (const auto& s : steps)
      detail::require(s.instruction == steps.front().instruction, ErrorCode::invalid_value,
                      "demonstration steps must share one instruction");
  }
};

/// Frozen encoder + LM head. Only const access is exposed after construction.
class PolicySnapshot {
 public:
  PolicySnapshot() = default;

  PolicySnapshot(PolicyHeader header, std::vector<float> embedding, nn::Dense enc1, nn::Dense enc2, nn::Dense lm)
      : header_(header), embedding_(std::move(embedding)), enc1_(std::move(enc1)), enc2_(std::move(enc2)), lm_(std::move(lm)) {
    header_.validate();
    const auto& h = header_;
    detail::require(embedding_.size() == h.vocab * h.embed, ErrorCode::dimension_mismatch, "embedding shape");
    detail::require(enc1_.in == h.input_size() && enc1_.out == h.hidden, ErrorCode::dimension_mismatch, "enc1 shape");
    detail::require(enc2_.in == h.hidden && enc2_.out == h.feature, ErrorCode::dimension_mismatch, "enc2 shape");
    detail::require(lm_.in == h.feature && lm_.out == h.action_dims * h.action_tokens, ErrorCode::dimension_mismatch,
                    "lm head shape");
  }

  const PolicyHeader& header() const noexcept { return header_; }
  std::span<const float> embedding() const noexcept { return embedding_; }
  const nn::Dense& enc1() const noexcept { return enc1_; }
  const nn::Dense& enc2() const noexcept { return enc2_; }
  const nn::Dense& lm_head() const noexcept { return lm_; }

  WeightFile to_weight_file() const {
    const auto& h = header_;
    WeightFile wf;
    std::vector<float> arch;
    for (std::size_t v : {h.height, h.width, h.channels, h.vocab, h.instr_len, h.embed, h.hidden, h.feature,
                          h.action_dims, h.action_tokens})
      arch.push_back(static_cast<float>(v));
    wf.tensors.push_back({"policy.arch", {static_cast<std::uint32_t>(arch.size())}, arch});
    wf.tensors.push_back({"embed", {static_cast<std::uint32_t>(h.vocab), static_cast<std::uint32_t>(h.embed)}, embedding_});
    enc1_.append_tensors(wf, "enc1");
    enc2_.append_tensors(wf, "enc2");
    lm_.append_tensors(wf, "lm");
    return wf;
  }

  static PolicySnapshot from_weight_file(const WeightFile& wf) {
    const auto& arch = wf.at("policy.arch");
    detail::require(arch.dims == std::vector<std::uint32_t>{10}, ErrorCode::dimension_mismatch,
                    "policy.arch must hold 10 values");
    PolicyHeader h;
    std::size_t* fields[] = {&h.height, &h.width, &h.channels, &h.vocab, &h.instr_len, &h.embed, &h.hidden, &h.feature,
                             &h.action_dims, &h.action_tokens};
    for (std::size_t i = 0; i < 10; ++i) {
      const float v = arch.data[i];
      detail::require(v >= 1.0f && v == std::floor(v), ErrorCode::malformed_header, "policy.arch holds a non-integer");
      *fields[i] = static_cast<std::size_t>(v);
    }
    h.validate();
    const auto& emb = wf.at("embed");
    detail::require(emb.dims == std::vector<std::uint32_t>{static_cast<std::uint32_t>(h.vocab),
                                                           static_cast<std::uint32_t>(h.embed)},
                    ErrorCode::dimension_mismatch, "embed tensor has unexpected shape");
    return PolicySnapshot(h, emb.data, nn::Dense::from_tensors(wf, "enc1", h.input_size(), h.hidden),
                          nn::Dense::from_tensors(wf, "enc2", h.hidden, h.feature),
                          nn::Dense::from_tensors(wf, "lm", h.feature, h.action_dims * h.action_tokens));
  }

  std::uint64_t checksum() const { return pdf::checksum(to_weight_file()); }

 private:
  PolicyHeader header_;
  std::vector<float> embedding_;  // row 0 (pad) is held at zero
  nn::Dense enc1_;
  nn::Dense enc2_;
  nn::Dense lm_;
};

inline void save_snapshot(const PolicySnapshot& snapshot, const std::filesystem::path& path) {
  write_weight_file(snapshot.to_weight_file(), path);
}

inline PolicySnapshot load_snapshot(const std::filesystem::path& path) {
  return PolicySnapshot::from_weight_file(read_weight_file(path));
}

namespace detail {

struct EncoderTrace {
  std::vector<double> input;
  std::vector<double> hidden;   // post-tanh
  std::vector<double> feature;  // post-tanh
};

inline std::vector<double> encoder_input(const PolicySnapshot& s, const Observation& obs, const Instruction& instr) {
  const auto& h = s.header();
  require(obs.height() == h.height && obs.width() == h.width && obs.channels() == h.channels, ErrorCode::shape_mismatch,
          "observation shape does not match snapshot header");
  require(instr.size() == h.instr_len, ErrorCode::shape_mismatch, "instruction length does not match snapshot header");
  std::vector<double> x;
  x.reserve(h.input_size());
  for (float p : obs.pixels()) x.push_back(p);
  for (auto tok : instr.tokens()) {
    require(tok < h.vocab, ErrorCode::shape_mismatch, "instruction token outside snapshot vocabulary");
    for (std::size_t e = 0; e < h.embed; ++e) x.push_back(s.embedding()[tok * h.embed + e]);
  }
  return x;
}

inline EncoderTrace encode_trace(const PolicySnapshot& s, const Observation& obs, const Instruction& instr) {
  EncoderTrace t;
  t.input = encoder_input(s, obs, instr);
  t.hidden = s.enc1().forward(t.input);
  nn::tanh_inplace(t.hidden);
  t.feature = s.enc2().forward(t.hidden);
  nn::tanh_inplace(t.feature);
  return t;
}

}  // namespace detail

inline Feature encode(const PolicySnapshot& snapshot, const Observation& observation, const Instruction& instruction) {
  return Feature(detail::encode_trace(snapshot, observation, instruction).feature);
}

/// Frozen LM head: feature -> D x K logits.
inline LogitsMatrix lm_logits(const PolicySnapshot& snapshot, const Feature& feature) {
  const auto& h = snapshot.header();
  detail::require(feature.size() == h.feature, ErrorCode::shape_mismatch,
                  "feature length " + std::to_string(feature.size()) + " != F " + std::to_string(h.feature));
  return LogitsMatrix(h.action_dims, h.action_tokens, snapshot.lm_head().forward(feature.values()));
}

/// Per-dimension argmax, ties to the lowest token index.
inline Action greedy_action(const LogitsMatrix& logits) {
  std::vector<std::uint32_t> dims(logits.dims());
  for (std::size_t d = 0; d < logits.dims(); ++d) {
    auto row = logits.row(d);
    std::size_t best = 0;
    for (std::size_t k = 1; k < row.size(); ++k)
      if (row[k] > row[best]) best = k;
    dims[d] = static_cast<std::uint32_t>(best);
  }
  return Action(std::move(dims), logits.tokens());
}

inline Action frozen_greedy(const PolicySnapshot& snapshot, const Observation& obs, const Instruction& instr) {
  return greedy_action(lm_logits(snapshot, encode(snapshot, obs, instr)));
}

struct BcOptions {
  std::size_t epochs = 600;
  double learning_rate = 3e-3;
  // Target mass moved off the expert token and spread over all K tokens.
  double label_smoothing = 0.0;
  std::size_t hidden = 64;
  std::size_t feature = 32;
};

/// Fraction of demo steps on which the greedy action equals the expert action.
inline double greedy_accuracy(const PolicySnapshot& snapshot, std::span<const Demonstration> demos) {
  std::size_t hits = 0, total = 0;
  for (const auto& demo : demos)
    for (const auto& step : demo.steps) {
      hits += frozen_greedy(snapshot, step.observation, step.instruction) == step.action ? 1 : 0;
      ++total;
    }
  return total == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(total);
}

/// Behavior cloning: full-batch Adam on per-dimension cross-entropy summed
/// over D. Deterministic given `seed`.
inline PolicySnapshot train_bc(std::span<const Demonstration> demos, PolicyHeader arch, std::uint64_t seed,
                               const BcOptions& opts = {}) {
  detail::require(!demos.empty(), ErrorCode::empty_input, "train_bc needs at least one demonstration");
  for (const auto& d : demos) d.validate();
  arch.hidden = opts.hidden;
  arch.feature = opts.feature;
  arch.validate();
  const auto& h = arch;
  const std::size_t D = h.action_dims, K = h.action_tokens;

  Rng rng(derive_seed({seed, 0xBC}));
  std::vector<float> embedding(h.vocab * h.embed, 0.0f);
  for (std::size_t i = h.embed; i < embedding.size(); ++i) embedding[i] = static_cast<float>(rng.uniform(-1.0, 1.0));
  auto enc1 = nn::Dense::random(h.input_size(), h.hidden, rng);
  auto enc2 = nn::Dense::random(h.hidden, h.feature, rng);
  auto lm = nn::Dense::random(h.feature, D * K, rng);

  std::vector<const DemoStep*> steps;
  for (const auto& d : demos)
    for (const auto& s : d.steps) {
      detail::require(s.action.size() == D, ErrorCode::shape_mismatch, "demo action has wrong D");
      steps.push_back(&s);
    }
  const double inv_n = 1.0 / static_cast<double>(steps.size());
  const double smooth = opts.label_smoothing;

  nn::Adam adam_emb{opts.learning_rate}, adam_w1{opts.learning_rate}, adam_b1{opts.learning_rate},
      adam_w2{opts.learning_rate}, adam_b2{opts.learning_rate}, adam_w3{opts.learning_rate},
      adam_b3{opts.learning_rate};

  for (std::size_t epoch = 1; epoch <= opts.epochs; ++epoch) {
    PolicySnapshot current(h, embedding, enc1, enc2, lm);
    nn::DenseGrad g1(h.hidden, h.input_size()), g2(h.feature, h.hidden), g3(D * K, h.feature);
    std::vector<double> g_emb(embedding.size(), 0.0);
    double loss = 0.0;

    for (const DemoStep* s : steps) {
      const auto trace = detail::encode_trace(current, s->observation, s->instruction);
      const auto logits = lm.forward(trace.feature);
      std::vector<double> dlogits(D * K), prob(K);
      for (std::size_t d = 0; d < D; ++d) {
        std::span<const double> row(logits.data() + d * K, K);
        softmax_row(row, prob);
        for (std::size_t k = 0; k < K; ++k) {
          const double target = (k == s->action[d] ? 1.0 - smooth : 0.0) + smooth / static_cast<double>(K);
          if (target > 0.0) loss -= target * std::log(std::max(prob[k], 1e-300)) * inv_n;
          dlogits[d * K + k] = (prob[k] - target) * inv_n;
        }
      }
      std::vector<double> dfeat(h.feature), dhidden(h.hidden), dinput(h.input_size());
      lm.backward(trace.feature, dlogits, g3, dfeat);
      nn::tanh_backward(trace.feature, dfeat);
      enc2.backward(trace.hidden, dfeat, g2, dhidden);
      nn::tanh_backward(trace.hidden, dhidden);
      enc1.backward(trace.input, dhidden, g1, dinput);
      const std::size_t offset = h.pixel_count();
      const auto toks = s->instruction.tokens();
      for (std::size_t l = 0; l < toks.size(); ++l) {
        if (toks[l] == Instruction::kPad) continue;
        for (std::size_t e = 0; e < h.embed; ++e) g_emb[toks[l] * h.embed + e] += dinput[offset + l * h.embed + e];
      }
    }
    if (!std::isfinite(loss))
      throw Error(ErrorCode::divergence, "behavior cloning loss is non-finite at epoch " + std::to_string(epoch));

    adam_emb.step(embedding, g_emb, epoch);
    adam_w1.step(enc1.w, g1.w, epoch);
    adam_b1.step(enc1.b, g1.b, epoch);
    adam_w2.step(enc2.w, g2.w, epoch);
    adam_b2.step(enc2.b, g2.b, epoch);
    adam_w3.step(lm.w, g3.w, epoch);
    adam_b3.step(lm.b, g3.b, epoch);
    for (std::size_t e = 0; e < h.embed; ++e) embedding[e] = 0.0f;
  }
  return PolicySnapshot(h, std::move(embedding), std::move(enc1), std::move(enc2), std::move(lm));
}

}  // namespace pdf
