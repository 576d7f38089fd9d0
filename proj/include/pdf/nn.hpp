#pragma once

// Minimal dense layers: float32 parameters, float64 arithmetic.

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "pdf/core_types.hpp"
#include "pdf/rng.hpp"
#include "pdf/weight_file.hpp"

namespace pdf::nn {

struct DenseGrad {
  std::vector<double> w;
  std::vector<double> b;

  DenseGrad() = default;
  DenseGrad(std::size_t out, std::size_t in) : w(out * in, 0.0), b(out, 0.0) {}

  void scale(double s) {
    for (auto& v : w) v *= s;
    for (auto& v : b) v *= s;
  }
  void add(const DenseGrad& other) {
    for (std::size_t i = 0; i < w.size(); ++i) w[i] += other.w[i];
    for (std::size_t i = 0; i < b.size(); ++i) b[i] += other.b[i];
  }
};

/// y = W x + b with W stored row-major (out x in).
struct Dense {
  std::size_t in = 0;
  std::size_t out = 0;
  std::vector<float> w;
  std::vector<float> b;

  Dense() = default;
  Dense(std::size_t in_dim, std::size_t out_dim) : in(in_dim), out(out_dim), w(in_dim * out_dim, 0.0f), b(out_dim, 0.0f) {}

  // Uniform(-1/sqrt(in), 1/sqrt(in)) weights, zero bias.
  static Dense random(std::size_t in_dim, std::size_t out_dim, Rng& rng, double gain = 1.0) {
    Dense d(in_dim, out_dim);
    const double bound = gain / std::sqrt(static_cast<double>(in_dim));
    for (auto& v : d.w) v = static_cast<float>(rng.uniform(-bound, bound));
    return d;
  }

  void forward(std::span<const double> x, std::span<double> y) const {
    for (std::size_t o = 0; o < out; ++o) {
      double acc = b[o];
      const float* row = w.data() + o * in;
      for (std::size_t i = 0; i < in; ++i) acc += static_cast<double>(row[i]) * x[i];
      y[o] = acc;
    }
  }

  std::vector<double> forward(std::span<const double> x) const {
    std::vector<double> y(out);
    forward(x, y);
    return y;
  }

  // Accumulates parameter grads; writes dx when non-empty.
  void backward(std::span<const double> x, std::span<const double> dy, DenseGrad& grad,
                std::span<double> dx = {}) const {
    for (std::size_t o = 0; o < out; ++o) {
      const double g = dy[o];
      grad.b[o] += g;
      if (g == 0.0) continue;
      double* grow = grad.w.data() + o * in;
      for (std::size_t i = 0; i < in; ++i) grow[i] += g * x[i];
    }
    if (!dx.empty()) {
      for (std::size_t i = 0; i < in; ++i) dx[i] = 0.0;
      for (std::size_t o = 0; o < out; ++o) {
        const double g = dy[o];
        if (g == 0.0) continue;
        const float* row = w.data() + o * in;
        for (std::size_t i = 0; i < in; ++i) dx[i] += g * static_cast<double>(row[i]);
      }
    }
  }

  void apply_step(const DenseGrad& grad, double step) {
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = static_cast<float>(w[i] - step * grad.w[i]);
    for (std::size_t i = 0; i < b.size(); ++i) b[i] = static_cast<float>(b[i] - step * grad.b[i]);
  }

  void append_tensors(WeightFile& wf, const std::string& prefix) const {
    wf.tensors.push_back({prefix + ".w", {static_cast<std::uint32_t>(out), static_cast<std::uint32_t>(in)}, w});
    wf.tensors.push_back({prefix + ".b", {static_cast<std::uint32_t>(out)}, b});
  }

  static Dense from_tensors(const WeightFile& wf, const std::string& prefix, std::size_t in_dim, std::size_t out_dim) {
    const auto& tw = wf.at(prefix + ".w");
    const auto& tb = wf.at(prefix + ".b");
    detail::require(tw.dims == std::vector<std::uint32_t>{static_cast<std::uint32_t>(out_dim),
                                                          static_cast<std::uint32_t>(in_dim)},
                    ErrorCode::dimension_mismatch, "tensor '" + prefix + ".w' has unexpected shape");
    detail::require(tb.dims == std::vector<std::uint32_t>{static_cast<std::uint32_t>(out_dim)},
                    ErrorCode::dimension_mismatch, "tensor '" + prefix + ".b' has unexpected shape");
    Dense d(in_dim, out_dim);
    d.w = tw.data;
    d.b = tb.data;
    return d;
  }

  friend bool operator==(const Dense&, const Dense&) = default;
};

inline void tanh_inplace(std::span<double> v) {
  for (auto& x : v) x = std::tanh(x);
}

// dL/dpre = dL/dpost * (1 - post^2)
inline void tanh_backward(std::span<const double> post, std::span<double> grad) {
  for (std::size_t i = 0; i < grad.size(); ++i) grad[i] *= 1.0 - post[i] * post[i];
}

/// Adam state for a flat parameter block.
struct Adam {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::vector<double> m;
  std::vector<double> v;

  void step(std::vector<float>& params, std::span<const double> grad, std::size_t t) {
    if (m.empty()) {
      m.assign(params.size(), 0.0);
      v.assign(params.size(), 0.0);
    }
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
      params[i] = static_cast<float>(params[i] - lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps));
    }
  }
};

}  // namespace pdf::nn
