#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "pdf/core_types.hpp"
#include "pdf/rng.hpp"

namespace pdf {

enum class UncertaintyAggregation { mean, max };

/// Normalized Shannon entropy of each row's softmax, aggregated over the D rows.
/// Result lies in [0, 1]; 1 for uniform rows, 0 for one-hot rows.
inline double uncertainty(const LogitsMatrix& logits, UncertaintyAggregation agg = UncertaintyAggregation::mean) {
  const std::size_t K = logits.tokens();
  if (K < 2) return 0.0;
  const double log_k = std::log(static_cast<double>(K));
  std::vector<double> p(K);
  double total = 0.0, worst = 0.0;
  for (std::size_t d = 0; d < logits.dims(); ++d) {
    softmax_row(logits.row(d), p);
    double h = 0.0;
    for (double pk : p)
      if (pk > 0.0) h -= pk * std::log(pk);
    const double u = std::clamp(h / log_k, 0.0, 1.0);
    total += u;
    worst = std::max(worst, u);
  }
  return agg == UncertaintyAggregation::max ? worst : total / static_cast<double>(logits.dims());
}

/// Number of augmented views for uncertainty `u`: n_max * u, integerized.
inline std::size_t budget(double u, std::size_t n_max, Rounding rounding = Rounding::floor) {
  detail::require(u >= 0.0 && u <= 1.0, ErrorCode::invalid_value, "uncertainty must lie in [0,1]");
  const double raw = static_cast<double>(n_max) * u;
  // nearbyint under the default rounding mode rounds half to even
  const double n = rounding == Rounding::floor ? std::floor(raw) : std::nearbyint(raw);
  return static_cast<std::size_t>(std::clamp(n, 0.0, static_cast<double>(n_max)));
}

struct PixelShift {
  int dx = 0;
  int dy = 0;
};
struct GaussianNoise {
  double sigma = 0.0;
};
struct Brightness {
  double delta = 0.0;
};
struct OcclusionPatch {
  std::size_t x = 0, y = 0, w = 0, h = 0;
};

struct AugmentSpec {
  std::variant<PixelShift, GaussianNoise, Brightness, OcclusionPatch> kind;
  std::uint64_t seed = 0;
};

/// Augmentation family and parameter ranges.
struct AugmentConfig {
  bool pixel_shift = true;
  bool gaussian_noise = true;
  bool brightness = true;
  bool occlusion = true;
  int max_shift = 2;
  double max_sigma = 0.05;
  double max_brightness = 0.1;
  double max_occlusion_area = 0.15;
  // Every view becomes the identity transform (gaussian_noise with sigma 0).
  bool identity_only = false;

  void validate() const {
    detail::require(max_shift >= 0, ErrorCode::invalid_config, "max_shift must be >= 0");
    detail::require(max_sigma >= 0.0 && std::isfinite(max_sigma), ErrorCode::invalid_config, "max_sigma must be >= 0");
    detail::require(max_brightness >= 0.0 && max_brightness <= 1.0, ErrorCode::invalid_config,
                    "max_brightness must be in [0,1]");
    detail::require(max_occlusion_area >= 0.0 && max_occlusion_area <= 1.0, ErrorCode::invalid_config,
                    "max_occlusion_area must be in [0,1]");
    detail::require(identity_only || pixel_shift || gaussian_noise || brightness || occlusion, ErrorCode::invalid_config,
                    "at least one augmentation kind must be enabled");
  }
};

inline Observation apply_augment(const Observation& obs, const AugmentSpec& spec) {
  const std::size_t H = obs.height(), W = obs.width(), C = obs.channels();
  const auto src = obs.pixels();
  std::vector<float> out(src.begin(), src.end());

  std::visit(
      [&](const auto& t) {
        using T = std::decay_t<decltype(t)>;
        if constexpr (std::is_same_v<T, PixelShift>) {
          std::fill(out.begin(), out.end(), 0.0f);
          for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x) {
              const auto sy = static_cast<std::ptrdiff_t>(y) - t.dy;
              const auto sx = static_cast<std::ptrdiff_t>(x) - t.dx;
              if (sy < 0 || sx < 0 || sy >= static_cast<std::ptrdiff_t>(H) || sx >= static_cast<std::ptrdiff_t>(W)) continue;
              for (std::size_t c = 0; c < C; ++c)
                out[(y * W + x) * C + c] = src[(static_cast<std::size_t>(sy) * W + static_cast<std::size_t>(sx)) * C + c];
            }
        } else if constexpr (std::is_same_v<T, GaussianNoise>) {
          detail::require(t.sigma >= 0.0, ErrorCode::invalid_value, "noise sigma must be >= 0");
          if (t.sigma == 0.0) return;
          Rng rng(spec.seed);
          for (auto& v : out) v = static_cast<float>(std::clamp(v + t.sigma * rng.normal(), 0.0, 1.0));
        } else if constexpr (std::is_same_v<T, Brightness>) {
          for (auto& v : out) v = static_cast<float>(std::clamp(v + t.delta, 0.0, 1.0));
        } else {
          detail::require(t.x + t.w <= W && t.y + t.h <= H, ErrorCode::invalid_value, "occlusion patch outside observation");
          for (std::size_t y = t.y; y < t.y + t.h; ++y)
            for (std::size_t x = t.x; x < t.x + t.w; ++x)
              for (std::size_t c = 0; c < C; ++c) out[(y * W + x) * C + c] = 0.0f;
        }
      },
      spec.kind);
  return Observation(H, W, C, std::move(out));
}

inline AugmentSpec sample_augment(Rng& rng, std::size_t height, std::size_t width, const AugmentConfig& cfg) {
  AugmentSpec spec;
  if (cfg.identity_only) {
    spec.kind = GaussianNoise{0.0};
    spec.seed = rng.next();
    return spec;
  }
  std::vector<int> kinds;
  if (cfg.pixel_shift) kinds.push_back(0);
  if (cfg.gaussian_noise) kinds.push_back(1);
  if (cfg.brightness) kinds.push_back(2);
  if (cfg.occlusion) kinds.push_back(3);
  detail::require(!kinds.empty(), ErrorCode::invalid_config, "no augmentation kinds enabled");

  switch (kinds[rng.below(kinds.size())]) {
    case 0: {
      const int s = cfg.max_shift;
      spec.kind = PixelShift{static_cast<int>(rng.between(-s, s)), static_cast<int>(rng.between(-s, s))};
      break;
    }
    case 1:
      spec.kind = GaussianNoise{rng.uniform(0.0, cfg.max_sigma)};
      break;
    case 2:
      spec.kind = Brightness{rng.uniform(-cfg.max_brightness, cfg.max_brightness)};
      break;
    default: {
      const auto max_area = static_cast<std::size_t>(std::floor(cfg.max_occlusion_area * static_cast<double>(height * width)));
      if (max_area == 0) {
        spec.kind = OcclusionPatch{0, 0, 0, 0};
        break;
      }
      const std::size_t w = 1 + rng.below(std::min(width, max_area));
      const std::size_t h = 1 + rng.below(std::min(height, max_area / w));
      const std::size_t x = rng.below(width - w + 1);
      const std::size_t y = rng.below(height - h + 1);
      spec.kind = OcclusionPatch{x, y, w, h};
      break;
    }
  }
  spec.seed = rng.next();
  return spec;
}

/// `n` augmented views of `observation`; the original is not included.
inline std::vector<Observation> generate_views(const Observation& observation, std::size_t n, std::uint64_t rng_seed,
                                               const AugmentConfig& cfg = {}) {
  std::vector<Observation> views;
  views.reserve(n);
  Rng rng(derive_seed({rng_seed, 0xA06}));
  for (std::size_t j = 0; j < n; ++j)
    views.push_back(apply_augment(observation, sample_augment(rng, observation.height(), observation.width(), cfg)));
  return views;
}

}  // namespace pdf
