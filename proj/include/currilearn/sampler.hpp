#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <type_traits>

#include "currilearn/core.hpp"
#include "currilearn/error.hpp"
#include "currilearn/geometry.hpp"
#include "currilearn/image.hpp"
#include "currilearn/rng.hpp"

namespace currilearn {

/// Complexity weighting and the scale-bin layout.
///
/// Bins 1..K-1 are the half-open intervals [b(j-1), b(j)) with
/// b(j) = d_min_ratio + j*(1 - d_min_ratio)/(K-1); bin K holds only r == 1,
/// the full image. For the defaults this is [.2,.4) [.4,.6) [.6,.8) [.8,1) {1}.
struct ComplexityConfig {
  double lambda = 0.0;
  int bin_count = 5;
  double d_min_ratio = 0.2;
  int max_attempts = 1000;

  void validate() const {
    if (!(lambda >= 0.0)) throw ValidationError("sampler.lambda must be non-negative");
    if (bin_count < 2) throw ValidationError("sampler.bin_count must be at least 2");
    if (!(d_min_ratio > 0.0 && d_min_ratio < 1.0)) {
      throw ValidationError("sampler.d_min_ratio must lie in (0,1)");
    }
    if (max_attempts < 1) throw ValidationError("sampler.max_attempts must be positive");
  }

  /// Lower edge of bin j+1, for j in [0, K-1]; bin_boundary(K-1) == 1.
  double bin_boundary(int j) const {
    // Written as one rounded division so that e.g. 0.6 comes out as the
    // nearest double to 3/5 rather than 0.2 + 2*0.2.
    const int segments = bin_count - 1;
    return (d_min_ratio * (segments - j) + j) / segments;
  }

  /// Admissible r range of a stage: [lo, hi) for stages below K, [1, 1] for K.
  std::pair<double, double> stage_range(int stage) const {
    if (stage < 1 || stage > bin_count) {
      throw ValidationError("stage " + std::to_string(stage) + " outside 1.." +
                            std::to_string(bin_count));
    }
    if (stage == bin_count) return {1.0, 1.0};
    return {bin_boundary(stage - 1), bin_boundary(stage)};
  }
};

/// Image complexity: the patch diameter relative to the full frame.
inline double scale_complexity(const DiscPatch& patch, double image_side) {
  return patch.diameter / image_side;
}

/// c = r + lambda * (label - f(patch))^2.
///
/// `classifier` is only evaluated when lambda > 0; with the default lambda = 0
/// complexity is the patch scale alone, which is what makes sampling from the
/// continuous patch space tractable.
template <typename Classifier>
double total_complexity(const DiscPatch& patch, double image_side, int label,
                        Classifier&& classifier, const ComplexityConfig& cfg) {
  if (!(cfg.lambda >= 0.0)) throw ValidationError("sampler.lambda must be non-negative");
  const double r = scale_complexity(patch, image_side);
  if (cfg.lambda == 0.0) return r;
  const double prediction = classifier(patch);
  if (!(prediction >= 0.0 && prediction <= 1.0)) {
    throw ValidationError("classifier prediction outside [0,1]");
  }
  const double residual = static_cast<double>(label) - prediction;
  return r + cfg.lambda * residual * residual;
}

/// Stage index in 1..K for a scale complexity r in [d_min_ratio, 1].
inline int stage_of(double r, const ComplexityConfig& cfg) {
  if (!(r >= cfg.d_min_ratio && r <= 1.0)) {
    throw ValidationError("scale complexity " + std::to_string(r) + " outside [" +
                          std::to_string(cfg.d_min_ratio) + ", 1]");
  }
  if (r == 1.0) return cfg.bin_count;
  int stage = 1;
  while (stage < cfg.bin_count - 1 && r >= cfg.bin_boundary(stage)) ++stage;
  return stage;
}

/// Draws a disc with diameter in [lo_diameter, hi_diameter) that lies inside
/// the side x side frame and covers every box. Returns nullopt when no such
/// disc was found within `max_attempts` draws.
///
/// The diameter is uniform over the feasible part of the range; the center is
/// uniform over the set of centers whose disc stays in the frame and contains
/// the minimal enclosing disc of the boxes.
template <typename Accept>
std::optional<DiscPatch> sample_disc_in_range(std::span<const LesionBox> boxes, double side,
                                              double lo_diameter, double hi_diameter,
                                              int max_attempts, Rng& rng, Accept&& accept) {
  if (boxes.empty()) {
    for (int attempt = 0; attempt < max_attempts; ++attempt) {
      const double d = uniform(rng, lo_diameter, hi_diameter);
      const double r = 0.5 * d;
      DiscPatch disc{uniform(rng, r, side - r), uniform(rng, r, side - r), d};
      if (accept(disc)) return disc;
    }
    return std::nullopt;
  }
  const DiscPatch hull = minimal_enclosing_disc(boxes);
  const double hull_r = hull.radius() + 1e-9 * side;
  const double lo = std::max(lo_diameter, 2.0 * hull_r);
  if (lo >= hi_diameter) return std::nullopt;
  for (int attempt = 0; attempt < max_attempts; ++attempt) {
    const double d = uniform(rng, lo, hi_diameter);
    const double r = 0.5 * d;
    const double slack = r - hull_r;
    const double x_lo = std::max(r, hull.center_x - slack);
    const double x_hi = std::min(side - r, hull.center_x + slack);
    const double y_lo = std::max(r, hull.center_y - slack);
    const double y_hi = std::min(side - r, hull.center_y + slack);
    if (x_lo > x_hi || y_lo > y_hi) continue;
    DiscPatch disc{uniform(rng, x_lo, x_hi), uniform(rng, y_lo, y_hi), d};
    if (distance(disc.center(), hull.center()) > slack) continue;
    if (!std::all_of(boxes.begin(), boxes.end(),
                     [&](const LesionBox& b) { return disc.contains(b, 0.0); })) {
      continue;
    }
    if (accept(disc)) return disc;
  }
  return std::nullopt;
}

/// Samples a patch of the given stage. Stage K is always the full frame.
/// nullopt signals an infeasible (frame, stage) pair: the lesions do not fit in
/// any disc of the stage's scale range.
inline std::optional<DiscPatch> sample_disc(std::span<const LesionBox> boxes, int side, int stage,
                                            const ComplexityConfig& cfg, Rng& rng) {
  const auto [lo, hi] = cfg.stage_range(stage);
  if (stage == cfg.bin_count) return DiscPatch::full_image(side);
  const double s = static_cast<double>(side);
  return sample_disc_in_range(boxes, s, lo * s, hi * s, cfg.max_attempts, rng,
                              [&](const DiscPatch& d) {
                                return stage_of(scale_complexity(d, s), cfg) == stage;
                              });
}

inline std::optional<DiscPatch> sample_disc(const AnnotatedFrame& frame, int stage,
                                            const ComplexityConfig& cfg, Rng& rng) {
  return sample_disc(frame.boxes, frame.side(), stage, cfg, rng);
}

/// Pixel window of the square circumscribing a disc: side ceil(diameter),
/// placed at the rounded corner and clamped into the frame.
struct CropWindow {
  int x0 = 0;
  int y0 = 0;
  int side = 0;
};

inline CropWindow crop_window(int width, int height, const DiscPatch& patch) {
  const int max_side = std::min(width, height);
  const int side = std::clamp(static_cast<int>(std::ceil(patch.diameter - 1e-9)), 1, max_side);
  const auto place = [side](double center, int extent) {
    const long corner = std::lround(center - 0.5 * side);
    return static_cast<int>(std::clamp<long>(corner, 0, extent - side));
  };
  return {place(patch.center_x, width), place(patch.center_y, height), side};
}

/// Extracts the minimal square covering the disc as float intensities.
template <typename T>
ImageTensor crop_square(const BasicImage<T>& image, const DiscPatch& patch) {
  const CropWindow w = crop_window(image.width(), image.height(), patch);
  ImageTensor out(w.side, w.side);
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < w.side; ++y) {
      const T* src = &image.at(c, w.y0 + y, w.x0);
      float* dst = &out.at(c, y, 0);
      if constexpr (std::is_same_v<T, std::uint8_t>) {
        static const auto lut = [] {
          std::array<float, 256> t{};
          for (int v = 0; v < 256; ++v) t[v] = static_cast<float>(v) / 255.0f;
          return t;
        }();
        for (int x = 0; x < w.side; ++x) dst[x] = lut[src[x]];
      } else {
        for (int x = 0; x < w.side; ++x) dst[x] = image.intensity(c, w.y0 + y, w.x0 + x);
      }
    }
  }
  return out;
}

}  // namespace currilearn
