#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "currilearn/error.hpp"
#include "currilearn/image.hpp"
#include "currilearn/rng.hpp"

namespace currilearn {

enum class Interpolation { nearest, bilinear };

inline Interpolation parse_interpolation(const std::string& name) {
  if (name == "nearest") return Interpolation::nearest;
  if (name == "bilinear") return Interpolation::bilinear;
  throw ValidationError("unknown interpolation '" + name + "' (expected nearest or bilinear)");
}

inline const char* to_string(Interpolation i) {
  return i == Interpolation::nearest ? "nearest" : "bilinear";
}

struct AugmentConfig {
  int input_side = 224;
  /// Rotation angles are drawn from [0, rotation_range) degrees.
  double rotation_range = 360.0;
  Interpolation interpolation = Interpolation::bilinear;

  void validate() const {
    if (input_side <= 0) throw ValidationError("augment.input_side must be positive");
    if (!(rotation_range >= 0.0 && rotation_range <= 360.0)) {
      throw ValidationError("augment.rotation_range must lie in [0, 360]");
    }
  }
};

/// Rotates about the image center by `alpha` degrees; source points that fall
/// outside the image read as black.
inline ImageTensor rotate(const ImageTensor& image, double alpha, Interpolation interp) {
  if (!(alpha >= 0.0 && alpha < 360.0)) {
    throw ValidationError("rotation angle " + std::to_string(alpha) + " outside [0, 360)");
  }
  if (alpha == 0.0) return image;
  const int w = image.width();
  const int h = image.height();
  const double rad = alpha * std::numbers::pi / 180.0;
  const double cs = std::cos(rad);
  const double sn = std::sin(rad);
  const double cx = 0.5 * w;
  const double cy = 0.5 * h;
  ImageTensor out(w, h, 0.0f);

  const std::size_t plane = static_cast<std::size_t>(w) * h;
  const float* src = image.data().data();
  float* dst = out.data().data();
  for (int y = 0; y < h; ++y) {
    const double dy = y + 0.5 - cy;
    // Inverse map output (x, y) -> source, in pixel-index coordinates.
    double fx = cs * (0.5 - cx) + sn * dy + cx - 0.5;
    double fy = -sn * (0.5 - cx) + cs * dy + cy - 0.5;
    for (int x = 0; x < w; ++x, fx += cs, fy -= sn) {
      const std::size_t o = static_cast<std::size_t>(y) * w + x;
      if (interp == Interpolation::nearest) {
        const int sx = static_cast<int>(std::floor(fx + 0.5));
        const int sy = static_cast<int>(std::floor(fy + 0.5));
        if (sx < 0 || sx >= w || sy < 0 || sy >= h) continue;
        const std::size_t s = static_cast<std::size_t>(sy) * w + sx;
        for (int c = 0; c < 3; ++c) dst[c * plane + o] = src[c * plane + s];
        continue;
      }
      if (fx >= 0.0 && fy >= 0.0 && fx < w - 1 && fy < h - 1) {
        // All four taps inside: truncation equals floor here.
        const int x0 = static_cast<int>(fx);
        const int y0 = static_cast<int>(fy);
        const float ax = static_cast<float>(fx - x0);
        const float ay = static_cast<float>(fy - y0);
        const float w00 = (1.0f - ax) * (1.0f - ay), w01 = ax * (1.0f - ay);
        const float w10 = (1.0f - ax) * ay, w11 = ax * ay;
        const std::size_t s00 = static_cast<std::size_t>(y0) * w + x0;
        for (int c = 0; c < 3; ++c) {
          const float* p = src + c * plane + s00;
          dst[c * plane + o] = w00 * p[0] + w01 * p[1] + w10 * p[w] + w11 * p[w + 1];
        }
        continue;
      }
      const int x0 = static_cast<int>(std::floor(fx));
      const int y0 = static_cast<int>(std::floor(fy));
      if (x0 < -1 || x0 >= w || y0 < -1 || y0 >= h) continue;
      const float ax = static_cast<float>(fx - x0);
      const float ay = static_cast<float>(fy - y0);
      float wt[4] = {(1.0f - ax) * (1.0f - ay), ax * (1.0f - ay), (1.0f - ax) * ay, ax * ay};
      const bool inner = x0 >= 0 && x0 + 1 < w && y0 >= 0 && y0 + 1 < h;
      if (!inner) {
        if (x0 < 0) wt[0] = wt[2] = 0.0f;
        if (x0 + 1 >= w) wt[1] = wt[3] = 0.0f;
        if (y0 < 0) wt[0] = wt[1] = 0.0f;
        if (y0 + 1 >= h) wt[2] = wt[3] = 0.0f;
      }
      const int cx0 = std::max(x0, 0), cx1 = std::min(x0 + 1, w - 1);
      const int cy0 = std::max(y0, 0), cy1 = std::min(y0 + 1, h - 1);
      const std::size_t s00 = static_cast<std::size_t>(cy0) * w + cx0;
      const std::size_t s01 = static_cast<std::size_t>(cy0) * w + cx1;
      const std::size_t s10 = static_cast<std::size_t>(cy1) * w + cx0;
      const std::size_t s11 = static_cast<std::size_t>(cy1) * w + cx1;
      for (int c = 0; c < 3; ++c) {
        const float* p = src + c * plane;
        dst[c * plane + o] = wt[0] * p[s00] + wt[1] * p[s01] + wt[2] * p[s10] + wt[3] * p[s11];
      }
    }
  }
  return out;
}

namespace detail {

/// Sparse 1-D resampling weights: output j reads taps [first, first+weights.size()).
struct ResampleKernel {
  std::vector<int> first;
  std::vector<std::vector<float>> weights;
};

inline ResampleKernel resample_kernel(int n_in, int n_out, Interpolation interp) {
  ResampleKernel k;
  k.first.resize(n_out);
  k.weights.resize(n_out);
  const double scale = static_cast<double>(n_in) / n_out;
  for (int j = 0; j < n_out; ++j) {
    if (interp == Interpolation::nearest) {
      k.first[j] = std::min(n_in - 1, static_cast<int>(std::floor((j + 0.5) * scale)));
      k.weights[j] = {1.0f};
    } else if (scale > 1.0) {
      // Downscaling: area average over the output pixel's footprint.
      const double a = j * scale;
      const double b = std::min<double>(n_in, (j + 1) * scale);
      const int i0 = static_cast<int>(std::floor(a));
      const int i1 = std::min(n_in, static_cast<int>(std::ceil(b)));
      k.first[j] = i0;
      for (int i = i0; i < i1; ++i) {
        const double overlap = std::min<double>(i + 1, b) - std::max<double>(i, a);
        k.weights[j].push_back(static_cast<float>(overlap / (b - a)));
      }
    } else {
      // Upscaling or same size: bilinear with edge clamping.
      const double s = std::clamp((j + 0.5) * scale - 0.5, 0.0, n_in - 1.0);
      const int i0 = std::min(static_cast<int>(std::floor(s)), n_in - 1);
      const double t = s - i0;
      k.first[j] = i0;
      if (t > 0.0 && i0 + 1 < n_in) {
        k.weights[j] = {static_cast<float>(1.0 - t), static_cast<float>(t)};
      } else {
        k.weights[j] = {1.0f};
      }
    }
  }
  return k;
}

}  // namespace detail

/// Resizes to target_side x target_side. Bilinear mode interpolates when
/// enlarging and averages pixel footprints when shrinking, so small features
/// are not dropped by point sampling.
inline ImageTensor resize(const ImageTensor& image, int target_side, Interpolation interp) {
  if (target_side <= 0) throw ValidationError("resize target must be positive");
  const int w = image.width();
  const int h = image.height();
  if (w == target_side && h == target_side) return image;
  const auto kx = detail::resample_kernel(w, target_side, interp);
  const auto ky = detail::resample_kernel(h, target_side, interp);
  ImageTensor out(target_side, target_side);
  std::vector<float> tmp(static_cast<std::size_t>(h) * target_side);
  for (int c = 0; c < 3; ++c) {
    const auto src = image.plane(c);
    for (int y = 0; y < h; ++y) {
      const float* srow = src.data() + static_cast<std::size_t>(y) * w;
      float* trow = tmp.data() + static_cast<std::size_t>(y) * target_side;
      for (int j = 0; j < target_side; ++j) {
        float acc = 0.0f;
        const auto& wts = kx.weights[j];
        for (std::size_t t = 0; t < wts.size(); ++t) acc += wts[t] * srow[kx.first[j] + t];
        trow[j] = acc;
      }
    }
    auto dst = out.plane(c);
    for (int j = 0; j < target_side; ++j) {
      float* drow = dst.data() + static_cast<std::size_t>(j) * target_side;
      std::fill(drow, drow + target_side, 0.0f);
      const auto& wts = ky.weights[j];
      for (std::size_t t = 0; t < wts.size(); ++t) {
        const float* trow = tmp.data() + static_cast<std::size_t>(ky.first[j] + t) * target_side;
        for (int x = 0; x < target_side; ++x) drow[x] += wts[t] * trow[x];
      }
      for (int x = 0; x < target_side; ++x) drow[x] = std::clamp(drow[x], 0.0f, 1.0f);
    }
  }
  return out;
}

/// True when pixel (x, y) of a side x side square has its center inside the
/// inscribed disc.
inline bool inside_inscribed_disc(int x, int y, int side) {
  const double r = 0.5 * side;
  const double dx = x + 0.5 - r;
  const double dy = y + 0.5 - r;
  return dx * dx + dy * dy <= r * r;
}

/// Blackens every pixel of a square image whose center lies outside the inscribed disc.
inline ImageTensor mask_outside_disc(ImageTensor image) {
  if (!image.is_square()) throw ValidationError("mask_outside_disc requires a square image");
  const int side = image.width();
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      if (inside_inscribed_disc(x, y, side)) continue;
      for (int c = 0; c < 3; ++c) image.at(c, y, x) = 0.0f;
    }
  }
  return image;
}

/// rotate -> resize -> mask, with the angle drawn from `rng`.
inline ImageTensor augment_pipeline(const ImageTensor& patch_square, Rng& rng,
                                    const AugmentConfig& cfg, double* drawn_alpha = nullptr) {
  if (!patch_square.is_square()) throw ValidationError("augment_pipeline requires a square patch");
  double alpha = cfg.rotation_range > 0.0 ? uniform(rng, 0.0, cfg.rotation_range) : 0.0;
  if (alpha >= 360.0) alpha = 0.0;
  if (drawn_alpha) *drawn_alpha = alpha;
  return mask_outside_disc(
      resize(rotate(patch_square, alpha, cfg.interpolation), cfg.input_side, cfg.interpolation));
}

/// Deterministic evaluation transform: full-frame crop, no rotation, resize, mask.
template <typename T>
ImageTensor full_frame_input(const BasicImage<T>& frame, const AugmentConfig& cfg) {
  ImageTensor square(frame.width(), frame.height());
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < frame.height(); ++y) {
      for (int x = 0; x < frame.width(); ++x) square.at(c, y, x) = frame.intensity(c, y, x);
    }
  }
  return mask_outside_disc(resize(square, cfg.input_side, cfg.interpolation));
}

}  // namespace currilearn
