#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <type_traits>
#include <vector>

#include "currilearn/error.hpp"

namespace currilearn {

/// Planar RGB image. Channel c, row y, column x lives at (c*height + y)*width + x.
///
/// Two storages are used: float intensities in [0,1] for everything that feeds
/// the classifier, and 8-bit for frames held in memory or on disk.
template <typename T>
class BasicImage {
 public:
  static constexpr int kChannels = 3;
  using value_type = T;

  BasicImage() = default;
  BasicImage(int width, int height, T fill = T{}) : width_(width), height_(height) {
    if (width <= 0 || height <= 0) {
      throw ValidationError("image dimensions must be positive");
    }
    pixels_.assign(static_cast<std::size_t>(width) * height * kChannels, fill);
  }

  int width() const { return width_; }
  int height() const { return height_; }
  int channels() const { return kChannels; }
  bool empty() const { return pixels_.empty(); }
  bool is_square() const { return width_ == height_; }

  T& at(int c, int y, int x) { return pixels_[index(c, y, x)]; }
  const T& at(int c, int y, int x) const { return pixels_[index(c, y, x)]; }

  std::span<T> plane(int c) {
    return {pixels_.data() + static_cast<std::size_t>(c) * width_ * height_,
            static_cast<std::size_t>(width_) * height_};
  }
  std::span<const T> plane(int c) const {
    return {pixels_.data() + static_cast<std::size_t>(c) * width_ * height_,
            static_cast<std::size_t>(width_) * height_};
  }

  std::span<T> data() { return pixels_; }
  std::span<const T> data() const { return pixels_; }

  /// Intensity normalized to [0,1] regardless of storage.
  float intensity(int c, int y, int x) const {
    if constexpr (std::is_integral_v<T>) {
      return static_cast<float>(at(c, y, x)) / 255.0f;
    } else {
      return static_cast<float>(at(c, y, x));
    }
  }

  friend bool operator==(const BasicImage&, const BasicImage&) = default;

 private:
  std::size_t index(int c, int y, int x) const {
    return (static_cast<std::size_t>(c) * height_ + y) * width_ + x;
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<T> pixels_;
};

using ImageTensor = BasicImage<float>;
using ImageU8 = BasicImage<std::uint8_t>;

inline ImageTensor to_float(const ImageU8& src) {
  ImageTensor out(src.width(), src.height());
  std::transform(src.data().begin(), src.data().end(), out.data().begin(),
                 [](std::uint8_t v) { return static_cast<float>(v) / 255.0f; });
  return out;
}

inline ImageU8 to_u8(const ImageTensor& src) {
  ImageU8 out(src.width(), src.height());
  std::transform(src.data().begin(), src.data().end(), out.data().begin(), [](float v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
  });
  return out;
}

inline bool in_unit_range(const ImageTensor& img) {
  return std::all_of(img.data().begin(), img.data().end(),
                     [](float v) { return v >= 0.0f && v <= 1.0f; });
}

}  // namespace currilearn
