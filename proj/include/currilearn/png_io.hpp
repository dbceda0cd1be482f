#pragma once

#include <png.h>

#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "currilearn/error.hpp"
#include "currilearn/image.hpp"

namespace currilearn {

inline ImageU8 read_png(const std::filesystem::path& path) {
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw ValidationError("cannot read PNG " + path.string() + ": " + img.message);
  }
  img.format = PNG_FORMAT_RGB;
  std::vector<png_byte> buffer(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buffer.data(), 0, nullptr)) {
    png_image_free(&img);
    throw ValidationError("cannot decode PNG " + path.string() + ": " + img.message);
  }
  const int w = static_cast<int>(img.width);
  const int h = static_cast<int>(img.height);
  ImageU8 out(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const png_byte* px = &buffer[(static_cast<std::size_t>(y) * w + x) * 3];
      for (int c = 0; c < 3; ++c) out.at(c, y, x) = px[c];
    }
  }
  return out;
}

inline void write_png(const std::filesystem::path& path, const ImageU8& image) {
  const int w = image.width();
  const int h = image.height();
  std::vector<png_byte> buffer(static_cast<std::size_t>(w) * h * 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      png_byte* px = &buffer[(static_cast<std::size_t>(y) * w + x) * 3];
      for (int c = 0; c < 3; ++c) px[c] = image.at(c, y, x);
    }
  }
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(w);
  img.height = static_cast<png_uint_32>(h);
  img.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&img, path.c_str(), 0, buffer.data(), 0, nullptr)) {
    throw RuntimeError("cannot write PNG " + path.string() + ": " + img.message);
  }
}

}  // namespace currilearn
