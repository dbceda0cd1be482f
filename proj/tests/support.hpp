#pragma once

#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "currilearn/currilearn.hpp"

namespace testing_support {

using namespace currilearn;

inline std::shared_ptr<const ImageU8> flat_image(int side, std::uint8_t value = 128) {
  return std::make_shared<const ImageU8>(side, side, value);
}

inline AnnotatedFrame make_frame(const std::string& id, int side, std::vector<LesionBox> boxes) {
  AnnotatedFrame f;
  f.frame_id = id;
  f.image_path = "images/" + id + ".png";
  f.label = boxes.empty() ? 0 : 1;
  f.boxes = std::move(boxes);
  f.image = flat_image(side);
  return f;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("currilearn_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

/// Small dataset for fast pipeline tests.
inline SynthConfig tiny_synth(std::uint64_t seed = 3) {
  SynthConfig c;
  c.ulcer_patients = 8;
  c.non_ulcer_patients = 4;
  c.frames_per_patient = 10;
  c.image_side = 96;
  c.positive_fraction = 0.3;
  c.seed = seed;
  return c;
}

}  // namespace testing_support
