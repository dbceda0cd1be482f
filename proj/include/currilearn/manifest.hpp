#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "currilearn/core.hpp"
#include "currilearn/error.hpp"
#include "currilearn/png_io.hpp"

namespace currilearn {

inline constexpr std::string_view kManifestHeader = "#currilearn-manifest v1";

namespace detail {

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    parts.push_back(s.substr(start, pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return parts;
}

inline bool parse_int(std::string_view s, int& out) {
  if (s.empty()) return false;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

inline std::string format_boxes(const std::vector<LesionBox>& boxes) {
  if (boxes.empty()) return "-";
  std::string out;
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    if (i) out += ';';
    const auto& b = boxes[i];
    out += std::to_string(b.x_min) + ',' + std::to_string(b.y_min) + ',' +
           std::to_string(b.x_max) + ',' + std::to_string(b.y_max);
  }
  return out;
}

}  // namespace detail

/// One line per frame: patient_id, frame_id, image_path, label, boxes (tab-separated).
/// Frames of a patient are written contiguously in record order.
inline std::string serialize_manifest(const std::vector<PatientRecord>& records) {
  std::ostringstream out;
  out << kManifestHeader << '\n';
  for (const auto& p : records) {
    for (const auto& f : p.frames) {
      out << p.patient_id << '\t' << f.frame_id << '\t' << f.image_path << '\t' << f.label
          << '\t' << detail::format_boxes(f.boxes) << '\n';
    }
  }
  return out.str();
}

inline void write_manifest(const std::vector<PatientRecord>& records,
                           const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeError("cannot write manifest " + path.string());
  out << serialize_manifest(records);
  if (!out) throw RuntimeError("failed writing manifest " + path.string());
}

/// Parses manifest text; `source` names the file in error messages.
inline std::vector<PatientRecord> parse_manifest(std::string_view text,
                                                 const std::string& source = "manifest") {
  std::vector<PatientRecord> records;
  std::unordered_map<std::string, std::size_t> patient_index;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  bool saw_header = false;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    const auto where = source + ":" + std::to_string(line_no) + ": ";
    if (line_no == 1) {
      if (line != kManifestHeader) {
        throw ValidationError(where + "missing header '" + std::string(kManifestHeader) + "'");
      }
      saw_header = true;
      continue;
    }
    if (line.empty()) continue;
    const auto fields = detail::split(line, '\t');
    if (fields.size() != 5) {
      throw ValidationError(where + "expected 5 tab-separated fields, got " +
                            std::to_string(fields.size()));
    }
    AnnotatedFrame frame;
    if (fields[0].empty() || fields[1].empty()) {
      throw ValidationError(where + "empty patient or frame id");
    }
    frame.frame_id = std::string(fields[1]);
    frame.image_path = std::string(fields[2]);
    if (!detail::parse_int(fields[3], frame.label) || (frame.label != 0 && frame.label != 1)) {
      throw ValidationError(where + "label must be 0 or 1");
    }
    if (fields[4] != "-") {
      for (auto item : detail::split(fields[4], ';')) {
        const auto coords = detail::split(item, ',');
        LesionBox b;
        if (coords.size() != 4 || !detail::parse_int(coords[0], b.x_min) ||
            !detail::parse_int(coords[1], b.y_min) || !detail::parse_int(coords[2], b.x_max) ||
            !detail::parse_int(coords[3], b.y_max) || b.x_min >= b.x_max || b.y_min >= b.y_max) {
          throw ValidationError(where + "malformed box '" + std::string(item) + "'");
        }
        frame.boxes.push_back(b);
      }
    }
    try {
      validate_frame(frame);
    } catch (const ValidationError& e) {
      throw ValidationError(where + e.what());
    }
    std::string pid(fields[0]);
    auto [it, inserted] = patient_index.emplace(pid, records.size());
    if (inserted) {
      records.push_back(PatientRecord{pid, {}});
    } else if (it->second != records.size() - 1) {
      throw ValidationError(where + "frames of patient " + pid + " are not contiguous");
    }
    records[it->second].frames.push_back(std::move(frame));
  }
  if (!saw_header) {
    throw ValidationError(source + ":1: missing header '" + std::string(kManifestHeader) + "'");
  }
  return records;
}

inline std::vector<PatientRecord> load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open manifest " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_manifest(buf.str(), path.string());
}

/// Loads every frame's PNG (paths relative to `base_dir`) and re-validates box bounds.
inline void load_images(std::vector<PatientRecord>& records,
                        const std::filesystem::path& base_dir) {
  for (auto& p : records) {
    for (auto& f : p.frames) {
      const std::filesystem::path rel(f.image_path);
      f.image = std::make_shared<const ImageU8>(read_png(rel.is_absolute() ? rel : base_dir / rel));
      validate_frame(f);
    }
  }
}

}  // namespace currilearn
