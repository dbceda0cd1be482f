#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "currilearn/error.hpp"
#include "currilearn/geometry.hpp"
#include "currilearn/image.hpp"
#include "currilearn/rng.hpp"

namespace currilearn {

/// One frame with its binary label and lesion boxes. The pixels are shared and
/// may be absent until loaded (see manifest.hpp).
struct AnnotatedFrame {
  std::string frame_id;
  std::string image_path;
  int label = 0;
  std::vector<LesionBox> boxes;
  std::shared_ptr<const ImageU8> image;

  bool positive() const { return label == 1; }

  /// Side length of the (square) frame. Requires loaded pixels.
  int side() const {
    if (!image) throw RuntimeError("frame " + frame_id + " has no pixels loaded");
    return image->width();
  }
};

struct PatientRecord {
  std::string patient_id;
  std::vector<AnnotatedFrame> frames;

  bool has_ulcer() const {
    return std::any_of(frames.begin(), frames.end(),
                       [](const AnnotatedFrame& f) { return f.positive(); });
  }
};

/// Checks the label/box invariants and, when pixels are loaded, box bounds.
inline void validate_frame(const AnnotatedFrame& f, bool require_boxes_for_positive = true) {
  if (f.label != 0 && f.label != 1) {
    throw ValidationError("frame " + f.frame_id + ": label must be 0 or 1");
  }
  if (f.label == 0 && !f.boxes.empty()) {
    throw ValidationError("frame " + f.frame_id + ": negative frame carries lesion boxes");
  }
  if (f.label == 1 && require_boxes_for_positive && f.boxes.empty()) {
    throw ValidationError("frame " + f.frame_id + ": positive frame has no lesion boxes");
  }
  if (f.image) {
    if (!f.image->is_square()) {
      throw ValidationError("frame " + f.frame_id + ": image is not square");
    }
    for (const LesionBox& b : f.boxes) {
      if (!b.valid_for(f.image->width(), f.image->height())) {
        throw ValidationError("frame " + f.frame_id + ": lesion box outside image");
      }
    }
  }
}

/// Patient-level assignment to cross-validation folds.
struct FoldSplit {
  int fold_count = 4;
  std::map<std::string, int> assignment;

  int fold_of(const std::string& patient_id) const {
    auto it = assignment.find(patient_id);
    if (it == assignment.end()) throw ValidationError("patient " + patient_id + " not in split");
    return it->second;
  }

  std::vector<std::size_t> fold_sizes() const {
    std::vector<std::size_t> sizes(fold_count, 0);
    for (const auto& [id, fold] : assignment) ++sizes[fold];
    return sizes;
  }
};

/// Random patient-level split into folds whose sizes differ by at most one.
///
/// Patients are shuffled within the ulcer and non-ulcer groups and dealt
/// round-robin with one running counter, so every fold also receives a near
/// equal share of each group.
inline FoldSplit split_folds(const std::vector<PatientRecord>& patients, int fold_count,
                             std::uint64_t seed) {
  if (fold_count < 1) throw ValidationError("fold_count must be positive");
  if (patients.size() < static_cast<std::size_t>(fold_count)) {
    throw ValidationError("need at least " + std::to_string(fold_count) + " patients for " +
                          std::to_string(fold_count) + " folds, got " +
                          std::to_string(patients.size()));
  }
  std::vector<std::size_t> ulcer, clean;
  for (std::size_t i = 0; i < patients.size(); ++i) {
    (patients[i].has_ulcer() ? ulcer : clean).push_back(i);
  }
  Rng rng(derive_seed(seed, 0xf01d));
  shuffle(ulcer.begin(), ulcer.end(), rng);
  shuffle(clean.begin(), clean.end(), rng);

  FoldSplit split;
  split.fold_count = fold_count;
  std::size_t counter = 0;
  for (const auto* group : {&ulcer, &clean}) {
    for (std::size_t idx : *group) {
      const auto& id = patients[idx].patient_id;
      if (!split.assignment.emplace(id, static_cast<int>(counter % fold_count)).second) {
        throw ValidationError("duplicate patient id " + id);
      }
      ++counter;
    }
  }
  return split;
}

/// Patients whose fold is (or is not, with `invert`) the given fold.
inline std::vector<PatientRecord> select_fold(const std::vector<PatientRecord>& patients,
                                              const FoldSplit& split, int fold,
                                              bool invert = false) {
  std::vector<PatientRecord> out;
  for (const auto& p : patients) {
    if ((split.fold_of(p.patient_id) == fold) != invert) out.push_back(p);
  }
  return out;
}

}  // namespace currilearn
