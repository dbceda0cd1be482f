#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "currilearn/core.hpp"
#include "currilearn/error.hpp"
#include "currilearn/format.hpp"
#include "currilearn/rng.hpp"

namespace currilearn {

struct ScoredFrame {
  std::string frame_id;
  int label = 0;
  double score = 0.0;
};

using Scorer = std::function<double(const AnnotatedFrame&)>;

inline std::vector<ScoredFrame> score_frames(const std::vector<AnnotatedFrame>& frames,
                                             const Scorer& scorer) {
  std::vector<ScoredFrame> out;
  out.reserve(frames.size());
  for (const auto& f : frames) {
    const double s = scorer(f);
    if (!(s >= 0.0 && s <= 1.0)) {
      throw RuntimeError("score for " + f.frame_id + " outside [0,1]");
    }
    out.push_back({f.frame_id, f.label, s});
  }
  return out;
}

/// Fraction of frames where (score >= threshold) agrees with the label.
inline double accuracy(const std::vector<ScoredFrame>& scored, double threshold = 0.5) {
  if (scored.empty()) throw ValidationError("accuracy of an empty frame list");
  std::size_t hits = 0;
  for (const auto& s : scored) hits += ((s.score >= threshold) ? 1 : 0) == s.label;
  return static_cast<double>(hits) / static_cast<double>(scored.size());
}

/// Area under the ROC curve from mid-ranks (Mann-Whitney U / (n_pos * n_neg)),
/// so tied scores contribute one half.
inline double auc(const std::vector<ScoredFrame>& scored) {
  std::vector<std::size_t> order(scored.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scored[a].score < scored[b].score; });
  double positive_rank_sum = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scored[order[j]].score == scored[order[i]].score) ++j;
    const double mid_rank = 0.5 * static_cast<double>(i + 1 + j);  // ranks i+1..j
    for (std::size_t k = i; k < j; ++k) {
      if (scored[order[k]].label == 1) {
        positive_rank_sum += mid_rank;
        ++n_pos;
      }
    }
    i = j;
  }
  const std::size_t n_neg = scored.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) throw ValidationError("AUC needs both positive and negative frames");
  const double np = static_cast<double>(n_pos);
  const double u = positive_rank_sum - np * (np + 1.0) / 2.0;
  return u / (np * static_cast<double>(n_neg));
}

/// Negative pool policy: the default takes negatives only from patients
/// without any ulcer frame, since unlabeled frames of ulcer patients may hold
/// unannotated lesions.
enum class NegativeSource { non_ulcer_patients, all_patients };

inline NegativeSource parse_negative_source(const std::string& s) {
  if (s == "non_ulcer") return NegativeSource::non_ulcer_patients;
  if (s == "all") return NegativeSource::all_patients;
  throw ValidationError("unknown negative source '" + s + "' (expected non_ulcer or all)");
}

inline const char* to_string(NegativeSource s) {
  return s == NegativeSource::non_ulcer_patients ? "non_ulcer" : "all";
}

struct LabeledPools {
  std::vector<AnnotatedFrame> positives;
  std::vector<AnnotatedFrame> negatives;
};

inline LabeledPools labeled_pools(const std::vector<PatientRecord>& patients, NegativeSource source) {
  LabeledPools pools;
  for (const auto& p : patients) {
    const bool ulcer = p.has_ulcer();
    for (const auto& f : p.frames) {
      if (f.positive()) {
        pools.positives.push_back(f);
      } else if (!ulcer || source == NegativeSource::all_patients) {
        pools.negatives.push_back(f);
      }
    }
  }
  return pools;
}

/// Class-balanced test set: the larger class is subsampled (seeded) to the size
/// of the smaller one. Output keeps manifest order.
inline std::vector<AnnotatedFrame> balanced_test_set(const std::vector<PatientRecord>& patients,
                                                     NegativeSource source, std::uint64_t seed) {
  LabeledPools pools = labeled_pools(patients, source);
  if (pools.positives.empty() || pools.negatives.empty()) {
    throw ValidationError("test split lacks positive or negative frames");
  }
  const std::size_t n = std::min(pools.positives.size(), pools.negatives.size());
  Rng rng(derive_seed(seed, 0xba1));
  const auto take = [&](std::vector<AnnotatedFrame>& pool) {
    std::vector<std::size_t> idx(pool.size());
    std::iota(idx.begin(), idx.end(), 0);
    shuffle(idx.begin(), idx.end(), rng);
    idx.resize(n);
    std::sort(idx.begin(), idx.end());
    std::vector<AnnotatedFrame> out;
    for (auto i : idx) out.push_back(pool[i]);
    return out;
  };
  auto pos = take(pools.positives);
  auto neg = take(pools.negatives);
  pos.insert(pos.end(), neg.begin(), neg.end());
  return pos;
}

struct FoldMetrics {
  int fold = 0;
  double accuracy = 0.0;
  double auc = 0.0;
  std::size_t positives = 0;
  std::size_t negatives = 0;
};

/// Per-fold accuracy and AUC plus their arithmetic means.
struct EvalReport {
  std::string subject;  // variant name, "oracle" or a checkpoint path
  double threshold = 0.5;
  std::uint64_t balance_seed = 0;
  std::vector<FoldMetrics> folds;
  double mean_accuracy = 0.0;
  double mean_auc = 0.0;

  void finalize() {
    if (folds.empty()) throw ValidationError("report has no folds");
    mean_accuracy = 0.0;
    mean_auc = 0.0;
    for (const auto& f : folds) {
      mean_accuracy += f.accuracy;
      mean_auc += f.auc;
    }
    mean_accuracy /= static_cast<double>(folds.size());
    mean_auc /= static_cast<double>(folds.size());
  }
};

/// Scores each fold's balanced test split with a fixed scorer.
inline EvalReport evaluate_folds(const std::vector<PatientRecord>& patients, const FoldSplit& split,
                                 const Scorer& scorer, const std::string& subject,
                                 double threshold, NegativeSource source, std::uint64_t seed) {
  EvalReport report;
  report.subject = subject;
  report.threshold = threshold;
  report.balance_seed = seed;
  for (int fold = 0; fold < split.fold_count; ++fold) {
    const auto test_patients = select_fold(patients, split, fold);
    std::vector<AnnotatedFrame> test;
    try {
      test = balanced_test_set(test_patients, source, derive_seed(seed, fold));
    } catch (const ValidationError& e) {
      throw ValidationError("fold " + std::to_string(fold) + ": " + e.what());
    }
    const auto scored = score_frames(test, scorer);
    FoldMetrics m{fold, accuracy(scored, threshold), auc(scored), test.size() / 2, test.size() / 2};
    report.folds.push_back(m);
  }
  report.finalize();
  return report;
}

/// Table with one column per fold plus AVG; values in percent.
inline std::string format_report_table(const EvalReport& r) {
  std::ostringstream out;
  out << "# currilearn evaluation report\n";
  out << "subject: " << r.subject << '\n';
  out << "threshold: " << format_double(r.threshold) << '\n';
  out << "balance_seed: " << r.balance_seed << '\n';
  out << "test frames per fold (pos/neg):";
  for (const auto& f : r.folds) out << ' ' << f.positives << '/' << f.negatives;
  out << "\n\n";
  const auto row = [&](const char* name, auto get, double avg) {
    out << name;
    for (const auto& f : r.folds) out << '\t' << format_fixed(100.0 * get(f), 2);
    out << '\t' << format_fixed(100.0 * avg, 2) << '\n';
  };
  out << "metric";
  for (const auto& f : r.folds) out << "\tF#" << f.fold;
  out << "\tAVG\n";
  row("accuracy", [](const FoldMetrics& f) { return f.accuracy; }, r.mean_accuracy);
  row("auc", [](const FoldMetrics& f) { return f.auc; }, r.mean_auc);
  return out.str();
}

/// Line-delimited JSON-like records, one per fold and one for the average.
inline std::string format_report_lines(const EvalReport& r) {
  std::ostringstream out;
  for (const auto& f : r.folds) {
    out << "{\"fold\":" << f.fold << ",\"accuracy\":" << format_double(f.accuracy)
        << ",\"auc\":" << format_double(f.auc) << ",\"positives\":" << f.positives
        << ",\"negatives\":" << f.negatives << "}\n";
  }
  out << "{\"fold\":\"AVG\",\"accuracy\":" << format_double(r.mean_accuracy)
      << ",\"auc\":" << format_double(r.mean_auc) << ",\"threshold\":" << format_double(r.threshold)
      << ",\"subject\":\"" << r.subject << "\"}\n";
  return out.str();
}

enum class Tier { high, medium, unflagged };

inline const char* to_string(Tier t) {
  switch (t) {
    case Tier::high: return "high";
    case Tier::medium: return "medium";
    default: return "unflagged";
  }
}

/// Frames of one patient split into review tiers by score.
struct TriageReport {
  std::string patient_id;
  std::vector<ScoredFrame> high;       // score >= hi, descending
  std::vector<ScoredFrame> medium;     // med <= score < hi, descending
  std::vector<ScoredFrame> unflagged;  // score < med, descending
  double workload_reduction = 1.0;

  std::size_t total() const { return high.size() + medium.size() + unflagged.size(); }
  bool flagged() const { return !high.empty() || !medium.empty(); }
};

struct TriageThresholds {
  double hi = 0.8;
  double med = 0.6;

  void validate() const {
    if (!(med > 0.0)) throw ValidationError("screen.med must be positive");
    if (!(hi > med)) {
      throw ValidationError("screen.hi (" + format_double(hi) + ") must exceed screen.med (" +
                            format_double(med) + ")");
    }
  }
};

inline TriageReport triage(const std::string& patient_id, std::vector<ScoredFrame> scored,
                           const TriageThresholds& t) {
  t.validate();
  std::stable_sort(scored.begin(), scored.end(),
                   [](const ScoredFrame& a, const ScoredFrame& b) { return a.score > b.score; });
  TriageReport r;
  r.patient_id = patient_id;
  for (auto& s : scored) {
    if (s.score >= t.hi) {
      r.high.push_back(std::move(s));
    } else if (s.score >= t.med) {
      r.medium.push_back(std::move(s));
    } else {
      r.unflagged.push_back(std::move(s));
    }
  }
  const std::size_t total = r.total();
  r.workload_reduction =
      total == 0 ? 1.0
                 : 1.0 - static_cast<double>(r.high.size() + r.medium.size()) /
                             static_cast<double>(total);
  return r;
}

/// Scores every frame of a patient and partitions them into review tiers.
inline TriageReport screen_patient(const PatientRecord& patient, const Scorer& scorer,
                                   const TriageThresholds& t = {}) {
  t.validate();
  return triage(patient.patient_id, score_frames(patient.frames, scorer), t);
}

/// frame_id, score, tier per line; high tier first.
inline std::string format_triage(const TriageReport& r) {
  std::ostringstream out;
  const auto emit = [&](const std::vector<ScoredFrame>& v, Tier tier) {
    for (const auto& s : v) {
      out << s.frame_id << '\t' << format_fixed(s.score, 6) << '\t' << to_string(tier) << '\n';
    }
  };
  emit(r.high, Tier::high);
  emit(r.medium, Tier::medium);
  emit(r.unflagged, Tier::unflagged);
  return out.str();
}

}  // namespace currilearn
