#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <numbers>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "currilearn/core.hpp"
#include "currilearn/error.hpp"
#include "currilearn/format.hpp"
#include "currilearn/image.hpp"
#include "currilearn/manifest.hpp"
#include "currilearn/png_io.hpp"
#include "currilearn/rng.hpp"

namespace currilearn {

/// Synthetic capsule-endoscopy-like corpus. Radii are fractions of the frame side.
struct SynthConfig {
  int ulcer_patients = 32;
  int non_ulcer_patients = 8;
  int frames_per_patient = 60;
  int image_side = 480;
  /// Share of an ulcer patient's frames that show a lesion.
  double positive_fraction = 0.08;
  /// Probability of a second lesion on a positive frame.
  double second_lesion_probability = 0.15;
  double small_radius_min = 0.02;
  double small_radius_max = 0.07;
  double large_radius_min = 0.10;
  double large_radius_max = 0.20;
  /// Share of lesions drawn from the large range; assigned by quota, not by coin flip.
  double large_fraction = 0.10;
  /// Strength of the lesion's colour shift over the mucosa.
  double contrast = 0.5;
  /// Amplitude of the low-frequency background field.
  double background_variation = 0.12;
  /// Amplitude of per-pixel noise.
  double pixel_noise = 0.03;
  std::uint64_t seed = 0;
  int workers = 1;

  void validate() const {
    if (ulcer_patients < 0 || non_ulcer_patients < 0 || ulcer_patients + non_ulcer_patients < 1) {
      throw ValidationError("synth patient counts must be non-negative with at least one patient");
    }
    if (frames_per_patient < 1) throw ValidationError("synth.frames_per_patient must be positive");
    if (image_side < 16) throw ValidationError("synth.image_side must be at least 16");
    if (!(positive_fraction > 0.0 && positive_fraction <= 1.0)) {
      throw ValidationError("synth.positive_fraction must lie in (0,1]");
    }
    if (!(second_lesion_probability >= 0.0 && second_lesion_probability <= 1.0)) {
      throw ValidationError("synth.second_lesion_probability must lie in [0,1]");
    }
    if (!(0.0 < small_radius_min && small_radius_min <= small_radius_max &&
          0.0 < large_radius_min && large_radius_min <= large_radius_max &&
          large_radius_max <= 0.3)) {
      throw ValidationError("synth lesion radius ranges must be ordered and within (0, 0.3]");
    }
    if (!(large_fraction >= 0.0 && large_fraction <= 0.15)) {
      throw ValidationError("synth.large_fraction must lie in [0, 0.15]");
    }
    if (!(contrast > 0.0 && contrast <= 1.0)) throw ValidationError("synth.contrast must lie in (0,1]");
    if (!(background_variation >= 0.0 && pixel_noise >= 0.0)) {
      throw ValidationError("synth noise amplitudes must be non-negative");
    }
    if (workers < 1) throw ValidationError("workers must be positive");
  }
};

/// Parameters of one elliptical lesion, in pixels.
struct LesionSpec {
  double center_x = 0.0;
  double center_y = 0.0;
  double semi_major = 0.0;
  double semi_minor = 0.0;
  double angle = 0.0;
  bool large = false;

  /// Normalized elliptical radius of a point; < 1 inside.
  double rho(double x, double y) const {
    const double dx = x - center_x;
    const double dy = y - center_y;
    const double c = std::cos(angle), s = std::sin(angle);
    const double u = (c * dx + s * dy) / semi_major;
    const double v = (-s * dx + c * dy) / semi_minor;
    return std::sqrt(u * u + v * v);
  }
};

struct SynthDataset {
  std::vector<PatientRecord> patients;
  /// Lesion specs per frame, parallel to patients[p].frames[f].
  std::vector<std::vector<std::vector<LesionSpec>>> lesions;

  std::vector<LesionBox> all_boxes() const {
    std::vector<LesionBox> out;
    for (const auto& p : patients) {
      for (const auto& f : p.frames) out.insert(out.end(), f.boxes.begin(), f.boxes.end());
    }
    return out;
  }
};

/// Share of boxes whose area is below side^2/25.
inline double small_lesion_share(const std::vector<LesionBox>& boxes, int side) {
  if (boxes.empty()) return 1.0;
  const double limit = static_cast<double>(side) * side / 25.0;
  const auto small = std::count_if(boxes.begin(), boxes.end(),
                                   [&](const LesionBox& b) { return b.area() < limit; });
  return static_cast<double>(small) / static_cast<double>(boxes.size());
}

namespace detail {

/// Smooth random field: a coarse grid of uniform values interpolated with smoothstep.
class SmoothField {
 public:
  SmoothField(int cells, Rng& rng) : cells_(cells), values_((cells + 1) * (cells + 1)) {
    for (auto& v : values_) v = uniform(rng, -1.0, 1.0);
  }

  double at(double u, double v) const {  // u, v in [0,1]
    const double gx = u * cells_, gy = v * cells_;
    const int ix = std::min(cells_ - 1, static_cast<int>(gx));
    const int iy = std::min(cells_ - 1, static_cast<int>(gy));
    const double tx = smooth(gx - ix), ty = smooth(gy - iy);
    const auto g = [&](int x, int y) { return values_[y * (cells_ + 1) + x]; };
    const double top = g(ix, iy) * (1 - tx) + g(ix + 1, iy) * tx;
    const double bottom = g(ix, iy + 1) * (1 - tx) + g(ix + 1, iy + 1) * tx;
    return top * (1 - ty) + bottom * ty;
  }

 private:
  static double smooth(double t) { return t * t * (3.0 - 2.0 * t); }
  int cells_;
  std::vector<double> values_;
};

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Draws a lesion whose bounding box stays inside the frame's inscribed circle.
inline LesionSpec draw_lesion(bool large, const SynthConfig& cfg, Rng& rng) {
  const double side = cfg.image_side;
  LesionSpec l;
  l.large = large;
  const double lo = large ? cfg.large_radius_min : cfg.small_radius_min;
  const double hi = large ? cfg.large_radius_max : cfg.small_radius_max;
  l.semi_major = std::max(2.0, uniform(rng, lo, hi) * side);
  l.semi_minor = std::max(1.5, l.semi_major * uniform(rng, 0.6, 1.0));
  l.angle = uniform(rng, 0.0, std::numbers::pi);
  const double c = std::cos(l.angle), s = std::sin(l.angle);
  const double ex = std::hypot(l.semi_major * c, l.semi_minor * s) + 1.0;
  const double ey = std::hypot(l.semi_major * s, l.semi_minor * c) + 1.0;
  const double reach = 0.47 * side - std::hypot(ex, ey);
  if (reach <= 0.0) throw ValidationError("lesion too large to place inside the field of view");
  for (int attempt = 0; attempt < 1000; ++attempt) {
    const double px = uniform(rng, -reach, reach);
    const double py = uniform(rng, -reach, reach);
    if (px * px + py * py > reach * reach) continue;
    l.center_x = 0.5 * side + px;
    l.center_y = 0.5 * side + py;
    return l;
  }
  throw ValidationError("could not place lesion after 1000 attempts");
}

struct FramePlan {
  std::string frame_id;
  std::vector<LesionSpec> lesions;
  std::uint64_t seed = 0;
};

/// Renders one frame and returns the tight box of every lesion mask.
inline std::pair<ImageU8, std::vector<LesionBox>> render_frame(const FramePlan& plan,
                                                                const SynthConfig& cfg) {
  const int side = cfg.image_side;
  constexpr double kNoiseScale = 3.4641016151377544;  // sqrt(12)
  Rng rng(plan.seed);
  SmoothField lum(5, rng), hue(4, rng), folds(18, rng);
  const double base[3] = {0.78, 0.44, 0.32};
  const double hue_dir[3] = {0.04, 0.05, 0.02};
  const double lesion_core[3] = {0.93, 0.86, 0.64};
  const double lesion_rim[3] = {0.62, 0.18, 0.16};
  std::vector<SmoothField> textures;
  for (std::size_t i = 0; i < plan.lesions.size(); ++i) textures.emplace_back(7, rng);

  ImageTensor img(side, side);
  std::vector<LesionBox> boxes(plan.lesions.size(),
                               LesionBox{side, side, 0, 0});
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      const double u = (x + 0.5) / side, v = (y + 0.5) / side;
      const double du = u - 0.5, dv = v - 0.5;
      const double vignette = 1.0 - 0.9 * (du * du + dv * dv);
      const double l = 1.0 + cfg.background_variation * (lum.at(u, v) + 0.5 * folds.at(u, v));
      const double h = hue.at(u, v);
      double px[3];
      for (int c = 0; c < 3; ++c) px[c] = (base[c] + hue_dir[c] * h) * l * vignette;
      for (std::size_t i = 0; i < plan.lesions.size(); ++i) {
        const LesionSpec& les = plan.lesions[i];
        if (std::abs(x + 0.5 - les.center_x) > les.semi_major + 1.0 ||
            std::abs(y + 0.5 - les.center_y) > les.semi_major + 1.0) {
          continue;
        }
        const double rho = les.rho(x + 0.5, y + 0.5);
        if (rho >= 1.0) continue;
        LesionBox& b = boxes[i];
        b.x_min = std::min(b.x_min, x);
        b.y_min = std::min(b.y_min, y);
        b.x_max = std::max(b.x_max, x + 1);
        b.y_max = std::max(b.y_max, y + 1);
        const double tex = 0.75 + 0.25 * textures[i].at(u, v);
        const double edge = std::min(1.0, (1.0 - rho) * 6.0);
        const double weight = cfg.contrast * tex * edge;
        const double* target = rho < 0.7 ? lesion_core : lesion_rim;
        for (int c = 0; c < 3; ++c) px[c] += weight * (target[c] * vignette - px[c]);
      }
      // Zero-mean uniform noise with standard deviation pixel_noise; one
      // 64-bit draw feeds all three channels.
      const std::uint64_t bits = rng();
      for (int c = 0; c < 3; ++c) {
        const double u = static_cast<double>((bits >> (21 * c)) & 0x1fffff) * 0x1p-21 - 0.5;
        img.at(c, y, x) =
            static_cast<float>(std::clamp(px[c] + kNoiseScale * cfg.pixel_noise * u, 0.0, 1.0));
      }
    }
  }
  for (const auto& b : boxes) {
    if (b.x_min >= b.x_max) throw ValidationError("lesion " + plan.frame_id + " covers no pixel");
  }
  return {to_u8(img), boxes};
}

}  // namespace detail

/// Generates patients, frames and exact lesion boxes; deterministic per seed.
/// Frames are rendered from per-frame seeds, so the result does not depend on
/// `cfg.workers`.
inline SynthDataset generate_dataset(const SynthConfig& cfg) {
  cfg.validate();
  Rng plan_rng(derive_seed(cfg.seed, 0x5a17));
  const int n_patients = cfg.ulcer_patients + cfg.non_ulcer_patients;
  const int positives_per_patient = std::max(
      1, static_cast<int>(std::lround(cfg.positive_fraction * cfg.frames_per_patient)));

  SynthDataset ds;
  std::vector<std::vector<detail::FramePlan>> plans(n_patients);
  std::uint64_t lesion_counter = 0;
  for (int p = 0; p < n_patients; ++p) {
    char pid[16];
    std::snprintf(pid, sizeof(pid), "P%03d", p);
    const bool ulcer = p < cfg.ulcer_patients;
    std::vector<int> order(cfg.frames_per_patient);
    for (int i = 0; i < cfg.frames_per_patient; ++i) order[i] = i;
    shuffle(order.begin(), order.end(), plan_rng);
    std::vector<bool> positive(cfg.frames_per_patient, false);
    if (ulcer) {
      for (int i = 0; i < std::min(positives_per_patient, cfg.frames_per_patient); ++i) {
        positive[order[i]] = true;
      }
    }
    PatientRecord rec{pid, {}};
    for (int f = 0; f < cfg.frames_per_patient; ++f) {
      char fid[32];
      std::snprintf(fid, sizeof(fid), "%s_F%03d", pid, f);
      detail::FramePlan plan{fid, {}, derive_seed(cfg.seed, 0xf4a3e, p, f)};
      if (positive[f]) {
        const int count = uniform01(plan_rng) < cfg.second_lesion_probability ? 2 : 1;
        for (int k = 0; k < count; ++k) {
          // Quota assignment keeps the large-lesion share exact for every seed.
          const auto before = static_cast<std::uint64_t>(lesion_counter * cfg.large_fraction);
          const auto after = static_cast<std::uint64_t>((lesion_counter + 1) * cfg.large_fraction);
          plan.lesions.push_back(detail::draw_lesion(after > before, cfg, plan_rng));
          ++lesion_counter;
        }
      }
      AnnotatedFrame frame;
      frame.frame_id = fid;
      frame.image_path = std::string("images/") + pid + "/" + fid + ".png";
      frame.label = positive[f] ? 1 : 0;
      rec.frames.push_back(std::move(frame));
      plans[p].push_back(std::move(plan));
    }
    ds.patients.push_back(std::move(rec));
  }

  std::vector<std::pair<int, int>> jobs;
  for (int p = 0; p < n_patients; ++p) {
    for (int f = 0; f < cfg.frames_per_patient; ++f) jobs.emplace_back(p, f);
  }
  const auto render = [&](std::size_t begin, std::size_t stride) {
    for (std::size_t j = begin; j < jobs.size(); j += stride) {
      const auto [p, f] = jobs[j];
      auto [image, boxes] = detail::render_frame(plans[p][f], cfg);
      AnnotatedFrame& frame = ds.patients[p].frames[f];
      frame.image = std::make_shared<const ImageU8>(std::move(image));
      frame.boxes = std::move(boxes);
    }
  };
  if (cfg.workers == 1) {
    render(0, 1);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(cfg.workers);
    for (int w = 0; w < cfg.workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          render(w, cfg.workers);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  ds.lesions.resize(n_patients);
  for (int p = 0; p < n_patients; ++p) {
    for (const auto& plan : plans[p]) ds.lesions[p].push_back(plan.lesions);
    for (const auto& f : ds.patients[p].frames) validate_frame(f);
  }
  const double share = small_lesion_share(ds.all_boxes(), cfg.image_side);
  if (share < 0.85) {
    throw ValidationError("lesion size distribution violates the 85%-small constraint (" +
                          std::to_string(share) + ")");
  }
  return ds;
}

/// Human-readable record of the generating configuration.
inline std::string describe(const SynthConfig& cfg) {
  std::ostringstream out;
  const auto d = [](double v) { return format_double(v); };
  out << "synth.ulcer_patients = " << cfg.ulcer_patients << '\n'
      << "synth.non_ulcer_patients = " << cfg.non_ulcer_patients << '\n'
      << "synth.frames_per_patient = " << cfg.frames_per_patient << '\n'
      << "synth.image_side = " << cfg.image_side << '\n'
      << "synth.positive_fraction = " << d(cfg.positive_fraction) << '\n'
      << "synth.second_lesion_probability = " << d(cfg.second_lesion_probability) << '\n'
      << "synth.small_radius_min = " << d(cfg.small_radius_min) << '\n'
      << "synth.small_radius_max = " << d(cfg.small_radius_max) << '\n'
      << "synth.large_radius_min = " << d(cfg.large_radius_min) << '\n'
      << "synth.large_radius_max = " << d(cfg.large_radius_max) << '\n'
      << "synth.large_fraction = " << d(cfg.large_fraction) << '\n'
      << "synth.contrast = " << d(cfg.contrast) << '\n'
      << "synth.background_variation = " << d(cfg.background_variation) << '\n'
      << "synth.pixel_noise = " << d(cfg.pixel_noise) << '\n'
      << "seed = " << cfg.seed << '\n';
  return out.str();
}

/// Writes images/<patient>/<frame>.png, manifest.tsv and dataset.meta under `dir`.
inline void write_dataset(const SynthDataset& ds, const SynthConfig& cfg,
                          const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::size_t frames = 0, positives = 0;
  for (const auto& p : ds.patients) {
    fs::create_directories(dir / "images" / p.patient_id);
    for (const auto& f : p.frames) {
      write_png(dir / f.image_path, *f.image);
      ++frames;
      positives += f.positive();
    }
  }
  write_manifest(ds.patients, dir / "manifest.tsv");
  std::ofstream meta(dir / "dataset.meta", std::ios::binary);
  if (!meta) throw RuntimeError("cannot write dataset.meta");
  meta << "#currilearn-dataset v1\n"
       << describe(cfg) << "patients = " << ds.patients.size() << '\n'
       << "frames = " << frames << '\n'
       << "positive_frames = " << positives << '\n'
       << "small_lesion_share = "
       << format_double(small_lesion_share(ds.all_boxes(), cfg.image_side)) << '\n';
}

/// Ground-truth scorer: 1 - eps for frames with a lesion box, eps otherwise,
/// optionally perturbed by Gaussian noise keyed on the frame id.
inline double oracle_score(const AnnotatedFrame& frame, double noise = 0.0,
                           std::uint64_t seed = 0) {
  constexpr double kEps = 0.01;
  double score = frame.boxes.empty() ? kEps : 1.0 - kEps;
  if (noise > 0.0) {
    Rng rng(derive_seed(seed, detail::fnv1a(frame.frame_id)));
    score = std::clamp(score + noise * normal01(rng), 0.0, 1.0);
  }
  return score;
}

}  // namespace currilearn
