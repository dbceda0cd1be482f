#include <gtest/gtest.h>

#include <cmath>

#include "support.hpp"

using namespace currilearn;
using testing_support::tiny_synth;

TEST(Synth, PatientCountsAndPositiveBoxes) {
  SynthConfig cfg = tiny_synth(5);
  cfg.ulcer_patients = 8;
  cfg.non_ulcer_patients = 2;
  const auto ds = generate_dataset(cfg);
  ASSERT_EQ(ds.patients.size(), 10u);
  int ulcer = 0;
  for (const auto& p : ds.patients) {
    ulcer += p.has_ulcer();
    EXPECT_EQ(p.frames.size(), 10u);
    for (const auto& f : p.frames) {
      EXPECT_EQ(f.positive(), !f.boxes.empty());
      EXPECT_EQ(f.side(), 96);
    }
  }
  EXPECT_EQ(ulcer, 8);
}

TEST(Synth, SmallLesionsDominate) {
  SynthConfig cfg = tiny_synth(11);
  cfg.ulcer_patients = 250;
  cfg.non_ulcer_patients = 0;
  cfg.frames_per_patient = 4;
  cfg.image_side = 64;
  cfg.positive_fraction = 1.0;
  cfg.small_radius_min = 0.05;
  cfg.small_radius_max = 0.08;
  cfg.large_radius_min = 0.12;
  cfg.large_radius_max = 0.2;
  const auto ds = generate_dataset(cfg);
  const auto boxes = ds.all_boxes();
  ASSERT_GE(boxes.size(), 1000u);
  EXPECT_GE(small_lesion_share(boxes, cfg.image_side), 0.85);
}

TEST(Synth, SameSeedSameOutputAcrossWorkerCounts) {
  SynthConfig a = tiny_synth(9);
  SynthConfig b = a;
  b.workers = 3;
  const auto da = generate_dataset(a);
  const auto db = generate_dataset(b);
  EXPECT_EQ(serialize_manifest(da.patients), serialize_manifest(db.patients));
  for (std::size_t p = 0; p < da.patients.size(); ++p) {
    for (std::size_t f = 0; f < da.patients[p].frames.size(); ++f) {
      EXPECT_EQ(*da.patients[p].frames[f].image, *db.patients[p].frames[f].image);
    }
  }
  const auto dc = generate_dataset(tiny_synth(10));
  EXPECT_NE(serialize_manifest(da.patients), serialize_manifest(dc.patients));
}

TEST(Synth, BoxesAreTightAroundLesionMasks) {
  const auto cfg = tiny_synth(4);
  const auto ds = generate_dataset(cfg);
  int checked = 0;
  for (std::size_t p = 0; p < ds.patients.size(); ++p) {
    for (std::size_t f = 0; f < ds.patients[p].frames.size(); ++f) {
      const auto& frame = ds.patients[p].frames[f];
      const auto& specs = ds.lesions[p][f];
      ASSERT_EQ(specs.size(), frame.boxes.size());
      for (std::size_t i = 0; i < specs.size(); ++i) {
        LesionBox tight{cfg.image_side, cfg.image_side, 0, 0};
        for (int y = 0; y < cfg.image_side; ++y) {
          for (int x = 0; x < cfg.image_side; ++x) {
            if (specs[i].rho(x + 0.5, y + 0.5) < 1.0) {
              tight.x_min = std::min(tight.x_min, x);
              tight.y_min = std::min(tight.y_min, y);
              tight.x_max = std::max(tight.x_max, x + 1);
              tight.y_max = std::max(tight.y_max, y + 1);
            }
          }
        }
        EXPECT_EQ(tight, frame.boxes[i]);
        ++checked;
      }
    }
  }
  EXPECT_GT(checked, 0);
}

TEST(Synth, LesionPixelsDifferFromBackground) {
  const auto cfg = tiny_synth(6);
  const auto ds = generate_dataset(cfg);
  double inside = 0.0, ring = 0.0;
  int n_in = 0, n_ring = 0;
  for (std::size_t p = 0; p < ds.patients.size(); ++p) {
    for (std::size_t f = 0; f < ds.patients[p].frames.size(); ++f) {
      const auto& img = *ds.patients[p].frames[f].image;
      for (const auto& les : ds.lesions[p][f]) {
        for (int y = 0; y < cfg.image_side; ++y) {
          for (int x = 0; x < cfg.image_side; ++x) {
            const double rho = les.rho(x + 0.5, y + 0.5);
            // Green channel: lesions are paler than the reddish mucosa.
            const double g = img.at(1, y, x);
            if (rho < 0.5) {
              inside += g;
              ++n_in;
            } else if (rho > 1.3 && rho < 2.0) {
              ring += g;
              ++n_ring;
            }
          }
        }
      }
    }
  }
  ASSERT_GT(n_in, 0);
  ASSERT_GT(n_ring, 0);
  EXPECT_GT(inside / n_in - ring / n_ring, 40.0);
}

TEST(Synth, OracleScores) {
  const auto ds = generate_dataset(tiny_synth());
  for (const auto& p : ds.patients) {
    for (const auto& f : p.frames) {
      EXPECT_DOUBLE_EQ(oracle_score(f), f.positive() ? 0.99 : 0.01);
      const double noisy = oracle_score(f, 0.2, 1);
      EXPECT_GE(noisy, 0.0);
      EXPECT_LE(noisy, 1.0);
      EXPECT_EQ(noisy, oracle_score(f, 0.2, 1));
    }
  }
}

TEST(Synth, WriteDatasetLayout) {
  const auto dir = testing_support::temp_dir("synth_layout");
  const auto cfg = tiny_synth();
  const auto ds = generate_dataset(cfg);
  write_dataset(ds, cfg, dir);
  EXPECT_TRUE(std::filesystem::exists(dir / "manifest.tsv"));
  const std::string meta = testing_support::read_file(dir / "dataset.meta");
  EXPECT_NE(meta.find("patients = 12"), std::string::npos);
  EXPECT_NE(meta.find("frames = 120"), std::string::npos);
  for (const auto& p : ds.patients) {
    for (const auto& f : p.frames) EXPECT_TRUE(std::filesystem::exists(dir / f.image_path));
  }
}

TEST(Synth, InvalidConfigRejected) {
  SynthConfig cfg = tiny_synth();
  cfg.ulcer_patients = 0;
  cfg.non_ulcer_patients = 0;
  EXPECT_THROW(generate_dataset(cfg), ValidationError);
  cfg = tiny_synth();
  cfg.positive_fraction = 1.5;
  EXPECT_THROW(generate_dataset(cfg), ValidationError);
}
