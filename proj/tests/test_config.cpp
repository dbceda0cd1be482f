#include <gtest/gtest.h>

#include <cstdlib>

#include "support.hpp"

using namespace currilearn;

namespace {

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const ValidationError& e) {
    return e.what();
  }
  return "no error";
}

struct SeedEnvGuard {
  explicit SeedEnvGuard(const char* value) {
    if (value) {
      setenv("CURRILEARN_SEED", value, 1);
    } else {
      unsetenv("CURRILEARN_SEED");
    }
  }
  ~SeedEnvGuard() { unsetenv("CURRILEARN_SEED"); }
};

}  // namespace

TEST(Config, DefaultsBuildValidStructs) {
  const RunConfig c;
  EXPECT_NO_THROW(c.synth());
  EXPECT_NO_THROW(c.sampler());
  EXPECT_NO_THROW(c.augment());
  EXPECT_NO_THROW(c.model());
  EXPECT_NO_THROW(c.train());
  EXPECT_NO_THROW(c.curriculum());
  EXPECT_EQ(c.variant(), Variant::curric_5);
  EXPECT_EQ(c.eval().folds, 4);
  EXPECT_DOUBLE_EQ(c.eval().threshold, 0.5);
  EXPECT_DOUBLE_EQ(c.screen().hi, 0.8);
  EXPECT_DOUBLE_EQ(c.screen().med, 0.6);
  EXPECT_EQ(c.entry("run.seed").source, Provenance::default_value);
}

TEST(Config, SnapshotRoundTrips) {
  RunConfig a;
  a.merge_text("train.base_lr = 0.02\nmodel.widths = 4,8,16,32\n", "cfg");
  a.set("run.seed", "77", Provenance::flag);
  const std::string snap = a.snapshot();
  EXPECT_NE(snap.find("run.seed = 77  # flag"), std::string::npos);
  EXPECT_NE(snap.find("train.base_lr = 0.02  # file"), std::string::npos);
  EXPECT_NE(snap.find("train.epochs = 120  # default"), std::string::npos);

  RunConfig b;
  b.merge_text(snap, "snapshot");
  for (const auto* key : {"run.seed", "train.base_lr", "model.widths", "train.epochs",
                          "curriculum.stage_epochs", "screen.hi"}) {
    EXPECT_EQ(a.get(key), b.get(key)) << key;
  }
  EXPECT_EQ(b.model().widths, (std::vector<int>{4, 8, 16, 32}));
}

TEST(Config, UnknownKeyNamesLine) {
  RunConfig c;
  const auto msg = error_of([&] { c.merge_text("# comment\n\ntrain.epoch = 3\n", "x.cfg"); });
  EXPECT_EQ(msg.rfind("x.cfg:3:", 0), 0u) << msg;
  EXPECT_NE(msg.find("train.epoch"), std::string::npos);
  EXPECT_NE(error_of([&] { c.merge_text("train.epochs 3\n", "y"); }).find("y:1:"),
            std::string::npos);
  EXPECT_THROW(c.set("nope", "1", Provenance::flag), ValidationError);
  EXPECT_NE(error_of([&] { c.merge_file("/nonexistent/run.cfg"); }).find("/nonexistent/run.cfg"),
            std::string::npos);
}

TEST(Config, SeedEnvIsAFallbackOnly) {
  {
    SeedEnvGuard g("123");
    RunConfig c;
    c.apply_seed_env();
    EXPECT_EQ(c.seed(), 123u);
    EXPECT_EQ(c.entry("run.seed").source, Provenance::env);
  }
  {
    SeedEnvGuard g("123");
    RunConfig c;
    c.merge_text("run.seed = 5\n", "f");
    c.apply_seed_env();
    EXPECT_EQ(c.seed(), 5u);
  }
  {
    SeedEnvGuard g("abc");
    RunConfig c;
    EXPECT_THROW(c.apply_seed_env(), ValidationError);
  }
}

TEST(Config, LaterSourcesWin) {
  RunConfig c;
  c.merge_text("train.epochs = 30\ntrain.batch_size = 16\n", "file");
  c.set("train.epochs", "10", Provenance::flag);
  EXPECT_EQ(c.get_int("train.epochs"), 10);
  EXPECT_EQ(c.get_int("train.batch_size"), 16);
  EXPECT_EQ(c.entry("train.epochs").source, Provenance::flag);
}

TEST(Config, BadValuesRejected) {
  const auto with = [](const std::string& line) {
    RunConfig c;
    c.merge_text(line, "t");
    return c;
  };
  EXPECT_THROW(with("train.epochs = ten").train(), ValidationError);
  EXPECT_THROW(with("train.base_lr = -1").train(), ValidationError);
  EXPECT_THROW(with("model.widths = 8,,16").model(), ValidationError);
  EXPECT_THROW(with("model.residual = maybe").model(), ValidationError);
  EXPECT_THROW(with("curriculum.variant = CURRIC_3").variant(), ValidationError);
  EXPECT_THROW(with("screen.hi = 0.5").screen(), ValidationError);
  EXPECT_THROW(with("eval.threshold = 2").eval(), ValidationError);
  EXPECT_THROW(with("sampler.bin_count = 0").sampler(), ValidationError);
  EXPECT_THROW(with("data.negatives = some").negatives(), ValidationError);
  EXPECT_THROW(with("run.seed = -3").seed(), ValidationError);
  EXPECT_THROW(RunConfig().merge_text("train.epochs =\n", "t"), ValidationError);
}
