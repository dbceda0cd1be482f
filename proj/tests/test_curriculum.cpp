#include <gtest/gtest.h>

#include <atomic>

#include "support.hpp"

using namespace currilearn;

namespace {

using Table = std::vector<std::pair<int, std::vector<int>>>;  // (last epoch, stages)

/// Collapses a plan into runs of equal stage sets.
Table runs_of(const SchedulePlan& plan) {
  Table t;
  for (const auto& e : plan.epochs) {
    if (t.empty() || t.back().second != e.stages) {
      t.push_back({e.epoch, e.stages});
    } else {
      t.back().first = e.epoch;
    }
  }
  return t;
}

SchedulePlan default_plan(Variant v) {
  return build_schedule(v, CurriculumConfig{}, TrainConfig{}, ComplexityConfig{});
}

struct SmallRun {
  SynthDataset ds = generate_dataset(testing_support::tiny_synth());
  TrainingData data = TrainingData::from_patients(ds.patients, NegativeSource::non_ulcer_patients);
  Architecture arch;
  TrainConfig train;
  ComplexityConfig sampler;
  AugmentConfig augment;
  CurriculumConfig cur;

  SmallRun() {
    arch.input_side = 16;
    augment.input_side = 16;
    train.epochs = 5;
    train.lr_drop_epochs = {3};
    train.batch_size = 8;
    train.base_lr = 0.01;
    train.seed = 5;
    cur.stage_epochs = {1, 1, 1, 1, 1};
    cur.samples_per_epoch = 24;
  }
};

}  // namespace

TEST(Schedule, Curric5Table) {
  const auto plan = default_plan(Variant::curric_5);
  ASSERT_EQ(plan.epochs.size(), 120u);
  EXPECT_EQ(runs_of(plan), (Table{{20, {1}}, {40, {2}}, {60, {3}}, {80, {4}}, {120, {5}}}));
  EXPECT_EQ(plan.at(81).stages, std::vector<int>{5});
  EXPECT_EQ(plan.at(81).lr, 0.001);
}

TEST(Schedule, Curric2Table) {
  EXPECT_EQ(runs_of(default_plan(Variant::curric_2)), (Table{{80, {1, 2, 3, 4}}, {120, {5}}}));
}

TEST(Schedule, Curric4Table) {
  const auto plan = default_plan(Variant::curric_4);
  EXPECT_EQ(runs_of(plan), (Table{{20, {1}}, {40, {2}}, {60, {3}}, {120, {4, 5}}}));
  EXPECT_EQ(plan.at(100).stages, (std::vector<int>{4, 5}));
}

TEST(Schedule, RandomAndFullTables) {
  EXPECT_EQ(runs_of(default_plan(Variant::random)), (Table{{120, {1, 2, 3, 4, 5}}}));
  const auto full = default_plan(Variant::full);
  EXPECT_EQ(runs_of(full), (Table{{120, {5}}}));
  EXPECT_EQ(full.at(1).lr, 0.1);
}

TEST(Schedule, LearningRatesFollowTheStepSchedule) {
  for (Variant v : kAllVariants) {
    const auto plan = default_plan(v);
    for (const auto& e : plan.epochs) EXPECT_EQ(e.lr, lr_at(e.epoch, TrainConfig{}));
  }
}

TEST(Schedule, ReducedBudgets) {
  TrainConfig train;
  train.epochs = 30;
  train.lr_drop_epochs = {10, 20};
  CurriculumConfig cur;
  cur.stage_epochs = {5, 5, 5, 5, 10};
  const ComplexityConfig k;
  EXPECT_EQ(runs_of(build_schedule(Variant::curric_5, cur, train, k)),
            (Table{{5, {1}}, {10, {2}}, {15, {3}}, {20, {4}}, {30, {5}}}));
  EXPECT_EQ(runs_of(build_schedule(Variant::curric_4, cur, train, k)),
            (Table{{5, {1}}, {10, {2}}, {15, {3}}, {30, {4, 5}}}));
  EXPECT_EQ(runs_of(build_schedule(Variant::curric_2, cur, train, k)),
            (Table{{20, {1, 2, 3, 4}}, {30, {5}}}));
}

TEST(Schedule, BudgetsMustMatchEpochs) {
  CurriculumConfig cur;
  cur.stage_epochs = {20, 20, 20, 20, 20};
  EXPECT_THROW(build_schedule(Variant::curric_5, cur, TrainConfig{}, ComplexityConfig{}),
               ValidationError);
  cur.stage_epochs = {20, 20, 20, 60};
  EXPECT_THROW(build_schedule(Variant::curric_5, cur, TrainConfig{}, ComplexityConfig{}),
               ValidationError);
}

TEST(Variant, NamesRoundTripAndUnknownListsOptions) {
  for (Variant v : kAllVariants) EXPECT_EQ(parse_variant(to_string(v)), v);
  try {
    parse_variant("CURRIC_3");
    FAIL();
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    for (const char* name : {"RANDOM", "FULL", "CURRIC_2", "CURRIC_4", "CURRIC_5"}) {
      EXPECT_NE(msg.find(name), std::string::npos) << msg;
    }
  }
}

TEST(RunTraining, TwoEpochSmokeRun) {
  SmallRun run;
  run.train.epochs = 2;
  run.train.lr_drop_epochs = {};
  run.cur.stage_epochs = {1, 0, 0, 0, 1};
  run.cur.samples_per_epoch = 64;
  const auto plan = build_schedule(Variant::curric_5, run.cur, run.train, run.sampler);
  std::vector<int> epochs;
  RunHooks hooks;
  hooks.on_epoch = [&](const EpochMetrics& m) { epochs.push_back(m.epoch); };
  const auto result =
      run_training(plan, run.data, run.arch, run.train, run.sampler, run.augment, run.cur, hooks);
  EXPECT_EQ(epochs, (std::vector<int>{1, 2}));
  ASSERT_EQ(result.metrics.size(), 2u);
  EXPECT_EQ(result.metrics[0].samples_drawn, 64u);
  EXPECT_TRUE(std::isfinite(result.metrics[1].mean_loss));
  EXPECT_EQ(result.iterations, 16u);
}

TEST(RunTraining, BatchesAreBalancedAndStagesNeverGoBack) {
  SmallRun run;
  const auto plan = build_schedule(Variant::curric_5, run.cur, run.train, run.sampler);
  std::vector<SampleRecord> records;
  RunHooks hooks;
  hooks.on_sample = [&](const SampleRecord& r) { records.push_back(r); };
  run_training(plan, run.data, run.arch, run.train, run.sampler, run.augment, run.cur, hooks);
  ASSERT_EQ(records.size(), 5u * 24u);
  int positives = 0;
  for (const auto& r : records) {
    positives += r.label;
    const int stage = plan.at(r.epoch).stages.front();
    EXPECT_EQ(r.stage_requested, stage);
    // Escalation only moves up; stage 5 draws are full frames.
    EXPECT_GE(r.stage_used, stage);
    EXPECT_EQ(r.escalated, r.stage_used != stage);
    if (r.epoch == 5) EXPECT_EQ(r.r, 1.0);
  }
  EXPECT_EQ(positives, static_cast<int>(records.size()) / 2);
}

TEST(RunTraining, SameSeedSameTrajectory) {
  SmallRun run;
  const auto plan = build_schedule(Variant::curric_4, run.cur, run.train, run.sampler);
  const auto a = run_training(plan, run.data, run.arch, run.train, run.sampler, run.augment, run.cur);
  const auto b = run_training(plan, run.data, run.arch, run.train, run.sampler, run.augment, run.cur);
  EXPECT_EQ(a.state.parameters, b.state.parameters);
  ASSERT_EQ(a.metrics.size(), b.metrics.size());
  for (std::size_t i = 0; i < a.metrics.size(); ++i) {
    EXPECT_EQ(a.metrics[i].mean_loss, b.metrics[i].mean_loss);
  }
}

TEST(RunTraining, ThreadedPipelineMatchesSerial) {
  SmallRun run;
  const auto plan = build_schedule(Variant::random, run.cur, run.train, run.sampler);
  run.cur.deterministic = true;
  const auto serial =
      run_training(plan, run.data, run.arch, run.train, run.sampler, run.augment, run.cur);
  run.cur.deterministic = false;
  run.cur.workers = 3;
  const auto threaded =
      run_training(plan, run.data, run.arch, run.train, run.sampler, run.augment, run.cur);
  EXPECT_EQ(serial.state.parameters, threaded.state.parameters);
}

TEST(RunTraining, RandomSizeUniformCoversTheScaleRange) {
  SmallRun run;
  run.train.epochs = 5;
  run.cur.samples_per_epoch = 200;
  run.train.batch_size = 40;
  const auto plan = build_schedule(Variant::random, run.cur, run.train, run.sampler);
  std::vector<int> per_stage(6, 0);
  RunHooks hooks;
  hooks.on_sample = [&](const SampleRecord& r) {
    ASSERT_GE(r.r, 0.2);
    ASSERT_LE(r.r, 1.0);
    ++per_stage[r.stage_used];
  };
  run_training(plan, run.data, run.arch, run.train, run.sampler, run.augment, run.cur, hooks);
  for (int s = 1; s <= 4; ++s) EXPECT_GT(per_stage[s], 0) << "stage " << s;
}

TEST(RunTraining, CancellationStopsWithInterrupted) {
  SmallRun run;
  const auto plan = build_schedule(Variant::full, run.cur, run.train, run.sampler);
  std::atomic<bool> cancel{false};
  int seen = 0;
  RunHooks hooks;
  hooks.cancel = &cancel;
  hooks.on_epoch = [&](const EpochMetrics&) {
    if (++seen == 2) cancel = true;
  };
  EXPECT_THROW(
      run_training(plan, run.data, run.arch, run.train, run.sampler, run.augment, run.cur, hooks),
      Interrupted);
  EXPECT_EQ(seen, 2);
}

TEST(RunTraining, ValidationMetricsWhenHeldOutFramesGiven) {
  SmallRun run;
  run.data.validation = balanced_test_set(run.ds.patients, NegativeSource::non_ulcer_patients, 1);
  const auto plan = build_schedule(Variant::curric_2, run.cur, run.train, run.sampler);
  const auto result =
      run_training(plan, run.data, run.arch, run.train, run.sampler, run.augment, run.cur);
  for (const auto& m : result.metrics) {
    ASSERT_TRUE(m.val_auc.has_value());
    EXPECT_GE(*m.val_auc, 0.0);
    EXPECT_LE(*m.val_auc, 1.0);
  }
}

TEST(CrossValidate, ReportHasOneEntryPerFold) {
  SmallRun run;
  run.train.epochs = 5;
  const auto split = split_folds(run.ds.patients, 4, 2);
  const auto report = cross_validate(run.ds.patients, split, Variant::curric_5, run.arch, run.train,
                                     run.sampler, run.augment, run.cur, 0.5, 9);
  ASSERT_EQ(report.folds.size(), 4u);
  double sum = 0;
  for (const auto& f : report.folds) sum += f.auc;
  EXPECT_NEAR(report.mean_auc, sum / 4, 1e-12);
  EXPECT_EQ(report.subject, "CURRIC_5");
}
