#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "currilearn/augment.hpp"
#include "currilearn/bounded_queue.hpp"
#include "currilearn/core.hpp"
#include "currilearn/error.hpp"
#include "currilearn/eval.hpp"
#include "currilearn/model.hpp"
#include "currilearn/rng.hpp"
#include "currilearn/sampler.hpp"

namespace currilearn {

/// Training strategies. RANDOM: any patch size every epoch. FULL: full frames
/// only. CURRIC_5: one scale bin per stage, small to large. CURRIC_2 merges the
/// first K-1 stages; CURRIC_4 merges the last two.
enum class Variant { random, full, curric_2, curric_4, curric_5 };

inline constexpr Variant kAllVariants[] = {Variant::random, Variant::full, Variant::curric_2,
                                           Variant::curric_4, Variant::curric_5};

inline const char* to_string(Variant v) {
  switch (v) {
    case Variant::random: return "RANDOM";
    case Variant::full: return "FULL";
    case Variant::curric_2: return "CURRIC_2";
    case Variant::curric_4: return "CURRIC_4";
    case Variant::curric_5: return "CURRIC_5";
  }
  return "?";
}

inline Variant parse_variant(const std::string& name) {
  for (Variant v : kAllVariants) {
    if (name == to_string(v)) return v;
  }
  throw ValidationError("unknown variant '" + name +
                        "' (valid: RANDOM, FULL, CURRIC_2, CURRIC_4, CURRIC_5)");
}

/// How RANDOM picks patch sizes: uniformly over diameters in [d_min, D], or by
/// first drawing a bin uniformly.
enum class RandomMode { size_uniform, bin_uniform };

inline RandomMode parse_random_mode(const std::string& s) {
  if (s == "size_uniform") return RandomMode::size_uniform;
  if (s == "bin_uniform") return RandomMode::bin_uniform;
  throw ValidationError("unknown random mode '" + s + "' (expected size_uniform or bin_uniform)");
}

inline const char* to_string(RandomMode m) {
  return m == RandomMode::size_uniform ? "size_uniform" : "bin_uniform";
}

struct CurriculumConfig {
  /// Epoch budget of each scale bin, in bin order; must sum to the epoch
  /// count. A zero budget skips that stage.
  std::vector<int> stage_epochs{20, 20, 20, 20, 40};
  /// 0 means one pass over the training frames per epoch.
  int samples_per_epoch = 0;
  RandomMode random_mode = RandomMode::size_uniform;
  NegativeSource negatives = NegativeSource::non_ulcer_patients;
  int workers = 1;
  /// Serial sampling and gradient accumulation on the calling thread. Off,
  /// a producer thread and `workers` threads are used; outputs are identical
  /// either way because every draw has its own derived seed.
  bool deterministic = false;
  int queue_capacity = 4;

  void validate(const TrainConfig& train, const ComplexityConfig& sampler) const {
    if (static_cast<int>(stage_epochs.size()) != sampler.bin_count) {
      throw ValidationError("curriculum.stage_epochs needs one entry per scale bin (" +
                            std::to_string(sampler.bin_count) + ")");
    }
    if (sampler.bin_count < 3) throw ValidationError("the variants need at least 3 scale bins");
    for (int e : stage_epochs) {
      if (e < 0) throw ValidationError("curriculum.stage_epochs entries must be non-negative");
    }
    if (std::accumulate(stage_epochs.begin(), stage_epochs.end(), 0) != train.epochs) {
      throw ValidationError("curriculum.stage_epochs must sum to train.epochs (" +
                            std::to_string(train.epochs) + ")");
    }
    if (samples_per_epoch < 0) throw ValidationError("curriculum.samples_per_epoch must be >= 0");
    if (workers < 1) throw ValidationError("workers must be positive");
    if (queue_capacity < 1) throw ValidationError("curriculum.queue_capacity must be positive");
  }
};

struct EpochPlan {
  int epoch = 0;
  std::vector<int> stages;
  double lr = 0.0;
};

struct SchedulePlan {
  Variant variant = Variant::curric_5;
  std::vector<EpochPlan> epochs;

  const EpochPlan& at(int epoch) const {
    if (epoch < 1 || epoch > static_cast<int>(epochs.size())) {
      throw ValidationError("epoch " + std::to_string(epoch) + " outside schedule");
    }
    return epochs[epoch - 1];
  }
};

/// Per-epoch allowed stage sets and learning rates for a variant. Merged
/// stages keep the summed epoch budget of their members.
inline SchedulePlan build_schedule(Variant variant, const CurriculumConfig& cur,
                                   const TrainConfig& train, const ComplexityConfig& sampler) {
  train.validate();
  sampler.validate();
  cur.validate(train, sampler);
  const int k = sampler.bin_count;
  std::vector<int> all(k);
  std::iota(all.begin(), all.end(), 1);

  // Groups of bins, each trained for the sum of its members' budgets.
  std::vector<std::vector<int>> groups;
  switch (variant) {
    case Variant::random: groups = {all}; break;
    case Variant::full: groups = {{k}}; break;
    case Variant::curric_5:
      for (int s = 1; s <= k; ++s) groups.push_back({s});
      break;
    case Variant::curric_2:
      groups = {std::vector<int>(all.begin(), all.end() - 1), {k}};
      break;
    case Variant::curric_4:
      for (int s = 1; s <= k - 2; ++s) groups.push_back({s});
      groups.push_back({k - 1, k});
      break;
  }

  SchedulePlan plan;
  plan.variant = variant;
  const bool single = groups.size() == 1;
  for (const auto& g : groups) {
    const int budget = single ? train.epochs : [&] {
      int b = 0;
      for (int s : g) b += cur.stage_epochs[s - 1];
      return b;
    }();
    for (int i = 0; i < budget; ++i) {
      const int epoch = static_cast<int>(plan.epochs.size()) + 1;
      plan.epochs.push_back({epoch, g, lr_at(epoch, train)});
    }
  }
  return plan;
}

/// One drawn training patch, as recorded in the sampling log.
struct SampleRecord {
  int epoch = 0;
  int iteration = 0;
  int slot = 0;
  std::string frame_id;
  int label = 0;
  /// Stage drawn from the epoch's allowed set; 0 for size-uniform RANDOM draws.
  int stage_requested = 0;
  /// Bin of the patch actually used (after any escalation).
  int stage_used = 0;
  DiscPatch disc;
  double r = 0.0;
  double alpha = 0.0;
  bool escalated = false;
};

struct EpochMetrics {
  int epoch = 0;
  std::vector<int> stages;
  double lr = 0.0;
  double mean_loss = 0.0;
  std::optional<double> val_accuracy;
  std::optional<double> val_auc;
  std::size_t samples_drawn = 0;
  std::size_t infeasible_escalations = 0;
};

struct TrainingData {
  std::vector<AnnotatedFrame> positives;
  std::vector<AnnotatedFrame> negatives;
  /// Optional held-out frames scored at the end of every epoch.
  std::vector<AnnotatedFrame> validation;

  static TrainingData from_patients(const std::vector<PatientRecord>& patients,
                                    NegativeSource source) {
    LabeledPools pools = labeled_pools(patients, source);
    return {std::move(pools.positives), std::move(pools.negatives), {}};
  }
};

struct RunHooks {
  std::function<void(const EpochMetrics&)> on_epoch;
  std::function<void(const SampleRecord&)> on_sample;
  const std::atomic<bool>* cancel = nullptr;
};

struct TrainingResult {
  ClassifierState<float> state;
  std::vector<EpochMetrics> metrics;
  std::size_t iterations = 0;
  std::size_t escalations = 0;
};

namespace detail {

struct Batch {
  std::vector<TrainingSample> samples;
  std::vector<SampleRecord> records;
};

struct BatchContext {
  const SchedulePlan& plan;
  const TrainingData& data;
  const ComplexityConfig& sampler;
  const AugmentConfig& augment;
  const CurriculumConfig& cur;
  std::uint64_t seed;
  int batch_size;
};

inline void draw_sample(const BatchContext& ctx, int epoch, int iteration, int slot,
                        TrainingSample& sample, SampleRecord& rec) {
  Rng rng(derive_seed(ctx.seed, 0x5a3, epoch, iteration, slot));
  // Alternate classes so every batch is balanced 1:1.
  const bool positive = slot % 2 == 0;
  const auto& pool = positive ? ctx.data.positives : ctx.data.negatives;
  const AnnotatedFrame& frame = pool[uniform_index(rng, pool.size())];
  const int side = frame.side();
  const auto& allowed = ctx.plan.at(epoch).stages;
  const int k = ctx.sampler.bin_count;

  std::optional<DiscPatch> disc;
  int requested = 0;
  bool escalated = false;
  if (ctx.plan.variant == Variant::random && ctx.cur.random_mode == RandomMode::size_uniform) {
    const double s = side;
    disc = sample_disc_in_range(frame.boxes, s, ctx.sampler.d_min_ratio * s, s,
                                ctx.sampler.max_attempts, rng, [](const DiscPatch&) { return true; });
    if (!disc) {
      disc = DiscPatch::full_image(side);
      escalated = true;
    }
  } else {
    int stage = allowed[uniform_index(rng, allowed.size())];
    requested = stage;
    disc = sample_disc(frame.boxes, side, stage, ctx.sampler, rng);
    while (!disc) {
      // Lesions do not fit this bin: move up to the smallest bin that holds them.
      escalated = true;
      ++stage;
      disc = sample_disc(frame.boxes, side, stage, ctx.sampler, rng);
      if (stage >= k && !disc) disc = DiscPatch::full_image(side);
    }
  }
  rec.epoch = epoch;
  rec.iteration = iteration;
  rec.slot = slot;
  rec.frame_id = frame.frame_id;
  rec.label = frame.label;
  rec.stage_requested = requested;
  rec.disc = *disc;
  rec.r = scale_complexity(*disc, side);
  rec.stage_used = stage_of(std::clamp(rec.r, ctx.sampler.d_min_ratio, 1.0), ctx.sampler);
  rec.escalated = escalated;
  sample.label = frame.label;
  sample.image = augment_pipeline(crop_square(*frame.image, *disc), rng, ctx.augment, &rec.alpha);
}

inline Batch produce_batch(const BatchContext& ctx, int epoch, int iteration, int workers) {
  Batch b;
  b.samples.resize(ctx.batch_size);
  b.records.resize(ctx.batch_size);
  if (workers <= 1) {
    for (int i = 0; i < ctx.batch_size; ++i) {
      draw_sample(ctx, epoch, iteration, i, b.samples[i], b.records[i]);
    }
    return b;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (int i = w; i < ctx.batch_size; i += workers) {
          draw_sample(ctx, epoch, iteration, i, b.samples[i], b.records[i]);
        }
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return b;
}

}  // namespace detail

/// Full-frame score of a trained classifier.
inline Scorer model_scorer(const ClassifierState<float>& state, const AugmentConfig& augment) {
  return [&state, augment](const AnnotatedFrame& f) {
    if (!f.image) throw RuntimeError("frame " + f.frame_id + " has no pixels loaded");
    return predict(state, full_frame_input(*f.image, augment));
  };
}

/// Runs the staged schedule: each iteration draws a class-balanced batch of
/// fresh patches, one per slot, from a stage picked uniformly among the
/// epoch's allowed stages, augments them and takes one SGD step. Patches are
/// sampled online and never reused, so a stage change leaves earlier, smaller
/// patches behind.
inline TrainingResult run_training(const SchedulePlan& plan, const TrainingData& data,
                                   const Architecture& arch, const TrainConfig& train,
                                   const ComplexityConfig& sampler, const AugmentConfig& augment,
                                   const CurriculumConfig& cur, const RunHooks& hooks = {}) {
  train.validate();
  sampler.validate();
  augment.validate();
  cur.validate(train, sampler);
  arch.validate();
  if (arch.input_side != augment.input_side) {
    throw ValidationError("model input side differs from augment.input_side");
  }
  if (static_cast<int>(plan.epochs.size()) != train.epochs) {
    throw ValidationError("schedule length differs from train.epochs");
  }
  if (data.positives.empty() || data.negatives.empty()) {
    throw ValidationError("training data needs at least one positive and one negative frame");
  }

  TrainingResult result;
  result.state = init_classifier<float>(arch, derive_seed(train.seed, 0x1));
  const std::size_t train_frames = data.positives.size() + data.negatives.size();
  const std::size_t per_epoch =
      cur.samples_per_epoch > 0 ? static_cast<std::size_t>(cur.samples_per_epoch) : train_frames;
  const int batch = train.batch_size;
  const int iterations = static_cast<int>((per_epoch + batch - 1) / batch);
  const detail::BatchContext ctx{plan, data, sampler, augment, cur, train.seed, batch};

  std::vector<ImageTensor> val_inputs;
  for (const auto& f : data.validation) val_inputs.push_back(full_frame_input(*f.image, augment));
  const bool validate_each_epoch = [&] {
    bool pos = false, neg = false;
    for (const auto& f : data.validation) (f.positive() ? pos : neg) = true;
    return pos && neg;
  }();

  const bool threaded = !cur.deterministic && cur.workers > 1;
  const int sample_workers = cur.deterministic ? 1 : cur.workers;
  const int total_iterations = train.epochs * iterations;
  BoundedQueue<detail::Batch> queue(static_cast<std::size_t>(cur.queue_capacity));
  std::exception_ptr producer_error;
  std::thread producer;
  if (threaded) {
    producer = std::thread([&] {
      try {
        for (int it = 0; it < total_iterations; ++it) {
          if (!queue.push(detail::produce_batch(ctx, it / iterations + 1, it % iterations,
                                                sample_workers))) {
            return;
          }
        }
      } catch (...) {
        producer_error = std::current_exception();
      }
      queue.close();
    });
  }
  struct Joiner {
    BoundedQueue<detail::Batch>& q;
    std::thread& t;
    ~Joiner() {
      q.close();
      if (t.joinable()) t.join();
    }
  } joiner{queue, producer};

  TrainConfig step_cfg = train;
  step_cfg.workers = cur.deterministic ? 1 : cur.workers;
  for (int epoch = 1; epoch <= train.epochs; ++epoch) {
    const EpochPlan& ep = plan.at(epoch);
    EpochMetrics m;
    m.epoch = epoch;
    m.stages = ep.stages;
    m.lr = ep.lr;
    double loss_sum = 0.0;
    for (int it = 0; it < iterations; ++it) {
      if (hooks.cancel && hooks.cancel->load()) throw Interrupted();
      detail::Batch b;
      if (threaded) {
        auto next = queue.pop();
        if (!next) {
          if (producer_error) std::rethrow_exception(producer_error);
          throw RuntimeError("sample producer stopped early");
        }
        b = std::move(*next);
      } else {
        b = detail::produce_batch(ctx, epoch, it, sample_workers);
      }
      for (const auto& rec : b.records) {
        m.infeasible_escalations += rec.escalated;
        if (hooks.on_sample) hooks.on_sample(rec);
      }
      m.samples_drawn += b.samples.size();
      loss_sum += train_step(result.state, b.samples, ep.lr, step_cfg);
      ++result.iterations;
    }
    m.mean_loss = loss_sum / iterations;
    if (validate_each_epoch) {
      std::vector<ScoredFrame> scored;
      for (std::size_t i = 0; i < val_inputs.size(); ++i) {
        scored.push_back({data.validation[i].frame_id, data.validation[i].label,
                          predict(result.state, val_inputs[i])});
      }
      m.val_accuracy = accuracy(scored);
      m.val_auc = auc(scored);
    }
    result.escalations += m.infeasible_escalations;
    result.metrics.push_back(m);
    if (hooks.on_epoch) hooks.on_epoch(m);
  }
  return result;
}

/// Leave-one-fold-out cross-validation: train a fresh model on the other
/// folds, test on the held-out fold's class-balanced split.
inline EvalReport cross_validate(const std::vector<PatientRecord>& patients, const FoldSplit& split,
                                 Variant variant, const Architecture& arch,
                                 const TrainConfig& train, const ComplexityConfig& sampler,
                                 const AugmentConfig& augment, const CurriculumConfig& cur,
                                 double threshold, std::uint64_t balance_seed,
                                 const RunHooks& hooks = {}) {
  const SchedulePlan plan = build_schedule(variant, cur, train, sampler);
  EvalReport report;
  report.subject = to_string(variant);
  report.threshold = threshold;
  report.balance_seed = balance_seed;
  for (int fold = 0; fold < split.fold_count; ++fold) {
    const auto test_patients = select_fold(patients, split, fold);
    const auto train_patients = select_fold(patients, split, fold, /*invert=*/true);
    std::vector<AnnotatedFrame> test;
    TrainingData data;
    try {
      test = balanced_test_set(test_patients, cur.negatives, derive_seed(balance_seed, fold));
      data = TrainingData::from_patients(train_patients, cur.negatives);
      if (data.positives.empty() || data.negatives.empty()) {
        throw ValidationError("training folds lack positive or negative frames");
      }
    } catch (const ValidationError& e) {
      throw ValidationError("fold " + std::to_string(fold) + ": " + e.what());
    }
    TrainConfig fold_train = train;
    fold_train.seed = derive_seed(train.seed, 0xc5, fold);
    const TrainingResult trained =
        run_training(plan, data, arch, fold_train, sampler, augment, cur, hooks);
    const auto scored = score_frames(test, model_scorer(trained.state, augment));
    report.folds.push_back(
        {fold, accuracy(scored, threshold), auc(scored), test.size() / 2, test.size() / 2});
  }
  report.finalize();
  return report;
}

}  // namespace currilearn
