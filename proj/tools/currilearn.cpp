#include <CLI11.hpp>
#include <json.hpp>

#include <atomic>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "currilearn/currilearn.hpp"

namespace fs = std::filesystem;
using namespace currilearn;
using ordered_json = nlohmann::ordered_json;

namespace {

std::atomic<bool> g_cancel{false};

extern "C" void on_sigint(int) { g_cancel.store(true); }

struct CommonOptions {
  std::string config_path;
  std::string out;
  bool force = false;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  bool deterministic = false;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config_path, "flat section.key = value config file");
  cmd->add_option("--out", o.out, "output directory")->required();
  cmd->add_flag("--force", o.force, "replace an existing output directory");
  cmd->add_option("--seed", o.seed, "run seed (falls back to CURRILEARN_SEED)");
  cmd->add_option("--workers", o.workers, "worker threads")->check(CLI::PositiveNumber);
  cmd->add_flag("--deterministic", o.deterministic, "serial sampling on one thread");
  cmd->add_option("--set", o.overrides, "override a config key: section.key=value");
}

/// Defaults, then the config file, then flags, then the seed environment fallback.
RunConfig build_config(const CommonOptions& o,
                       const std::vector<std::pair<std::string, std::string>>& flag_values) {
  RunConfig cfg;
  if (!o.config_path.empty()) {
    if (!fs::exists(o.config_path)) throw ValidationError("config file not found: " + o.config_path);
    cfg.merge_file(o.config_path);
  }
  for (const auto& kv : o.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ValidationError("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1), Provenance::flag);
  }
  for (const auto& [key, value] : flag_values) cfg.set(key, value, Provenance::flag);
  if (o.seed) cfg.set("run.seed", std::to_string(*o.seed), Provenance::flag);
  if (o.workers) cfg.set("run.workers", std::to_string(*o.workers), Provenance::flag);
  if (o.deterministic) cfg.set("curriculum.deterministic", "true", Provenance::flag);
  cfg.apply_seed_env();
  return cfg;
}

void prepare_out_dir(const fs::path& out, bool force) {
  if (fs::exists(out)) {
    if (!force) {
      throw ValidationError("output " + out.string() + " already exists (use --force to replace it)");
    }
    fs::remove_all(out);
  }
  fs::create_directories(out);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw RuntimeError("cannot write " + path.string());
}

fs::path manifest_file(const std::string& arg) {
  fs::path p(arg);
  if (fs::is_directory(p)) p /= "manifest.tsv";
  if (!fs::exists(p)) throw ValidationError("manifest not found: " + p.string());
  return p;
}

std::vector<PatientRecord> load_dataset(const fs::path& manifest) {
  auto records = load_manifest(manifest);
  load_images(records, manifest.parent_path());
  return records;
}

std::string stage_set(const std::vector<int>& stages) {
  std::string s = "{";
  for (std::size_t i = 0; i < stages.size(); ++i) s += (i ? "," : "") + std::to_string(stages[i]);
  return s + "}";
}

void echo_schedule(const SchedulePlan& plan, std::ostream& out) {
  std::size_t i = 0;
  while (i < plan.epochs.size()) {
    std::size_t j = i;
    while (j < plan.epochs.size() && plan.epochs[j].stages == plan.epochs[i].stages) ++j;
    out << "schedule: epochs " << plan.epochs[i].epoch << "-" << plan.epochs[j - 1].epoch
        << " stages " << stage_set(plan.epochs[i].stages) << '\n';
    i = j;
  }
}

std::string metrics_line(const EpochMetrics& m) {
  ordered_json j;
  j["epoch"] = m.epoch;
  j["stage_set"] = m.stages;
  j["lr"] = m.lr;
  j["mean_loss"] = m.mean_loss;
  j["val_accuracy"] = m.val_accuracy ? ordered_json(*m.val_accuracy) : ordered_json(nullptr);
  j["val_auc"] = m.val_auc ? ordered_json(*m.val_auc) : ordered_json(nullptr);
  j["samples_drawn"] = m.samples_drawn;
  j["infeasible_escalations"] = m.infeasible_escalations;
  return j.dump();
}

std::string sample_line(const SampleRecord& r) {
  std::string s;
  s += std::to_string(r.epoch) + '\t' + std::to_string(r.iteration) + '\t' +
       std::to_string(r.slot) + '\t' + r.frame_id + '\t' + std::to_string(r.label) + '\t' +
       std::to_string(r.stage_requested) + '\t' + std::to_string(r.stage_used) + '\t' +
       format_fixed(r.disc.center_x, 3) + '\t' + format_fixed(r.disc.center_y, 3) + '\t' +
       format_fixed(r.disc.diameter, 3) + '\t' + format_double(r.r) + '\t' +
       format_fixed(r.alpha, 3) + '\t' + (r.escalated ? "1" : "0") + '\n';
  return s;
}

constexpr const char* kSamplingHeader =
    "epoch\titeration\tslot\tframe_id\tlabel\tstage_requested\tstage_used\tcenter_x\tcenter_y\t"
    "diameter\tr\talpha\tescalated\n";

/// Fold split shared by train hold-outs, eval and screen.
FoldSplit dataset_split(const std::vector<PatientRecord>& patients, const RunConfig& cfg) {
  return split_folds(patients, cfg.eval().folds, derive_seed(cfg.seed(), 0xf01d));
}

int cmd_synth(const CommonOptions& o) {
  const RunConfig cfg = build_config(o, {});
  const SynthConfig sc = cfg.synth();
  const fs::path out(o.out);
  prepare_out_dir(out, o.force);
  write_text(out / "config.snapshot", cfg.snapshot());
  const SynthDataset ds = generate_dataset(sc);
  write_dataset(ds, sc, out);
  std::size_t frames = 0, positives = 0;
  for (const auto& p : ds.patients) {
    for (const auto& f : p.frames) {
      ++frames;
      positives += f.positive();
    }
  }
  std::cout << "synth: " << ds.patients.size() << " patients, " << frames << " frames, "
            << positives << " positive, written to " << out.string() << '\n';
  return 0;
}

int cmd_train(const CommonOptions& o, const std::string& manifest_arg,
              const std::optional<std::string>& variant, std::optional<int> holdout_fold) {
  std::vector<std::pair<std::string, std::string>> flags;
  if (variant) flags.emplace_back("curriculum.variant", *variant);
  const RunConfig cfg = build_config(o, flags);
  const Variant v = cfg.variant();
  const Architecture arch = cfg.model();
  const TrainConfig train = cfg.train();
  const ComplexityConfig sampler = cfg.sampler();
  const AugmentConfig augment = cfg.augment();
  const CurriculumConfig cur = cfg.curriculum();
  const SchedulePlan plan = build_schedule(v, cur, train, sampler);
  const fs::path manifest = manifest_file(manifest_arg);

  const fs::path out(o.out);
  prepare_out_dir(out, o.force);
  write_text(out / "config.snapshot", cfg.snapshot());

  const auto patients = load_dataset(manifest);
  TrainingData data;
  if (holdout_fold) {
    const FoldSplit split = dataset_split(patients, cfg);
    if (*holdout_fold < 0 || *holdout_fold >= split.fold_count) {
      throw ValidationError("--holdout-fold must lie in [0, " + std::to_string(split.fold_count) + ")");
    }
    data = TrainingData::from_patients(select_fold(patients, split, *holdout_fold, true), cur.negatives);
    data.validation = balanced_test_set(select_fold(patients, split, *holdout_fold), cur.negatives,
                                        derive_seed(cfg.seed(), *holdout_fold));
  } else {
    data = TrainingData::from_patients(patients, cur.negatives);
  }

  std::cout << "train: variant " << to_string(v) << ", " << data.positives.size()
            << " positive / " << data.negatives.size() << " negative training frames\n";
  echo_schedule(plan, std::cout);

  std::ofstream metrics(out / "metrics.log", std::ios::binary);
  std::ofstream sampling(out / "sampling.log", std::ios::binary);
  sampling << kSamplingHeader;
  RunHooks hooks;
  hooks.cancel = &g_cancel;
  hooks.on_sample = [&](const SampleRecord& r) { sampling << sample_line(r); };
  hooks.on_epoch = [&](const EpochMetrics& m) {
    metrics << metrics_line(m) << '\n';
    metrics.flush();
    sampling.flush();
    if (m.epoch == 1 || plan.at(m.epoch - 1).stages != m.stages) {
      std::cout << "epoch " << m.epoch << ": stages " << stage_set(m.stages) << ", lr "
                << format_double(m.lr) << '\n';
    }
    std::cout << "epoch " << m.epoch << " loss " << format_fixed(m.mean_loss, 4);
    if (m.val_auc) std::cout << " val_auc " << format_fixed(*m.val_auc, 4);
    std::cout << std::endl;
  };

  const auto previous = std::signal(SIGINT, on_sigint);
  struct Restore {
    decltype(previous) handler;
    ~Restore() { std::signal(SIGINT, handler); }
  } restore{previous};

  const TrainingResult result = run_training(plan, data, arch, train, sampler, augment, cur, hooks);
  save_checkpoint(result.state, out / "checkpoint.bin");
  std::cout << "train: " << result.iterations << " iterations, " << result.escalations
            << " stage escalations, checkpoint " << (out / "checkpoint.bin").string() << '\n';
  return 0;
}

int cmd_eval(const CommonOptions& o, const std::string& manifest_arg, bool oracle,
             const std::optional<std::string>& checkpoint, const std::optional<std::string>& variant,
             std::optional<double> threshold, std::optional<int> folds) {
  std::vector<std::pair<std::string, std::string>> flags;
  if (variant) flags.emplace_back("curriculum.variant", *variant);
  if (threshold) flags.emplace_back("eval.threshold", format_double(*threshold));
  if (folds) flags.emplace_back("eval.folds", std::to_string(*folds));
  const RunConfig cfg = build_config(o, flags);
  if (static_cast<int>(oracle) + static_cast<int>(checkpoint.has_value()) +
          static_cast<int>(variant.has_value()) != 1) {
    throw ValidationError("eval needs exactly one of --oracle, --checkpoint or --variant");
  }
  const EvalSettings es = cfg.eval();
  const NegativeSource negatives = cfg.negatives();
  std::optional<ClassifierState<float>> model;
  AugmentConfig augment = cfg.augment();
  if (checkpoint) {
    model = load_checkpoint(*checkpoint);
    augment.input_side = model->arch.input_side;
  }
  const fs::path manifest = manifest_file(manifest_arg);

  const fs::path out(o.out);
  prepare_out_dir(out, o.force);
  write_text(out / "config.snapshot", cfg.snapshot());

  const auto patients = load_dataset(manifest);
  const FoldSplit split = dataset_split(patients, cfg);
  EvalReport report;
  if (oracle) {
    report = evaluate_folds(patients, split, [](const AnnotatedFrame& f) { return oracle_score(f); },
                            "oracle", es.threshold, negatives, cfg.seed());
  } else if (checkpoint) {
    report = evaluate_folds(patients, split, model_scorer(*model, augment), *checkpoint,
                            es.threshold, negatives, cfg.seed());
  } else {
    RunHooks hooks;
    hooks.cancel = &g_cancel;
    report = cross_validate(patients, split, cfg.variant(), cfg.model(), cfg.train(), cfg.sampler(),
                            augment, cfg.curriculum(), es.threshold, cfg.seed(), hooks);
  }
  const std::string table = format_report_table(report);
  write_text(out / "report.txt", table);
  write_text(out / "report.jsonl", format_report_lines(report));
  std::cout << table;
  return 0;
}

int cmd_screen(const CommonOptions& o, const std::string& manifest_arg, bool oracle,
               const std::optional<std::string>& checkpoint, std::optional<double> hi,
               std::optional<double> med, std::optional<int> fold) {
  std::vector<std::pair<std::string, std::string>> flags;
  if (hi) flags.emplace_back("screen.hi", format_double(*hi));
  if (med) flags.emplace_back("screen.med", format_double(*med));
  const RunConfig cfg = build_config(o, flags);
  const TriageThresholds thresholds = cfg.screen();
  if (oracle == checkpoint.has_value()) {
    throw ValidationError("screen needs exactly one of --oracle or --checkpoint");
  }
  std::optional<ClassifierState<float>> model;
  AugmentConfig augment = cfg.augment();
  if (checkpoint) {
    model = load_checkpoint(*checkpoint);
    augment.input_side = model->arch.input_side;
  }
  const fs::path manifest = manifest_file(manifest_arg);

  const fs::path out(o.out);
  prepare_out_dir(out, o.force);
  write_text(out / "config.snapshot", cfg.snapshot());

  auto patients = load_dataset(manifest);
  if (fold) {
    const FoldSplit split = dataset_split(patients, cfg);
    if (*fold < 0 || *fold >= split.fold_count) {
      throw ValidationError("--fold must lie in [0, " + std::to_string(split.fold_count) + ")");
    }
    patients = select_fold(patients, split, *fold);
  }
  const Scorer scorer = oracle ? Scorer([](const AnnotatedFrame& f) { return oracle_score(f); })
                               : model_scorer(*model, augment);

  fs::create_directories(out / "triage");
  std::ostringstream summary;
  summary << "patient_id\tulcer\tframes\thigh\tmedium\tunflagged\tworkload_reduction\n";
  double reduction_sum = 0.0;
  std::size_t ulcer_patients = 0, ulcer_with_high = 0;
  for (const auto& p : patients) {
    if (g_cancel.load()) throw Interrupted();
    const TriageReport r = screen_patient(p, scorer, thresholds);
    write_text(out / "triage" / (p.patient_id + ".tsv"), format_triage(r));
    summary << p.patient_id << '\t' << (p.has_ulcer() ? 1 : 0) << '\t' << r.total() << '\t'
            << r.high.size() << '\t' << r.medium.size() << '\t' << r.unflagged.size() << '\t'
            << format_fixed(r.workload_reduction, 6) << '\n';
    reduction_sum += r.workload_reduction;
    if (p.has_ulcer()) {
      ++ulcer_patients;
      ulcer_with_high += !r.high.empty();
    }
  }
  if (patients.empty()) throw ValidationError("no patients to screen");
  const double mean_reduction = reduction_sum / static_cast<double>(patients.size());
  std::ostringstream tail;
  tail << "# thresholds hi=" << format_double(thresholds.hi) << " med=" << format_double(thresholds.med)
       << '\n'
       << "# ulcer patients with a high-tier frame: " << ulcer_with_high << "/" << ulcer_patients
       << '\n'
       << "# mean_workload_reduction: " << format_fixed(mean_reduction, 6) << '\n';
  write_text(out / "summary.tsv", summary.str() + tail.str());
  std::cout << tail.str();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Scale-curriculum training toolkit for lesion detection in endoscopy frames"};
  app.require_subcommand(1);

  CommonOptions synth_o, train_o, eval_o, screen_o;
  std::string train_manifest, eval_manifest, screen_manifest;
  std::optional<std::string> train_variant, eval_variant, eval_checkpoint, screen_checkpoint;
  std::optional<int> holdout_fold, eval_folds, screen_fold;
  std::optional<double> threshold, hi, med;
  bool eval_oracle = false, screen_oracle = false;

  auto* synth = app.add_subcommand("synth", "generate a synthetic annotated dataset");
  add_common(synth, synth_o);

  auto* train = app.add_subcommand("train", "train a classifier with a patch-scale schedule");
  add_common(train, train_o);
  train->add_option("--manifest", train_manifest, "manifest file or dataset directory")->required();
  train->add_option("--variant", train_variant, "RANDOM, FULL, CURRIC_2, CURRIC_4 or CURRIC_5");
  train->add_option("--holdout-fold", holdout_fold, "train on the other folds, validate on this one");

  auto* eval = app.add_subcommand("eval", "per-fold accuracy and AUC on balanced test splits");
  add_common(eval, eval_o);
  eval->add_option("--manifest", eval_manifest, "manifest file or dataset directory")->required();
  eval->add_flag("--oracle", eval_oracle, "score frames from their annotations");
  eval->add_option("--checkpoint", eval_checkpoint, "score frames with a trained checkpoint");
  eval->add_option("--variant", eval_variant, "cross-validate: train one model per fold");
  eval->add_option("--threshold", threshold, "decision threshold for accuracy");
  eval->add_option("--folds", eval_folds, "number of patient folds");

  auto* screen = app.add_subcommand("screen", "triage each patient's frames into review tiers");
  add_common(screen, screen_o);
  screen->add_option("--manifest", screen_manifest, "manifest file or dataset directory")->required();
  screen->add_flag("--oracle", screen_oracle, "score frames from their annotations");
  screen->add_option("--checkpoint", screen_checkpoint, "score frames with a trained checkpoint");
  screen->add_option("--hi", hi, "high-confidence threshold");
  screen->add_option("--med", med, "medium-confidence threshold");
  screen->add_option("--fold", screen_fold, "screen only the patients of this fold");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (synth->parsed()) return cmd_synth(synth_o);
    if (train->parsed()) return cmd_train(train_o, train_manifest, train_variant, holdout_fold);
    if (eval->parsed()) {
      return cmd_eval(eval_o, eval_manifest, eval_oracle, eval_checkpoint, eval_variant, threshold,
                      eval_folds);
    }
    if (screen->parsed()) {
      return cmd_screen(screen_o, screen_manifest, screen_oracle, screen_checkpoint, hi, med,
                        screen_fold);
    }
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
  return 1;
}
