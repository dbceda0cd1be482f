#pragma once

#include <charconv>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "currilearn/augment.hpp"
#include "currilearn/curriculum.hpp"
#include "currilearn/error.hpp"
#include "currilearn/eval.hpp"
#include "currilearn/format.hpp"
#include "currilearn/model.hpp"
#include "currilearn/sampler.hpp"
#include "currilearn/synthdata.hpp"

namespace currilearn {

enum class Provenance { default_value, file, env, flag };

inline const char* to_string(Provenance p) {
  switch (p) {
    case Provenance::file: return "file";
    case Provenance::env: return "env";
    case Provenance::flag: return "flag";
    default: return "default";
  }
}

/// Settings used by cross-validated evaluation and fold hold-outs.
struct EvalSettings {
  int folds = 4;
  double threshold = 0.5;
};

/// Flat `section.key = value` configuration. Every key is known up front with
/// its default; values remember where they came from.
class RunConfig {
 public:
  struct Entry {
    std::string value;
    Provenance source = Provenance::default_value;
  };

  RunConfig() {
    const SynthConfig s;
    const ComplexityConfig k;
    const AugmentConfig a;
    const Architecture m;
    const TrainConfig t;
    const CurriculumConfig c;
    const EvalSettings e;
    const TriageThresholds tr;
    const auto d = [](double v) { return format_double(v); };
    const auto i = [](auto v) { return std::to_string(v); };
    const auto list = [](const std::vector<int>& v) {
      std::string out;
      for (std::size_t j = 0; j < v.size(); ++j) out += (j ? "," : "") + std::to_string(v[j]);
      return out;
    };

    put("run.seed", "0");
    put("run.workers", "1");
    put("data.negatives", to_string(c.negatives));

    put("synth.ulcer_patients", i(s.ulcer_patients));
    put("synth.non_ulcer_patients", i(s.non_ulcer_patients));
    put("synth.frames_per_patient", i(s.frames_per_patient));
    put("synth.image_side", i(s.image_side));
    put("synth.positive_fraction", d(s.positive_fraction));
    put("synth.second_lesion_probability", d(s.second_lesion_probability));
    put("synth.small_radius_min", d(s.small_radius_min));
    put("synth.small_radius_max", d(s.small_radius_max));
    put("synth.large_radius_min", d(s.large_radius_min));
    put("synth.large_radius_max", d(s.large_radius_max));
    put("synth.large_fraction", d(s.large_fraction));
    put("synth.contrast", d(s.contrast));
    put("synth.background_variation", d(s.background_variation));
    put("synth.pixel_noise", d(s.pixel_noise));

    put("sampler.lambda", d(k.lambda));
    put("sampler.bin_count", i(k.bin_count));
    put("sampler.d_min_ratio", d(k.d_min_ratio));
    put("sampler.max_attempts", i(k.max_attempts));

    put("augment.rotation_range", d(a.rotation_range));
    put("augment.interpolation", to_string(a.interpolation));

    put("model.input_side", i(m.input_side));
    put("model.widths", list(m.widths));
    put("model.residual", m.residual ? "true" : "false");

    put("train.base_lr", d(t.base_lr));
    put("train.lr_drop_epochs", list(t.lr_drop_epochs));
    put("train.lr_drop_factor", d(t.lr_drop_factor));
    put("train.epochs", i(t.epochs));
    put("train.batch_size", i(t.batch_size));
    put("train.momentum", d(t.momentum));
    put("train.weight_decay", d(t.weight_decay));
    put("train.clip_norm", d(t.clip_norm));

    put("curriculum.variant", "CURRIC_5");
    put("curriculum.stage_epochs", list(c.stage_epochs));
    put("curriculum.samples_per_epoch", i(c.samples_per_epoch));
    put("curriculum.random_mode", to_string(c.random_mode));
    put("curriculum.deterministic", c.deterministic ? "true" : "false");
    put("curriculum.queue_capacity", i(c.queue_capacity));

    put("eval.folds", i(e.folds));
    put("eval.threshold", d(e.threshold));

    put("screen.hi", d(tr.hi));
    put("screen.med", d(tr.med));
  }

  bool has(const std::string& key) const { return entries_.count(key) != 0; }

  const Entry& entry(const std::string& key) const {
    const auto it = entries_.find(key);
    if (it == entries_.end()) throw ValidationError("unknown config key '" + key + "'");
    return it->second;
  }

  const std::string& get(const std::string& key) const { return entry(key).value; }

  void set(const std::string& key, const std::string& value, Provenance source) {
    const auto it = entries_.find(key);
    if (it == entries_.end()) throw ValidationError("unknown config key '" + key + "'");
    it->second = {value, source};
  }

  /// Applies `section.key = value` lines; '#' starts a comment.
  void merge_text(std::string_view text, const std::string& source_name) {
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
      const std::size_t eol = std::min(text.find('\n', pos), text.size());
      std::string line(text.substr(pos, eol - pos));
      pos = eol + 1;
      ++line_no;
      if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      const std::string trimmed = trim(line);
      if (trimmed.empty()) continue;
      const auto where = source_name + ":" + std::to_string(line_no) + ": ";
      const auto eq = trimmed.find('=');
      if (eq == std::string::npos) throw ValidationError(where + "expected 'key = value'");
      const std::string key = trim(trimmed.substr(0, eq));
      const std::string value = trim(trimmed.substr(eq + 1));
      if (!has(key)) throw ValidationError(where + "unknown key '" + key + "'");
      if (value.empty()) throw ValidationError(where + "empty value for '" + key + "'");
      set(key, value, Provenance::file);
    }
  }

  void merge_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot read config file " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    merge_text(buf.str(), path.string());
  }

  /// CURRILEARN_SEED fills run.seed unless a file or flag already set it.
  void apply_seed_env() {
    const char* env = std::getenv("CURRILEARN_SEED");
    if (env == nullptr || entry("run.seed").source != Provenance::default_value) return;
    std::uint64_t v = 0;
    if (!parse_u64(env, v)) {
      throw ValidationError(std::string("CURRILEARN_SEED is not an unsigned integer: '") + env + "'");
    }
    set("run.seed", env, Provenance::env);
  }

  /// Every effective value with its source; loads back through merge_text.
  std::string snapshot() const {
    std::ostringstream out;
    out << "# currilearn effective configuration\n";
    std::string section;
    for (const auto& [key, e] : entries_) {
      const std::string sec = key.substr(0, key.find('.'));
      if (sec != section) {
        if (!section.empty()) out << '\n';
        section = sec;
      }
      out << key << " = " << e.value << "  # " << to_string(e.source) << '\n';
    }
    return out.str();
  }

  std::int64_t get_int(const std::string& key) const {
    std::int64_t v = 0;
    const std::string& s = get(key);
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc() || r.ptr != s.data() + s.size()) bad(key, "an integer");
    return v;
  }

  std::uint64_t get_u64(const std::string& key) const {
    std::uint64_t v = 0;
    if (!parse_u64(get(key), v)) bad(key, "an unsigned integer");
    return v;
  }

  double get_double(const std::string& key) const {
    const std::string& s = get(key);
    double v = 0.0;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc() || r.ptr != s.data() + s.size()) bad(key, "a number");
    return v;
  }

  bool get_bool(const std::string& key) const {
    const std::string& s = get(key);
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    bad(key, "true or false");
  }

  std::vector<int> get_int_list(const std::string& key) const {
    std::vector<int> out;
    const std::string& s = get(key);
    std::size_t pos = 0;
    while (pos <= s.size()) {
      const std::size_t comma = std::min(s.find(',', pos), s.size());
      const std::string item = trim(s.substr(pos, comma - pos));
      int v = 0;
      const auto r = std::from_chars(item.data(), item.data() + item.size(), v);
      if (item.empty() || r.ec != std::errc() || r.ptr != item.data() + item.size()) {
        bad(key, "a comma-separated integer list");
      }
      out.push_back(v);
      pos = comma + 1;
    }
    return out;
  }

  int get_int32(const std::string& key) const {
    const auto v = get_int(key);
    if (v < INT32_MIN || v > INT32_MAX) bad(key, "a 32-bit integer");
    return static_cast<int>(v);
  }

  std::uint64_t seed() const { return get_u64("run.seed"); }
  int workers() const { return get_int32("run.workers"); }
  NegativeSource negatives() const { return parse_negative_source(get("data.negatives")); }

  SynthConfig synth() const {
    SynthConfig s;
    s.ulcer_patients = get_int32("synth.ulcer_patients");
    s.non_ulcer_patients = get_int32("synth.non_ulcer_patients");
    s.frames_per_patient = get_int32("synth.frames_per_patient");
    s.image_side = get_int32("synth.image_side");
    s.positive_fraction = get_double("synth.positive_fraction");
    s.second_lesion_probability = get_double("synth.second_lesion_probability");
    s.small_radius_min = get_double("synth.small_radius_min");
    s.small_radius_max = get_double("synth.small_radius_max");
    s.large_radius_min = get_double("synth.large_radius_min");
    s.large_radius_max = get_double("synth.large_radius_max");
    s.large_fraction = get_double("synth.large_fraction");
    s.contrast = get_double("synth.contrast");
    s.background_variation = get_double("synth.background_variation");
    s.pixel_noise = get_double("synth.pixel_noise");
    s.seed = seed();
    s.workers = workers();
    s.validate();
    return s;
  }

  ComplexityConfig sampler() const {
    ComplexityConfig k;
    k.lambda = get_double("sampler.lambda");
    k.bin_count = get_int32("sampler.bin_count");
    k.d_min_ratio = get_double("sampler.d_min_ratio");
    k.max_attempts = get_int32("sampler.max_attempts");
    k.validate();
    return k;
  }

  AugmentConfig augment() const {
    AugmentConfig a;
    a.input_side = get_int32("model.input_side");
    a.rotation_range = get_double("augment.rotation_range");
    a.interpolation = parse_interpolation(get("augment.interpolation"));
    a.validate();
    return a;
  }

  Architecture model() const {
    Architecture m;
    m.input_side = get_int32("model.input_side");
    m.widths = get_int_list("model.widths");
    m.residual = get_bool("model.residual");
    m.validate();
    return m;
  }

  TrainConfig train() const {
    TrainConfig t;
    t.base_lr = get_double("train.base_lr");
    t.lr_drop_epochs = get_int_list("train.lr_drop_epochs");
    t.lr_drop_factor = get_double("train.lr_drop_factor");
    t.epochs = get_int32("train.epochs");
    t.batch_size = get_int32("train.batch_size");
    t.momentum = get_double("train.momentum");
    t.weight_decay = get_double("train.weight_decay");
    t.clip_norm = get_double("train.clip_norm");
    t.seed = seed();
    t.workers = workers();
    t.validate();
    return t;
  }

  Variant variant() const { return parse_variant(get("curriculum.variant")); }

  CurriculumConfig curriculum() const {
    CurriculumConfig c;
    c.stage_epochs = get_int_list("curriculum.stage_epochs");
    c.samples_per_epoch = get_int32("curriculum.samples_per_epoch");
    c.random_mode = parse_random_mode(get("curriculum.random_mode"));
    c.negatives = negatives();
    c.deterministic = get_bool("curriculum.deterministic");
    c.queue_capacity = get_int32("curriculum.queue_capacity");
    c.workers = workers();
    c.validate(train(), sampler());
    return c;
  }

  EvalSettings eval() const {
    EvalSettings e;
    e.folds = get_int32("eval.folds");
    e.threshold = get_double("eval.threshold");
    if (e.folds < 2) throw ValidationError("eval.folds must be at least 2");
    if (!(e.threshold >= 0.0 && e.threshold <= 1.0)) {
      throw ValidationError("eval.threshold must lie in [0,1]");
    }
    return e;
  }

  TriageThresholds screen() const {
    TriageThresholds t{get_double("screen.hi"), get_double("screen.med")};
    t.validate();
    return t;
  }

 private:
  void put(const std::string& key, const std::string& value) { entries_[key] = {value, {}}; }

  [[noreturn]] void bad(const std::string& key, const char* expected) const {
    throw ValidationError("config key " + key + " = '" + get(key) + "' is not " + expected);
  }

  static bool parse_u64(std::string_view s, std::uint64_t& out) {
    const auto r = std::from_chars(s.data(), s.data() + s.size(), out);
    return !s.empty() && r.ec == std::errc() && r.ptr == s.data() + s.size();
  }

  static std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
  }

  std::map<std::string, Entry> entries_;
};

}  // namespace currilearn
