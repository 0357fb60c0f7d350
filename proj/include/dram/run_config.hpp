#pragma once

// JSON run configuration shared by every CLI command, plus run manifests.

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "dram/binary_io.hpp"
#include "dram/errors.hpp"
#include "dram/metrics.hpp"
#include "dram/model.hpp"
#include "dram/random.hpp"
#include "dram/skeleton.hpp"
#include "dram/synth.hpp"
#include "dram/trainer.hpp"

namespace dram {

using Json = nlohmann::ordered_json;

inline constexpr std::string_view kToolName = "dram";
inline constexpr std::string_view kToolVersion = "1.0.0";

/// Where the sequences come from: an existing DYADSET1 file or inline generation.
struct DatasetSection {
  std::optional<std::string> path;
  std::optional<SynthConfig> synth;
  std::size_t sequences = 0;
  std::optional<std::string> skeleton;
  std::array<double, 3> split{0.8, 0.1, 0.1};
};

struct ModelSection {
  Variant variant = Variant::Dram;
  BackboneSpec backbone;
  ModelDims dims;
  ModelOptions options;
};

struct EvalSection {
  std::vector<double> sigmas = default_sigma_grid();
  std::string out_dir = "out";
  std::size_t max_frames = 0;
  std::optional<std::string> checkpoint;
};

struct ExperimentSection {
  std::vector<Variant> variants{kAllVariants.begin(), kAllVariants.end()};
  std::size_t seeds = 3;
};

struct RunConfig {
  std::uint64_t seed = 0;
  bool has_dataset = false;
  bool has_model = false;
  DatasetSection dataset;
  ModelSection model;
  TrainerConfig trainer;
  EvalSection eval;
  ExperimentSection experiment;

  SkeletonTopology topology() const {
    return dataset.skeleton ? SkeletonTopology::load(*dataset.skeleton) : SkeletonTopology::upper_body();
  }
  std::uint64_t synth_seed() const {
    return dataset.synth && dataset.synth->seed ? dataset.synth->seed : derive_seed(seed, "synth");
  }
  std::uint64_t split_seed() const { return derive_seed(seed, "split"); }
  std::uint64_t model_seed(Variant v, std::size_t run) const {
    return derive_seed(seed, "model-" + std::string(variant_key(v)) + "-" + std::to_string(run));
  }
  std::uint64_t trainer_seed(Variant v, std::size_t run) const {
    return derive_seed(seed, "trainer-" + std::string(variant_key(v)) + "-" + std::to_string(run));
  }
  SynthConfig resolved_synth() const {
    SynthConfig s = dataset.synth.value_or(SynthConfig{});
    s.topology = topology();
    s.seed = synth_seed();
    return s;
  }

  Json to_json() const;
};

namespace cfg_detail {

/// Reads one JSON object, collecting every problem instead of stopping at the first.
class Reader {
 public:
  Reader(const Json& j, std::string path, std::vector<std::string>& errors)
      : j_(j), path_(std::move(path)), errors_(errors) {
    if (!j_.is_object()) error("", "expected an object");
  }
  ~Reader() {
    if (!j_.is_object()) return;
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) errors_.push_back(where(k) + ": unknown field");
  }
  Reader(const Reader&) = delete;
  Reader& operator=(const Reader&) = delete;

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.is_object() && j_.contains(key);
  }
  const Json* get(const std::string& key, bool required = false) {
    if (has(key)) return &j_.at(key);
    if (required) error(key, "missing required field");
    return nullptr;
  }
  std::string where(const std::string& key) const {
    if (key.empty()) return path_.empty() ? "<root>" : path_;
    return path_.empty() ? key : path_ + "." + key;
  }
  void error(const std::string& key, const std::string& msg) { errors_.push_back(where(key) + ": " + msg); }

  template <class T>
  void number(const std::string& key, T& out, bool required = false) {
    const Json* v = get(key, required);
    if (!v) return;
    if constexpr (std::is_floating_point_v<T>) {
      if (!v->is_number()) return error(key, "expected a number");
      out = v->get<T>();
    } else {
      if (!v->is_number_integer() || (v->is_number_integer() && !v->is_number_unsigned() && v->get<long long>() < 0)) {
        return error(key, "expected a non-negative integer");
      }
      out = static_cast<T>(v->get<unsigned long long>());
    }
  }
  void boolean(const std::string& key, bool& out) {
    const Json* v = get(key);
    if (!v) return;
    if (!v->is_boolean()) return error(key, "expected true or false");
    out = v->get<bool>();
  }
  std::optional<std::string> string(const std::string& key, bool required = false) {
    const Json* v = get(key, required);
    if (!v) return std::nullopt;
    if (!v->is_string()) {
      error(key, "expected a string");
      return std::nullopt;
    }
    return v->get<std::string>();
  }
  template <class T>
  void numbers(const std::string& key, std::vector<T>& out) {
    const Json* v = get(key);
    if (!v) return;
    if (!v->is_array()) return error(key, "expected an array of numbers");
    std::vector<T> tmp;
    for (const auto& e : *v) {
      if (!e.is_number() || (std::is_integral_v<T> && !e.is_number_unsigned())) {
        return error(key, std::is_integral_v<T> ? "expected an array of non-negative integers" : "expected an array of numbers");
      }
      tmp.push_back(e.get<T>());
    }
    out = std::move(tmp);
  }
  std::vector<std::string> strings(const std::string& key, bool& present) {
    std::vector<std::string> out;
    const Json* v = get(key);
    present = v != nullptr;
    if (!v) return out;
    if (!v->is_array()) {
      error(key, "expected an array of strings");
      return out;
    }
    for (const auto& e : *v) {
      if (!e.is_string()) {
        error(key, "expected an array of strings");
        return {};
      }
      out.push_back(e.get<std::string>());
    }
    return out;
  }

 private:
  const Json& j_;
  std::string path_;
  std::vector<std::string>& errors_;
  std::set<std::string> seen_;
};

inline std::string resolve_path(const std::string& p, const std::filesystem::path& base) {
  std::filesystem::path fp(p);
  if (fp.is_relative()) fp = base / fp;
  return fp.lexically_normal().string();
}

inline void read_synth(const Json& j, SynthConfig& s, std::size_t& sequences, std::vector<std::string>& errors) {
  Reader r(j, "dataset.synth", errors);
  r.number("sequences", sequences, true);
  r.number("duration", s.duration);
  r.number("a", s.a);
  r.number("p", s.p);
  r.number("g_intra", s.g_intra);
  r.number("g_inter", s.g_inter);
  r.number("event_rate", s.event_rate);
  r.number("reaction_lag", s.reaction_lag);
  r.number("noise_scale", s.noise_scale);
  r.number("min_event_seconds", s.min_event_seconds);
  r.number("max_event_seconds", s.max_event_seconds);
  r.number("emphasis_rate", s.emphasis_rate);
  r.number("beat_amplitude", s.beat_amplitude);
  r.number("nod_amplitude", s.nod_amplitude);
  r.number("switch_amplitude", s.switch_amplitude);
  r.number("seed", s.seed);
  if (r.has("human_seed")) {
    std::uint64_t h = 0;
    r.number("human_seed", h);
    s.human_seed = h;
  }
  bool present = false;
  const auto kinds = r.strings("event_kinds", present);
  if (present) {
    s.event_kinds.clear();
    for (const auto& k : kinds) {
      if (auto e = parse_event(k)) {
        s.event_kinds.push_back(*e);
      } else {
        r.error("event_kinds", "unknown event kind '" + k + "'");
      }
    }
  }
  if (r.has("sequences") && sequences == 0) r.error("sequences", "must be at least 1");
}

}  // namespace cfg_detail

/// Parses and validates a run configuration. Relative paths resolve against
/// `base_dir`. Throws ConfigError naming every offending field.
inline RunConfig parse_run_config(const Json& j, const std::filesystem::path& base_dir = ".") {
  using cfg_detail::Reader;
  std::vector<std::string> errors;
  RunConfig c;
  {
    Reader root(j, "", errors);
    root.number("seed", c.seed, true);

    if (const Json* d = root.get("dataset")) {
      c.has_dataset = true;
      Reader r(*d, "dataset", errors);
      if (auto p = r.string("path")) c.dataset.path = cfg_detail::resolve_path(*p, base_dir);
      if (auto p = r.string("skeleton")) c.dataset.skeleton = cfg_detail::resolve_path(*p, base_dir);
      if (const Json* s = r.get("synth")) {
        SynthConfig sc;
        cfg_detail::read_synth(*s, sc, c.dataset.sequences, errors);
        c.dataset.synth = sc;
      }
      std::vector<double> split;
      r.numbers("split", split);
      if (r.has("split")) {
        if (split.size() != 3) {
          r.error("split", "expected three ratios (train, validation, test)");
        } else {
          c.dataset.split = {split[0], split[1], split[2]};
        }
      }
      if (c.dataset.path && c.dataset.synth) r.error("", "give either 'path' or 'synth', not both");
      if (!c.dataset.path && !c.dataset.synth) r.error("", "one of 'path' or 'synth' is required");
      double sum = 0.0;
      for (double x : c.dataset.split) {
        if (!(x > 0.0)) r.error("split", "ratios must be positive");
        sum += x;
      }
      if (std::fabs(sum - 1.0) > 1e-9) r.error("split", "ratios must sum to 1");
      if (c.dataset.path && !std::filesystem::exists(*c.dataset.path)) {
        r.error("path", "file not found: " + *c.dataset.path);
      }
      if (c.dataset.skeleton && !std::filesystem::exists(*c.dataset.skeleton)) {
        r.error("skeleton", "file not found: " + *c.dataset.skeleton);
      }
    }

    std::optional<std::size_t> model_a, model_p;
    if (const Json* m = root.get("model")) {
      c.has_model = true;
      Reader r(*m, "model", errors);
      if (auto v = r.string("variant")) {
        if (auto pv = parse_variant(*v)) {
          c.model.variant = *pv;
        } else {
          r.error("variant", "unknown variant '" + *v + "'");
        }
      }
      if (auto b = r.string("backbone")) {
        if (auto pb = parse_backbone(*b)) {
          c.model.backbone.kind = *pb;
        } else {
          r.error("backbone", "unknown backbone '" + *b + "' (expected tcn or lstm)");
        }
      }
      if (const Json* t = r.get("tcn")) {
        Reader tr(*t, "model.tcn", errors);
        tr.number("kernel_size", c.model.backbone.tcn.kernel_size);
        tr.number("hidden", c.model.backbone.tcn.hidden_channels);
        tr.numbers("dilations", c.model.backbone.tcn.dilations);
        tr.boolean("residual", c.model.backbone.tcn.residual);
      }
      if (const Json* l = r.get("lstm")) {
        Reader lr(*l, "model.lstm", errors);
        lr.number("hidden", c.model.backbone.lstm.hidden);
        lr.number("layers", c.model.backbone.lstm.layers);
      }
      if (r.has("a")) {
        std::size_t a = 0;
        r.number("a", a);
        model_a = a;
      }
      if (r.has("p")) {
        std::size_t p = 0;
        r.number("p", p);
        model_p = p;
      }
      r.number("k", c.model.dims.history);
      r.boolean("detach_attention", c.model.options.detach_attention);
      r.boolean("zm_includes_current", c.model.options.zm_includes_current);
    }

    if (const Json* t = root.get("trainer")) {
      Reader r(*t, "trainer", errors);
      if (auto o = r.string("optimizer")) {
        if (auto po = parse_optimizer(*o)) {
          c.trainer.optimizer.kind = *po;
        } else {
          r.error("optimizer", "unknown optimizer '" + *o + "' (expected adam or sgd)");
        }
      }
      r.number("learning_rate", c.trainer.optimizer.learning_rate);
      r.number("clip_norm", c.trainer.optimizer.clip_norm);
      r.number("batch_size", c.trainer.batch_size);
      r.number("epochs", c.trainer.epochs);
      r.number("tf_start", c.trainer.tf_start);
      r.number("tf_end", c.trainer.tf_end);
      r.number("tf_decay_epochs", c.trainer.tf_decay_epochs);
      r.number("chunk_length", c.trainer.chunk_length);
      r.number("chunks_per_epoch", c.trainer.chunks_per_epoch);
      r.number("validation_frames", c.trainer.validation_frames);
      try {
        c.trainer.validate();
      } catch (const ConfigError& e) {
        errors.push_back(e.what());
      }
    }

    if (const Json* e = root.get("eval")) {
      Reader r(*e, "eval", errors);
      r.numbers("sigmas", c.eval.sigmas);
      for (double s : c.eval.sigmas)
        if (!(s > 0.0)) r.error("sigmas", "every threshold must be > 0");
      if (c.eval.sigmas.empty()) r.error("sigmas", "must not be empty");
      if (auto o = r.string("out_dir")) c.eval.out_dir = cfg_detail::resolve_path(*o, base_dir);
      r.number("max_frames", c.eval.max_frames);
      if (auto p = r.string("checkpoint")) c.eval.checkpoint = cfg_detail::resolve_path(*p, base_dir);
    }

    if (const Json* x = root.get("experiment")) {
      Reader r(*x, "experiment", errors);
      bool present = false;
      const auto names = r.strings("variants", present);
      if (present) {
        c.experiment.variants.clear();
        for (const auto& n : names) {
          if (auto v = parse_variant(n)) {
            c.experiment.variants.push_back(*v);
          } else {
            r.error("variants", "unknown variant '" + n + "'");
          }
        }
        if (names.empty()) r.error("variants", "must not be empty");
      }
      r.number("seeds", c.experiment.seeds);
      if (c.experiment.seeds == 0) r.error("seeds", "must be at least 1");
    }

    // Cross-section consistency.
    SkeletonTopology topo = SkeletonTopology::upper_body();
    if (c.dataset.skeleton && std::filesystem::exists(*c.dataset.skeleton)) {
      try {
        topo = SkeletonTopology::load(*c.dataset.skeleton);
      } catch (const std::exception& ex) {
        errors.push_back(std::string("dataset.skeleton: ") + ex.what());
      }
    }
    std::optional<std::size_t> data_a, data_p;
    if (c.dataset.synth) {
      SynthConfig s = *c.dataset.synth;
      s.topology = topo;
      try {
        s.validate();
      } catch (const ConfigError& ex) {
        errors.push_back(std::string("dataset.synth: ") + ex.what());
      }
      data_a = s.a;
      data_p = s.p;
    } else if (c.dataset.path && std::filesystem::exists(*c.dataset.path)) {
      try {
        const std::string head = read_file(*c.dataset.path).substr(0, kDatasetHeaderBytes);
        ByteReader hr(head);
        const std::string magic = hr.bytes(8, "magic");
        if (magic != kDatasetMagic) throw FormatError("dataset: bad magic string", 0);
        data_a = hr.u32("a");
        data_p = hr.u32("p");
      } catch (const std::exception& ex) {
        errors.push_back("dataset.path: " + std::string(ex.what()));
      }
    }
    c.model.dims.audio = model_a.value_or(data_a.value_or(c.model.dims.audio));
    c.model.dims.pose = model_p.value_or(data_p.value_or(c.model.dims.pose));
    if (data_a && c.model.dims.audio != *data_a) {
      errors.push_back("model.a: " + std::to_string(c.model.dims.audio) + " does not match dataset a=" +
                       std::to_string(*data_a));
    }
    if (data_p && c.model.dims.pose != *data_p) {
      errors.push_back("model.p: " + std::to_string(c.model.dims.pose) + " does not match dataset p=" +
                       std::to_string(*data_p));
    }
    if (c.has_model) {
      try {
        PoseModel probe(c.model.variant, c.model.backbone, c.model.dims, 0, c.model.options);
      } catch (const std::invalid_argument& ex) {
        errors.push_back(std::string("model: ") + ex.what());
      }
    }
  }
  if (!errors.empty()) {
    std::string msg = "invalid configuration:";
    for (const auto& e : errors) msg += "\n  " + e;
    throw ConfigError(msg);
  }
  return c;
}

inline Json RunConfig::to_json() const {
  Json j;
  j["seed"] = seed;
  if (has_dataset) {
    Json d;
    if (dataset.path) d["path"] = *dataset.path;
    if (dataset.skeleton) d["skeleton"] = *dataset.skeleton;
    if (dataset.synth) {
      const SynthConfig& s = *dataset.synth;
      Json sj;
      sj["sequences"] = dataset.sequences;
      sj["duration"] = s.duration;
      sj["a"] = s.a;
      sj["p"] = s.p;
      sj["g_intra"] = s.g_intra;
      sj["g_inter"] = s.g_inter;
      sj["event_rate"] = s.event_rate;
      Json kinds = Json::array();
      for (EventKind k : s.event_kinds) kinds.push_back(std::string(event_name(k)));
      sj["event_kinds"] = kinds;
      sj["reaction_lag"] = s.reaction_lag;
      sj["noise_scale"] = s.noise_scale;
      sj["min_event_seconds"] = s.min_event_seconds;
      sj["max_event_seconds"] = s.max_event_seconds;
      sj["emphasis_rate"] = s.emphasis_rate;
      sj["beat_amplitude"] = s.beat_amplitude;
      sj["nod_amplitude"] = s.nod_amplitude;
      sj["switch_amplitude"] = s.switch_amplitude;
      sj["seed"] = s.seed;
      if (s.human_seed) sj["human_seed"] = *s.human_seed;
      d["synth"] = sj;
    }
    d["split"] = dataset.split;
    j["dataset"] = d;
  }
  if (has_model) {
    Json m;
    m["variant"] = std::string(variant_key(model.variant));
    m["backbone"] = std::string(backbone_name(model.backbone.kind));
    m["tcn"] = {{"kernel_size", model.backbone.tcn.kernel_size},
                {"hidden", model.backbone.tcn.hidden_channels},
                {"dilations", model.backbone.tcn.dilations},
                {"residual", model.backbone.tcn.residual}};
    m["lstm"] = {{"hidden", model.backbone.lstm.hidden}, {"layers", model.backbone.lstm.layers}};
    m["a"] = model.dims.audio;
    m["p"] = model.dims.pose;
    m["k"] = model.dims.history;
    m["detach_attention"] = model.options.detach_attention;
    m["zm_includes_current"] = model.options.zm_includes_current;
    j["model"] = m;
  }
  j["trainer"] = {{"optimizer", std::string(optimizer_name(trainer.optimizer.kind))},
                  {"learning_rate", trainer.optimizer.learning_rate},
                  {"clip_norm", trainer.optimizer.clip_norm},
                  {"batch_size", trainer.batch_size},
                  {"epochs", trainer.epochs},
                  {"tf_start", trainer.tf_start},
                  {"tf_end", trainer.tf_end},
                  {"tf_decay_epochs", trainer.tf_decay_epochs},
                  {"chunk_length", trainer.chunk_length},
                  {"chunks_per_epoch", trainer.chunks_per_epoch},
                  {"validation_frames", trainer.validation_frames}};
  Json e = {{"sigmas", eval.sigmas}, {"out_dir", eval.out_dir}, {"max_frames", eval.max_frames}};
  if (eval.checkpoint) e["checkpoint"] = *eval.checkpoint;
  j["eval"] = e;
  Json vs = Json::array();
  for (Variant v : experiment.variants) vs.push_back(std::string(variant_key(v)));
  j["experiment"] = {{"variants", vs}, {"seeds", experiment.seeds}};
  return j;
}

/// Loads a config file, or the config snapshot inside a run manifest.
inline RunConfig load_run_config(const std::string& path) {
  const std::string text = read_file(path);
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("cannot parse " + path + ": " + e.what());
  }
  const auto base = std::filesystem::absolute(path).parent_path();
  if (j.is_object() && j.contains("tool") && j.contains("config")) return parse_run_config(j.at("config"), base);
  return parse_run_config(j, base);
}

/// Record of one command run; enough to reproduce it with `--config manifest.json`.
class RunManifest {
 public:
  RunManifest(std::string command, const RunConfig& cfg) {
    j_["tool"] = std::string(kToolName);
    j_["version"] = std::string(kToolVersion);
    j_["command"] = std::move(command);
    j_["config"] = cfg.to_json();
    j_["seeds"] = Json::object();
    j_["inputs"] = Json::array();
    j_["artifacts"] = Json::array();
  }

  void seed(const std::string& name, std::uint64_t value) { j_["seeds"][name] = value; }
  void input(const std::string& path) { j_["inputs"].push_back(entry(path)); }
  void artifact(const std::string& path) { j_["artifacts"].push_back(entry(path)); }
  const Json& json() const { return j_; }

  void write(const std::string& path) const { write_file_atomic(path, j_.dump(2) + "\n"); }

 private:
  static Json entry(const std::string& path) {
    const std::string data = read_file(path);
    return {{"path", path}, {"bytes", data.size()}, {"fnv1a64", hex64(fnv1a64(data))}};
  }
  Json j_;
};

}  // namespace dram
