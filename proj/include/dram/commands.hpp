#pragma once

// The five CLI commands as library functions. Each validates before it
// creates any output and ends by writing a manifest.

#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "dram/checkpoint.hpp"
#include "dram/gradcheck_suite.hpp"
#include "dram/run_config.hpp"

namespace dram {

enum class LogLevel { Quiet = 0, Error, Info, Debug };

/// Verbosity from DRAM_LOG (quiet, error, info, debug); info when unset.
inline LogLevel log_level() {
  const char* v = std::getenv("DRAM_LOG");
  if (!v) return LogLevel::Info;
  const std::string s(v);
  if (s == "quiet" || s == "0") return LogLevel::Quiet;
  if (s == "error") return LogLevel::Error;
  if (s == "debug") return LogLevel::Debug;
  return LogLevel::Info;
}

inline void log(LogLevel lvl, const std::string& msg) {
  static const LogLevel level = log_level();
  if (lvl != LogLevel::Quiet && lvl <= level) std::cerr << "[dram] " << msg << '\n';
}

struct LoadedData {
  Dataset dataset;
  SkeletonTopology topology;
  DatasetSplit split;
  std::optional<std::string> input_path;
};

inline LoadedData load_data(const RunConfig& c, bool split = true) {
  if (!c.has_dataset) throw ConfigError("invalid configuration:\n  dataset: missing required section");
  LoadedData d;
  d.topology = c.topology();
  if (c.dataset.path) {
    d.dataset = read_dataset(*c.dataset.path);
    d.input_path = *c.dataset.path;
  } else {
    const SynthConfig sc = c.resolved_synth();
    d.dataset.a = sc.a;
    d.dataset.p = sc.p;
    d.dataset.frame_rate = static_cast<std::uint32_t>(kFrameRate);
    d.dataset.sequences = generate_corpus(sc, c.dataset.sequences);
  }
  if (split) d.split = make_split(d.dataset.sequences.size(), c.dataset.split, c.split_seed());
  return d;
}

inline void record_data(RunManifest& m, const RunConfig& c, const LoadedData& d) {
  if (d.input_path) m.input(*d.input_path);
  if (c.dataset.synth) m.seed("synth", c.synth_seed());
  m.seed("split", c.split_seed());
}

inline std::filesystem::path prepare_out(const std::string& dir) {
  std::filesystem::create_directories(dir);
  return std::filesystem::path(dir);
}

// ---------------------------------------------------------------------------
// Tables.

inline const std::vector<std::string>& ape_columns() {
  static const std::vector<std::string> c = {"Avg.", "Torso", "Head", "Neck", "RArm", "LArm", "RWrist", "LWrist"};
  return c;
}

struct TableRow {
  std::string label;
  MetricsReport report;
};

inline std::string ape_table(const std::vector<TableRow>& rows) {
  std::size_t w = 8;
  for (const auto& r : rows) w = std::max(w, r.label.size() + 2);
  std::ostringstream o;
  o << std::left << std::setw(static_cast<int>(w)) << "Variant";
  for (const auto& c : ape_columns()) o << std::right << std::setw(8) << c;
  o << '\n' << std::fixed << std::setprecision(3);
  for (const auto& r : rows) {
    o << std::left << std::setw(static_cast<int>(w)) << r.label << std::right << std::setw(8) << r.report.ape;
    for (JointGroup g : kJointGroups) {
      const auto it = r.report.group_ape.find(g);
      if (it == r.report.group_ape.end()) {
        o << std::setw(8) << "-";
      } else {
        o << std::setw(8) << it->second;
      }
    }
    o << '\n';
  }
  return o.str();
}

inline std::string pck_table(const std::vector<TableRow>& rows) {
  if (rows.empty()) return "";
  std::size_t w = 8;
  for (const auto& r : rows) w = std::max(w, r.label.size() + 2);
  std::ostringstream o;
  o << std::left << std::setw(static_cast<int>(w)) << "PCK";
  for (const auto& [s, v] : rows.front().report.pck) {
    std::ostringstream h;
    h << "s=" << s;
    o << std::right << std::setw(8) << h.str();
  }
  o << '\n' << std::fixed << std::setprecision(3);
  for (const auto& r : rows) {
    o << std::left << std::setw(static_cast<int>(w)) << r.label << std::right;
    for (const auto& [s, v] : r.report.pck) o << std::setw(8) << v;
    o << '\n';
  }
  return o.str();
}

// ---------------------------------------------------------------------------
// synth

inline void cmd_synth(const RunConfig& c, const std::string& out_dir, std::ostream& out) {
  if (!c.has_dataset || !c.dataset.synth) {
    throw ConfigError("invalid configuration:\n  dataset.synth: required by the synth command");
  }
  const LoadedData d = load_data(c, false);
  const auto dir = prepare_out(out_dir);
  const std::string path = (dir / "dataset.dys").string();
  write_dataset(path, d.dataset);
  RunManifest m("synth", c);
  record_data(m, c, d);
  m.artifact(path);
  m.write((dir / "manifest.json").string());
  std::size_t labels = 0;
  for (const auto& s : d.dataset.sequences) labels += s.labels.size();
  out << "wrote " << path << ": " << d.dataset.sequences.size() << " sequences, " << labels << " labeled events\n";
}

// ---------------------------------------------------------------------------
// train

struct TrainedModel {
  PoseModel model;
  TrainResult result;
};

inline TrainedModel train_variant(const RunConfig& c, const LoadedData& d, Variant v, std::size_t run) {
  TrainedModel t{PoseModel(v, c.model.backbone, c.model.dims, c.model_seed(v, run), c.model.options), {}};
  TrainerConfig tc = c.trainer;
  tc.seed = c.trainer_seed(v, run);
  const std::string tag = std::string(variant_key(v)) + " run " + std::to_string(run);
  t.result = train(t.model, d.dataset.sequences, d.split, tc, &d.topology, [&](const EpochRecord& e) {
    std::ostringstream o;
    o << tag << " epoch " << e.epoch << " tf=" << e.teacher_forcing << " loss=" << e.train_loss
      << " val=" << e.validation;
    log(LogLevel::Info, o.str());
  });
  return t;
}

inline std::string curve_csv(const TrainResult& r) {
  std::ostringstream o;
  o.precision(17);
  o << "epoch,teacher_forcing,train_loss,validation\n";
  for (const auto& e : r.curve) o << e.epoch << ',' << e.teacher_forcing << ',' << e.train_loss << ',' << e.validation << '\n';
  return o.str();
}

inline void cmd_train(const RunConfig& c, const std::string& out_dir, std::ostream& out) {
  if (!c.has_model) throw ConfigError("invalid configuration:\n  model: missing required section");
  const LoadedData d = load_data(c);
  const Variant v = c.model.variant;
  TrainedModel t = train_variant(c, d, v, 0);
  const auto dir = prepare_out(out_dir);
  const std::string ckpt = (dir / "model.ckpt").string();
  const std::string curve = (dir / "curve.csv").string();
  write_checkpoint(ckpt, t.model);
  write_file_atomic(curve, curve_csv(t.result));
  RunManifest m("train", c);
  record_data(m, c, d);
  m.seed("model", c.model_seed(v, 0));
  m.seed("trainer", c.trainer_seed(v, 0));
  m.artifact(ckpt);
  m.artifact(curve);
  m.write((dir / "manifest.json").string());
  out << "trained " << variant_key(v) << " (" << t.model.parameter_count() << " parameters); best epoch "
      << t.result.best_epoch << ", validation " << t.result.best_validation << "\nwrote " << ckpt << '\n';
}

// ---------------------------------------------------------------------------
// eval

inline void check_compatible(const PoseModel& m, const Dataset& ds) {
  if (m.dims().audio != ds.a || m.dims().pose != ds.p) {
    throw ConfigError("checkpoint dims (a=" + std::to_string(m.dims().audio) + ", p=" + std::to_string(m.dims().pose) +
                      ") do not match dataset dims (a=" + std::to_string(ds.a) + ", p=" + std::to_string(ds.p) + ")");
  }
}

inline void cmd_eval(const RunConfig& c, std::optional<std::string> checkpoint, const std::string& out_dir,
                     std::ostream& out) {
  if (!checkpoint) checkpoint = c.eval.checkpoint;
  if (!checkpoint) throw ConfigError("invalid configuration:\n  eval.checkpoint: required by the eval command");
  if (!std::filesystem::exists(*checkpoint)) {
    throw ConfigError("invalid configuration:\n  eval.checkpoint: file not found: " + *checkpoint);
  }
  const PoseModel model = read_checkpoint(*checkpoint);
  const LoadedData d = load_data(c);
  check_compatible(model, d.dataset);
  if (model.dims().pose != 4 * d.topology.size()) {
    throw ConfigError("checkpoint pose dimension p=" + std::to_string(model.dims().pose) + " does not match skeleton with " +
                      std::to_string(d.topology.size()) + " joints");
  }
  const EvaluationResult ev = evaluate(model, d.dataset.sequences, d.split.test, d.topology, c.eval.sigmas, c.eval.max_frames);
  const auto dir = prepare_out(out_dir);
  RunManifest m("eval", c);
  record_data(m, c, d);
  m.input(*checkpoint);
  const std::string metrics = (dir / "metrics.txt").string();
  write_file_atomic(metrics, ev.report.to_text());
  m.artifact(metrics);
  for (std::size_t i = 0; i < ev.traces.size(); ++i) {
    if (ev.traces[i].delta.empty()) continue;
    const std::string p = (dir / ("attention_seq" + std::to_string(d.split.test[i]) + ".csv")).string();
    write_file_atomic(p, ev.traces[i].to_csv(model.dims().history));
    m.artifact(p);
  }
  m.write((dir / "manifest.json").string());
  const std::vector<TableRow> rows{{std::string(variant_label(model.variant())), ev.report}};
  out << ape_table(rows) << '\n' << pck_table(rows);
  if (ev.report.attention_mean) {
    out << std::fixed << std::setprecision(3) << "\nmean Delta " << *ev.report.attention_mean;
    if (ev.report.attention_in_events) out << ", in events " << *ev.report.attention_in_events;
    if (ev.report.attention_out_events) out << ", out of events " << *ev.report.attention_out_events;
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// gradcheck

inline bool cmd_gradcheck(std::size_t seeds, bool inject_fault, std::ostream& out) {
  const auto rows = run_gradcheck_suite(seeds, inject_fault);
  bool ok = true;
  out << std::left << std::setw(22) << "op" << std::right << std::setw(7) << "seeds" << std::setw(14) << "max rel err"
      << "  result\n";
  for (const auto& r : rows) {
    std::ostringstream e;
    e << std::scientific << std::setprecision(2) << r.max_rel_error;
    out << std::left << std::setw(22) << r.name << std::right << std::setw(7) << r.seeds << std::setw(14) << e.str()
        << "  " << (r.passed ? "PASS" : "FAIL") << '\n';
    ok = ok && r.passed;
  }
  out << rows.size() << " checks, " << (ok ? "all passed" : "FAILURES") << '\n';
  return ok;
}

// ---------------------------------------------------------------------------
// experiment

struct ExperimentRun {
  Variant variant;
  std::size_t run = 0;
  MetricsReport report;
  TrainResult training;
};

struct ExperimentResult {
  std::vector<ExperimentRun> runs;

  /// Field-wise mean of the reports of one variant over its runs.
  MetricsReport mean(Variant v) const {
    MetricsReport m;
    m.variant = std::string(variant_key(v));
    std::size_t n = 0, na = 0, ni = 0, no = 0;
    double am = 0.0, ai = 0.0, ao = 0.0;
    for (const auto& r : runs) {
      if (r.variant != v) continue;
      ++n;
      m.ape += r.report.ape;
      for (const auto& [g, x] : r.report.group_ape) m.group_ape[g] += x;
      if (m.pck.empty()) {
        m.pck = r.report.pck;
      } else {
        for (std::size_t i = 0; i < m.pck.size(); ++i) m.pck[i].second += r.report.pck[i].second;
      }
      m.frames = r.report.frames;
      m.sequences = r.report.sequences;
      if (r.report.attention_mean) am += *r.report.attention_mean, ++na;
      if (r.report.attention_in_events) ai += *r.report.attention_in_events, ++ni;
      if (r.report.attention_out_events) ao += *r.report.attention_out_events, ++no;
    }
    if (n == 0) return m;
    const double k = static_cast<double>(n);
    m.ape /= k;
    for (auto& [g, x] : m.group_ape) x /= k;
    for (auto& [s, x] : m.pck) x /= k;
    if (na) m.attention_mean = am / static_cast<double>(na);
    if (ni) m.attention_in_events = ai / static_cast<double>(ni);
    if (no) m.attention_out_events = ao / static_cast<double>(no);
    return m;
  }
};

inline ExperimentResult run_experiment(const RunConfig& c, const LoadedData& d) {
  ExperimentResult res;
  for (std::size_t run = 0; run < c.experiment.seeds; ++run) {
    for (Variant v : c.experiment.variants) {
      TrainedModel t = train_variant(c, d, v, run);
      EvaluationResult ev = evaluate(t.model, d.dataset.sequences, d.split.test, d.topology, c.eval.sigmas, c.eval.max_frames);
      std::ostringstream o;
      o << variant_key(v) << " run " << run << " test APE " << ev.report.ape;
      log(LogLevel::Info, o.str());
      res.runs.push_back({v, run, std::move(ev.report), std::move(t.result)});
    }
  }
  return res;
}

inline std::string experiment_report(const RunConfig& c, const ExperimentResult& r) {
  std::vector<TableRow> rows;
  for (Variant v : c.experiment.variants) rows.push_back({std::string(variant_label(v)), r.mean(v)});
  std::ostringstream o;
  o << "APE (cm) on the test split, mean over " << c.experiment.seeds << " seed(s)\n" << ape_table(rows) << '\n';
  o << "PCK over sigma (cm), mean over seeds\n" << pck_table(rows);
  bool header = false;
  o << std::fixed << std::setprecision(3);
  for (const auto& row : rows) {
    const MetricsReport& m = row.report;
    if (!m.attention_mean) continue;
    if (!header) {
      o << "\nDyadic residual Delta\n"
        << std::left << std::setw(24) << "Variant" << std::right << std::setw(8) << "mean" << std::setw(10) << "in"
        << std::setw(10) << "out" << std::setw(10) << "in-out" << '\n';
      header = true;
    }
    const double in = m.attention_in_events.value_or(0.0), outside = m.attention_out_events.value_or(0.0);
    o << std::left << std::setw(24) << row.label << std::right << std::setw(8) << *m.attention_mean << std::setw(10)
      << in << std::setw(10) << outside << std::setw(10) << in - outside << '\n';
  }
  o << "\nPer-seed test APE\n";
  for (const auto& run : r.runs) {
    o << "  " << std::left << std::setw(22) << variant_key(run.variant) << std::right << " seed " << run.run << "  "
      << run.report.ape << "  (best epoch " << run.training.best_epoch << ")\n";
  }
  return o.str();
}

inline std::string experiment_csv(const ExperimentResult& r) {
  std::ostringstream o;
  o.precision(17);
  o << "variant,run,ape";
  for (JointGroup g : kJointGroups) o << ",ape_" << group_name(g);
  o << ",attention_mean,attention_in,attention_out\n";
  for (const auto& run : r.runs) {
    o << variant_key(run.variant) << ',' << run.run << ',' << run.report.ape;
    for (JointGroup g : kJointGroups) {
      const auto it = run.report.group_ape.find(g);
      o << ',';
      if (it != run.report.group_ape.end()) o << it->second;
    }
    o << ',';
    if (run.report.attention_mean) o << *run.report.attention_mean;
    o << ',';
    if (run.report.attention_in_events) o << *run.report.attention_in_events;
    o << ',';
    if (run.report.attention_out_events) o << *run.report.attention_out_events;
    o << '\n';
  }
  return o.str();
}

inline ExperimentResult cmd_experiment(const RunConfig& c, const std::string& out_dir, std::ostream& out) {
  if (!c.has_model) throw ConfigError("invalid configuration:\n  model: missing required section");
  const LoadedData d = load_data(c);
  ExperimentResult r = run_experiment(c, d);
  const auto dir = prepare_out(out_dir);
  const std::string report = experiment_report(c, r);
  const std::string txt = (dir / "experiment.txt").string();
  const std::string csv = (dir / "experiment.csv").string();
  write_file_atomic(txt, report);
  write_file_atomic(csv, experiment_csv(r));
  RunManifest m("experiment", c);
  record_data(m, c, d);
  for (std::size_t run = 0; run < c.experiment.seeds; ++run) {
    for (Variant v : c.experiment.variants) {
      const std::string tag = std::string(variant_key(v)) + "-" + std::to_string(run);
      m.seed("model-" + tag, c.model_seed(v, run));
      m.seed("trainer-" + tag, c.trainer_seed(v, run));
    }
  }
  m.artifact(txt);
  m.artifact(csv);
  m.write((dir / "manifest.json").string());
  out << report;
  return r;
}

}  // namespace dram
