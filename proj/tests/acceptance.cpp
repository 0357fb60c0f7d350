// Acceptance run: one PASS/FAIL line per criterion.
//
//   acceptance [--out DIR] [--only N,...]

#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "dram/commands.hpp"

namespace fs = std::filesystem;
using namespace dram;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string sci(double v) {
  std::ostringstream o;
  o << std::scientific << std::setprecision(2) << v;
  return o.str();
}

std::string fix(double v, int digits = 3) {
  std::ostringstream o;
  o << std::fixed << std::setprecision(digits) << v;
  return o.str();
}

Rng& rng_for(const char* label) {
  static std::map<std::string, Rng> pool;
  return pool.try_emplace(label, 2024, label).first->second;
}

Tensor random_matrix(std::size_t r, std::size_t c, Rng& rng) {
  Tensor t({r, c});
  for (double& v : t.storage()) v = rng.uniform(-1, 1);
  return t;
}

Quat random_unit(Rng& rng) { return Quat{rng.normal(0, 1), rng.normal(0, 1), rng.normal(0, 1), rng.normal(0, 1)}.normalized(); }

// 1 ---------------------------------------------------------------------------

Outcome gradient_fidelity() {
  const auto t0 = Clock::now();
  const auto rows = run_gradcheck_suite(20, false, 1e-4);
  const double secs = seconds_since(t0);
  double worst = 0.0;
  std::string worst_op;
  bool ok = true;
  for (const auto& r : rows) {
    ok &= r.passed && r.seeds >= 20;
    if (r.max_rel_error > worst) worst = r.max_rel_error, worst_op = r.name;
  }
  return {ok && worst < 1e-4 && secs < 60.0, std::to_string(rows.size()) + " ops x 20 seeds, max rel err " + sci(worst) +
                                                 " (" + worst_op + "), " + fix(secs, 1) + " s"};
}

// 2 ---------------------------------------------------------------------------

Outcome causality() {
  const auto t0 = Clock::now();
  Rng& rng = rng_for("causality");
  std::size_t probes = 0, failures = 0;
  for (int trial = 0; trial < 5; ++trial) {
    TcnConfig t;
    t.in_channels = 5;
    t.hidden_channels = 6;
    t.out_dim = 4;
    t.dilations = {1, 2, 4};
    LstmConfig l;
    l.in_dim = 5;
    l.hidden = 6;
    l.out_dim = 4;
    l.layers = 2;
    Backbone tcn(t, 24, 100 + trial), lstm(l, 24, 200 + trial);
    const Tensor H = random_matrix(5, 24, rng);
    for (std::size_t s = 0; s + 1 < 24; ++s) {
      probes += 2;
      failures += !causality_probe(tcn, H, s);
      failures += !causality_probe(lstm, H, s);
    }
  }
  return {failures == 0, std::to_string(probes) + " probes (TCN, LSTM), " + std::to_string(failures) +
                             " with future influence, " + fix(seconds_since(t0), 2) + " s"};
}

// 3 ---------------------------------------------------------------------------

Outcome dram_algebra() {
  Rng& rng = rng_for("algebra");
  bool range = true, equal = true;
  for (int i = 0; i < 10000; ++i) {
    std::vector<double> zm(48), zd(48);
    for (double& v : zm) v = rng.uniform(-10, 10);
    for (double& v : zd) v = rng.uniform(-10, 10);
    for (double d : residual_attention(zm, zd)) range &= d >= 0.0 && d < 1.0;
    equal &= dram_combine(zm, zm, residual_attention(zm, zm)) == zm;
  }
  const double spot = residual_attention(std::vector<double>{0.0}, std::vector<double>{1.0})[0];
  const double err = std::fabs(spot - 0.7615941559557649);
  return {range && equal && err <= 1e-15, std::string("Delta in [0,1): ") + (range ? "yes" : "no") +
                                              ", zd==zm bit-equal: " + (equal ? "yes" : "no") + ", tanh(1) error " +
                                              sci(err)};
}

// 4 ---------------------------------------------------------------------------

Outcome metric_oracles() {
  Rng& rng = rng_for("metrics");
  double worst = 0.0;
  bool monotone = true;
  for (int inst = 0; inst < 100; ++inst) {
    const std::size_t T = 1 + rng.below(10), J = 1 + rng.below(12);
    PositionSequence pred(T, PositionFrame(J)), truth(T, PositionFrame(J));
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t j = 0; j < J; ++j) {
        pred[t][j] = Vec3{rng.uniform(-20, 20), rng.uniform(-20, 20), rng.uniform(-20, 20)};
        truth[t][j] = Vec3{rng.uniform(-20, 20), rng.uniform(-20, 20), rng.uniform(-20, 20)};
      }
    const auto keys = all_keypoints(J);
    const double sigma = rng.uniform(1, 40);
    double dist_sum = 0.0;
    std::size_t hits = 0;
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t j = 0; j < J; ++j) {
        const double dx = pred[t][j].x - truth[t][j].x, dy = pred[t][j].y - truth[t][j].y,
                     dz = pred[t][j].z - truth[t][j].z;
        const double d = std::sqrt(dx * dx + dy * dy + dz * dz);
        dist_sum += d;
        if (d <= sigma) ++hits;
      }
    const double n = static_cast<double>(T * J);
    worst = std::max(worst, std::fabs(ape(pred, truth, keys) - dist_sum / n));
    worst = std::max(worst, std::fabs(pck(pred, truth, sigma, keys) - static_cast<double>(hits) / n));
    double prev = 0.0;
    for (double s = 0.5; s <= 80.0; s += 0.5) {
      const double v = pck(pred, truth, s, keys);
      monotone &= v >= prev;
      prev = v;
    }
  }
  const PositionSequence a{{Vec3{0, 0, 0}}}, b{{Vec3{3, 4, 0}}};
  const bool boundary = pck(a, b, 5.0, {0}) == 1.0;
  return {worst <= 1e-12 && monotone && boundary, "100 instances, max |diff| " + sci(worst) + ", monotone: " +
                                                      (monotone ? "yes" : "no") + ", error == sigma counted: " +
                                                      (boundary ? "yes" : "no")};
}

// 5 ---------------------------------------------------------------------------

Outcome pose_geometry() {
  Rng& rng = rng_for("geometry");
  const auto topo = SkeletonTopology::upper_body();
  double roundtrip = 0.0, hemi = 0.0, unit = 0.0;
  std::vector<PoseVector> seq;
  for (int i = 0; i < 100; ++i) {
    PoseVector q;
    for (std::size_t j = 0; j < kJointCount; ++j) q.set_joint(j, random_unit(rng));
    const PositionFrame p = rotations_to_positions(q, topo);
    const PoseVector back = positions_to_rotations(p, topo);
    unit = std::max(unit, back.max_norm_error());
    const PositionFrame p2 = rotations_to_positions(back, topo);
    for (std::size_t j = 0; j < p.size(); ++j) roundtrip = std::max(roundtrip, norm(p[j] - p2[j]));
    seq.push_back(q);
  }
  const auto fixed = hemisphere_fix(seq);
  for (std::size_t t = 0; t < seq.size(); ++t) {
    unit = std::max(unit, fixed[t].max_norm_error());
    const PositionFrame a = rotations_to_positions(seq[t], topo), b = rotations_to_positions(fixed[t], topo);
    for (std::size_t j = 0; j < a.size(); ++j) hemi = std::max(hemi, norm(a[j] - b[j]));
  }
  SynthConfig sc;
  sc.duration = 900;
  sc.seed = 5;
  const auto s = generate_sequence(sc);
  for (std::size_t t = 0; t < s.frames(); ++t) {
    unit = std::max(unit, PoseVector(s.Y.column(t)).max_norm_error());
    unit = std::max(unit, PoseVector(s.YH.column(t)).max_norm_error());
  }
  return {roundtrip < 1e-6 && hemi <= 1e-12 && unit <= 1e-9, "roundtrip " + sci(roundtrip) + " cm, hemisphere FK change " +
                                                                  sci(hemi) + " cm, max | |q| - 1 | " + sci(unit)};
}

// 6, 7 ------------------------------------------------------------------------

struct ExperimentOutcome {
  Outcome trend;
  Outcome attention;
};

ExperimentOutcome experiment(const fs::path& out) {
  const RunConfig cfg = load_run_config(DRAM_SOURCE_DIR "/configs/experiment.json");
  const auto t0 = Clock::now();
  std::ostringstream report;
  const ExperimentResult r = cmd_experiment(cfg, (out / "experiment").string(), report);
  const double minutes = seconds_since(t0) / 60.0;
  std::cout << report.str() << '\n' << std::flush;

  const double dram = r.mean(Variant::Dram).ape;
  const double no_att = r.mean(Variant::DramNoAttention).ape;
  const double ef = r.mean(Variant::EarlyFusion).ape;
  const double mono = r.mean(Variant::AvatarMonadicOnly).ape;
  const bool sized = cfg.dataset.synth && cfg.dataset.synth->duration >= 5400 && cfg.dataset.sequences >= 30 &&
                     cfg.experiment.seeds >= 3;
  ExperimentOutcome o;
  o.trend.pass = sized && dram <= no_att && dram <= ef && dram <= mono && minutes <= 30.0;
  o.trend.detail = "APE DRAM " + fix(dram) + " vs w/o Attention " + fix(no_att) + " (margin " + fix(no_att - dram) +
                   "), Early Fusion " + fix(ef) + " (" + fix(ef - dram) + "), Avatar Monadic " + fix(mono) + " (" +
                   fix(mono - dram) + "); " + std::to_string(cfg.experiment.seeds) + " seeds, " + fix(minutes, 1) +
                   " min";

  const MetricsReport m = r.mean(Variant::Dram);
  const double in = m.attention_in_events.value_or(NAN), outside = m.attention_out_events.value_or(NAN);
  const double mean = m.attention_mean.value_or(NAN);
  o.attention.pass = in - outside >= 0.05 && mean > 0.15 && mean < 0.85;
  o.attention.detail = "mean Delta in events " + fix(in) + ", outside " + fix(outside) + " (gap " + fix(in - outside) +
                       ", need >= 0.05); overall " + fix(mean) + " (need within (0.15, 0.85))";
  return o;
}

// 8, 9 ------------------------------------------------------------------------

struct DeterminismOutcome {
  Outcome determinism;
  fs::path checkpoint;
};

DeterminismOutcome determinism(const fs::path& out) {
  const RunConfig cfg = load_run_config(DRAM_SOURCE_DIR "/configs/toy.json");
  std::ostringstream sink;
  const fs::path a = out / "determinism" / "a", b = out / "determinism" / "b", c = out / "determinism" / "c";
  cmd_synth(cfg, (a / "synth").string(), sink);
  cmd_synth(cfg, (b / "synth").string(), sink);
  cmd_train(cfg, (a / "train").string(), sink);
  cmd_train(cfg, (b / "train").string(), sink);
  const RunConfig from_manifest = load_run_config((a / "train" / "manifest.json").string());
  cmd_train(from_manifest, (c / "train").string(), sink);

  const auto same = [](const fs::path& x, const fs::path& y) { return read_file(x.string()) == read_file(y.string()); };
  const bool data = same(a / "synth" / "dataset.dys", b / "synth" / "dataset.dys");
  const bool ckpt = same(a / "train" / "model.ckpt", b / "train" / "model.ckpt");
  const bool manifest = same(a / "train" / "model.ckpt", c / "train" / "model.ckpt");
  return {{data && ckpt && manifest, std::string("dataset files identical: ") + (data ? "yes" : "no") +
                                         ", checkpoints identical: " + (ckpt ? "yes" : "no") +
                                         ", re-run from manifest identical: " + (manifest ? "yes" : "no")},
          a / "train" / "model.ckpt"};
}

Outcome rollout_stability(const fs::path& checkpoint) {
  const PoseModel model = read_checkpoint(checkpoint.string());
  SynthConfig sc;
  sc.duration = 1000;
  sc.seed = 99;
  const auto seq = generate_sequence(sc);
  const std::size_t k = model.dims().history;
  Tensor seed({model.dims().pose, k});
  for (std::size_t j = 0; j < k; ++j) seed.set_column(j, seq.Y.column(j));
  const auto r = rollout(model, {&seq.X, &seq.XH, &seq.YH}, seed, 1000);
  double unit = 0.0;
  for (std::size_t t = 0; t < r.poses.cols(); ++t) unit = std::max(unit, PoseVector(r.poses.column(t)).max_norm_error());
  const bool finite = r.poses.all_finite();
  return {finite && r.poses.cols() == 1000 && unit <= 1e-9,
          std::string(variant_key(model.variant())) + ", " + std::to_string(r.poses.cols()) + " frames, finite: " +
              (finite ? "yes" : "no") + ", max | |q| - 1 | " + sci(unit)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::string out = "acceptance_out";
  std::vector<int> only;
  app.add_option("--out", out, "scratch and report directory");
  app.add_option("--only", only, "run only these criteria")->delimiter(',')->check(CLI::Range(1, 9));
  CLI11_PARSE(app, argc, argv);
  const std::set<int> selected(only.begin(), only.end());
  const auto wanted = [&](int n) { return selected.empty() || selected.count(n) > 0; };

  std::map<int, Outcome> results;
  const std::map<int, std::string> names = {
      {1, "gradient fidelity"}, {2, "causality"},     {3, "DRAM algebra"},  {4, "metric oracles"},
      {5, "pose geometry"},     {6, "trend"},         {7, "Delta responsiveness"}, {8, "determinism"},
      {9, "rollout stability"}};
  const auto report = [&](int n, const Outcome& o) {
    results[n] = o;
    std::cerr << "[acceptance] criterion " << n << " evaluated" << std::endl;
  };
  const auto guarded = [&](int n, const std::function<Outcome()>& f) {
    if (!wanted(n)) return;
    try {
      report(n, f());
    } catch (const std::exception& e) {
      report(n, {false, std::string("error: ") + e.what()});
    }
  };

  guarded(1, gradient_fidelity);
  guarded(2, causality);
  guarded(3, dram_algebra);
  guarded(4, metric_oracles);
  guarded(5, pose_geometry);

  std::optional<fs::path> checkpoint;
  if (wanted(8) || wanted(9)) {
    try {
      auto d = determinism(out);
      checkpoint = d.checkpoint;
      if (wanted(8)) report(8, d.determinism);
    } catch (const std::exception& e) {
      if (wanted(8)) report(8, {false, std::string("error: ") + e.what()});
    }
  }
  guarded(9, [&]() -> Outcome {
    if (!checkpoint) return {false, "no trained checkpoint"};
    return rollout_stability(*checkpoint);
  });

  if (wanted(6) || wanted(7)) {
    try {
      const auto e = experiment(out);
      if (wanted(6)) report(6, e.trend);
      if (wanted(7)) report(7, e.attention);
    } catch (const std::exception& e) {
      if (wanted(6)) report(6, {false, std::string("error: ") + e.what()});
      if (wanted(7)) report(7, {false, std::string("error: ") + e.what()});
    }
  }

  std::size_t passed = 0;
  for (const auto& [n, o] : results) {
    std::cout << (o.pass ? "PASS" : "FAIL") << " " << n << " " << names.at(n) << ": " << o.detail << '\n';
    passed += o.pass;
  }
  std::cout << passed << "/" << results.size() << " criteria passed" << std::endl;
  return 0;
}
