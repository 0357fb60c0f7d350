#pragma once

// Chunked training with scheduled sampling, validation by autoregressive
// rollout, and test-set evaluation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "dram/autodiff.hpp"
#include "dram/errors.hpp"
#include "dram/metrics.hpp"
#include "dram/model.hpp"
#include "dram/optimizer.hpp"
#include "dram/random.hpp"
#include "dram/rollout.hpp"
#include "dram/skeleton.hpp"
#include "dram/synth.hpp"

namespace dram {

struct TrainerConfig {
  OptimizerConfig optimizer;
  std::size_t batch_size = 4;  // chunks per step
  std::size_t epochs = 10;
  double tf_start = 1.0;
  double tf_end = 0.0;
  std::size_t tf_decay_epochs = 0;  // 0: half of `epochs`
  std::size_t chunk_length = 270;
  std::size_t chunks_per_epoch = 0;  // 0: every chunk of every training sequence
  std::size_t validation_frames = 0;  // 0: whole validation sequences
  std::uint64_t seed = 0;

  void validate() const {
    std::vector<std::string> bad;
    if (!(optimizer.learning_rate >= 0.0) || !std::isfinite(optimizer.learning_rate)) bad.push_back("learning_rate");
    if (!(optimizer.clip_norm > 0.0)) bad.push_back("clip_norm");
    if (batch_size == 0) bad.push_back("batch_size");
    if (!(tf_start >= 0.0 && tf_start <= 1.0)) bad.push_back("tf_start");
    if (!(tf_end >= 0.0 && tf_end <= 1.0)) bad.push_back("tf_end");
    if (chunk_length == 0) bad.push_back("chunk_length");
    if (!bad.empty()) {
      std::string msg = "trainer config: invalid field(s):";
      for (const auto& b : bad) msg += " " + b;
      throw ConfigError(msg);
    }
  }

  /// Teacher-forcing ratio for a 0-based epoch: linear from tf_start to
  /// tf_end over the decay epochs, then held.
  double teacher_forcing(std::size_t epoch) const {
    const std::size_t decay = tf_decay_epochs ? tf_decay_epochs : std::max<std::size_t>(1, epochs / 2);
    if (epoch >= decay) return tf_end;
    const double x = static_cast<double>(epoch) / static_cast<double>(decay);
    return tf_start + (tf_end - tf_start) * x;
  }
};

/// A training window: predict frames [start, start + length) of one sequence.
struct Chunk {
  std::size_t sequence = 0;
  std::size_t start = 0;
  std::size_t length = 0;
};

namespace train_detail {

inline Conditioning conditioning(const DyadicSequence& s) { return {&s.X, &s.XH, &s.YH}; }

/// Input matrix of `streams` over frames [first, first + n), with avatar
/// pose history read from `pose(f)`.
inline Tensor input_matrix(const std::vector<Stream>& streams, const ModelDims& d, const Conditioning& c, long first,
                           std::size_t n, const std::function<std::vector<double>(long)>& pose) {
  const std::size_t rows = d.channels(streams);
  Tensor m({rows, n});
  const bool needs_pose = std::find(streams.begin(), streams.end(), Stream::AvatarPose) != streams.end();
  for (std::size_t j = 0; j < n; ++j) {
    const long f = first + static_cast<long>(j);
    const auto col = input_column(streams, d, c, f, needs_pose && f >= 0 ? pose(f) : std::vector<double>{}, {});
    m.set_column(j, col);
  }
  return m;
}

}  // namespace train_detail

/// Taped loss of one chunk. `pose(f)` is the avatar pose history at frame f
/// (ground truth, or a mix with model predictions under scheduled sampling).
inline Var chunk_loss(Tape& tape, PoseModel& model, const DyadicSequence& seq, const Chunk& ch,
                      const std::function<std::vector<double>(long)>& pose) {
  namespace td = train_detail;
  const ModelDims& d = model.dims();
  const auto& info = variant_info(model.variant());
  const std::size_t k = d.history, L = ch.length;
  const long c0 = static_cast<long>(ch.start);
  const Conditioning cond = td::conditioning(seq);
  Tensor target({d.pose, L});
  for (std::size_t j = 0; j < L; ++j) target.set_column(j, seq.Y.column(ch.start + j));
  const Var tgt = tape.constant(std::move(target));

  if (!info.two_stage) {
    Tensor in = td::input_matrix(info.primary, d, cond, c0 - static_cast<long>(k), L + k - 1, pose);
    const Var y = model.primary().forward_sequence(tape, tape.constant(std::move(in)));
    return mse_loss(tape, y, tgt);
  }

  // Monadic predictions z^m_g for g in [c0 - k, c0 + L).
  Tensor mon = td::input_matrix(info.primary, d, cond, c0 - 2 * static_cast<long>(k), L + 2 * k - 1, pose);
  const Var zm_all = model.primary().forward_sequence(tape, tape.constant(std::move(mon)));
  const long g0 = c0 - static_cast<long>(k);
  const bool current = model.options().zm_includes_current;

  // Dyadic columns f in [c0 - k, c0 + L - 1): [X^H_f; Y^H_f; Zm(f or f+1)].
  const std::size_t n = L + k - 1;
  const long f0 = c0 - static_cast<long>(k);
  std::vector<Stream> observed = {Stream::HumanAudio, Stream::HumanPose};
  Tensor obs = td::input_matrix(observed, d, cond, f0, n, pose);
  const std::size_t warm = f0 < 0 ? std::min<std::size_t>(n, static_cast<std::size_t>(-f0)) : 0;
  std::vector<Var> zcols;
  if (warm > 0) {
    Tensor w({d.pose, warm});
    const auto wp = warmup_pose(d.pose);
    for (std::size_t j = 0; j < warm; ++j) w.set_column(j, wp);
    zcols.push_back(tape.constant(std::move(w)));
  }
  if (warm < n) {
    const long g_first = f0 + static_cast<long>(warm) + (current ? 1 : 0);
    const auto b = static_cast<std::size_t>(g_first - g0);
    zcols.push_back(slice_cols(tape, zm_all, b, b + (n - warm)));
  }
  const Var zbuf = zcols.size() == 1 ? zcols.front() : concat_cols(tape, zcols);
  const Var din = concat_rows(tape, {tape.constant(std::move(obs)), zbuf});
  const Var zd = model.dyadic().forward_sequence(tape, din);
  if (model.variant() == Variant::DramNoAttention) return mse_loss(tape, zd, tgt);
  const Var zm = slice_cols(tape, zm_all, k, k + L);
  const Var delta = residual_attention(tape, zm, zd, model.options().detach_attention);
  return mse_loss(tape, dram_combine(tape, zm, zd, delta), tgt);
}

/// Avatar pose history for a chunk under scheduled sampling: ground truth
/// before the chunk; inside it each frame is ground truth with probability
/// `ratio`, otherwise the model's renormalised prediction given the mixed
/// history so far. Returns columns for frames [start, start + length - 1).
inline std::vector<std::vector<double>> sampled_history(const PoseModel& model, const DyadicSequence& seq,
                                                        const Chunk& ch, double ratio, Rng& rng) {
  const std::size_t k = model.dims().history;
  const long c0 = static_cast<long>(ch.start);
  const long first = c0 - 2 * static_cast<long>(k);
  RolloutState state(model, train_detail::conditioning(seq), first);
  std::vector<std::vector<double>> mixed;
  std::vector<double> pred;
  const long last = c0 + static_cast<long>(ch.length) - 1;
  for (long f = first; f < last; ++f) {
    std::vector<double> pose;
    if (f < 0) {
      pose = warmup_pose(model.dims().pose);
    } else if (f < c0) {
      pose = seq.Y.column(static_cast<std::size_t>(f));
    } else {
      pose = rng.bernoulli(ratio) ? seq.Y.column(static_cast<std::size_t>(f)) : pred;
      mixed.push_back(pose);
    }
    if (f + 1 >= last) break;
    StepOutput out = state.advance(pose);
    renormalize_pose(out.pose);
    pred = std::move(out.pose);
  }
  return mixed;
}

/// Non-overlapping chunks covering frames [1, T) of each listed sequence.
inline std::vector<Chunk> make_chunks(const std::vector<DyadicSequence>& data, const std::vector<std::size_t>& which,
                                      std::size_t length) {
  std::vector<Chunk> out;
  for (std::size_t s : which) {
    const std::size_t T = data.at(s).frames();
    for (std::size_t c = 1; c < T; c += length) out.push_back({s, c, std::min(length, T - c)});
  }
  return out;
}

struct EvaluationResult {
  MetricsReport report;
  std::vector<AttentionTrace> traces;  // per sequence, forecast frames
  std::vector<Tensor> predictions;     // per sequence, p x T
};

/// Fully autoregressive evaluation: each sequence is seeded with its first k
/// avatar frames and forecast to the end. Metrics cover forecast frames.
inline EvaluationResult evaluate(const PoseModel& model, const std::vector<DyadicSequence>& data,
                                 const std::vector<std::size_t>& which, const SkeletonTopology& topo,
                                 const std::vector<double>& sigmas = default_sigma_grid(),
                                 std::size_t max_frames = 0) {
  const ModelDims& d = model.dims();
  if (d.pose != 4 * topo.size()) {
    throw ConfigError("evaluate: model pose dimension " + std::to_string(d.pose) + " does not match skeleton with " +
                      std::to_string(topo.size()) + " joints");
  }
  EvaluationResult res;
  PositionSequence pred_all, true_all;
  double in_sum = 0.0, out_sum = 0.0, all_sum = 0.0;
  std::size_t in_n = 0, out_n = 0;
  for (std::size_t s : which) {
    const DyadicSequence& seq = data.at(s);
    if (seq.X.rows() != d.audio || seq.Y.rows() != d.pose || seq.XH.rows() != d.audio || seq.YH.rows() != d.pose) {
      throw ConfigError("evaluate: dataset dims (a=" + std::to_string(seq.X.rows()) +
                        ", p=" + std::to_string(seq.Y.rows()) + ") do not match model (a=" + std::to_string(d.audio) +
                        ", p=" + std::to_string(d.pose) + ")");
    }
    const std::size_t T = max_frames ? std::min(max_frames, seq.frames()) : seq.frames();
    if (T <= d.history) throw InputError("evaluate: sequence shorter than the seed history");
    Tensor seed({d.pose, d.history});
    for (std::size_t j = 0; j < d.history; ++j) seed.set_column(j, seq.Y.column(j));
    RolloutResult r = rollout(model, train_detail::conditioning(seq), seed, T);
    for (std::size_t t = d.history; t < T; ++t) {
      pred_all.push_back(rotations_to_positions(PoseVector(r.poses.column(t)), topo));
      auto truth = seq.Y.column(t);
      true_all.push_back(rotations_to_positions(PoseVector(std::move(truth)), topo));
    }
    if (!r.attention.delta.empty()) {
      std::vector<char> inside(T, 0);
      for (const auto& l : seq.labels)
        for (std::size_t t = l.start; t < std::min<std::size_t>(l.end, T); ++t) inside[t] = 1;
      const auto means = r.attention.means();
      for (std::size_t i = 0; i < means.size(); ++i) {
        const std::size_t t = d.history + i;
        all_sum += means[i];
        if (inside[t]) {
          in_sum += means[i];
          ++in_n;
        } else {
          out_sum += means[i];
          ++out_n;
        }
      }
    }
    res.traces.push_back(std::move(r.attention));
    res.predictions.push_back(std::move(r.poses));
  }
  res.report = compute_metrics(pred_all, true_all, topo, sigmas);
  res.report.variant = std::string(variant_key(model.variant()));
  res.report.sequences = which.size();
  if (in_n + out_n > 0) {
    res.report.attention_mean = all_sum / static_cast<double>(in_n + out_n);
    if (in_n) res.report.attention_in_events = in_sum / static_cast<double>(in_n);
    if (out_n) res.report.attention_out_events = out_sum / static_cast<double>(out_n);
  }
  return res;
}

/// Mean squared rollout error per forecast frame (used when poses are not
/// quaternion skeletons).
inline double rollout_mse(const PoseModel& model, const std::vector<DyadicSequence>& data,
                          const std::vector<std::size_t>& which, std::size_t max_frames = 0) {
  const ModelDims& d = model.dims();
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t s : which) {
    const DyadicSequence& seq = data.at(s);
    const std::size_t T = max_frames ? std::min(max_frames, seq.frames()) : seq.frames();
    if (T <= d.history) continue;
    Tensor seed({d.pose, d.history});
    for (std::size_t j = 0; j < d.history; ++j) seed.set_column(j, seq.Y.column(j));
    const RolloutResult r = rollout(model, train_detail::conditioning(seq), seed, T);
    for (std::size_t t = d.history; t < T; ++t) {
      for (std::size_t c = 0; c < d.pose; ++c) {
        const double e = r.poses(c, t) - seq.Y(c, t);
        sum += e * e;
      }
      ++n;
    }
  }
  return n ? sum / static_cast<double>(n) : 0.0;
}

struct EpochRecord {
  std::size_t epoch = 0;
  double teacher_forcing = 1.0;
  double train_loss = 0.0;
  double validation = 0.0;  // APE (cm) for skeleton poses, else rollout MSE
};

struct TrainResult {
  std::vector<EpochRecord> curve;
  std::size_t best_epoch = 0;
  double best_validation = std::numeric_limits<double>::infinity();
};

/// Trains `model` in place; on return it holds the best-validation parameters.
inline TrainResult train(PoseModel& model, const std::vector<DyadicSequence>& data, const DatasetSplit& split,
                         const TrainerConfig& cfg, const SkeletonTopology* topo = nullptr,
                         const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  cfg.validate();
  const ModelDims& d = model.dims();
  for (std::size_t s : split.train) {
    const auto& q = data.at(s);
    if (q.X.rows() != d.audio || q.Y.rows() != d.pose || q.XH.rows() != d.audio || q.YH.rows() != d.pose) {
      throw ConfigError("train: dataset dims (a=" + std::to_string(q.X.rows()) + ", p=" + std::to_string(q.Y.rows()) +
                        ") do not match model (a=" + std::to_string(d.audio) + ", p=" + std::to_string(d.pose) + ")");
    }
  }
  const bool skeletal = topo != nullptr && d.pose == 4 * topo->size();
  auto params = model.parameters();
  Optimizer opt(cfg.optimizer, params);
  const auto all_chunks = make_chunks(data, split.train, cfg.chunk_length);
  if (all_chunks.empty()) throw InputError("train: no training frames");

  auto validate = [&]() {
    if (split.validation.empty()) return 0.0;
    if (skeletal) return evaluate(model, data, split.validation, *topo, {1.0}, cfg.validation_frames).report.ape;
    return rollout_mse(model, data, split.validation, cfg.validation_frames);
  };

  TrainResult result;
  std::vector<Tensor> best;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng rng(cfg.seed, "epoch-" + std::to_string(epoch));
    std::vector<Chunk> chunks = all_chunks;
    rng.shuffle(chunks.begin(), chunks.end());
    if (cfg.chunks_per_epoch && cfg.chunks_per_epoch < chunks.size()) chunks.resize(cfg.chunks_per_epoch);
    const double ratio = cfg.teacher_forcing(epoch);
    double loss_sum = 0.0;
    std::size_t step = 0;
    for (std::size_t b = 0; b < chunks.size(); b += cfg.batch_size, ++step) {
      const std::size_t e = std::min(chunks.size(), b + cfg.batch_size);
      model.zero_grad();
      double batch_loss = 0.0;
      for (std::size_t i = b; i < e; ++i) {
        const Chunk& ch = chunks[i];
        const DyadicSequence& seq = data[ch.sequence];
        std::function<std::vector<double>(long)> pose;
        std::vector<std::vector<double>> mixed;
        if (ratio < 1.0) mixed = sampled_history(model, seq, ch, ratio, rng);
        pose = [&](long f) {
          const auto t = static_cast<std::size_t>(f);
          if (f >= static_cast<long>(ch.start) && t - ch.start < mixed.size()) return mixed[t - ch.start];
          return seq.Y.column(t);
        };
        Tape tape;
        const Var loss = chunk_loss(tape, model, seq, ch, pose);
        const double lv = tape.value(loss)[0];
        if (!std::isfinite(lv)) throw DivergenceError(epoch, step, lv);
        tape.backward(loss);
        batch_loss += lv;
      }
      const double inv = 1.0 / static_cast<double>(e - b);
      for (Parameter* p : params)
        for (double& g : p->grad.storage()) g *= inv;
      const double gnorm = opt.step();
      if (!std::isfinite(gnorm)) throw DivergenceError(epoch, step, gnorm);
      loss_sum += batch_loss;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.teacher_forcing = ratio;
    rec.train_loss = loss_sum / static_cast<double>(chunks.size());
    rec.validation = validate();
    if (!std::isfinite(rec.validation)) throw DivergenceError(epoch, step, rec.validation);
    if (best.empty() || rec.validation < result.best_validation) {
      result.best_validation = rec.validation;
      result.best_epoch = epoch;
      best.clear();
      for (Parameter* p : params) best.push_back(p->value);
    }
    result.curve.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  if (!best.empty())
    for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = best[i];
  model.zero_grad();
  return result;
}

}  // namespace dram
