#pragma once

// Frame-by-frame autoregressive inference for every variant.

#include <cstdint>
#include <deque>
#include <optional>
#include <vector>

#include "dram/backbone.hpp"
#include "dram/errors.hpp"
#include "dram/metrics.hpp"
#include "dram/model.hpp"
#include "dram/tensor.hpp"

namespace dram {

/// Observed streams, channels x frames. Frames before 0 read as warm-up.
struct Conditioning {
  const Tensor* X = nullptr;
  const Tensor* XH = nullptr;
  const Tensor* YH = nullptr;
};

namespace rollout_detail {

inline void append_audio(std::vector<double>& out, const Tensor* m, std::size_t a, long f) {
  if (f < 0) {
    out.insert(out.end(), a, 0.0);
    return;
  }
  const auto t = static_cast<std::size_t>(f);
  if (m == nullptr || m->rows() != a || t >= m->cols()) {
    throw DimensionError("rollout: conditioning stream does not cover frame " + std::to_string(f));
  }
  for (std::size_t r = 0; r < a; ++r) out.push_back((*m)(r, t));
}

inline void append_pose(std::vector<double>& out, const Tensor* m, std::size_t p, long f) {
  if (f < 0) {
    const auto w = warmup_pose(p);
    out.insert(out.end(), w.begin(), w.end());
    return;
  }
  append_audio(out, m, p, f);
}

}  // namespace rollout_detail

/// Builds the input column of `streams` for frame f. `pose` is the avatar
/// pose used as history at f, `zm` the monadic prediction paired with f.
inline std::vector<double> input_column(const std::vector<Stream>& streams, const ModelDims& d, const Conditioning& c,
                                        long f, const std::vector<double>& pose, const std::vector<double>& zm) {
  namespace rd = rollout_detail;
  std::vector<double> col;
  col.reserve(d.channels(streams));
  for (Stream s : streams) {
    switch (s) {
      case Stream::AvatarAudio: rd::append_audio(col, c.X, d.audio, f); break;
      case Stream::HumanAudio: rd::append_audio(col, c.XH, d.audio, f); break;
      case Stream::HumanPose: rd::append_pose(col, c.YH, d.pose, f); break;
      case Stream::AvatarPose:
        if (f < 0) {
          rd::append_pose(col, nullptr, d.pose, f);
        } else {
          col.insert(col.end(), pose.begin(), pose.end());
        }
        break;
      case Stream::MonadicPrediction:
        if (f < 0) {
          rd::append_pose(col, nullptr, d.pose, f);
        } else {
          col.insert(col.end(), zm.begin(), zm.end());
        }
        break;
    }
  }
  return col;
}

/// Streaming state of one rollout. Each `advance` consumes the avatar pose
/// at the current frame f and predicts frame f + 1. The pose buffer holds
/// exactly what the caller fed, so evaluation only ever sees the seed and
/// the model's own predictions.
class RolloutState {
 public:
  RolloutState(const PoseModel& model, Conditioning cond, long first_frame)
      : model_(&model), cond_(cond), frame_(first_frame), primary_(model.primary()) {
    const ModelDims& d = model.dims();
    if (model.two_stage()) dyadic_.emplace(model.dyadic());
    for (std::size_t i = 0; i < d.history; ++i) {
      pose_buffer_.push_back(warmup_pose(d.pose));
      zm_buffer_.push_back(warmup_pose(d.pose));
    }
  }

  long frame() const noexcept { return frame_; }
  const std::deque<std::vector<double>>& pose_buffer() const noexcept { return pose_buffer_; }
  const std::deque<std::vector<double>>& monadic_buffer() const noexcept { return zm_buffer_; }

  /// `pose` is the avatar pose at the current frame (ignored for f < 0).
  StepOutput advance(const std::vector<double>& pose) {
    const ModelDims& d = model_->dims();
    const auto& info = variant_info(model_->variant());
    const long f = frame_;
    const std::vector<double> hist = f < 0 ? warmup_pose(d.pose) : pose;
    if (hist.size() != d.pose) throw DimensionError("rollout: pose frame has wrong size");
    pose_buffer_.pop_front();
    pose_buffer_.push_back(hist);

    StepOutput out;
    const auto z = primary_.push(input_column(info.primary, d, cond_, f, hist, {}));
    ++frame_;
    if (!dyadic_) {
      out.pose = z;
      return out;
    }
    out.monadic = z;
    // zm_buffer_ ends with the monadic prediction for f.
    const std::vector<double> zm_f = zm_buffer_.back();
    zm_buffer_.pop_front();
    zm_buffer_.push_back(f + 1 < 0 ? warmup_pose(d.pose) : z);
    const std::vector<double>& zm_col = model_->options().zm_includes_current ? zm_buffer_.back() : zm_f;
    out.dyadic = dyadic_->push(input_column(dyadic_streams(), d, cond_, f, hist, zm_col));
    if (model_->variant() == Variant::DramNoAttention) {
      out.pose = out.dyadic;
      return out;
    }
    out.attention = residual_attention(out.monadic, out.dyadic);
    out.pose = dram_combine(out.monadic, out.dyadic, out.attention);
    return out;
  }

 private:
  const PoseModel* model_;
  Conditioning cond_;
  long frame_;
  BackboneStream primary_;
  std::optional<BackboneStream> dyadic_;
  std::deque<std::vector<double>> pose_buffer_;
  std::deque<std::vector<double>> zm_buffer_;
};

struct RolloutResult {
  Tensor poses;              // p x T; the first columns repeat the seed
  AttentionTrace attention;  // forecast frames only (Dram)
  std::size_t seed_frames = 0;
};

/// Seeds with the p x s history `seed` (frames 0..s-1) and forecasts frames
/// s..T-1, feeding each renormalised prediction back as history.
inline RolloutResult rollout(const PoseModel& model, Conditioning cond, const Tensor& seed, std::size_t T) {
  const ModelDims& d = model.dims();
  if (seed.rank() != 2 || seed.rows() != d.pose) {
    throw DimensionError("rollout: seed must be " + std::to_string(d.pose) + " x s, got " + shape_string(seed.shape()));
  }
  RolloutResult res;
  const std::size_t s = std::min(seed.cols(), T);
  res.seed_frames = s;
  res.poses = Tensor({d.pose, T});
  if (T == 0) return res;
  for (const Tensor* m : {cond.X, cond.XH, cond.YH}) {
    if (m != nullptr && m->cols() + 1 < T) throw DimensionError("rollout: conditioning streams shorter than T");
  }
  RolloutState state(model, cond, -static_cast<long>(d.history));
  std::vector<double> current = warmup_pose(d.pose);
  for (long f = -static_cast<long>(d.history); f + 1 < static_cast<long>(T); ++f) {
    if (f >= 0) {
      const auto t = static_cast<std::size_t>(f);
      if (t < s) current = seed.column(t);
      res.poses.set_column(t, current);
    }
    StepOutput out = state.advance(current);
    const long next = f + 1;
    if (next >= static_cast<long>(s)) {
      renormalize_pose(out.pose);
      current = std::move(out.pose);
      if (!out.attention.empty()) res.attention.delta.push_back(std::move(out.attention));
    }
  }
  const std::size_t last = T - 1;
  res.poses.set_column(last, last < s ? seed.column(last) : current);
  return res;
}

}  // namespace dram
