#pragma once

// The forecasting model family: the monadic model f_m, the dyadic model f_d,
// the residual attention vector Delta = tanh|z_d - z_m| and the blended
// prediction (1 - Delta) * z_m + Delta * z_d, plus the baseline variants that
// feed one backbone with a subset of the four input streams.

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dram/autodiff.hpp"
#include "dram/backbone.hpp"
#include "dram/errors.hpp"
#include "dram/tensor.hpp"

namespace dram {

enum class Variant : std::uint8_t {
  AvatarAudioOnly = 0,
  AvatarMonadicOnly,
  HumanAudioOnly,
  HumanMonadicOnly,
  EarlyFusion,
  DramNoAttention,
  Dram,
};

inline constexpr std::array<Variant, 7> kAllVariants = {
    Variant::HumanAudioOnly, Variant::HumanMonadicOnly, Variant::AvatarAudioOnly, Variant::AvatarMonadicOnly,
    Variant::EarlyFusion,    Variant::DramNoAttention,  Variant::Dram};

/// Input streams a backbone can read, in channel order.
enum class Stream : std::uint8_t { AvatarAudio, AvatarPose, HumanAudio, HumanPose, MonadicPrediction };

struct VariantInfo {
  Variant variant;
  std::string_view key;    // config / file name
  std::string_view label;  // table row label
  std::vector<Stream> primary;
  bool two_stage;  // has a dyadic model fed by monadic predictions
};

inline const VariantInfo& variant_info(Variant v) {
  using S = Stream;
  static const std::array<VariantInfo, 7> table = {{
      {Variant::AvatarAudioOnly, "avatar_audio_only", "Avatar Audio Only", {S::AvatarAudio}, false},
      {Variant::AvatarMonadicOnly, "avatar_monadic_only", "Avatar Monadic Only", {S::AvatarAudio, S::AvatarPose}, false},
      {Variant::HumanAudioOnly, "human_audio_only", "Human Audio Only", {S::HumanAudio}, false},
      {Variant::HumanMonadicOnly, "human_monadic_only", "Human Monadic Only", {S::HumanAudio, S::HumanPose}, false},
      {Variant::EarlyFusion,
       "early_fusion",
       "Early Fusion",
       {S::HumanAudio, S::HumanPose, S::AvatarAudio, S::AvatarPose},
       false},
      {Variant::DramNoAttention, "dram_no_attention", "DRAM w/o Attention", {S::AvatarAudio, S::AvatarPose}, true},
      {Variant::Dram, "dram", "DRAM", {S::AvatarAudio, S::AvatarPose}, true},
  }};
  return table[static_cast<std::size_t>(v)];
}

inline std::string_view variant_key(Variant v) { return variant_info(v).key; }
inline std::string_view variant_label(Variant v) { return variant_info(v).label; }

inline std::optional<Variant> parse_variant(std::string_view s) {
  for (std::size_t i = 0; i < 7; ++i) {
    const auto v = static_cast<Variant>(i);
    if (variant_key(v) == s) return v;
  }
  return std::nullopt;
}

inline std::optional<BackboneKind> parse_backbone(std::string_view s) {
  if (s == "tcn") return BackboneKind::Tcn;
  if (s == "lstm") return BackboneKind::Lstm;
  return std::nullopt;
}

/// The dyadic model's channels: interlocutor audio and pose plus the monadic
/// prediction buffer.
inline const std::vector<Stream>& dyadic_streams() {
  static const std::vector<Stream> s = {Stream::HumanAudio, Stream::HumanPose, Stream::MonadicPrediction};
  return s;
}

struct ModelDims {
  std::size_t audio = 23;  // a
  std::size_t pose = 48;   // p
  std::size_t history = 32;  // k

  std::size_t stream_dim(Stream s) const {
    return s == Stream::AvatarAudio || s == Stream::HumanAudio ? audio : pose;
  }
  std::size_t channels(const std::vector<Stream>& streams) const {
    std::size_t n = 0;
    for (Stream s : streams) n += stream_dim(s);
    return n;
  }
  friend bool operator==(const ModelDims&, const ModelDims&) = default;
};

struct ModelOptions {
  /// Stop gradients through Delta (ablation).
  bool detach_attention = false;
  /// The dyadic model reads monadic predictions up to and including the
  /// frame being predicted; when false the buffer ends one frame earlier.
  bool zm_includes_current = true;
  friend bool operator==(const ModelOptions&, const ModelOptions&) = default;
};

/// Backbone hyperparameters; input and output sizes are filled in per variant.
struct BackboneSpec {
  BackboneKind kind = BackboneKind::Tcn;
  TcnConfig tcn;
  LstmConfig lstm;

  BackboneConfig resolve(std::size_t in, std::size_t out) const {
    if (kind == BackboneKind::Tcn) {
      TcnConfig c = tcn;
      c.in_channels = in;
      c.out_dim = out;
      return c;
    }
    LstmConfig c = lstm;
    c.in_dim = in;
    c.out_dim = out;
    return c;
  }
};

/// Pose column used for frames before the start of a sequence: identity
/// quaternions when p is a multiple of 4, zeros otherwise.
inline std::vector<double> warmup_pose(std::size_t p) {
  std::vector<double> v(p, 0.0);
  if (p % 4 == 0)
    for (std::size_t j = 0; j < p; j += 4) v[j] = 1.0;
  return v;
}

/// Unit-normalises each (w, x, y, z) block when p is a multiple of 4.
inline void renormalize_pose(std::vector<double>& v) {
  if (v.size() % 4 != 0) return;
  for (std::size_t j = 0; j < v.size(); j += 4) {
    const double n = std::sqrt(v[j] * v[j] + v[j + 1] * v[j + 1] + v[j + 2] * v[j + 2] + v[j + 3] * v[j + 3]);
    if (n > 0.0 && std::isfinite(n)) {
      for (std::size_t c = 0; c < 4; ++c) v[j + c] /= n;
    } else {
      v[j] = 1.0;
      v[j + 1] = v[j + 2] = v[j + 3] = 0.0;
    }
  }
}

class PoseModel {
 public:
  PoseModel() = default;

  PoseModel(Variant variant, const BackboneSpec& spec, ModelDims dims, std::uint64_t seed, ModelOptions opts = {})
      : variant_(variant), kind_(spec.kind), dims_(dims), opts_(opts) {
    if (dims.audio == 0 || dims.pose == 0 || dims.history == 0) {
      throw ConfigError("model: a, p and k must be positive");
    }
    const auto& info = variant_info(variant);
    primary_ = Backbone(spec.resolve(dims.channels(info.primary), dims.pose), dims.history, derive_seed(seed, "primary"),
                        info.two_stage ? "monadic." : "model.");
    if (info.two_stage) {
      dyadic_ = Backbone(spec.resolve(dims.channels(dyadic_streams()), dims.pose), dims.history,
                         derive_seed(seed, "dyadic"), "dyadic.");
    }
  }

  /// Reassembles a model from stored backbones (checkpoint loading).
  PoseModel(Variant variant, ModelDims dims, ModelOptions opts, Backbone primary, std::optional<Backbone> dyadic)
      : variant_(variant), kind_(primary.kind()), dims_(dims), opts_(opts), primary_(std::move(primary)),
        dyadic_(std::move(dyadic)) {
    const auto& info = variant_info(variant);
    if (primary_.in_dim() != dims.channels(info.primary) || primary_.out_dim() != dims.pose ||
        primary_.history() != dims.history) {
      throw ConfigError("model: primary backbone dimensions do not match variant '" + std::string(info.key) + "'");
    }
    if (info.two_stage != dyadic_.has_value()) {
      throw ConfigError("model: variant '" + std::string(info.key) + "' " +
                        (info.two_stage ? "needs" : "must not have") + " a dyadic backbone");
    }
    if (dyadic_ && (dyadic_->in_dim() != dims.channels(dyadic_streams()) || dyadic_->out_dim() != dims.pose ||
                    dyadic_->history() != dims.history)) {
      throw ConfigError("model: dyadic backbone dimensions do not match");
    }
  }

  Variant variant() const noexcept { return variant_; }
  BackboneKind kind() const noexcept { return kind_; }
  const ModelDims& dims() const noexcept { return dims_; }
  const ModelOptions& options() const noexcept { return opts_; }
  ModelOptions& options() noexcept { return opts_; }
  bool two_stage() const noexcept { return dyadic_.has_value(); }

  /// f (single-stage variants) or f_m.
  Backbone& primary() noexcept { return primary_; }
  const Backbone& primary() const noexcept { return primary_; }
  Backbone& dyadic() {
    if (!dyadic_) throw ConfigError("model: variant has no dyadic backbone");
    return *dyadic_;
  }
  const Backbone& dyadic() const {
    if (!dyadic_) throw ConfigError("model: variant has no dyadic backbone");
    return *dyadic_;
  }

  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out;
    for (auto& p : primary_.parameters()) out.push_back(&p);
    if (dyadic_)
      for (auto& p : dyadic_->parameters()) out.push_back(&p);
    return out;
  }
  std::vector<const Parameter*> parameters() const {
    std::vector<const Parameter*> out;
    for (const auto& p : primary_.parameters()) out.push_back(&p);
    if (dyadic_)
      for (const auto& p : dyadic_->parameters()) out.push_back(&p);
    return out;
  }
  std::size_t parameter_count() const {
    return primary_.parameter_count() + (dyadic_ ? dyadic_->parameter_count() : 0);
  }

  void zero_grad() {
    for (Parameter* p : parameters()) p->zero_grad();
  }

 private:
  Variant variant_ = Variant::Dram;
  BackboneKind kind_ = BackboneKind::Tcn;
  ModelDims dims_;
  ModelOptions opts_;
  Backbone primary_;
  std::optional<Backbone> dyadic_;
};

// ---------------------------------------------------------------------------
// Single-frame operations on k-frame histories (tensors are channels x k).

namespace detail {

inline Tensor stack_rows(std::initializer_list<const Tensor*> parts, const char* what) {
  const std::size_t cols = (*parts.begin())->cols();
  std::size_t rows = 0;
  for (const Tensor* p : parts) {
    if (p->rank() != 2 || p->cols() != cols) {
      throw DimensionError(std::string(what) + ": history " + shape_string(p->shape()) + " does not match " +
                           shape_string((*parts.begin())->shape()));
    }
    rows += p->rows();
  }
  Tensor out({rows, cols});
  std::size_t off = 0;
  for (const Tensor* p : parts) {
    std::copy(p->storage().begin(), p->storage().end(), out.storage().begin() + static_cast<std::ptrdiff_t>(off));
    off += p->size();
  }
  return out;
}

}  // namespace detail

/// z^m_t = f_m(X_{t-1}, Y_{t-1})
inline Tensor monadic_step(Backbone& fm, const Tensor& X, const Tensor& Y) {
  Tensor H = detail::stack_rows({&X, &Y}, "monadic_step");
  if (H.rows() != fm.in_dim()) {
    throw DimensionError("monadic_step: " + std::to_string(X.rows()) + " audio + " + std::to_string(Y.rows()) +
                         " pose channels, model expects " + std::to_string(fm.in_dim()));
  }
  return fm.forward(H);
}

/// z^d_t = f_d(X^H, Y^H, Z^m). Z^m must hold the k most recent monadic predictions.
inline Tensor dyadic_step(Backbone& fd, const Tensor& Xh, const Tensor& Yh, const Tensor& Zm) {
  if (Zm.rank() != 2 || Zm.cols() < fd.history()) {
    throw InputError("dyadic_step: monadic buffer holds " + std::to_string(Zm.rank() == 2 ? Zm.cols() : 0) +
                     " frames, needs " + std::to_string(fd.history()) + " (pad during warm-up)");
  }
  Tensor H = detail::stack_rows({&Xh, &Yh, &Zm}, "dyadic_step");
  if (H.rows() != fd.in_dim()) {
    throw DimensionError("dyadic_step: " + std::to_string(H.rows()) + " channels, model expects " +
                         std::to_string(fd.in_dim()));
  }
  return fd.forward(H);
}

/// Delta_i = tanh(|zd_i - zm_i|), capped just below 1.
inline std::vector<double> residual_attention(std::span<const double> zm, std::span<const double> zd) {
  if (zm.size() != zd.size()) {
    throw DimensionError("residual_attention: sizes " + std::to_string(zm.size()) + " and " + std::to_string(zd.size()));
  }
  std::vector<double> delta(zm.size());
  for (std::size_t i = 0; i < zm.size(); ++i) delta[i] = kernels::gate(std::fabs(zd[i] - zm[i]));
  return delta;
}

/// (1 - Delta) * zm + Delta * zd, component-wise.
inline std::vector<double> dram_combine(std::span<const double> zm, std::span<const double> zd,
                                        std::span<const double> delta) {
  if (zm.size() != zd.size() || zm.size() != delta.size()) {
    throw DimensionError("dram_combine: sizes " + std::to_string(zm.size()) + ", " + std::to_string(zd.size()) +
                         ", " + std::to_string(delta.size()));
  }
  std::vector<double> y(zm.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = (1.0 - delta[i]) * zm[i] + delta[i] * zd[i];
  return y;
}

/// Taped residual attention; the backward pass reaches both backbones unless detached.
inline Var residual_attention(Tape& tape, Var zm, Var zd, bool detach = false) {
  if (detach) {
    zm = tape.detach(zm);
    zd = tape.detach(zd);
  }
  return gate(tape, abs(tape, sub(tape, zd, zm)));
}

inline Var dram_combine(Tape& tape, Var zm, Var zd, Var delta) {
  return add(tape, mul(tape, one_minus(tape, delta), zm), mul(tape, delta, zd));
}

/// Mean over frames of the squared L2 error; predictions and targets are p x T.
inline double dram_loss(const Tensor& pred, const Tensor& target) {
  if (!pred.same_shape(target)) {
    throw DimensionError("dram_loss: predictions " + shape_string(pred.shape()) + " vs targets " +
                         shape_string(target.shape()));
  }
  Tape tape;
  return tape.value(mse_loss(tape, tape.constant(pred), tape.constant(target)))[0];
}

/// k-frame histories for one prediction. Unused streams may be left empty.
struct StepInputs {
  Tensor avatar_audio;   // X_{t-1}: a x k
  Tensor avatar_pose;    // Y-hat_{t-1}: p x k
  Tensor human_audio;    // X^H_{t-1}: a x k
  Tensor human_pose;     // Y^H_{t-1}: p x k
  Tensor monadic_buffer; // z^m_{t-k} .. z^m_{t-1}: p x k (two-stage variants)
};

struct StepOutput {
  std::vector<double> pose;
  std::vector<double> monadic;    // z^m (two-stage variants)
  std::vector<double> dyadic;     // z^d (two-stage variants)
  std::vector<double> attention;  // Delta (Dram only)
};

namespace detail {

inline const Tensor& stream_history(const StepInputs& in, Stream s) {
  switch (s) {
    case Stream::AvatarAudio: return in.avatar_audio;
    case Stream::AvatarPose: return in.avatar_pose;
    case Stream::HumanAudio: return in.human_audio;
    case Stream::HumanPose: return in.human_pose;
    case Stream::MonadicPrediction: return in.monadic_buffer;
  }
  return in.avatar_audio;
}

inline Tensor assemble(const StepInputs& in, const std::vector<Stream>& streams, const ModelDims& dims,
                       std::string_view variant) {
  std::size_t rows = 0;
  for (Stream s : streams) {
    const Tensor& h = stream_history(in, s);
    if (h.rank() != 2 || h.rows() != dims.stream_dim(s) || h.cols() != dims.history) {
      throw ConfigError("variant '" + std::string(variant) + "' needs a " + std::to_string(dims.stream_dim(s)) + "x" +
                        std::to_string(dims.history) + " history for stream " +
                        std::to_string(static_cast<int>(s)) + ", got " + shape_string(h.shape()));
    }
    rows += h.rows();
  }
  Tensor H({rows, dims.history});
  std::size_t off = 0;
  for (Stream s : streams) {
    const auto& src = stream_history(in, s).storage();
    std::copy(src.begin(), src.end(), H.storage().begin() + static_cast<std::ptrdiff_t>(off));
    off += src.size();
  }
  return H;
}

}  // namespace detail

/// One prediction of any variant from explicit histories. For two-stage
/// variants `monadic_buffer` holds the k monadic predictions preceding frame
/// t; when the model reads the current prediction, z^m_t is shifted in.
inline StepOutput variant_step(PoseModel& model, const StepInputs& in) {
  const auto& info = variant_info(model.variant());
  const ModelDims& d = model.dims();
  StepOutput out;
  const Tensor primary = model.primary().forward(detail::assemble(in, info.primary, d, info.key));
  if (!info.two_stage) {
    out.pose = primary.storage();
    return out;
  }
  out.monadic = primary.storage();
  StepInputs dyadic_in;
  dyadic_in.human_audio = in.human_audio;
  dyadic_in.human_pose = in.human_pose;
  dyadic_in.monadic_buffer = in.monadic_buffer;
  Tensor& zm = dyadic_in.monadic_buffer;
  if (model.options().zm_includes_current && zm.rank() == 2 && zm.rows() == d.pose && zm.cols() == d.history) {
    for (std::size_t r = 0; r < d.pose; ++r) {
      for (std::size_t c = 0; c + 1 < d.history; ++c) zm(r, c) = zm(r, c + 1);
      zm(r, d.history - 1) = out.monadic[r];
    }
  }
  const Tensor zd = model.dyadic().forward(detail::assemble(dyadic_in, dyadic_streams(), d, info.key));
  out.dyadic = zd.storage();
  if (model.variant() == Variant::DramNoAttention) {
    out.pose = out.dyadic;
    return out;
  }
  out.attention = residual_attention(out.monadic, out.dyadic);
  out.pose = dram_combine(out.monadic, out.dyadic, out.attention);
  return out;
}

}  // namespace dram
