#pragma once

// Temporal backbones mapping a k-frame history (d_in x k, most recent frame
// last) to a d_out vector: a dilated causal TCN and a uni-directional LSTM.
//
// Three evaluation paths exist and agree to round-off:
//   forward_sequence  taped, one output per window of a longer stream
//   forward           a single window, no gradients
//   BackboneStream    incremental per-frame inference for rollouts

#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <string>
#include <variant>
#include <vector>

#include "dram/autodiff.hpp"
#include "dram/errors.hpp"
#include "dram/random.hpp"
#include "dram/tensor.hpp"

namespace dram {

enum class BackboneKind : std::uint8_t { Tcn = 0, Lstm = 1 };

inline std::string_view backbone_name(BackboneKind k) { return k == BackboneKind::Tcn ? "tcn" : "lstm"; }

struct TcnConfig {
  std::size_t in_channels = 0;
  std::size_t hidden_channels = 32;
  std::size_t kernel_size = 2;
  std::vector<std::size_t> dilations{1, 2, 4, 8};
  bool residual = true;
  std::size_t out_dim = 0;

  friend bool operator==(const TcnConfig&, const TcnConfig&) = default;
};

struct LstmConfig {
  std::size_t in_dim = 0;
  std::size_t hidden = 64;
  std::size_t layers = 1;
  std::size_t out_dim = 0;

  friend bool operator==(const LstmConfig&, const LstmConfig&) = default;
};

using BackboneConfig = std::variant<TcnConfig, LstmConfig>;

/// 1 + (K - 1) * sum(dilations)
inline std::size_t receptive_field(const TcnConfig& cfg) {
  std::size_t s = 0;
  for (std::size_t d : cfg.dilations) s += d;
  return 1 + (cfg.kernel_size - 1) * s;
}

inline std::size_t analytic_parameter_count(const TcnConfig& cfg) {
  std::size_t n = 0;
  std::size_t in = cfg.in_channels;
  const std::size_t h = cfg.hidden_channels;
  for (std::size_t i = 0; i < cfg.dilations.size(); ++i) {
    n += h * in * cfg.kernel_size + h;
    if (cfg.residual && in != h) n += h * in;
    in = h;
  }
  return n + cfg.out_dim * in + cfg.out_dim;
}

inline std::size_t analytic_parameter_count(const LstmConfig& cfg) {
  std::size_t n = 0;
  std::size_t in = cfg.in_dim;
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    n += 4 * cfg.hidden * in + 4 * cfg.hidden * cfg.hidden + 4 * cfg.hidden;
    in = cfg.hidden;
  }
  return n + cfg.out_dim * cfg.hidden + cfg.out_dim;
}

inline std::size_t analytic_parameter_count(const BackboneConfig& cfg) {
  return std::visit([](const auto& c) { return analytic_parameter_count(c); }, cfg);
}

class Backbone {
 public:
  Backbone() = default;

  /// Builds and initialises a backbone that reads `history` frames.
  /// Weights and biases are uniform in +-sqrt(1 / fan_in).
  Backbone(BackboneConfig cfg, std::size_t history, std::uint64_t seed, std::string prefix = {})
      : cfg_(std::move(cfg)), history_(history) {
    if (history_ == 0) throw ConfigError("backbone: history length must be positive");
    Rng rng(seed, "backbone-init");
    if (const auto* tcn = std::get_if<TcnConfig>(&cfg_)) {
      if (tcn->in_channels == 0 || tcn->hidden_channels == 0 || tcn->out_dim == 0 || tcn->kernel_size == 0 ||
          tcn->dilations.empty()) {
        throw ConfigError("tcn: channels, kernel size, output dim and dilations must be non-empty/positive");
      }
      for (std::size_t d : tcn->dilations)
        if (d == 0) throw ConfigError("tcn: dilations must be >= 1");
      if (receptive_field(*tcn) > history_) {
        throw ConfigError("tcn: receptive field " + std::to_string(receptive_field(*tcn)) +
                          " frames exceeds history length " + std::to_string(history_));
      }
      std::size_t in = tcn->in_channels;
      const std::size_t h = tcn->hidden_channels;
      for (std::size_t i = 0; i < tcn->dilations.size(); ++i) {
        const std::string b = prefix + "tcn.block" + std::to_string(i);
        add_uniform(b + ".kernel", {h, in, tcn->kernel_size}, in * tcn->kernel_size, rng);
        add_uniform(b + ".bias", {h}, in * tcn->kernel_size, rng);
        if (tcn->residual && in != h) add_uniform(b + ".proj", {h, in, 1}, in, rng);
        in = h;
      }
      add_uniform(prefix + "tcn.head.weight", {tcn->out_dim, in}, in, rng);
      add_uniform(prefix + "tcn.head.bias", {tcn->out_dim}, in, rng);
    } else {
      const auto& lstm = std::get<LstmConfig>(cfg_);
      if (lstm.in_dim == 0 || lstm.hidden == 0 || lstm.layers == 0 || lstm.out_dim == 0) {
        throw ConfigError("lstm: dimensions and layer count must be positive");
      }
      std::size_t in = lstm.in_dim;
      for (std::size_t l = 0; l < lstm.layers; ++l) {
        const std::string b = prefix + "lstm.layer" + std::to_string(l);
        add_uniform(b + ".wx", {4 * lstm.hidden, in}, lstm.hidden, rng);
        add_uniform(b + ".wh", {4 * lstm.hidden, lstm.hidden}, lstm.hidden, rng);
        add_uniform(b + ".b", {4 * lstm.hidden}, lstm.hidden, rng);
        in = lstm.hidden;
      }
      add_uniform(prefix + "lstm.head.weight", {lstm.out_dim, in}, in, rng);
      add_uniform(prefix + "lstm.head.bias", {lstm.out_dim}, in, rng);
    }
  }

  BackboneKind kind() const noexcept {
    return std::holds_alternative<TcnConfig>(cfg_) ? BackboneKind::Tcn : BackboneKind::Lstm;
  }
  const BackboneConfig& config() const noexcept { return cfg_; }
  std::size_t history() const noexcept { return history_; }
  std::size_t in_dim() const {
    return std::visit(
        [](const auto& c) -> std::size_t {
          if constexpr (std::is_same_v<std::decay_t<decltype(c)>, TcnConfig>)
            return c.in_channels;
          else
            return c.in_dim;
        },
        cfg_);
  }
  std::size_t out_dim() const {
    return std::visit([](const auto& c) { return c.out_dim; }, cfg_);
  }

  std::vector<Parameter>& parameters() noexcept { return params_; }
  const std::vector<Parameter>& parameters() const noexcept { return params_; }
  std::size_t parameter_count() const { return dram::parameter_count(params_); }

  Parameter& param(const std::string& suffix) {
    for (auto& p : params_)
      if (p.name.size() >= suffix.size() && p.name.compare(p.name.size() - suffix.size(), suffix.size(), suffix) == 0)
        return p;
    throw ConfigError("backbone has no parameter ending in '" + suffix + "'");
  }

  void zero_parameters() {
    for (auto& p : params_) p.value.fill(0.0);
  }

  /// `input` is d_in x (history - 1 + N): a stream whose window for output n
  /// covers columns [n, n + history). Returns d_out x N.
  Var forward_sequence(Tape& tape, Var input) {
    const Tensor& u = tape.value(input);
    if (u.rank() != 2 || u.rows() != in_dim()) {
      throw DimensionError("backbone: input " + shape_string(u.shape()) + " does not have " +
                           std::to_string(in_dim()) + " channels");
    }
    if (u.cols() < history_) {
      throw DimensionError("backbone: input " + shape_string(u.shape()) + " is shorter than the history of " +
                           std::to_string(history_) + " frames");
    }
    return kind() == BackboneKind::Tcn ? tcn_sequence(tape, input) : lstm_sequence(tape, input);
  }

  /// Single window H (d_in x history, most recent last) to a d_out vector.
  Tensor forward(const Tensor& H) {
    if (H.rank() != 2 || H.rows() != in_dim() || H.cols() != history_) {
      throw DimensionError("backbone: window " + shape_string(H.shape()) + " must be " + std::to_string(in_dim()) +
                           "x" + std::to_string(history_));
    }
    Tape tape;
    Var out = forward_sequence(tape, tape.constant(H));
    return Tensor({out_dim()}, tape.value(out).storage());
  }

  /// Outputs for every column of a d_in x T stream, each computed from the
  /// window ending at that column with zeros before column 0.
  Tensor forward_all(const Tensor& stream) {
    Tensor padded({in_dim(), history_ - 1 + stream.cols()});
    for (std::size_t r = 0; r < stream.rows(); ++r)
      for (std::size_t c = 0; c < stream.cols(); ++c) padded(r, history_ - 1 + c) = stream(r, c);
    Tape tape;
    Var out = forward_sequence(tape, tape.constant(std::move(padded)));
    return tape.value(out);
  }

 private:
  void add_uniform(std::string name, std::vector<std::size_t> shape, std::size_t fan_in, Rng& rng) {
    Tensor t(std::move(shape));
    const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
    for (double& v : t.storage()) v = rng.uniform(-bound, bound);
    params_.emplace_back(std::move(name), std::move(t));
  }

  Var tcn_sequence(Tape& tape, Var input) {
    const auto& cfg = std::get<TcnConfig>(cfg_);
    const std::size_t frames = tape.value(input).cols();
    std::size_t pi = 0;
    Var h = input;
    std::size_t in = cfg.in_channels;
    for (std::size_t i = 0; i < cfg.dilations.size(); ++i) {
      Var kernel = tape.param(params_[pi++]);
      Var bias = tape.param(params_[pi++]);
      Var a = relu(tape, causal_conv1d(tape, h, kernel, cfg.dilations[i], bias));
      if (cfg.residual) {
        Var skip = h;
        if (in != cfg.hidden_channels) skip = causal_conv1d(tape, h, tape.param(params_[pi++]), 1);
        a = add(tape, a, skip);
      }
      h = a;
      in = cfg.hidden_channels;
    }
    Var last = slice_cols(tape, h, history_ - 1, frames);
    Var W = tape.param(params_[pi++]);
    Var b = tape.param(params_[pi++]);
    return linear(tape, last, W, b);
  }

  Var lstm_sequence(Tape& tape, Var input) {
    const auto& cfg = std::get<LstmConfig>(cfg_);
    const std::size_t frames = tape.value(input).cols();
    const std::size_t n = frames - history_ + 1;
    std::vector<Var> steps;
    steps.reserve(history_);
    for (std::size_t j = 0; j < history_; ++j) steps.push_back(slice_cols(tape, input, j, j + n));
    std::size_t pi = 0;
    Var h{};
    for (std::size_t l = 0; l < cfg.layers; ++l) {
      Var Wx = tape.param(params_[pi++]);
      Var Wh = tape.param(params_[pi++]);
      Var b = tape.param(params_[pi++]);
      h = tape.constant(Tensor({cfg.hidden, n}));
      Var c = tape.constant(Tensor({cfg.hidden, n}));
      for (std::size_t j = 0; j < history_; ++j) {
        Var state = lstm_cell_step(tape, steps[j], h, c, Wx, Wh, b);
        h = slice_rows(tape, state, 0, cfg.hidden);
        c = slice_rows(tape, state, cfg.hidden, 2 * cfg.hidden);
        steps[j] = h;
      }
    }
    Var W = tape.param(params_[pi++]);
    Var b = tape.param(params_[pi++]);
    return linear(tape, h, W, b);
  }

  BackboneConfig cfg_;
  std::size_t history_ = 0;
  std::vector<Parameter> params_;
};

/// Incremental inference: push one input column per frame and receive the
/// output for the window ending at that column. The state starts as if an
/// all-zero stream had been pushed.
class BackboneStream {
 public:
  explicit BackboneStream(const Backbone& model) : model_(&model) { reset(); }

  void reset() {
    if (model_->kind() == BackboneKind::Tcn) {
      const auto& cfg = std::get<TcnConfig>(model_->config());
      layers_.clear();
      std::size_t in = cfg.in_channels;
      for (std::size_t d : cfg.dilations) {
        Ring r;
        r.channels = in;
        r.length = (cfg.kernel_size - 1) * d + 1;
        r.data.assign(r.channels * r.length, 0.0);
        layers_.push_back(std::move(r));
        in = cfg.hidden_channels;
      }
      const std::vector<double> zero(cfg.in_channels, 0.0);
      for (std::size_t i = 0; i < model_->history(); ++i) push_tcn(zero);
    } else {
      window_.assign(model_->history(), std::vector<double>(model_->in_dim(), 0.0));
    }
  }

  std::vector<double> push(const std::vector<double>& column) {
    if (column.size() != model_->in_dim()) {
      throw DimensionError("stream: column has " + std::to_string(column.size()) + " channels, expected " +
                           std::to_string(model_->in_dim()));
    }
    return model_->kind() == BackboneKind::Tcn ? push_tcn(column) : push_lstm(column);
  }

 private:
  struct Ring {
    std::size_t channels = 0;
    std::size_t length = 0;
    std::size_t head = 0;  // slot of the most recent column
    std::vector<double> data;
    void push(const std::vector<double>& col) {
      head = (head + 1) % length;
      for (std::size_t i = 0; i < channels; ++i) data[head * channels + i] = col[i];
    }
    double at(std::size_t channel, std::size_t lag) const {
      return data[((head + length - lag) % length) * channels + channel];
    }
  };

  std::vector<double> push_tcn(const std::vector<double>& column) {
    const auto& cfg = std::get<TcnConfig>(model_->config());
    const auto& params = model_->parameters();
    std::size_t pi = 0;
    std::vector<double> x = column;
    const std::size_t h = cfg.hidden_channels;
    for (std::size_t li = 0; li < layers_.size(); ++li) {
      Ring& ring = layers_[li];
      ring.push(x);
      const Tensor& kernel = params[pi++].value;
      const Tensor& bias = params[pi++].value;
      const std::size_t taps = cfg.kernel_size;
      std::vector<double> a(h);
      for (std::size_t c = 0; c < h; ++c) {
        double s = bias[c];
        for (std::size_t j = 0; j < taps; ++j) {
          const std::size_t lag = j * cfg.dilations[li];
          for (std::size_t i = 0; i < ring.channels; ++i) s += kernel[(c * ring.channels + i) * taps + j] * ring.at(i, lag);
        }
        a[c] = s > 0.0 ? s : 0.0;
      }
      if (cfg.residual) {
        if (ring.channels != h) {
          const Tensor& proj = params[pi++].value;
          for (std::size_t c = 0; c < h; ++c) {
            double s = 0.0;
            for (std::size_t i = 0; i < ring.channels; ++i) s += proj[c * ring.channels + i] * x[i];
            a[c] += s;
          }
        } else {
          for (std::size_t c = 0; c < h; ++c) a[c] += x[c];
        }
      }
      x = std::move(a);
    }
    const Tensor& W = params[pi++].value;
    const Tensor& b = params[pi++].value;
    std::vector<double> out(W.rows());
    kernels::affine(W, &b, x.data(), 1, out.data());
    return out;
  }

  std::vector<double> push_lstm(const std::vector<double>& column) {
    const auto& cfg = std::get<LstmConfig>(model_->config());
    const auto& params = model_->parameters();
    window_.pop_front();
    window_.push_back(column);
    std::vector<std::vector<double>> seq(window_.begin(), window_.end());
    std::vector<double> h(cfg.hidden), c(cfg.hidden), h2(cfg.hidden), c2(cfg.hidden);
    std::size_t pi = 0;
    for (std::size_t l = 0; l < cfg.layers; ++l) {
      const Tensor& Wx = params[pi++].value;
      const Tensor& Wh = params[pi++].value;
      const Tensor& b = params[pi++].value;
      std::fill(h.begin(), h.end(), 0.0);
      std::fill(c.begin(), c.end(), 0.0);
      for (auto& x : seq) {
        kernels::lstm_cell(Wx, Wh, b, x.data(), h.data(), c.data(), 1, h2.data(), c2.data(), nullptr);
        std::swap(h, h2);
        std::swap(c, c2);
        x = h;
      }
    }
    const Tensor& W = params[pi++].value;
    const Tensor& b = params[pi++].value;
    std::vector<double> out(W.rows());
    kernels::affine(W, &b, h.data(), 1, out.data());
    return out;
  }

  const Backbone* model_;
  std::vector<Ring> layers_;
  std::deque<std::vector<double>> window_;
};

/// Maps a d x T stream to per-column outputs (column t must depend on input
/// columns <= t for a causal model).
using SequenceFunction = std::function<Tensor(const Tensor&)>;

/// Perturbs columns t+1 .. k-1 of H and reports whether every output column
/// <= t stays bit-identical.
inline bool causality_probe(const SequenceFunction& fn, const Tensor& H, std::size_t t, std::uint64_t seed = 1) {
  if (H.rank() != 2 || t + 1 >= H.cols()) throw InputError("causality_probe: need 0 <= t < k - 1");
  const Tensor base = fn(H);
  Rng rng(seed, "causality-probe");
  for (int trial = 0; trial < 4; ++trial) {
    Tensor perturbed = H;
    for (std::size_t r = 0; r < H.rows(); ++r)
      for (std::size_t c = t + 1; c < H.cols(); ++c) perturbed(r, c) += rng.normal(0.0, 1.0);
    const Tensor out = fn(perturbed);
    for (std::size_t r = 0; r < base.rows(); ++r)
      for (std::size_t c = 0; c <= t; ++c)
        if (base(r, c) != out(r, c)) return false;
  }
  return true;
}

inline bool causality_probe(Backbone& model, const Tensor& H, std::size_t t, std::uint64_t seed = 1) {
  return causality_probe([&model](const Tensor& s) { return model.forward_all(s); }, H, t, seed);
}

}  // namespace dram
