#pragma once

// Reverse-mode differentiation over a linear tape of operation records.
//
// Every op computes its value eagerly and appends a record holding the
// saved activations and a backward closure. Tape::backward replays the
// records in reverse order, accumulating into Parameter::grad at the leaves.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dram/errors.hpp"
#include "dram/tensor.hpp"

namespace dram {

struct Var {
  std::size_t id = 0;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, const Tensor& grad_out)>;

  Tape() { nodes_.reserve(256); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value) { return add_node(std::move(value), false, nullptr, {}); }

  /// Leaf bound to a Parameter; backward accumulates into p.grad.
  /// The parameter must outlive the tape.
  Var param(Parameter& p) { return add_node(p.value, true, &p, {}); }

  /// Appends an op record. `requires_grad` should be the OR over the inputs.
  Var push(Tensor value, bool requires_grad, Backward backward) {
    return add_node(std::move(value), requires_grad, nullptr, requires_grad ? std::move(backward) : Backward{});
  }

  /// Same value, cut from the graph.
  Var detach(Var v) { return constant(value(v)); }

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  bool any_requires_grad(std::initializer_list<Var> vs) const {
    for (Var v : vs) {
      if (requires_grad(v)) return true;
    }
    return false;
  }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Gradient buffer of v, allocated on first use; nullptr when v needs no gradient.
  Tensor* grad(Var v) {
    Node& n = nodes_[v.id];
    if (!n.requires_grad) return nullptr;
    if (n.grad.empty() && !n.value.empty()) n.grad = Tensor(n.value.shape(), 0.0);
    return &n.grad;
  }

  /// Seeds d(loss)/d(loss) = 1 and replays the tape. `loss` must be a single value.
  void backward(Var loss) {
    if (value(loss).size() != 1) {
      throw DimensionError("backward: loss must hold one value, got shape " +
                           shape_string(value(loss).shape()));
    }
    Tensor* g = grad(loss);
    if (g == nullptr) return;
    (*g)[0] += 1.0;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || n.grad.empty()) continue;
      if (n.param != nullptr) {
        auto& dst = n.param->grad.storage();
        const auto& src = n.grad.storage();
        for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
      } else if (n.backward) {
        // The closure may allocate grads of earlier nodes but never appends.
        n.backward(*this, n.grad);
      }
    }
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    Parameter* param = nullptr;
    Backward backward;
  };

  Var add_node(Tensor value, bool requires_grad, Parameter* param, Backward backward) {
    nodes_.push_back(Node{std::move(value), Tensor{}, requires_grad, param, std::move(backward)});
    return Var{nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Shared numeric kernels. The streaming inference path calls the same
// routines so that its results agree with the taped path bit for bit.

namespace kernels {

/// out[o, t] = b[o] + sum_i W[o, i] * x[i, t]
inline void affine(const Tensor& W, const Tensor* b, const double* x, std::size_t cols, double* out) {
  const std::size_t n_out = W.rows();
  const std::size_t n_in = W.cols();
  for (std::size_t o = 0; o < n_out; ++o) {
    double* orow = out + o * cols;
    const double b0 = b ? (*b)[o] : 0.0;
    for (std::size_t t = 0; t < cols; ++t) orow[t] = b0;
    for (std::size_t i = 0; i < n_in; ++i) {
      const double w = W(o, i);
      const double* xrow = x + i * cols;
      for (std::size_t t = 0; t < cols; ++t) orow[t] += w * xrow[t];
    }
  }
}

/// out[c, t] = bias[c] + sum_j sum_i kernel[c, i, j] * x[i, t - j * dilation]
/// with x[., s] = 0 for s < 0.
inline void causal_conv(const Tensor& kernel, const Tensor* bias, const double* x, std::size_t frames,
                        std::size_t dilation, double* out) {
  const std::size_t c_out = kernel.shape()[0];
  const std::size_t c_in = kernel.shape()[1];
  const std::size_t taps = kernel.shape()[2];
  const auto& kv = kernel.storage();
  for (std::size_t c = 0; c < c_out; ++c) {
    double* orow = out + c * frames;
    const double b0 = bias ? (*bias)[c] : 0.0;
    for (std::size_t t = 0; t < frames; ++t) orow[t] = b0;
    for (std::size_t j = 0; j < taps; ++j) {
      const std::size_t shift = j * dilation;
      if (shift >= frames) continue;
      for (std::size_t i = 0; i < c_in; ++i) {
        const double w = kv[(c * c_in + i) * taps + j];
        const double* xrow = x + i * frames;
        for (std::size_t t = shift; t < frames; ++t) orow[t] += w * xrow[t - shift];
      }
    }
  }
}

inline double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

/// tanh capped at the largest double below 1, so gate values stay in [0, 1)
/// even where tanh rounds to 1.
inline double gate(double v) {
  static const double top = std::nextafter(1.0, 0.0);
  return std::min(std::tanh(v), top);
}

}  // namespace kernels

// ---------------------------------------------------------------------------
// Ops

namespace detail {

inline std::vector<std::size_t> matrix_shape_like(const Tensor& x, std::size_t rows) {
  if (x.rank() <= 1) return {rows};
  return {rows, x.cols()};
}

inline void add_into(Tensor* dst, const Tensor& src) {
  if (dst == nullptr) return;
  auto& d = dst->storage();
  const auto& s = src.storage();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

}  // namespace detail

/// W x + b applied to every column of x.
inline Var linear(Tape& tape, Var x, Var W, Var b) {
  const Tensor& xv = tape.value(x);
  const Tensor& Wv = tape.value(W);
  const Tensor& bv = tape.value(b);
  if (Wv.rank() != 2 || Wv.cols() != xv.rows() || bv.size() != Wv.rows()) {
    throw DimensionError("linear: weight " + shape_string(Wv.shape()) + " does not conform to input " +
                         shape_string(xv.shape()) + " and bias " + shape_string(bv.shape()));
  }
  const std::size_t cols = xv.cols();
  Tensor out(detail::matrix_shape_like(xv, Wv.rows()));
  kernels::affine(Wv, &bv, xv.storage().data(), cols, out.storage().data());
  return tape.push(std::move(out), tape.any_requires_grad({x, W, b}),
                   [x, W, b, cols](Tape& tp, const Tensor& g) {
                     const Tensor& xv = tp.value(x);
                     const Tensor& Wv = tp.value(W);
                     const std::size_t n_out = Wv.rows();
                     const std::size_t n_in = Wv.cols();
                     if (Tensor* gW = tp.grad(W)) {
                       for (std::size_t o = 0; o < n_out; ++o)
                         for (std::size_t i = 0; i < n_in; ++i) {
                           double s = 0.0;
                           for (std::size_t t = 0; t < cols; ++t) s += g[o * cols + t] * xv[i * cols + t];
                           (*gW)(o, i) += s;
                         }
                     }
                     if (Tensor* gb = tp.grad(b)) {
                       for (std::size_t o = 0; o < n_out; ++o) {
                         double s = 0.0;
                         for (std::size_t t = 0; t < cols; ++t) s += g[o * cols + t];
                         (*gb)[o] += s;
                       }
                     }
                     if (Tensor* gx = tp.grad(x)) {
                       for (std::size_t o = 0; o < n_out; ++o)
                         for (std::size_t i = 0; i < n_in; ++i) {
                           const double w = Wv(o, i);
                           for (std::size_t t = 0; t < cols; ++t) (*gx)[i * cols + t] += w * g[o * cols + t];
                         }
                     }
                   });
}

/// Causal dilated convolution over frames: x is C_in x T, kernel C_out x C_in x K.
/// Frames before t = 0 are zeros. Optional per-channel bias.
inline Var causal_conv1d(Tape& tape, Var x, Var kernel, std::size_t dilation, std::optional<Var> bias = {}) {
  if (dilation == 0) throw ParameterError("causal_conv1d: dilation must be >= 1");
  const Tensor& xv = tape.value(x);
  const Tensor& kv = tape.value(kernel);
  if (kv.rank() != 3 || kv.shape()[2] == 0 || xv.rank() != 2 || kv.shape()[1] != xv.rows()) {
    throw DimensionError("causal_conv1d: kernel " + shape_string(kv.shape()) + " does not conform to input " +
                         shape_string(xv.shape()));
  }
  const std::size_t c_out = kv.shape()[0];
  if (bias && tape.value(*bias).size() != c_out) {
    throw DimensionError("causal_conv1d: bias " + shape_string(tape.value(*bias).shape()) +
                         " does not match kernel " + shape_string(kv.shape()));
  }
  const std::size_t frames = xv.cols();
  Tensor out({c_out, frames});
  kernels::causal_conv(kv, bias ? &tape.value(*bias) : nullptr, xv.storage().data(), frames, dilation,
                       out.storage().data());
  bool rg = tape.any_requires_grad({x, kernel}) || (bias && tape.requires_grad(*bias));
  return tape.push(std::move(out), rg, [x, kernel, bias, dilation, frames](Tape& tp, const Tensor& g) {
    const Tensor& xv = tp.value(x);
    const Tensor& kv = tp.value(kernel);
    const std::size_t c_out = kv.shape()[0];
    const std::size_t c_in = kv.shape()[1];
    const std::size_t taps = kv.shape()[2];
    Tensor* gk = tp.grad(kernel);
    Tensor* gx = tp.grad(x);
    for (std::size_t c = 0; c < c_out; ++c) {
      const double* grow = g.storage().data() + c * frames;
      for (std::size_t j = 0; j < taps; ++j) {
        const std::size_t shift = j * dilation;
        if (shift >= frames) continue;
        for (std::size_t i = 0; i < c_in; ++i) {
          const std::size_t widx = (c * c_in + i) * taps + j;
          if (gk) {
            const double* xrow = xv.storage().data() + i * frames;
            double s = 0.0;
            for (std::size_t t = shift; t < frames; ++t) s += grow[t] * xrow[t - shift];
            (*gk)[widx] += s;
          }
          if (gx) {
            const double w = kv[widx];
            double* gxrow = gx->storage().data() + i * frames;
            for (std::size_t t = shift; t < frames; ++t) gxrow[t - shift] += w * grow[t];
          }
        }
      }
    }
    if (bias) {
      if (Tensor* gb = tp.grad(*bias)) {
        for (std::size_t c = 0; c < c_out; ++c) {
          double s = 0.0;
          for (std::size_t t = 0; t < frames; ++t) s += g[c * frames + t];
          (*gb)[c] += s;
        }
      }
    }
  });
}

enum class Unary { Tanh, Sigmoid, Relu, Abs, Gate };


inline const char* unary_name(Unary k) {
  switch (k) {
    case Unary::Tanh: return "tanh";
    case Unary::Sigmoid: return "sigmoid";
    case Unary::Relu: return "relu";
    case Unary::Abs: return "abs";
    case Unary::Gate: return "gate";
  }
  return "?";
}

inline double apply_unary(Unary k, double v) {
  switch (k) {
    case Unary::Tanh: return std::tanh(v);
    case Unary::Sigmoid: return kernels::sigmoid(v);
    case Unary::Relu: return v > 0.0 ? v : 0.0;
    case Unary::Abs: return std::fabs(v);
    case Unary::Gate: return kernels::gate(v);
  }
  return v;
}

/// Element-wise nonlinearity. The derivative of abs (and relu) at 0 is 0.
inline Var elementwise(Tape& tape, Unary kind, Var x) {
  Tensor out = tape.value(x);
  for (double& v : out.storage()) v = apply_unary(kind, v);
  return tape.push(std::move(out), tape.requires_grad(x), [x, kind](Tape& tp, const Tensor& g) {
    Tensor* gx = tp.grad(x);
    const Tensor& xv = tp.value(x);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = xv[i];
      double d = 0.0;
      switch (kind) {
        case Unary::Tanh:
        case Unary::Gate: {
          const double y = std::tanh(v);
          d = 1.0 - y * y;
          break;
        }
        case Unary::Sigmoid: {
          const double y = kernels::sigmoid(v);
          d = y * (1.0 - y);
          break;
        }
        case Unary::Relu: d = v > 0.0 ? 1.0 : 0.0; break;
        case Unary::Abs: d = v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); break;
      }
      (*gx)[i] += d * g[i];
    }
  });
}

inline Var tanh(Tape& t, Var x) { return elementwise(t, Unary::Tanh, x); }
inline Var sigmoid(Tape& t, Var x) { return elementwise(t, Unary::Sigmoid, x); }
inline Var relu(Tape& t, Var x) { return elementwise(t, Unary::Relu, x); }
inline Var abs(Tape& t, Var x) { return elementwise(t, Unary::Abs, x); }
inline Var gate(Tape& t, Var x) { return elementwise(t, Unary::Gate, x); }

inline Var add(Tape& tape, Var a, Var b) {
  require_same_shape(tape.value(a), tape.value(b), "add");
  Tensor out = tape.value(a);
  const auto& bv = tape.value(b).storage();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return tape.push(std::move(out), tape.any_requires_grad({a, b}), [a, b](Tape& tp, const Tensor& g) {
    detail::add_into(tp.grad(a), g);
    detail::add_into(tp.grad(b), g);
  });
}

inline Var sub(Tape& tape, Var a, Var b) {
  require_same_shape(tape.value(a), tape.value(b), "sub");
  Tensor out = tape.value(a);
  const auto& bv = tape.value(b).storage();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return tape.push(std::move(out), tape.any_requires_grad({a, b}), [a, b](Tape& tp, const Tensor& g) {
    detail::add_into(tp.grad(a), g);
    if (Tensor* gb = tp.grad(b)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] -= g[i];
    }
  });
}

/// Hadamard product.
inline Var mul(Tape& tape, Var a, Var b) {
  require_same_shape(tape.value(a), tape.value(b), "mul");
  Tensor out = tape.value(a);
  const auto& bv = tape.value(b).storage();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return tape.push(std::move(out), tape.any_requires_grad({a, b}), [a, b](Tape& tp, const Tensor& g) {
    if (Tensor* ga = tp.grad(a)) {
      const Tensor& bv = tp.value(b);
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * bv[i];
    }
    if (Tensor* gb = tp.grad(b)) {
      const Tensor& av = tp.value(a);
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * av[i];
    }
  });
}

/// 1 - x
inline Var one_minus(Tape& tape, Var x) {
  Tensor out = tape.value(x);
  for (double& v : out.storage()) v = 1.0 - v;
  return tape.push(std::move(out), tape.requires_grad(x), [x](Tape& tp, const Tensor& g) {
    Tensor* gx = tp.grad(x);
    for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] -= g[i];
  });
}

inline Var sum_all(Tape& tape, Var x) {
  double s = 0.0;
  for (double v : tape.value(x).storage()) s += v;
  return tape.push(Tensor::scalar(s), tape.requires_grad(x), [x](Tape& tp, const Tensor& g) {
    Tensor* gx = tp.grad(x);
    for (double& v : gx->storage()) v += g[0];
  });
}

/// Stacks matrices with equal column counts along the channel axis.
inline Var concat_rows(Tape& tape, std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const std::size_t cols = tape.value(parts[0]).cols();
  std::size_t rows = 0;
  bool rg = false;
  for (Var p : parts) {
    const Tensor& v = tape.value(p);
    if (v.cols() != cols) {
      throw DimensionError("concat_rows: column mismatch " + shape_string(tape.value(parts[0]).shape()) + " vs " +
                           shape_string(v.shape()));
    }
    rows += v.rows();
    rg = rg || tape.requires_grad(p);
  }
  Tensor out({rows, cols});
  std::size_t offset = 0;
  for (Var p : parts) {
    const auto& src = tape.value(p).storage();
    std::copy(src.begin(), src.end(), out.storage().begin() + static_cast<std::ptrdiff_t>(offset));
    offset += src.size();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return tape.push(std::move(out), rg, [inputs](Tape& tp, const Tensor& g) {
    std::size_t offset = 0;
    for (Var p : inputs) {
      const std::size_t n = tp.value(p).size();
      if (Tensor* gp = tp.grad(p)) {
        for (std::size_t i = 0; i < n; ++i) (*gp)[i] += g[offset + i];
      }
      offset += n;
    }
  });
}

inline Var concat_rows(Tape& tape, std::initializer_list<Var> parts) {
  return concat_rows(tape, std::span<const Var>(parts.begin(), parts.size()));
}

/// Joins matrices with equal row counts along the frame axis.
inline Var concat_cols(Tape& tape, std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t rows = tape.value(parts[0]).rows();
  std::size_t cols = 0;
  bool rg = false;
  for (Var p : parts) {
    const Tensor& v = tape.value(p);
    if (v.rows() != rows) {
      throw DimensionError("concat_cols: row mismatch " + shape_string(tape.value(parts[0]).shape()) + " vs " +
                           shape_string(v.shape()));
    }
    cols += v.cols();
    rg = rg || tape.requires_grad(p);
  }
  Tensor out({rows, cols});
  std::size_t c0 = 0;
  for (Var p : parts) {
    const Tensor& v = tape.value(p);
    const std::size_t pc = v.cols();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < pc; ++c) out(r, c0 + c) = v[r * pc + c];
    c0 += pc;
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return tape.push(std::move(out), rg, [inputs, rows, cols](Tape& tp, const Tensor& g) {
    std::size_t c0 = 0;
    for (Var p : inputs) {
      const std::size_t pc = tp.value(p).cols();
      if (Tensor* gp = tp.grad(p)) {
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < pc; ++c) (*gp)[r * pc + c] += g[r * cols + c0 + c];
      }
      c0 += pc;
    }
  });
}

/// Columns [begin, end) of a matrix.
inline Var slice_cols(Tape& tape, Var x, std::size_t begin, std::size_t end) {
  const Tensor& xv = tape.value(x);
  const std::size_t cols = xv.cols();
  if (begin > end || end > cols) {
    throw DimensionError("slice_cols: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") outside " + shape_string(xv.shape()));
  }
  const std::size_t rows = xv.rows();
  const std::size_t n = end - begin;
  Tensor out({rows, n});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < n; ++c) out(r, c) = xv[r * cols + begin + c];
  return tape.push(std::move(out), tape.requires_grad(x), [x, begin, n, rows, cols](Tape& tp, const Tensor& g) {
    Tensor* gx = tp.grad(x);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < n; ++c) (*gx)[r * cols + begin + c] += g[r * n + c];
  });
}

/// Rows [begin, end) of a matrix (or entries of a vector).
inline Var slice_rows(Tape& tape, Var x, std::size_t begin, std::size_t end) {
  const Tensor& xv = tape.value(x);
  if (begin > end || end > xv.rows()) {
    throw DimensionError("slice_rows: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") outside " + shape_string(xv.shape()));
  }
  const std::size_t cols = xv.cols();
  std::vector<std::size_t> shape = xv.shape();
  shape[0] = end - begin;
  const auto first = xv.storage().begin() + static_cast<std::ptrdiff_t>(begin * cols);
  Tensor out(shape, std::vector<double>(first, first + static_cast<std::ptrdiff_t>((end - begin) * cols)));
  return tape.push(std::move(out), tape.requires_grad(x), [x, begin, cols](Tape& tp, const Tensor& g) {
    Tensor* gx = tp.grad(x);
    for (std::size_t i = 0; i < g.size(); ++i) (*gx)[begin * cols + i] += g[i];
  });
}

/// Sum of squared errors divided by the number of frames (columns):
///   (1/T) sum_t ||pred_t - target_t||^2
inline Var mse_loss(Tape& tape, Var pred, Var target) {
  const Tensor& pv = tape.value(pred);
  const Tensor& tv = tape.value(target);
  require_same_shape(pv, tv, "mse_loss");
  const double frames = static_cast<double>(pv.cols());
  double s = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    const double d = pv[i] - tv[i];
    s += d * d;
  }
  return tape.push(Tensor::scalar(s / frames), tape.any_requires_grad({pred, target}),
                   [pred, target, frames](Tape& tp, const Tensor& g) {
                     const Tensor& pv = tp.value(pred);
                     const Tensor& tv = tp.value(target);
                     const double scale = 2.0 * g[0] / frames;
                     Tensor* gp = tp.grad(pred);
                     Tensor* gt = tp.grad(target);
                     for (std::size_t i = 0; i < pv.size(); ++i) {
                       const double d = scale * (pv[i] - tv[i]);
                       if (gp) (*gp)[i] += d;
                       if (gt) (*gt)[i] -= d;
                     }
                   });
}

// ---------------------------------------------------------------------------
// LSTM cell

namespace kernels {

/// Gate pre-activations z = b + Wx x + Wh h for B columns, then the standard
/// (input, forget, cell, output) recurrence. Writes h and c (hidden x B) and,
/// when `gates` is non-null, the post-activation gates (4 hidden x B).
inline void lstm_cell(const Tensor& Wx, const Tensor& Wh, const Tensor& b, const double* x, const double* h_prev,
                      const double* c_prev, std::size_t batch, double* h, double* c, double* gates) {
  const std::size_t hidden = Wh.cols();
  std::vector<double> z(4 * hidden * batch);
  kernels::affine(Wx, &b, x, batch, z.data());
  for (std::size_t o = 0; o < 4 * hidden; ++o) {
    double* zrow = z.data() + o * batch;
    for (std::size_t i = 0; i < hidden; ++i) {
      const double w = Wh(o, i);
      const double* hrow = h_prev + i * batch;
      for (std::size_t t = 0; t < batch; ++t) zrow[t] += w * hrow[t];
    }
  }
  for (std::size_t u = 0; u < hidden; ++u) {
    for (std::size_t t = 0; t < batch; ++t) {
      const double ig = sigmoid(z[(0 * hidden + u) * batch + t]);
      const double fg = sigmoid(z[(1 * hidden + u) * batch + t]);
      const double gg = std::tanh(z[(2 * hidden + u) * batch + t]);
      const double og = sigmoid(z[(3 * hidden + u) * batch + t]);
      const double cv = fg * c_prev[u * batch + t] + ig * gg;
      c[u * batch + t] = cv;
      h[u * batch + t] = og * std::tanh(cv);
      if (gates) {
        gates[(0 * hidden + u) * batch + t] = ig;
        gates[(1 * hidden + u) * batch + t] = fg;
        gates[(2 * hidden + u) * batch + t] = gg;
        gates[(3 * hidden + u) * batch + t] = og;
      }
    }
  }
}

}  // namespace kernels

/// One LSTM step over a batch of columns. x: d_in x B, h/c: d_h x B,
/// Wx: 4d_h x d_in, Wh: 4d_h x d_h, b: 4d_h (gate order i, f, g, o).
/// Returns the stacked state [h; c] of shape 2d_h x B; split with slice_rows.
inline Var lstm_cell_step(Tape& tape, Var x, Var h_prev, Var c_prev, Var Wx, Var Wh, Var b) {
  const Tensor& xv = tape.value(x);
  const Tensor& hv = tape.value(h_prev);
  const Tensor& cv = tape.value(c_prev);
  const Tensor& Wxv = tape.value(Wx);
  const Tensor& Whv = tape.value(Wh);
  const Tensor& bv = tape.value(b);
  const std::size_t hidden = Whv.cols();
  const std::size_t batch = xv.cols();
  if (Wxv.rank() != 2 || Whv.rank() != 2 || Wxv.rows() != 4 * hidden || Whv.rows() != 4 * hidden ||
      bv.size() != 4 * hidden || Wxv.cols() != xv.rows()) {
    throw DimensionError("lstm_cell_step: parameters Wx " + shape_string(Wxv.shape()) + ", Wh " +
                         shape_string(Whv.shape()) + ", b " + shape_string(bv.shape()) + " do not conform to input " +
                         shape_string(xv.shape()));
  }
  if (hv.rows() != hidden || cv.rows() != hidden || hv.cols() != batch || cv.cols() != batch) {
    throw DimensionError("lstm_cell_step: state h " + shape_string(hv.shape()) + ", c " + shape_string(cv.shape()) +
                         " does not match hidden size " + std::to_string(hidden) + " and batch " +
                         std::to_string(batch));
  }
  Tensor out({2 * hidden, batch});
  auto gates = std::make_shared<std::vector<double>>(4 * hidden * batch);
  kernels::lstm_cell(Wxv, Whv, bv, xv.storage().data(), hv.storage().data(), cv.storage().data(), batch,
                     out.storage().data(), out.storage().data() + hidden * batch, gates->data());
  const bool rg = tape.any_requires_grad({x, h_prev, c_prev, Wx, Wh, b});
  Var self{tape.size()};
  return tape.push(std::move(out), rg, [=](Tape& tp, const Tensor& g) {
    const Tensor& xv = tp.value(x);
    const Tensor& hv = tp.value(h_prev);
    const Tensor& cpv = tp.value(c_prev);
    const Tensor& Wxv = tp.value(Wx);
    const Tensor& Whv = tp.value(Wh);
    const Tensor& state = tp.value(self);
    const std::size_t d_in = Wxv.cols();
    const auto& gt = *gates;
    std::vector<double> dz(4 * hidden * batch);
    Tensor* gcp = tp.grad(c_prev);
    for (std::size_t u = 0; u < hidden; ++u) {
      for (std::size_t t = 0; t < batch; ++t) {
        const std::size_t k = u * batch + t;
        const double ig = gt[(0 * hidden + u) * batch + t];
        const double fg = gt[(1 * hidden + u) * batch + t];
        const double gg = gt[(2 * hidden + u) * batch + t];
        const double og = gt[(3 * hidden + u) * batch + t];
        const double c = state[hidden * batch + k];
        const double tc = std::tanh(c);
        const double dh = g[k];
        const double dc = g[hidden * batch + k] + dh * og * (1.0 - tc * tc);
        dz[(0 * hidden + u) * batch + t] = dc * gg * ig * (1.0 - ig);
        dz[(1 * hidden + u) * batch + t] = dc * cpv[k] * fg * (1.0 - fg);
        dz[(2 * hidden + u) * batch + t] = dc * ig * (1.0 - gg * gg);
        dz[(3 * hidden + u) * batch + t] = dh * tc * og * (1.0 - og);
        if (gcp) (*gcp)[k] += dc * fg;
      }
    }
    Tensor* gWx = tp.grad(Wx);
    Tensor* gWh = tp.grad(Wh);
    Tensor* gb = tp.grad(b);
    Tensor* gx = tp.grad(x);
    Tensor* gh = tp.grad(h_prev);
    for (std::size_t o = 0; o < 4 * hidden; ++o) {
      const double* dzrow = dz.data() + o * batch;
      if (gb) {
        double s = 0.0;
        for (std::size_t t = 0; t < batch; ++t) s += dzrow[t];
        (*gb)[o] += s;
      }
      for (std::size_t i = 0; i < d_in; ++i) {
        if (gWx) {
          double s = 0.0;
          for (std::size_t t = 0; t < batch; ++t) s += dzrow[t] * xv[i * batch + t];
          (*gWx)(o, i) += s;
        }
        if (gx) {
          const double w = Wxv(o, i);
          for (std::size_t t = 0; t < batch; ++t) (*gx)[i * batch + t] += w * dzrow[t];
        }
      }
      for (std::size_t i = 0; i < hidden; ++i) {
        if (gWh) {
          double s = 0.0;
          for (std::size_t t = 0; t < batch; ++t) s += dzrow[t] * hv[i * batch + t];
          (*gWh)(o, i) += s;
        }
        if (gh) {
          const double w = Whv(o, i);
          for (std::size_t t = 0; t < batch; ++t) (*gh)[i * batch + t] += w * dzrow[t];
        }
      }
    }
  });
}

}  // namespace dram
