#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dram/errors.hpp"
#include "dram/tensor.hpp"

namespace dram {

enum class OptimizerKind { Sgd, Adam };

inline std::string_view optimizer_name(OptimizerKind k) { return k == OptimizerKind::Sgd ? "sgd" : "adam"; }

inline std::optional<OptimizerKind> parse_optimizer(std::string_view s) {
  if (s == "sgd") return OptimizerKind::Sgd;
  if (s == "adam") return OptimizerKind::Adam;
  return std::nullopt;
}

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Adam;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double clip_norm = 5.0;
};

/// Global-norm clipping followed by an SGD or Adam update.
class Optimizer {
 public:
  Optimizer(OptimizerConfig cfg, std::vector<Parameter*> params) : cfg_(cfg), params_(std::move(params)) {
    if (!(cfg_.learning_rate >= 0.0) || !std::isfinite(cfg_.learning_rate)) {
      throw ConfigError("optimizer: learning rate must be finite and >= 0");
    }
    if (!(cfg_.clip_norm > 0.0)) throw ConfigError("optimizer: clip norm must be > 0");
    if (cfg_.kind == OptimizerKind::Adam) {
      for (Parameter* p : params_) {
        m_.emplace_back(p->value.shape());
        v_.emplace_back(p->value.shape());
      }
    }
  }

  /// Applies one update from the accumulated gradients; returns the
  /// gradient norm before clipping.
  double step() {
    double sq = 0.0;
    for (Parameter* p : params_)
      for (double g : p->grad.storage()) sq += g * g;
    const double norm = std::sqrt(sq);
    const double scale = norm > cfg_.clip_norm ? cfg_.clip_norm / norm : 1.0;
    ++t_;
    const double lr = cfg_.learning_rate;
    if (cfg_.kind == OptimizerKind::Sgd) {
      for (Parameter* p : params_) {
        auto& w = p->value.storage();
        const auto& g = p->grad.storage();
        for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * (scale * g[i]);
      }
      return norm;
    }
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto& w = params_[k]->value.storage();
      const auto& g = params_[k]->grad.storage();
      auto& m = m_[k].storage();
      auto& v = v_[k].storage();
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = scale * g[i];
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
        w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.epsilon);
      }
    }
    return norm;
  }

  std::size_t steps() const noexcept { return t_; }

 private:
  OptimizerConfig cfg_;
  std::vector<Parameter*> params_;
  std::vector<Tensor> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace dram
