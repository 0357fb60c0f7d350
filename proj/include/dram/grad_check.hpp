#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dram/autodiff.hpp"

namespace dram {

/// Builds a graph on the given tape from bound parameters and returns its output.
using GraphBuilder = std::function<Var(Tape&)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

namespace detail {

inline double scalar_objective(const GraphBuilder& build) {
  Tape tape;
  Var out = build(tape);
  double s = 0.0;
  for (double v : tape.value(out).storage()) s += v;
  return s;
}

}  // namespace detail

/// Compares reverse-mode gradients of sum(outputs) against central
/// differences for every entry of every parameter:
///   |analytic - numeric| / max(|analytic|, |numeric|, 1e-8)
/// and returns the worst entry. `step` must lie in (0, 1e-3].
inline GradCheckResult grad_check(std::span<Parameter* const> params, const GraphBuilder& build,
                                  double step = 1e-5) {
  if (!(step > 0.0 && step <= 1e-3)) throw ParameterError("grad_check: step must lie in (0, 1e-3]");
  for (Parameter* p : params) p->zero_grad();
  {
    Tape tape;
    Var out = build(tape);
    tape.backward(sum_all(tape, out));
  }
  GradCheckResult result;
  for (Parameter* p : params) {
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double saved = p->value[i];
      p->value[i] = saved + step;
      const double up = detail::scalar_objective(build);
      p->value[i] = saved - step;
      const double down = detail::scalar_objective(build);
      p->value[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double analytic = p->grad[i];
      const double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-8});
      const double err = std::fabs(analytic - numeric) / denom;
      if (err > result.max_rel_error || !std::isfinite(err)) {
        result.max_rel_error = std::isfinite(err) ? err : INFINITY;
        result.worst_parameter = p->name;
        result.worst_index = i;
        result.analytic = analytic;
        result.numeric = numeric;
      }
    }
  }
  return result;
}

inline GradCheckResult grad_check(std::vector<Parameter*> params, const GraphBuilder& build, double step = 1e-5) {
  return grad_check(std::span<Parameter* const>(params), build, step);
}

}  // namespace dram
