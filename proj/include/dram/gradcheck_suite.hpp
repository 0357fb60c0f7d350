#pragma once

// Registered finite-difference checks for every differentiable op, both
// backbones and the end-to-end two-stage model.

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dram/autodiff.hpp"
#include "dram/backbone.hpp"
#include "dram/grad_check.hpp"
#include "dram/model.hpp"
#include "dram/random.hpp"
#include "dram/synth.hpp"
#include "dram/trainer.hpp"

namespace dram {

/// tanh with a sign-flipped backward pass; only for harness self-tests.
inline Var faulty_tanh(Tape& tape, Var x) {
  Tensor out = tape.value(x);
  for (double& v : out.storage()) v = std::tanh(v);
  return tape.push(out, tape.requires_grad(x), [x, out](Tape& tp, const Tensor& g) {
    if (Tensor* gx = tp.grad(x))
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] -= g[i] * (1.0 - out[i] * out[i]);
  });
}

struct GradCheckCase {
  std::string name;
  std::function<GradCheckResult(std::uint64_t seed, bool fault)> run;
};

namespace gc_detail {

inline Parameter random_param(Rng& rng, std::string name, std::vector<std::size_t> shape, double lo = -1.0,
                              double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.storage()) v = rng.uniform(lo, hi);
  return Parameter(std::move(name), std::move(t));
}

/// Values bounded away from zero, for ops with a kink there.
inline Parameter off_kink_param(Rng& rng, std::string name, std::vector<std::size_t> shape) {
  Tensor t(std::move(shape));
  for (double& v : t.storage()) v = (rng.bernoulli(0.5) ? 1.0 : -1.0) * rng.uniform(0.1, 1.0);
  return Parameter(std::move(name), std::move(t));
}

inline GradCheckResult check(std::vector<Parameter>& ps, const std::function<Var(Tape&, std::vector<Var>&)>& f) {
  std::vector<Parameter*> ptrs;
  for (auto& p : ps) ptrs.push_back(&p);
  return grad_check(ptrs, [&](Tape& tape) {
    std::vector<Var> vs;
    for (auto& p : ps) vs.push_back(tape.param(p));
    return f(tape, vs);
  });
}

inline GradCheckCase unary_case(std::string name, Unary kind) {
  return {name, [kind](std::uint64_t seed, bool fault) {
            Rng rng(seed, "gradcheck-unary");
            std::vector<Parameter> ps;
            if (kind == Unary::Relu || kind == Unary::Abs) {
              ps.push_back(off_kink_param(rng, "x", {3, 4}));
            } else {
              ps.push_back(random_param(rng, "x", {3, 4}, -2.0, 2.0));
            }
            ps.push_back(random_param(rng, "w", {3, 4}));
            return check(ps, [kind, fault](Tape& t, std::vector<Var>& v) {
              const Var y = fault && kind == Unary::Tanh ? faulty_tanh(t, v[0]) : elementwise(t, kind, v[0]);
              return mul(t, y, v[1]);
            });
          }};
}

inline DyadicSequence toy_sequence(Rng& rng, std::size_t a, std::size_t p, std::size_t T) {
  DyadicSequence s;
  for (Tensor* m : {&s.X, &s.Y, &s.XH, &s.YH}) {
    const std::size_t rows = (m == &s.X || m == &s.XH) ? a : p;
    *m = Tensor({rows, T});
    for (double& v : m->storage()) v = rng.uniform(-1.0, 1.0);
  }
  return s;
}

inline GradCheckCase model_case(std::string name, Variant variant, BackboneKind kind) {
  return {name, [variant, kind](std::uint64_t seed, bool) {
            Rng rng(seed, "gradcheck-model");
            BackboneSpec spec;
            spec.kind = kind;
            spec.tcn.hidden_channels = 3;
            spec.tcn.dilations = {1, 2};
            spec.lstm.hidden = 3;
            ModelDims dims{2, 4, 4};
            PoseModel model(variant, spec, dims, seed);
            const DyadicSequence seq = toy_sequence(rng, dims.audio, dims.pose, 12);
            const Chunk ch{0, 3, 3};
            auto pose = [&](long f) { return seq.Y.column(static_cast<std::size_t>(f)); };
            return grad_check(model.parameters(), [&](Tape& tape) { return chunk_loss(tape, model, seq, ch, pose); });
          }};
}

}  // namespace gc_detail

inline std::vector<GradCheckCase> gradcheck_registry() {
  namespace g = gc_detail;
  using Vs = std::vector<Var>;
  std::vector<GradCheckCase> r;
  r.push_back({"linear", [](std::uint64_t seed, bool) {
                 Rng rng(seed, "gradcheck-linear");
                 std::vector<Parameter> ps{g::random_param(rng, "x", {3, 4}), g::random_param(rng, "W", {2, 3}),
                                           g::random_param(rng, "b", {2})};
                 return g::check(ps, [](Tape& t, Vs& v) { return linear(t, v[0], v[1], v[2]); });
               }});
  r.push_back({"causal_conv1d", [](std::uint64_t seed, bool) {
                 Rng rng(seed, "gradcheck-conv");
                 std::vector<Parameter> ps{g::random_param(rng, "x", {3, 7}), g::random_param(rng, "kernel", {2, 3, 2}),
                                           g::random_param(rng, "bias", {2})};
                 return g::check(ps, [](Tape& t, Vs& v) { return causal_conv1d(t, v[0], v[1], 2, v[2]); });
               }});
  r.push_back(g::unary_case("tanh", Unary::Tanh));
  r.push_back(g::unary_case("sigmoid", Unary::Sigmoid));
  r.push_back(g::unary_case("relu", Unary::Relu));
  r.push_back(g::unary_case("abs", Unary::Abs));
  r.push_back(g::unary_case("gate", Unary::Gate));
  auto binary = [&](std::string name, Var (*op)(Tape&, Var, Var)) {
    r.push_back({name, [op](std::uint64_t seed, bool) {
                   Rng rng(seed, "gradcheck-binary");
                   std::vector<Parameter> ps{g::random_param(rng, "a", {2, 3}), g::random_param(rng, "b", {2, 3}),
                                             g::random_param(rng, "w", {2, 3})};
                   return g::check(ps, [op](Tape& t, Vs& v) { return mul(t, op(t, v[0], v[1]), v[2]); });
                 }});
  };
  binary("add", &add);
  binary("sub", &sub);
  binary("mul", &mul);
  r.push_back({"one_minus", [](std::uint64_t seed, bool) {
                 Rng rng(seed, "gradcheck-one-minus");
                 std::vector<Parameter> ps{g::random_param(rng, "x", {2, 3}), g::random_param(rng, "w", {2, 3})};
                 return g::check(ps, [](Tape& t, Vs& v) { return mul(t, one_minus(t, v[0]), v[1]); });
               }});
  r.push_back({"sum_all", [](std::uint64_t seed, bool) {
                 Rng rng(seed, "gradcheck-sum");
                 std::vector<Parameter> ps{g::random_param(rng, "x", {2, 3})};
                 return g::check(ps, [](Tape& t, Vs& v) { return sum_all(t, mul(t, v[0], v[0])); });
               }});
  r.push_back({"concat_rows", [](std::uint64_t seed, bool) {
                 Rng rng(seed, "gradcheck-concat-rows");
                 std::vector<Parameter> ps{g::random_param(rng, "a", {2, 3}), g::random_param(rng, "b", {1, 3}),
                                           g::random_param(rng, "w", {3, 3})};
                 return g::check(ps, [](Tape& t, Vs& v) { return mul(t, concat_rows(t, {v[0], v[1]}), v[2]); });
               }});
  r.push_back({"concat_cols", [](std::uint64_t seed, bool) {
                 Rng rng(seed, "gradcheck-concat-cols");
                 std::vector<Parameter> ps{g::random_param(rng, "a", {2, 2}), g::random_param(rng, "b", {2, 3}),
                                           g::random_param(rng, "w", {2, 5})};
                 return g::check(ps, [](Tape& t, Vs& v) {
                   const std::vector<Var> parts{v[0], v[1]};
                   return mul(t, concat_cols(t, parts), v[2]);
                 });
               }});
  r.push_back({"slice_cols", [](std::uint64_t seed, bool) {
                 Rng rng(seed, "gradcheck-slice-cols");
                 std::vector<Parameter> ps{g::random_param(rng, "x", {2, 5}), g::random_param(rng, "w", {2, 3})};
                 return g::check(ps, [](Tape& t, Vs& v) { return mul(t, slice_cols(t, v[0], 1, 4), v[1]); });
               }});
  r.push_back({"slice_rows", [](std::uint64_t seed, bool) {
                 Rng rng(seed, "gradcheck-slice-rows");
                 std::vector<Parameter> ps{g::random_param(rng, "x", {4, 3}), g::random_param(rng, "w", {2, 3})};
                 return g::check(ps, [](Tape& t, Vs& v) { return mul(t, slice_rows(t, v[0], 1, 3), v[1]); });
               }});
  r.push_back({"mse_loss", [](std::uint64_t seed, bool) {
                 Rng rng(seed, "gradcheck-mse");
                 std::vector<Parameter> ps{g::random_param(rng, "pred", {3, 4}), g::random_param(rng, "target", {3, 4})};
                 return g::check(ps, [](Tape& t, Vs& v) { return mse_loss(t, v[0], v[1]); });
               }});
  r.push_back({"lstm_cell_step", [](std::uint64_t seed, bool) {
                 Rng rng(seed, "gradcheck-lstm-cell");
                 std::vector<Parameter> ps{g::random_param(rng, "x", {3, 2}),   g::random_param(rng, "h", {4, 2}),
                                           g::random_param(rng, "c", {4, 2}),   g::random_param(rng, "Wx", {16, 3}),
                                           g::random_param(rng, "Wh", {16, 4}), g::random_param(rng, "b", {16}),
                                           g::random_param(rng, "w", {8, 2})};
                 return g::check(ps, [](Tape& t, Vs& v) {
                   return mul(t, lstm_cell_step(t, v[0], v[1], v[2], v[3], v[4], v[5]), v[6]);
                 });
               }});
  r.push_back({"residual_attention", [](std::uint64_t seed, bool) {
                 Rng rng(seed, "gradcheck-attention");
                 std::vector<Parameter> ps{g::random_param(rng, "zm", {5}), g::random_param(rng, "zd", {5})};
                 for (std::size_t i = 0; i < 5; ++i)
                   if (std::fabs(ps[1].value[i] - ps[0].value[i]) < 0.05) ps[1].value[i] = ps[0].value[i] + 0.5;
                 return g::check(ps, [](Tape& t, Vs& v) { return residual_attention(t, v[0], v[1]); });
               }});
  r.push_back({"dram_combine", [](std::uint64_t seed, bool) {
                 Rng rng(seed, "gradcheck-combine");
                 std::vector<Parameter> ps{g::random_param(rng, "zm", {5}), g::random_param(rng, "zd", {5})};
                 for (std::size_t i = 0; i < 5; ++i)
                   if (std::fabs(ps[1].value[i] - ps[0].value[i]) < 0.05) ps[1].value[i] = ps[0].value[i] + 0.5;
                 return g::check(ps, [](Tape& t, Vs& v) {
                   return dram_combine(t, v[0], v[1], residual_attention(t, v[0], v[1]));
                 });
               }});
  r.push_back({"tcn_backbone", [](std::uint64_t seed, bool) {
                 Rng rng(seed, "gradcheck-tcn");
                 TcnConfig cfg;
                 cfg.in_channels = 3;
                 cfg.hidden_channels = 4;
                 cfg.dilations = {1, 2};
                 cfg.out_dim = 2;
                 Backbone b(cfg, 6, seed);
                 Tensor in({3, 8});
                 for (double& v : in.storage()) v = rng.uniform(-1.0, 1.0);
                 std::vector<Parameter*> ps;
                 for (auto& p : b.parameters()) ps.push_back(&p);
                 return grad_check(ps, [&](Tape& t) { return b.forward_sequence(t, t.constant(in)); });
               }});
  r.push_back({"lstm_backbone", [](std::uint64_t seed, bool) {
                 Rng rng(seed, "gradcheck-lstm");
                 LstmConfig cfg;
                 cfg.in_dim = 3;
                 cfg.hidden = 4;
                 cfg.layers = 2;
                 cfg.out_dim = 2;
                 Backbone b(cfg, 5, seed);
                 Tensor in({3, 7});
                 for (double& v : in.storage()) v = rng.uniform(-1.0, 1.0);
                 std::vector<Parameter*> ps;
                 for (auto& p : b.parameters()) ps.push_back(&p);
                 return grad_check(ps, [&](Tape& t) { return b.forward_sequence(t, t.constant(in)); });
               }});
  r.push_back(g::model_case("dram_tcn", Variant::Dram, BackboneKind::Tcn));
  r.push_back(g::model_case("dram_lstm", Variant::Dram, BackboneKind::Lstm));
  return r;
}

struct GradCheckRow {
  std::string name;
  std::size_t seeds = 0;
  double max_rel_error = 0.0;
  bool passed = false;
};

inline std::vector<GradCheckRow> run_gradcheck_suite(std::size_t seeds = 20, bool inject_fault = false,
                                                     double tolerance = 1e-4) {
  std::vector<GradCheckRow> rows;
  for (const auto& c : gradcheck_registry()) {
    GradCheckRow row;
    row.name = c.name;
    row.seeds = seeds;
    for (std::size_t s = 0; s < seeds; ++s) {
      const GradCheckResult res = c.run(derive_seed(s, c.name), inject_fault);
      row.max_rel_error = std::max(row.max_rel_error, res.max_rel_error);
    }
    row.passed = row.max_rel_error < tolerance;
    rows.push_back(row);
  }
  return rows;
}

}  // namespace dram
