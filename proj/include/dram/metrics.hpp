#pragma once

// Position-space error metrics, the metrics report and attention traces.

#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dram/binary_io.hpp"
#include "dram/errors.hpp"
#include "dram/skeleton.hpp"
#include "dram/tensor.hpp"

namespace dram {

using PositionSequence = std::vector<PositionFrame>;

inline const std::vector<double>& default_sigma_grid() {
  static const std::vector<double> grid = {1, 2, 3, 5, 8, 13, 21};
  return grid;
}

namespace metrics_detail {

inline void check(const PositionSequence& pred, const PositionSequence& truth, const std::vector<std::size_t>& keys,
                  const char* what) {
  if (keys.empty()) throw InputError(std::string(what) + ": empty keypoint selection");
  if (pred.size() != truth.size()) {
    throw DimensionError(std::string(what) + ": " + std::to_string(pred.size()) + " predicted frames vs " +
                         std::to_string(truth.size()) + " true frames");
  }
  if (pred.empty()) throw InputError(std::string(what) + ": no frames");
  for (std::size_t t = 0; t < pred.size(); ++t) {
    for (std::size_t k : keys) {
      if (k >= pred[t].size() || k >= truth[t].size()) {
        throw DimensionError(std::string(what) + ": keypoint " + std::to_string(k) + " out of range");
      }
    }
  }
}

}  // namespace metrics_detail

inline std::vector<std::size_t> all_keypoints(std::size_t n) {
  std::vector<std::size_t> k(n);
  for (std::size_t i = 0; i < n; ++i) k[i] = i;
  return k;
}

/// Mean Euclidean keypoint error over frames and selected keypoints.
inline double ape(const PositionSequence& pred, const PositionSequence& truth, const std::vector<std::size_t>& keys) {
  metrics_detail::check(pred, truth, keys, "ape");
  double total = 0.0;
  for (std::size_t k : keys) {
    double s = 0.0;
    for (std::size_t t = 0; t < pred.size(); ++t) s += norm(pred[t][k] - truth[t][k]);
    total += s / static_cast<double>(pred.size());
  }
  return total / static_cast<double>(keys.size());
}

/// Fraction of (frame, keypoint) pairs within `sigma` (inclusive).
inline double pck(const PositionSequence& pred, const PositionSequence& truth, double sigma,
                  const std::vector<std::size_t>& keys) {
  if (!(sigma > 0.0)) throw InputError("pck: sigma must be positive");
  metrics_detail::check(pred, truth, keys, "pck");
  std::size_t hits = 0;
  for (std::size_t t = 0; t < pred.size(); ++t)
    for (std::size_t k : keys)
      if (norm(pred[t][k] - truth[t][k]) <= sigma) ++hits;
  return static_cast<double>(hits) / static_cast<double>(pred.size() * keys.size());
}

struct MetricsReport {
  std::string variant;
  double ape = 0.0;
  std::map<JointGroup, double> group_ape;
  std::vector<std::pair<double, double>> pck;  // (sigma, value)
  std::size_t frames = 0;
  std::size_t sequences = 0;
  /// Mean Delta inside / outside labeled response windows (Dram only).
  std::optional<double> attention_mean, attention_in_events, attention_out_events;

  /// Joint-count weighted mean of group APEs.
  double group_weighted_ape(const SkeletonTopology& topo) const {
    double s = 0.0;
    std::size_t n = 0;
    for (const auto& [g, v] : group_ape) {
      const std::size_t c = topo.joints_in(g).size();
      s += v * static_cast<double>(c);
      n += c;
    }
    return n ? s / static_cast<double>(n) : 0.0;
  }

  std::string to_text() const {
    std::ostringstream o;
    o.precision(17);
    o << "format = metrics-report-1\n";
    if (!variant.empty()) o << "variant = " << variant << "\n";
    o << "sequences = " << sequences << "\n";
    o << "frames = " << frames << "\n";
    o << "ape.avg = " << ape << "\n";
    for (const auto& [g, v] : group_ape) o << "ape." << group_name(g) << " = " << v << "\n";
    for (const auto& [s, v] : pck) o << "pck." << s << " = " << v << "\n";
    if (attention_mean) o << "attention.mean = " << *attention_mean << "\n";
    if (attention_in_events) o << "attention.in_events = " << *attention_in_events << "\n";
    if (attention_out_events) o << "attention.out_events = " << *attention_out_events << "\n";
    return o.str();
  }
};

/// APE per group, overall APE and PCK over `sigmas` for position sequences.
inline MetricsReport compute_metrics(const PositionSequence& pred, const PositionSequence& truth,
                                     const SkeletonTopology& topo, const std::vector<double>& sigmas) {
  MetricsReport r;
  r.frames = pred.size();
  r.ape = ape(pred, truth, all_keypoints(topo.size()));
  for (JointGroup g : kJointGroups) {
    const auto keys = topo.joints_in(g);
    if (!keys.empty()) r.group_ape[g] = ape(pred, truth, keys);
  }
  for (double s : sigmas) r.pck.emplace_back(s, pck(pred, truth, s, all_keypoints(topo.size())));
  return r;
}

/// Per-frame Delta vectors and their means.
struct AttentionTrace {
  std::vector<std::vector<double>> delta;

  std::size_t size() const { return delta.size(); }

  std::vector<double> means() const {
    std::vector<double> m;
    m.reserve(delta.size());
    for (const auto& d : delta) {
      double s = 0.0;
      for (double v : d) s += v;
      m.push_back(d.empty() ? 0.0 : s / static_cast<double>(d.size()));
    }
    return m;
  }

  /// CSV: frame, d0..d{p-1}, mean. `first_frame` offsets the frame column.
  std::string to_csv(std::size_t first_frame = 0) const {
    std::ostringstream o;
    o.precision(17);
    const std::size_t p = delta.empty() ? 0 : delta.front().size();
    o << "frame";
    for (std::size_t i = 0; i < p; ++i) o << ",d" << i;
    o << ",mean\n";
    const auto m = means();
    for (std::size_t t = 0; t < delta.size(); ++t) {
      o << first_frame + t;
      for (double v : delta[t]) o << ',' << v;
      o << ',' << m[t] << "\n";
    }
    return o.str();
  }
};

}  // namespace dram
