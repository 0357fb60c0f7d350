#pragma once

// Synthetic dyadic conversations with known intra- and interpersonal
// couplings, dataset splitting and the DYADSET1 container format.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dram/binary_io.hpp"
#include "dram/errors.hpp"
#include "dram/random.hpp"
#include "dram/skeleton.hpp"
#include "dram/tensor.hpp"

namespace dram {

enum class EventKind : std::uint8_t { HeadNodMirror = 0, PoseSwitch = 1, Interruption = 2 };

inline constexpr std::array<EventKind, 3> kEventKinds = {EventKind::HeadNodMirror, EventKind::PoseSwitch,
                                                         EventKind::Interruption};

inline std::string_view event_name(EventKind k) {
  static constexpr std::array<std::string_view, 3> names = {"head_nod_mirror", "pose_switch", "interruption"};
  return names[static_cast<std::size_t>(k)];
}

inline std::optional<EventKind> parse_event(std::string_view s) {
  for (EventKind k : kEventKinds)
    if (event_name(k) == s) return k;
  return std::nullopt;
}

inline JointGroup event_group(EventKind k) { return k == EventKind::PoseSwitch ? JointGroup::Torso : JointGroup::Head; }

/// Ground-truth interpersonal event. The human acts over [start, start + length);
/// the avatar responds over [response_start, end).
struct EventLabel {
  EventKind kind = EventKind::HeadNodMirror;
  std::uint32_t start = 0;
  std::uint32_t end = 0;
  std::uint32_t response_start = 0;
  JointGroup group = JointGroup::Head;
  friend bool operator==(const EventLabel&, const EventLabel&) = default;
};

struct SynthConfig {
  std::size_t duration = 5400;  // frames at 90 Hz
  std::size_t a = 23;
  std::size_t p = kPoseDim;
  SkeletonTopology topology = SkeletonTopology::upper_body();
  double g_intra = 1.0;
  double g_inter = 1.0;
  double event_rate = 5.0;  // per minute
  std::vector<EventKind> event_kinds = {kEventKinds.begin(), kEventKinds.end()};
  std::size_t reaction_lag = 15;
  double noise_scale = 1.0;  // degrees
  double min_event_seconds = 1.5;
  double max_event_seconds = 3.0;
  double emphasis_rate = 20.0;  // bursts per minute
  double beat_amplitude = 40.0;
  double nod_amplitude = 25.0;
  double switch_amplitude = 35.0;
  std::uint64_t seed = 0;
  /// Seed for the human side and the event schedule; derived from `seed` when unset.
  std::optional<std::uint64_t> human_seed;

  std::uint64_t resolved_human_seed() const { return human_seed ? *human_seed : derive_seed(seed, "human"); }

  void validate() const {
    std::vector<std::string> bad;
    if (duration < 2) bad.push_back("duration");
    if (a == 0) bad.push_back("a");
    if (p != 4 * topology.size()) bad.push_back("p (must be 4 x joint count)");
    if (!(g_intra >= 0.0)) bad.push_back("g_intra");
    if (!(g_inter >= 0.0)) bad.push_back("g_inter");
    if (!(event_rate >= 0.0)) bad.push_back("event_rate");
    if (event_rate > 0.0 && event_kinds.empty()) bad.push_back("event_kinds");
    if (!(noise_scale >= 0.0)) bad.push_back("noise_scale");
    if (!(min_event_seconds > 0.0) || !(max_event_seconds >= min_event_seconds)) bad.push_back("event length range");
    if (!(emphasis_rate >= 0.0)) bad.push_back("emphasis_rate");
    if (!bad.empty()) {
      std::string msg = "synth config: invalid field(s):";
      for (const auto& b : bad) msg += " " + b;
      throw ConfigError(msg);
    }
    if (event_rate > 0.0 && mean_gap() <= 0.0) {
      throw ConfigError("synth config: event rate " + std::to_string(event_rate) +
                        "/min cannot fit events of the configured length plus reaction lag");
    }
  }

  /// Mean idle frames between the end of one response and the next event.
  double mean_gap() const {
    const double cycle = 60.0 * kFrameRate / event_rate;
    const double busy = 0.5 * (min_event_seconds + max_event_seconds) * kFrameRate + static_cast<double>(reaction_lag) + 1.0;
    return cycle - busy;
  }
};

struct DyadicSequence {
  Tensor X;   // avatar audio, a x T
  Tensor Y;   // avatar pose, p x T
  Tensor XH;  // human audio
  Tensor YH;  // human pose
  std::vector<EventLabel> labels;

  std::size_t frames() const { return X.cols(); }
  friend bool operator==(const DyadicSequence&, const DyadicSequence&) = default;
};

namespace synth_detail {

constexpr double kDeg = std::numbers::pi / 180.0;

/// Euler angle tracks (pitch about x, yaw about y, roll about z) per joint.
struct AngleTracks {
  std::size_t T = 0;
  std::vector<std::array<std::vector<double>, 3>> joint;

  AngleTracks(std::size_t joints, std::size_t frames) : T(frames), joint(joints) {
    for (auto& j : joint)
      for (auto& axis : j) axis.assign(frames, 0.0);
  }
  double& at(std::size_t j, int axis, std::size_t t) { return joint[j][static_cast<std::size_t>(axis)][t]; }
};

enum Axis : int { Pitch = 0, Yaw = 1, Roll = 2 };

struct Drive {
  std::size_t joint;
  Axis axis;
  double share;
};

struct Roles {
  std::size_t root = 0, head = 0, neck = 0, spine = 0;
  std::vector<std::size_t> right_arm, left_arm;  // rotations that swing each arm forward
};

inline Roles find_roles(const SkeletonTopology& topo) {
  Roles r;
  auto first = [&](JointGroup g, std::size_t skip) {
    auto js = topo.joints_in(g);
    return js.size() > skip ? js[skip] : (js.empty() ? 0 : js.back());
  };
  r.root = first(JointGroup::Torso, 0);
  r.head = first(JointGroup::Head, 0);
  r.neck = first(JointGroup::Neck, 0);
  r.spine = first(JointGroup::Torso, 1);
  auto arm = [&](JointGroup upper, JointGroup wrist) {
    std::vector<std::size_t> out;
    auto u = topo.joints_in(upper);
    for (std::size_t i = 1; i < u.size(); ++i) out.push_back(u[i]);
    auto w = topo.joints_in(wrist);
    if (!w.empty()) out.push_back(w.front());
    return out;
  };
  r.right_arm = arm(JointGroup::RArm, JointGroup::RWrist);
  r.left_arm = arm(JointGroup::LArm, JointGroup::LWrist);
  return r;
}

/// Raised-cosine window over [s, e) with ramps of `ramp` frames.
inline double window(double t, double s, double e, double ramp) {
  if (t < s || t >= e) return 0.0;
  const double in = std::min(1.0, (t - s) / ramp);
  const double out = std::min(1.0, (e - t) / ramp);
  const double x = std::min(in, out);
  return 0.5 * (1.0 - std::cos(std::numbers::pi * x));
}

/// AR(1) noise normalised to unit stationary variance.
inline std::vector<double> smooth_noise(Rng& rng, std::size_t T, double alpha) {
  std::vector<double> v(T);
  const double gain = std::sqrt(1.0 - alpha * alpha);
  double s = rng.normal();
  for (std::size_t t = 0; t < T; ++t) {
    s = alpha * s + gain * rng.normal();
    v[t] = s;
  }
  return v;
}

/// Emphasis envelope: sparse Hann bursts of 0.2-0.6 s at `rate` per minute.
inline std::vector<double> emphasis(Rng& rng, std::size_t T, double rate) {
  std::vector<double> e(T, 0.0);
  if (rate <= 0.0) return e;
  const double mean_gap = 60.0 * kFrameRate / rate;
  double t = rng.exponential(mean_gap);
  while (t < static_cast<double>(T)) {
    const double len = rng.uniform(0.2, 0.6) * kFrameRate;
    const double amp = rng.uniform(0.5, 1.0);
    const auto s = static_cast<std::size_t>(t);
    for (std::size_t i = s; i < T && static_cast<double>(i) < t + len; ++i) {
      const double x = (static_cast<double>(i) - t) / len;
      e[i] += amp * std::sin(std::numbers::pi * x) * std::sin(std::numbers::pi * x);
    }
    t += len + rng.exponential(mean_gap);
  }
  return e;
}

/// Audio features: channel loadings on the emphasis envelope plus smoothed noise.
inline Tensor audio(Rng& rng, const std::vector<double>& e, std::size_t a) {
  const std::size_t T = e.size();
  Tensor X({a, T});
  for (std::size_t c = 0; c < a; ++c) {
    const double loading = std::exp(-static_cast<double>(c) / 4.0);
    const auto n = smooth_noise(rng, T, 0.9);
    for (std::size_t t = 0; t < T; ++t) X(c, t) = loading * e[t] + 0.3 * n[t];
  }
  return X;
}

/// Beat gestures and idle motion for one participant.
inline AngleTracks intrapersonal(Rng& rng, const std::vector<double>& e, const SynthConfig& cfg, const Roles& roles) {
  const std::size_t T = e.size();
  AngleTracks ang(cfg.topology.size(), T);
  // Causal filter of emphasis with a short motor delay.
  std::vector<double> beat(T, 0.0);
  const std::size_t delay = 3;
  double b = 0.0;
  for (std::size_t t = 0; t < T; ++t) {
    const double drive = t >= delay ? e[t - delay] : 0.0;
    b = 0.85 * b + 0.15 * drive;
    beat[t] = b;
  }
  const double A = cfg.g_intra * cfg.beat_amplitude * kDeg;
  auto drive_arm = [&](const std::vector<std::size_t>& joints, double scale, std::size_t lag) {
    for (std::size_t i = 0; i < joints.size(); ++i) {
      const double w = (i + 1 == joints.size() ? 1.0 : 0.35) * scale;
      for (std::size_t t = lag; t < T; ++t) ang.at(joints[i], Pitch, t) -= w * A * beat[t - lag];
    }
  };
  drive_arm(roles.right_arm, 1.0, 0);
  drive_arm(roles.left_arm, 0.6, 5);
  for (std::size_t t = 0; t < T; ++t) ang.at(roles.head, Pitch, t) += 0.1 * A * beat[t];

  const double sigma = cfg.noise_scale * kDeg;
  for (std::size_t j = 1; j < cfg.topology.size(); ++j) {
    for (int axis = 0; axis < 3; ++axis) {
      const auto n = smooth_noise(rng, T, 0.98);
      for (std::size_t t = 0; t < T; ++t) ang.at(j, axis, t) += sigma * n[t];
    }
  }
  return ang;
}

inline Tensor to_pose(AngleTracks& ang, std::size_t p) {
  const std::size_t J = ang.joint.size();
  Tensor Y({p, ang.T});
  std::vector<PoseVector> frames;
  frames.reserve(ang.T);
  for (std::size_t t = 0; t < ang.T; ++t) {
    PoseVector pose;
    for (std::size_t j = 0; j < J; ++j) {
      const Quat q = Quat::axis_angle({0, 1, 0}, ang.at(j, Yaw, t)) * Quat::axis_angle({1, 0, 0}, ang.at(j, Pitch, t)) *
                     Quat::axis_angle({0, 0, 1}, ang.at(j, Roll, t));
      pose.set_joint(j, q.normalized());
    }
    frames.push_back(std::move(pose));
  }
  hemisphere_fix(frames);
  for (std::size_t t = 0; t < ang.T; ++t) {
    const auto& v = frames[t].values();
    for (std::size_t r = 0; r < p; ++r) Y(r, t) = v[r];
  }
  return Y;
}

}  // namespace synth_detail

/// Deterministic synthetic dyad. Avatar streams depend on the human side only
/// through event responses scaled by g_inter.
inline DyadicSequence generate_sequence(const SynthConfig& cfg) {
  namespace sd = synth_detail;
  cfg.validate();
  const std::size_t T = cfg.duration;
  const sd::Roles roles = sd::find_roles(cfg.topology);
  Rng avatar_rng(cfg.seed, "avatar");
  const std::uint64_t hseed = cfg.resolved_human_seed();
  Rng human_rng(hseed, "human");
  Rng event_rng(hseed, "events");

  // Event schedule: exponential idle gaps, no overlap, responses end inside the sequence.
  std::vector<EventLabel> labels;
  std::vector<std::uint32_t> human_end;
  std::vector<double> switch_sign;
  if (cfg.event_rate > 0.0) {
    double cursor = 0.0;
    const double gap = cfg.mean_gap();
    for (;;) {
      const double start = std::floor(cursor + event_rng.exponential(gap));
      const double len =
          std::round(event_rng.uniform(cfg.min_event_seconds, cfg.max_event_seconds) * kFrameRate);
      const EventKind kind = cfg.event_kinds[event_rng.below(cfg.event_kinds.size())];
      const double sign = event_rng.bernoulli(0.5) ? 1.0 : -1.0;
      const double end = start + len + static_cast<double>(cfg.reaction_lag);
      if (end > static_cast<double>(T)) break;
      EventLabel l;
      l.kind = kind;
      l.start = static_cast<std::uint32_t>(start);
      l.end = static_cast<std::uint32_t>(end);
      l.response_start = static_cast<std::uint32_t>(start) + static_cast<std::uint32_t>(cfg.reaction_lag);
      l.group = event_group(kind);
      labels.push_back(l);
      human_end.push_back(static_cast<std::uint32_t>(start + len));
      switch_sign.push_back(sign);
      cursor = end + 1.0;
    }
  }

  // Human side.
  auto eh = sd::emphasis(human_rng, T, cfg.emphasis_rate);
  const double ramp = 0.15 * kFrameRate;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i].kind != EventKind::Interruption) continue;
    const double s = labels[i].start;
    const double e = std::min<double>(human_end[i], s + 0.6 * kFrameRate);
    for (std::size_t t = labels[i].start; t < human_end[i]; ++t) eh[t] += 1.5 * sd::window(static_cast<double>(t), s, e, 0.1 * kFrameRate);
  }
  DyadicSequence seq;
  seq.XH = sd::audio(human_rng, eh, cfg.a);
  auto human = sd::intrapersonal(human_rng, eh, cfg, roles);
  const double nod = cfg.nod_amplitude * sd::kDeg;
  const double sw = cfg.switch_amplitude * sd::kDeg;
  auto nod_wave = [&](double t, double s) { return nod * std::sin(2.0 * std::numbers::pi * 2.0 * (t - s) / kFrameRate); };
  // Rotation templates: (joint, axis, share of the amplitude).
  const std::vector<sd::Drive> nod_drive = {{roles.neck, sd::Pitch, 0.4}, {roles.head, sd::Pitch, 1.0}};
  const std::vector<sd::Drive> switch_drive = {{roles.root, sd::Yaw, 1.0}, {roles.spine, sd::Pitch, 0.4}};
  const double switch_ramp = 0.4 * kFrameRate;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double s = labels[i].start, e = human_end[i];
    for (std::size_t t = labels[i].start; t < human_end[i]; ++t) {
      const double tt = static_cast<double>(t);
      if (labels[i].kind == EventKind::HeadNodMirror) {
        const double v = sd::window(tt, s, e, ramp) * nod_wave(tt, s);
        for (const auto& d : nod_drive) human.at(d.joint, d.axis, t) += d.share * v;
      } else if (labels[i].kind == EventKind::PoseSwitch) {
        const double v = switch_sign[i] * sw * sd::window(tt, s, e, switch_ramp);
        for (const auto& d : switch_drive) human.at(d.joint, d.axis, t) += d.share * v;
      }
    }
  }

  // Avatar side.
  const auto ea = sd::emphasis(avatar_rng, T, cfg.emphasis_rate);
  seq.X = sd::audio(avatar_rng, ea, cfg.a);
  auto avatar = sd::intrapersonal(avatar_rng, ea, cfg, roles);
  if (cfg.g_inter > 0.0) {
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const double s = labels[i].response_start, e = labels[i].end;
      const bool sw_kind = labels[i].kind == EventKind::PoseSwitch;
      const auto& drive = sw_kind ? switch_drive : nod_drive;
      for (std::size_t t = labels[i].response_start; t < labels[i].end; ++t) {
        const double tt = static_cast<double>(t);
        const std::size_t src = t - cfg.reaction_lag;
        const double w = std::min(1.0, cfg.g_inter * sd::window(tt, s, e, sw_kind ? switch_ramp : ramp));
        for (const auto& d : drive) {
          double& a = avatar.at(d.joint, d.axis, t);
          const double target =
              labels[i].kind == EventKind::Interruption ? d.share * nod_wave(tt, s) : human.at(d.joint, d.axis, src);
          a = (1.0 - w) * a + w * target;
        }
      }
    }
  }
  seq.Y = sd::to_pose(avatar, cfg.p);
  seq.YH = sd::to_pose(human, cfg.p);
  seq.labels = std::move(labels);
  return seq;
}

/// Sequence `i` of a corpus uses an independent seed derived from the corpus seed.
inline std::vector<DyadicSequence> generate_corpus(SynthConfig cfg, std::size_t count) {
  const std::uint64_t base = cfg.seed;
  const auto human = cfg.human_seed;
  std::vector<DyadicSequence> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    cfg.seed = derive_seed(base, "sequence-" + std::to_string(i));
    if (human) cfg.human_seed = derive_seed(*human, "sequence-" + std::to_string(i));
    out.push_back(generate_sequence(cfg));
  }
  return out;
}

struct DatasetSplit {
  std::vector<std::size_t> train, validation, test;
  std::array<double, 3> ratios{0.8, 0.1, 0.1};
};

/// Seeded shuffle of 0..n-1, then contiguous partition by ratios.
inline DatasetSplit make_split(std::size_t n, std::array<double, 3> ratios, std::uint64_t seed) {
  double sum = 0.0;
  for (double r : ratios) {
    if (!(r > 0.0)) throw ConfigError("make_split: ratios must be positive");
    sum += r;
  }
  if (std::fabs(sum - 1.0) > 1e-9) throw ConfigError("make_split: ratios must sum to 1");
  if (n < ratios.size()) {
    throw InputError("make_split: " + std::to_string(n) + " sequences cannot fill " + std::to_string(ratios.size()) +
                     " split parts");
  }
  std::array<std::size_t, 3> sizes{};
  std::array<double, 3> frac{};
  std::size_t used = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    const double exact = ratios[i] * static_cast<double>(n);
    sizes[i] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    frac[i] = exact - static_cast<double>(sizes[i]);
    used += sizes[i];
  }
  while (used < n) {
    const auto i = static_cast<std::size_t>(std::max_element(frac.begin(), frac.end()) - frac.begin());
    ++sizes[i];
    frac[i] = -1.0;
    ++used;
  }
  for (std::size_t i = 0; i < 3; ++i) {
    if (sizes[i] == 0) {
      const auto big = static_cast<std::size_t>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
      --sizes[big];
      ++sizes[i];
    }
  }
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  Rng rng(seed, "split");
  rng.shuffle(idx.begin(), idx.end());
  DatasetSplit s;
  s.ratios = ratios;
  auto it = idx.begin();
  s.train.assign(it, it + static_cast<std::ptrdiff_t>(sizes[0]));
  it += static_cast<std::ptrdiff_t>(sizes[0]);
  s.validation.assign(it, it + static_cast<std::ptrdiff_t>(sizes[1]));
  it += static_cast<std::ptrdiff_t>(sizes[1]);
  s.test.assign(it, idx.end());
  return s;
}

// ---------------------------------------------------------------------------
// DYADSET1 container.

struct Dataset {
  std::size_t a = 0;
  std::size_t p = 0;
  std::uint32_t frame_rate = 90;
  std::vector<DyadicSequence> sequences;
  friend bool operator==(const Dataset&, const Dataset&) = default;
};

inline constexpr std::string_view kDatasetMagic = "DYADSET1";
inline constexpr std::size_t kDatasetHeaderBytes = 8 + 4 * 4;
inline constexpr std::size_t kLabelBytes = 1 + 3 * 4 + 1;

inline std::size_t sequence_payload_bytes(std::size_t a, std::size_t p, std::size_t T, std::size_t labels) {
  return 4 + 8 * T * (2 * a + 2 * p) + 4 + kLabelBytes * labels;
}

inline std::string encode_dataset(const Dataset& ds) {
  ByteWriter w;
  w.bytes(kDatasetMagic);
  w.u32(static_cast<std::uint32_t>(ds.a));
  w.u32(static_cast<std::uint32_t>(ds.p));
  w.u32(ds.frame_rate);
  w.u32(static_cast<std::uint32_t>(ds.sequences.size()));
  for (const auto& s : ds.sequences) {
    const std::size_t T = s.frames();
    if (s.X.rows() != ds.a || s.XH.rows() != ds.a || s.Y.rows() != ds.p || s.YH.rows() != ds.p ||
        s.Y.cols() != T || s.XH.cols() != T || s.YH.cols() != T) {
      throw DimensionError("dataset: sequence streams do not match header dimensions");
    }
    w.u32(static_cast<std::uint32_t>(T));
    for (const Tensor* m : {&s.X, &s.Y, &s.XH, &s.YH}) w.f64s(m->storage());
    w.u32(static_cast<std::uint32_t>(s.labels.size()));
    for (const auto& l : s.labels) {
      w.u8(static_cast<std::uint8_t>(l.kind));
      w.u32(l.start);
      w.u32(l.end);
      w.u32(l.response_start);
      w.u8(static_cast<std::uint8_t>(l.group));
    }
  }
  return w.data();
}

inline Dataset decode_dataset(std::string bytes) {
  ByteReader r(std::move(bytes));
  const std::string magic = r.bytes(8, "magic");
  if (magic.substr(0, 7) == kDatasetMagic.substr(0, 7) && magic != kDatasetMagic) {
    throw FormatError("dataset: unsupported format version '" + magic + "'", 0);
  }
  if (magic != kDatasetMagic) throw FormatError("dataset: bad magic string", 0);
  Dataset ds;
  ds.a = r.u32("a");
  ds.p = r.u32("p");
  ds.frame_rate = r.u32("frame rate");
  const std::uint32_t count = r.u32("sequence count");
  for (std::uint32_t i = 0; i < count; ++i) {
    DyadicSequence s;
    const std::size_t T = r.u32("frame count");
    for (auto [m, rows] : {std::pair{&s.X, ds.a}, std::pair{&s.Y, ds.p}, std::pair{&s.XH, ds.a}, std::pair{&s.YH, ds.p}}) {
      std::vector<double> v;
      r.f64s(v, rows * T, "stream payload");
      *m = Tensor({rows, T}, std::move(v));
    }
    const std::uint32_t nl = r.u32("label count");
    for (std::uint32_t j = 0; j < nl; ++j) {
      EventLabel l;
      const std::size_t at = r.offset();
      const auto kind = r.u8("label kind");
      if (kind > 2) throw FormatError("dataset: unknown event kind " + std::to_string(kind), at);
      l.kind = static_cast<EventKind>(kind);
      l.start = r.u32("label start");
      l.end = r.u32("label end");
      l.response_start = r.u32("label response start");
      const std::size_t gat = r.offset();
      const auto group = r.u8("label group");
      if (group >= kJointGroups.size()) throw FormatError("dataset: unknown joint group " + std::to_string(group), gat);
      l.group = static_cast<JointGroup>(group);
      s.labels.push_back(l);
    }
    ds.sequences.push_back(std::move(s));
  }
  if (!r.at_end()) throw FormatError("dataset: trailing bytes after last sequence", r.offset());
  return ds;
}

inline void write_dataset(const std::string& path, const Dataset& ds) { write_file_atomic(path, encode_dataset(ds)); }
inline Dataset read_dataset(const std::string& path) { return decode_dataset(read_file(path)); }

}  // namespace dram
