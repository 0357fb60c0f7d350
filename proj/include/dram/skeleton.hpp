#pragma once

// Upper-body skeleton, quaternion pose parameterization, forward and inverse
// kinematics, quaternion sign continuity and 90 Hz resampling.

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "dram/errors.hpp"
#include "dram/quaternion.hpp"
#include "dram/tensor.hpp"

namespace dram {

inline constexpr std::size_t kJointCount = 12;
inline constexpr std::size_t kPoseDim = 4 * kJointCount;
inline constexpr double kFrameRate = 90.0;

/// Reporting groups, in the column order of the result tables.
enum class JointGroup : std::uint8_t { Torso = 0, Head, Neck, RArm, LArm, RWrist, LWrist };

inline constexpr std::array<JointGroup, 7> kJointGroups = {JointGroup::Torso, JointGroup::Head,   JointGroup::Neck,
                                                           JointGroup::RArm,  JointGroup::LArm,   JointGroup::RWrist,
                                                           JointGroup::LWrist};

inline std::string_view group_name(JointGroup g) {
  static constexpr std::array<std::string_view, 7> names = {"Torso", "Head", "Neck", "RArm", "LArm", "RWrist", "LWrist"};
  return names[static_cast<std::size_t>(g)];
}

inline std::optional<JointGroup> parse_group(std::string_view s) {
  for (JointGroup g : kJointGroups) {
    if (group_name(g) == s) return g;
  }
  return std::nullopt;
}

struct Joint {
  std::string name;
  int parent = -1;  // -1 for the root
  Vec3 offset;      // rest-pose offset from the parent joint, cm
  JointGroup group = JointGroup::Torso;
};

/// A 12-joint tree rooted at a Torso joint. Parents always precede their
/// children, so index order is a valid traversal order.
class SkeletonTopology {
 public:
  SkeletonTopology() = default;
  explicit SkeletonTopology(std::vector<Joint> joints) : joints_(std::move(joints)) { validate(); }

  /// Default conversational upper body: arms hanging, facing +z, y up.
  static SkeletonTopology upper_body() {
    using G = JointGroup;
    return SkeletonTopology({
        {"torso", -1, {0, 0, 0}, G::Torso},
        {"spine", 0, {0, 22, 0}, G::Torso},
        {"neck", 1, {0, 24, 0}, G::Neck},
        {"head", 2, {0, 14, 2}, G::Head},
        {"r_shoulder", 1, {-18, 20, 0}, G::RArm},
        {"r_elbow", 4, {0, -28, 0}, G::RArm},
        {"r_wrist", 5, {0, -25, 0}, G::RWrist},
        {"r_hand", 6, {0, -8, 0}, G::RWrist},
        {"l_shoulder", 1, {18, 20, 0}, G::LArm},
        {"l_elbow", 8, {0, -28, 0}, G::LArm},
        {"l_wrist", 9, {0, -25, 0}, G::LWrist},
        {"l_hand", 10, {0, -8, 0}, G::LWrist},
    });
  }

  /// Parses the plain-text definition: one joint per line,
  ///   name parent_index offset_x offset_y offset_z group
  /// Blank lines and lines starting with '#' are ignored.
  static SkeletonTopology parse(std::istream& in) {
    std::vector<Joint> joints;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      const auto first = line.find_first_not_of(" \t\r");
      if (first == std::string::npos || line[first] == '#') continue;
      std::istringstream ls(line);
      Joint j;
      std::string group;
      if (!(ls >> j.name >> j.parent >> j.offset.x >> j.offset.y >> j.offset.z >> group)) {
        throw InputError("skeleton line " + std::to_string(line_no) + ": expected 'name parent x y z group'");
      }
      auto g = parse_group(group);
      if (!g) throw InputError("skeleton line " + std::to_string(line_no) + ": unknown group '" + group + "'");
      j.group = *g;
      joints.push_back(std::move(j));
    }
    return SkeletonTopology(std::move(joints));
  }

  static SkeletonTopology load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open skeleton file: " + path);
    return parse(in);
  }

  std::string to_text() const {
    std::ostringstream os;
    os << "# name parent_index offset_x offset_y offset_z group\n";
    for (const Joint& j : joints_) {
      os << j.name << ' ' << j.parent << ' ' << j.offset.x << ' ' << j.offset.y << ' ' << j.offset.z << ' '
         << group_name(j.group) << '\n';
    }
    return os.str();
  }

  std::size_t size() const noexcept { return joints_.size(); }
  const Joint& operator[](std::size_t i) const { return joints_[i]; }
  const std::vector<Joint>& joints() const noexcept { return joints_; }

  std::vector<std::size_t> joints_in(JointGroup g) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < joints_.size(); ++i)
      if (joints_[i].group == g) out.push_back(i);
    return out;
  }

  friend bool operator==(const SkeletonTopology& a, const SkeletonTopology& b) {
    if (a.joints_.size() != b.joints_.size()) return false;
    for (std::size_t i = 0; i < a.joints_.size(); ++i) {
      const Joint& x = a.joints_[i];
      const Joint& y = b.joints_[i];
      if (x.name != y.name || x.parent != y.parent || !(x.offset == y.offset) || x.group != y.group) return false;
    }
    return true;
  }

 private:
  void validate() const {
    if (joints_.size() != kJointCount) {
      throw InputError("skeleton must have exactly " + std::to_string(kJointCount) + " joints, got " +
                       std::to_string(joints_.size()));
    }
    if (joints_[0].parent != -1) throw InputError("skeleton: joint 0 must be the root (parent -1)");
    if (joints_[0].group != JointGroup::Torso) throw InputError("skeleton: root must belong to the Torso group");
    for (std::size_t i = 1; i < joints_.size(); ++i) {
      const int p = joints_[i].parent;
      if (p < 0 || static_cast<std::size_t>(p) >= i) {
        throw InputError("skeleton: joint '" + joints_[i].name + "' must have a parent index in [0, " +
                         std::to_string(i) + ")");
      }
    }
  }

  std::vector<Joint> joints_;
};

/// One unit quaternion (w, x, y, z) per joint, flattened joint-major.
class PoseVector {
 public:
  PoseVector() : values_(kPoseDim, 0.0) {
    for (std::size_t j = 0; j < kJointCount; ++j) values_[4 * j] = 1.0;
  }
  explicit PoseVector(std::vector<double> values) : values_(std::move(values)) {
    if (values_.size() != kPoseDim) {
      throw DimensionError("pose vector needs " + std::to_string(kPoseDim) + " components, got " +
                           std::to_string(values_.size()));
    }
  }

  static PoseVector identity() { return PoseVector(); }

  Quat joint(std::size_t j) const {
    return {values_[4 * j], values_[4 * j + 1], values_[4 * j + 2], values_[4 * j + 3]};
  }
  void set_joint(std::size_t j, const Quat& q) {
    values_[4 * j] = q.w;
    values_[4 * j + 1] = q.x;
    values_[4 * j + 2] = q.y;
    values_[4 * j + 3] = q.z;
  }

  /// Rescales every joint quaternion to unit length. An all-zero quaternion
  /// becomes the identity.
  void normalize() {
    for (std::size_t j = 0; j < kJointCount; ++j) {
      const Quat q = joint(j);
      const double n = q.norm();
      set_joint(j, n > 0.0 && std::isfinite(n) ? Quat{q.w / n, q.x / n, q.y / n, q.z / n} : Quat::identity());
    }
  }

  double max_norm_error() const {
    double e = 0.0;
    for (std::size_t j = 0; j < kJointCount; ++j) e = std::max(e, std::fabs(joint(j).norm() - 1.0));
    return e;
  }

  const std::vector<double>& values() const noexcept { return values_; }
  std::vector<double>& values() noexcept { return values_; }

  friend bool operator==(const PoseVector& a, const PoseVector& b) = default;

 private:
  std::vector<double> values_;
};

using PositionFrame = std::vector<Vec3>;

/// Forward kinematics. World rotation of joint j is parent_world * q_j and its
/// position is parent_position + world_j applied to the rest offset. The root
/// sits at the origin (body translation is not modelled).
inline PositionFrame rotations_to_positions(const PoseVector& pose, const SkeletonTopology& topo) {
  PositionFrame pos(topo.size());
  std::vector<Quat> world(topo.size());
  for (std::size_t j = 0; j < topo.size(); ++j) {
    const Quat q = pose.joint(j);
    if (std::fabs(q.norm() - 1.0) > 1e-6) {
      throw ToleranceError("rotations_to_positions: joint '" + topo[j].name + "' quaternion norm " +
                           std::to_string(q.norm()) + " is not unit (normalization tolerance 1e-6)");
    }
    const int parent = topo[j].parent;
    if (parent < 0) {
      world[j] = q;
      pos[j] = Vec3{};
    } else {
      world[j] = world[static_cast<std::size_t>(parent)] * q;
      pos[j] = pos[static_cast<std::size_t>(parent)] + world[j].rotate(topo[j].offset);
    }
  }
  return pos;
}

/// Inverse kinematics from joint positions. Each joint gets the minimal
/// rotation taking its rest bone direction (in the parent frame) to the
/// observed direction; twist about the bone is set to zero and the root
/// rotation to identity. Positions are reproduced exactly up to round-off.
inline PoseVector positions_to_rotations(const PositionFrame& frame, const SkeletonTopology& topo) {
  if (frame.size() != topo.size()) {
    throw DimensionError("positions_to_rotations: frame has " + std::to_string(frame.size()) + " joints, skeleton " +
                         std::to_string(topo.size()));
  }
  PoseVector pose;
  std::vector<Quat> world(topo.size());
  for (std::size_t j = 0; j < topo.size(); ++j) {
    const int parent = topo[j].parent;
    if (parent < 0) {
      world[j] = Quat::identity();
      continue;
    }
    const auto p = static_cast<std::size_t>(parent);
    const double rest_len = norm(topo[j].offset);
    const Vec3 bone = frame[j] - frame[p];
    const double len = norm(bone);
    if (rest_len == 0.0 || len == 0.0) {
      throw GeometryError("positions_to_rotations: degenerate zero-length bone at joint '" + topo[j].name + "'");
    }
    if (std::fabs(len - rest_len) > 1e-6 * rest_len) {
      throw ToleranceError("positions_to_rotations: bone '" + topo[j].name + "' has length " + std::to_string(len) +
                           " cm, rest length " + std::to_string(rest_len) + " cm (non-rigid frame)");
    }
    const Vec3 local = world[p].conjugate().rotate(bone);
    const Quat q = rotation_between((1.0 / rest_len) * topo[j].offset, (1.0 / norm(local)) * local);
    pose.set_joint(j, q);
    world[j] = world[p] * q;
  }
  return pose;
}

/// Makes quaternion signs continuous: the first frame is flipped to w >= 0,
/// and each later quaternion is negated when its dot product with the
/// previous frame's quaternion for the same joint is negative.
inline std::vector<PoseVector> hemisphere_fix(std::vector<PoseVector> seq) {
  if (seq.empty()) return seq;
  for (std::size_t j = 0; j < kJointCount; ++j) {
    Quat q0 = seq[0].joint(j);
    if (q0.w < 0.0) seq[0].set_joint(j, q0.negated());
    for (std::size_t t = 1; t < seq.size(); ++t) {
      const Quat prev = seq[t - 1].joint(j);
      const Quat cur = seq[t].joint(j);
      if (dot(prev, cur) < 0.0) seq[t].set_joint(j, cur.negated());
    }
  }
  return seq;
}

/// Linear resampling of a channels x frames stream recorded at `rate` Hz onto
/// the 90 Hz grid n / 90 s, n = 0 .. floor(duration * 90), where duration is
/// the time span of the source samples, (frames - 1) / rate.
inline Tensor align_to_90hz(const Tensor& stream, double rate) {
  if (!(rate > 0.0)) throw InputError("align_to_90hz: source rate must be positive");
  const std::size_t n = stream.cols();
  if (stream.empty() || n < 2) throw InputError("align_to_90hz: need at least 2 source frames");
  const std::size_t channels = stream.rows();
  const double duration = static_cast<double>(n - 1) / rate;
  const auto out_frames = static_cast<std::size_t>(std::floor(duration * kFrameRate + 1e-9)) + 1;
  Tensor out({channels, out_frames});
  for (std::size_t k = 0; k < out_frames; ++k) {
    const double pos = static_cast<double>(k) * rate / kFrameRate;
    auto i0 = static_cast<std::size_t>(std::floor(pos));
    if (i0 >= n - 1) i0 = n - 1;
    const double frac = i0 == n - 1 ? 0.0 : pos - static_cast<double>(i0);
    for (std::size_t c = 0; c < channels; ++c) {
      const double a = stream(c, i0);
      out(c, k) = frac == 0.0 ? a : (1.0 - frac) * a + frac * stream(c, i0 + 1);
    }
  }
  return out;
}

}  // namespace dram
