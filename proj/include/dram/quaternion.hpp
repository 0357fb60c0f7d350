#pragma once

#include <array>
#include <cmath>

namespace dram {

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;

  friend Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
  friend Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
  friend Vec3 operator*(double s, Vec3 a) { return {s * a.x, s * a.y, s * a.z}; }
  friend bool operator==(Vec3 a, Vec3 b) = default;
};

inline double dot(Vec3 a, Vec3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline Vec3 cross(Vec3 a, Vec3 b) { return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x}; }
inline double norm(Vec3 a) { return std::sqrt(dot(a, a)); }

/// Unit quaternion (w, x, y, z) for rotations. Hamilton convention.
struct Quat {
  double w = 1.0, x = 0.0, y = 0.0, z = 0.0;

  static Quat identity() { return {}; }

  static Quat axis_angle(Vec3 axis, double angle) {
    const double n = dram::norm(axis);
    const double s = std::sin(0.5 * angle) / n;
    return {std::cos(0.5 * angle), axis.x * s, axis.y * s, axis.z * s};
  }

  double norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }
  Quat normalized() const {
    const double n = norm();
    return {w / n, x / n, y / n, z / n};
  }
  Quat conjugate() const { return {w, -x, -y, -z}; }
  Quat negated() const { return {-w, -x, -y, -z}; }

  friend Quat operator*(const Quat& a, const Quat& b) {
    return {a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z, a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x, a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w};
  }

  /// q v q*
  Vec3 rotate(Vec3 v) const {
    const Vec3 u{x, y, z};
    const Vec3 t = 2.0 * cross(u, v);
    return v + w * t + cross(u, t);
  }

  friend bool operator==(const Quat& a, const Quat& b) = default;
};

inline double dot(const Quat& a, const Quat& b) { return a.w * b.w + a.x * b.x + a.y * b.y + a.z * b.z; }

/// Minimal rotation taking unit vector `from` onto unit vector `to`
/// (no twist about either vector).
inline Quat rotation_between(Vec3 from, Vec3 to) {
  const double d = dot(from, to);
  if (d < -1.0 + 1e-12) {
    // Antiparallel: half turn about any axis orthogonal to `from`.
    Vec3 axis = cross(Vec3{1.0, 0.0, 0.0}, from);
    if (norm(axis) < 1e-6) axis = cross(Vec3{0.0, 1.0, 0.0}, from);
    const double n = norm(axis);
    return {0.0, axis.x / n, axis.y / n, axis.z / n};
  }
  const Vec3 c = cross(from, to);
  return Quat{1.0 + d, c.x, c.y, c.z}.normalized();
}

}  // namespace dram
