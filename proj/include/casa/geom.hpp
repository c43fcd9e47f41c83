#pragma once

#include "casa/common.hpp"

namespace casa {

// Quaternions are stored as (x, y, z, w); identity is (0, 0, 0, 1).

inline Vec4 quat_identity() { return Vec4(0.0, 0.0, 0.0, 1.0); }

inline Vec4 quat_normalized(const Vec4& q) {
  const double n = q.norm();
  check(n > 1e-12, "quaternion norm too small to normalize: ", n);
  return q / n;
}

inline bool quat_is_unit(const Vec4& q, double tol = 1e-9) {
  return std::abs(q.norm() - 1.0) <= tol;
}

inline Vec4 quat_conjugate(const Vec4& q) { return Vec4(-q[0], -q[1], -q[2], q[3]); }

/// Hamilton product a * b in (x, y, z, w) layout.
inline Vec4 quat_multiply(const Vec4& a, const Vec4& b) {
  const double ax = a[0], ay = a[1], az = a[2], aw = a[3];
  const double bx = b[0], by = b[1], bz = b[2], bw = b[3];
  return Vec4(aw * bx + ax * bw + ay * bz - az * by,
              aw * by - ax * bz + ay * bw + az * bx,
              aw * bz + ax * by - ay * bx + az * bw,
              aw * bw - ax * bx - ay * by - az * bz);
}

/// Rotation matrix of a unit quaternion.
inline Mat3 quat_to_matrix(const Vec4& q) {
  const double x = q[0], y = q[1], z = q[2], w = q[3];
  Mat3 r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
      2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
      2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return r;
}

inline Vec3 quat_rotate(const Vec4& q, const Vec3& p) {
  const Vec3 u(q[0], q[1], q[2]);
  const double w = q[3];
  return (w * w - u.dot(u)) * p + 2.0 * u.dot(p) * u + 2.0 * w * u.cross(p);
}

/// Unit quaternion for a rotation of `angle` radians about a unit axis.
inline Vec4 quat_from_axis_angle(const Vec3& axis, double angle) {
  const Vec3 a = axis.normalized();
  const double s = std::sin(angle / 2.0);
  return Vec4(a[0] * s, a[1] * s, a[2] * s, std::cos(angle / 2.0));
}

/// Flips sign so the scalar part is nonnegative (double-cover canonical form).
inline Vec4 quat_canonical(const Vec4& q) { return q[3] < 0.0 ? Vec4(-q) : q; }

struct RigidTransform {
  Vec4 rotation = quat_identity();
  Vec3 translation = Vec3::Zero();

  Vec3 apply(const Vec3& p) const { return quat_rotate(rotation, p) + translation; }

  RigidTransform compose(const RigidTransform& other) const {
    // this ∘ other: x ↦ this(other(x))
    RigidTransform out;
    out.rotation = quat_multiply(rotation, other.rotation);
    out.translation = quat_rotate(rotation, other.translation) + translation;
    return out;
  }

  RigidTransform inverse() const {
    RigidTransform out;
    out.rotation = quat_conjugate(quat_normalized(rotation));
    out.translation = -quat_rotate(out.rotation, translation);
    return out;
  }

  static RigidTransform identity() { return RigidTransform{}; }
};

/// Householder reflection I - 2nn^T across the plane with unit normal n.
inline Mat3 householder_matrix(const Vec3& normal) {
  const double n = normal.norm();
  check(n > 1e-12, "reflection normal must be nonzero");
  const Vec3 u = normal / n;
  return Mat3::Identity() - 2.0 * (u * u.transpose());
}

}  // namespace casa
