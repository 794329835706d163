#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "symslice/error.hpp"

namespace symslice {

using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat3 = Eigen::Matrix3d;

/// Plane {p : n.p = d} with unit normal n.
struct Plane {
  Vec3 n = Vec3::UnitX();
  double d = 0.0;

  /// Flips (n, d) so the first component of n with magnitude above 1e-9 is positive.
  Plane canonical() const {
    for (int i = 0; i < 3; ++i) {
      if (std::abs(n[i]) > 1e-9) {
        if (n[i] < 0.0) return Plane{-n, -d};
        break;
      }
    }
    return *this;
  }

  /// (n, d) / ||(n, d)||, the representation the ground-truth error compares.
  Vec4 unit4() const {
    Vec4 v(n.x(), n.y(), n.z(), d);
    return v / v.norm();
  }
};

/// Maps points into the normalized frame via (p - center) / scale.
struct NormRecord {
  Vec3 center = Vec3::Zero();
  double scale = 1.0;

  Vec3 apply(const Vec3& p) const { return (p - center) / scale; }
  Vec3 invert(const Vec3& q) const { return q * scale + center; }
};

enum class CloudKind { full, partial };

struct Cloud {
  std::vector<Vec3> points;
  CloudKind kind = CloudKind::full;
  NormRecord norm;
};

/// Proper rotation; the constructor does not re-orthonormalize.
struct Rotation {
  Mat3 matrix = Mat3::Identity();

  static Rotation identity() { return Rotation{}; }

  static Rotation about_axis(const Vec3& axis, double angle) {
    return Rotation{Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix()};
  }

  Rotation inverse() const { return Rotation{matrix.transpose()}; }

  Vec3 operator*(const Vec3& p) const { return matrix * p; }
  Rotation operator*(const Rotation& other) const { return Rotation{matrix * other.matrix}; }

  /// Rotation angle in radians, in [0, pi].
  double angle() const {
    double c = std::clamp((matrix.trace() - 1.0) / 2.0, -1.0, 1.0);
    return std::acos(c);
  }
};

inline double signed_distance(const Vec3& p, const Plane& s) { return p.dot(s.n) - s.d; }

/// Mirror image of p across s.
inline Vec3 reflect_point(const Vec3& p, const Plane& s) {
  return p - 2.0 * s.n * signed_distance(p, s);
}

/// Vector y such that p + y is the foot of p on s.
inline Vec3 offset_target(const Vec3& p, const Plane& s) { return -signed_distance(p, s) * s.n; }

/// Converts homogeneous plane coefficients beta = (a, b, c, e), describing
/// a x + b y + c z + e = 0, into canonical (n, d) form.
inline Plane plane_from_homogeneous(const Vec4& beta) {
  Vec3 abc = beta.head<3>();
  double len = abc.norm();
  if (!(len >= 1e-6)) {
    throw Error(ErrorCode::Degenerate, "normal part of homogeneous plane has norm " + std::to_string(len));
  }
  return Plane{abc / len, -beta[3] / len}.canonical();
}

/// Homogeneous unit 4-vector (a, b, c, e) with a x + b y + c z + e = 0 for s.
inline Vec4 plane_to_homogeneous(const Plane& s) {
  Vec4 v(s.n.x(), s.n.y(), s.n.z(), -s.d);
  return v / v.norm();
}

/// Image of s under the similarity p -> r (scale p) + t.
inline Plane transform_plane(const Plane& s, const Rotation& r, const Vec3& t, double scale) {
  Vec3 n = (r.matrix * s.n).normalized();
  Vec3 on_plane = r.matrix * (s.n * s.d * scale) + t;
  return Plane{n, n.dot(on_plane)};
}

/// Angle between plane normals in degrees, folded to [0, 90].
inline double normal_angle_deg(const Vec3& a, const Vec3& b) {
  Vec3 u = a.normalized(), v = b.normalized();
  // atan2 keeps precision near 0 where acos of the dot product does not.
  return std::atan2(u.cross(v).norm(), std::abs(u.dot(v))) * 180.0 / std::numbers::pi;
}

}  // namespace symslice
