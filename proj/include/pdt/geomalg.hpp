#pragma once

// Quaternion and dual-quaternion algebra plus the geometric primitives whose
// distance functions the vector-field inequalities differentiate.
//
// Conventions:
//   * quaternion coefficients are stored w, x, y, z (1, i, j, k);
//   * a pure quaternion (w = 0) is carried as an Eigen::Vector3d;
//   * cross products are right-handed;
//   * a pose is x = r + 0.5 * eps * t * r with r a unit rotation quaternion
//     and t the translation in meters;
//   * angles are radians everywhere in the library.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <ostream>

#include "pdt/errors.hpp"

namespace pdt {

using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Matrix<double, 4, 1>;
using Vec8 = Eigen::Matrix<double, 8, 1>;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using Mat8 = Eigen::Matrix<double, 8, 8>;

inline constexpr double kUnitTolerance = 1e-10;

struct Quaternion {
  double w{0.0}, x{0.0}, y{0.0}, z{0.0};

  constexpr Quaternion() = default;
  constexpr Quaternion(double w_, double x_, double y_, double z_) : w(w_), x(x_), y(y_), z(z_) {}

  static constexpr Quaternion identity() { return {1.0, 0.0, 0.0, 0.0}; }
  static Quaternion pure(const Vec3& v) { return {0.0, v.x(), v.y(), v.z()}; }
  static Quaternion from_vec4(const Vec4& v) { return {v(0), v(1), v(2), v(3)}; }

  // Rotation of `angle` radians about the unit `axis`.
  static Quaternion from_axis_angle(const Vec3& axis, double angle) {
    const double s = std::sin(0.5 * angle);
    return {std::cos(0.5 * angle), s * axis.x(), s * axis.y(), s * axis.z()};
  }

  // Exponential map of a rotation vector (axis * angle).
  static Quaternion from_rotation_vector(const Vec3& v) {
    const double theta = v.norm();
    // sin(theta/2)/theta, series below 1e-4 where the quotient loses digits
    const double s = theta < 1e-4 ? 0.5 - theta * theta / 48.0 : std::sin(0.5 * theta) / theta;
    return {std::cos(0.5 * theta), s * v.x(), s * v.y(), s * v.z()};
  }

  Vec3 vec3() const { return {x, y, z}; }
  Vec4 vec4() const { return {w, x, y, z}; }

  Quaternion conj() const { return {w, -x, -y, -z}; }
  double squared_norm() const { return w * w + x * x + y * y + z * z; }
  double norm() const { return std::sqrt(squared_norm()); }
  bool is_pure() const { return w == 0.0; }
  bool is_unit(double tol = kUnitTolerance) const { return std::abs(squared_norm() - 1.0) <= tol; }

  Quaternion normalized() const {
    const double n = norm();
    return {w / n, x / n, y / n, z / n};
  }

  // Rotation vector (log map), angle in [0, pi].
  Vec3 rotation_vector() const {
    Quaternion q = w < 0.0 ? Quaternion{-w, -x, -y, -z} : *this;
    const double s = q.vec3().norm();
    if (s < 1e-12) return 2.0 * q.vec3();
    const double angle = 2.0 * std::atan2(s, q.w);
    return q.vec3() * (angle / s);
  }

  // Rotates a vector: r v r*.
  Vec3 rotate(const Vec3& v) const {
    const Vec3 u = vec3();
    const Vec3 t = 2.0 * u.cross(v);
    return v + w * t + u.cross(t);
  }

  Mat3 rotation_matrix() const {
    Mat3 m;
    m.col(0) = rotate(Vec3::UnitX());
    m.col(1) = rotate(Vec3::UnitY());
    m.col(2) = rotate(Vec3::UnitZ());
    return m;
  }

  friend Quaternion operator+(const Quaternion& a, const Quaternion& b) {
    return {a.w + b.w, a.x + b.x, a.y + b.y, a.z + b.z};
  }
  friend Quaternion operator-(const Quaternion& a, const Quaternion& b) {
    return {a.w - b.w, a.x - b.x, a.y - b.y, a.z - b.z};
  }
  friend Quaternion operator-(const Quaternion& a) { return {-a.w, -a.x, -a.y, -a.z}; }
  friend Quaternion operator*(double s, const Quaternion& a) { return {s * a.w, s * a.x, s * a.y, s * a.z}; }
  friend Quaternion operator*(const Quaternion& a, double s) { return s * a; }

  // Hamilton product.
  friend Quaternion operator*(const Quaternion& a, const Quaternion& b) {
    return {a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w};
  }

  friend bool operator==(const Quaternion&, const Quaternion&) = default;

  friend std::ostream& operator<<(std::ostream& os, const Quaternion& q) {
    return os << "(" << q.w << ", " << q.x << ", " << q.y << ", " << q.z << ")";
  }
};

inline double dot(const Quaternion& a, const Quaternion& b) {
  return a.w * b.w + a.x * b.x + a.y * b.y + a.z * b.z;
}

// vec4(a * b) = hamilton_plus(a) * vec4(b)
inline Mat4 hamilton_plus(const Quaternion& a) {
  Mat4 m;
  m << a.w, -a.x, -a.y, -a.z,
       a.x,  a.w, -a.z,  a.y,
       a.y,  a.z,  a.w, -a.x,
       a.z, -a.y,  a.x,  a.w;
  return m;
}

// vec4(a * b) = hamilton_minus(b) * vec4(a)
inline Mat4 hamilton_minus(const Quaternion& b) {
  Mat4 m;
  m << b.w, -b.x, -b.y, -b.z,
       b.x,  b.w,  b.z, -b.y,
       b.y, -b.z,  b.w,  b.x,
       b.z,  b.y, -b.x,  b.w;
  return m;
}

// Shortest-arc rotation taking unit vector `from` onto unit vector `to`.
inline Quaternion rotation_between(const Vec3& from, const Vec3& to) {
  const double c = std::clamp(from.dot(to), -1.0, 1.0);
  if (c < -1.0 + 1e-12) {
    Vec3 axis = from.cross(Vec3::UnitX());
    if (axis.norm() < 1e-6) axis = from.cross(Vec3::UnitY());
    return Quaternion::from_axis_angle(axis.normalized(), M_PI);
  }
  const Vec3 axis = from.cross(to);
  const double w = std::sqrt(0.5 * (1.0 + c));
  const Vec3 v = axis / (2.0 * w);
  return {w, v.x(), v.y(), v.z()};
}

struct DualQuaternion {
  Quaternion primary;
  Quaternion dual;  // coefficient of eps, eps^2 = 0

  static DualQuaternion identity() { return {Quaternion::identity(), Quaternion{0, 0, 0, 0}}; }
  static DualQuaternion from_vec8(const Vec8& v) {
    return {{v(0), v(1), v(2), v(3)}, {v(4), v(5), v(6), v(7)}};
  }

  Vec8 vec8() const {
    Vec8 v;
    v << primary.w, primary.x, primary.y, primary.z, dual.w, dual.x, dual.y, dual.z;
    return v;
  }

  DualQuaternion conj() const { return {primary.conj(), dual.conj()}; }

  friend DualQuaternion operator+(const DualQuaternion& a, const DualQuaternion& b) {
    return {a.primary + b.primary, a.dual + b.dual};
  }
  friend DualQuaternion operator-(const DualQuaternion& a, const DualQuaternion& b) {
    return {a.primary - b.primary, a.dual - b.dual};
  }
  friend DualQuaternion operator*(double s, const DualQuaternion& a) { return {s * a.primary, s * a.dual}; }

  friend DualQuaternion operator*(const DualQuaternion& a, const DualQuaternion& b) {
    return {a.primary * b.primary, a.primary * b.dual + a.dual * b.primary};
  }

  friend bool operator==(const DualQuaternion&, const DualQuaternion&) = default;
};

// vec8(a * b) = dq_hamilton_plus(a) * vec8(b)
inline Mat8 dq_hamilton_plus(const DualQuaternion& a) {
  Mat8 m = Mat8::Zero();
  m.topLeftCorner<4, 4>() = hamilton_plus(a.primary);
  m.bottomLeftCorner<4, 4>() = hamilton_plus(a.dual);
  m.bottomRightCorner<4, 4>() = hamilton_plus(a.primary);
  return m;
}

// vec8(a * b) = dq_hamilton_minus(b) * vec8(a)
inline Mat8 dq_hamilton_minus(const DualQuaternion& b) {
  Mat8 m = Mat8::Zero();
  m.topLeftCorner<4, 4>() = hamilton_minus(b.primary);
  m.bottomLeftCorner<4, 4>() = hamilton_minus(b.dual);
  m.bottomRightCorner<4, 4>() = hamilton_minus(b.primary);
  return m;
}

// Rigid pose. Construction checks the unit invariants; products of poses are
// trusted to stay on the manifold and are renormalized by normalize_pose when
// integrated values drift.
class UnitDualQuaternion {
 public:
  UnitDualQuaternion() : dq_(DualQuaternion::identity()) {}

  explicit UnitDualQuaternion(const DualQuaternion& dq) : dq_(dq) {
    if (!dq.primary.is_unit(kUnitTolerance) || std::abs(dot(dq.primary, dq.dual)) > kUnitTolerance)
      throw InvalidInput("dual quaternion is not a unit pose");
  }

  static UnitDualQuaternion identity() { return {}; }

  static UnitDualQuaternion from_rotation_translation(const Quaternion& r, const Vec3& t) {
    if (!r.is_unit(kUnitTolerance)) throw InvalidInput("rotation quaternion is not unit");
    return assume_unit({r, 0.5 * (Quaternion::pure(t) * r)});
  }
  static UnitDualQuaternion from_translation(const Vec3& t) {
    return from_rotation_translation(Quaternion::identity(), t);
  }
  static UnitDualQuaternion from_rotation(const Quaternion& r) {
    return from_rotation_translation(r, Vec3::Zero());
  }

  // Skips the invariant check; callers guarantee the value is a unit pose.
  static UnitDualQuaternion assume_unit(const DualQuaternion& dq) {
    UnitDualQuaternion x;
    x.dq_ = dq;
    return x;
  }

  const DualQuaternion& dq() const { return dq_; }
  const Quaternion& rotation() const { return dq_.primary; }
  Vec3 translation() const { return (2.0 * (dq_.dual * dq_.primary.conj())).vec3(); }
  Vec8 vec8() const { return dq_.vec8(); }

  UnitDualQuaternion inverse() const { return assume_unit(dq_.conj()); }

  friend UnitDualQuaternion operator*(const UnitDualQuaternion& a, const UnitDualQuaternion& b) {
    return assume_unit(a.dq_ * b.dq_);
  }

 private:
  DualQuaternion dq_;
};

inline DualQuaternion dq_mul(const DualQuaternion& a, const DualQuaternion& b) { return a * b; }

// Projects onto the unit-dual-quaternion manifold.
inline UnitDualQuaternion normalize_pose(const DualQuaternion& x) {
  const double n = x.primary.norm();
  if (!(n > 1e-15)) throw DegenerateInput("normalize_pose: zero primary part");
  const Quaternion r = (1.0 / n) * x.primary;
  Quaternion d = (1.0 / n) * x.dual;
  d = d - dot(r, d) * r;
  return UnitDualQuaternion::assume_unit({r, d});
}

inline Vec3 transform_point(const UnitDualQuaternion& x, const Vec3& p) {
  return x.rotation().rotate(p) + x.translation();
}

// Plucker line l + eps m with unit direction l and moment m = p x l.
struct PluckerLine {
  Vec3 l{Vec3::UnitZ()};
  Vec3 m{Vec3::Zero()};

  // Closest point of the line to the origin.
  Vec3 point() const { return l.cross(m); }
};

inline bool is_valid(const PluckerLine& L, double tol = kUnitTolerance) {
  return std::abs(L.l.norm() - 1.0) <= tol && std::abs(L.l.dot(L.m)) <= tol;
}

inline PluckerLine line_from_point_direction(const Vec3& p, const Vec3& l) {
  if (std::abs(l.norm() - 1.0) > kUnitTolerance) throw InvalidInput("line direction is not unit");
  return {l, p.cross(l)};
}

inline PluckerLine transform_line(const UnitDualQuaternion& x, const PluckerLine& L) {
  const Vec3 l = x.rotation().rotate(L.l);
  return {l, x.rotation().rotate(L.m) + x.translation().cross(l)};
}

// Squared Euclidean distance from p to the line, in m^2.
inline double sq_dist_point_line(const Vec3& p, const PluckerLine& L) {
  return (p.cross(L.l) - L.m).squaredNorm();
}

struct PlanePrimitive {
  Vec3 n{Vec3::UnitZ()};  // unit normal
  double d_offset{0.0};   // p . n for every point p of the plane, meters

  static PlanePrimitive from_point_normal(const Vec3& p, const Vec3& n) {
    if (std::abs(n.norm() - 1.0) > kUnitTolerance) throw InvalidInput("plane normal is not unit");
    return {n, p.dot(n)};
  }
};

// Positive on the side the normal points to.
inline double signed_dist_point_plane(const Vec3& p, const PlanePrimitive& P) { return p.dot(P.n) - P.d_offset; }

struct CylinderPrimitive {
  PluckerLine axis;
  double radius{1.0};  // m

  CylinderPrimitive() = default;
  CylinderPrimitive(const PluckerLine& a, double r) : axis(a), radius(r) {
    if (!(r > 0.0)) throw InvalidInput("cylinder radius must be positive");
  }
};

struct ConePrimitive {
  PluckerLine axis;
  double half_angle{0.1};  // rad, in (0, pi/2)

  ConePrimitive() = default;
  ConePrimitive(const PluckerLine& a, double theta) : axis(a), half_angle(theta) {
    if (!(theta > 0.0 && theta < M_PI / 2)) throw InvalidInput("cone half-angle must lie in (0, pi/2)");
  }
};

// f(phi) = 2 - 2 cos(phi) of the line-static-line angle distance.
inline double angle_distance(double phi) { return 2.0 - 2.0 * std::cos(phi); }

struct LineAngle {
  double phi;  // rad in [0, pi]
  double f;    // in [0, 4]
};

inline LineAngle line_angle_f(const Vec3& la, const Vec3& lb) {
  const double phi = std::atan2(la.cross(lb).norm(), la.dot(lb));
  const double f = std::clamp(2.0 - 2.0 * la.dot(lb), 0.0, 4.0);
  return {phi, f};
}

inline double deg2rad(double deg) { return deg * M_PI / 180.0; }
inline double rad2deg(double rad) { return rad * 180.0 / M_PI; }

}  // namespace pdt
