#pragma once

// Serial-manipulator forward kinematics and the Jacobians consumed by the
// control and adaptation laws.
//
// DH conventions (declared per model file):
//   standard : T_i = Rz(theta_i) Tz(d_i) Tx(a_i) Rx(alpha_i)
//   modified : T_i = Rx(alpha_i) Tx(a_i) Rz(theta_i) Tz(d_i)     (Craig)
// For a revolute joint theta_i = q_i + theta_offset_i, for a prismatic joint
// d_i = q_i + d_offset_i. A fixed flange transform is appended after the
// last joint.

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include "pdt/geomalg.hpp"

namespace pdt {

using Eigen::MatrixXd;
using Eigen::RowVectorXd;
using Eigen::VectorXd;

enum class JointType { revolute, prismatic };
enum class DhConvention { standard, modified };

struct DhRow {
  double theta{0.0};  // rad (offset for revolute joints)
  double d{0.0};      // m   (offset for prismatic joints)
  double a{0.0};      // m
  double alpha{0.0};  // rad
  JointType type{JointType::revolute};
};

namespace detail {
inline std::function<void(const std::string&)>& warning_sink() {
  static std::function<void(const std::string&)> sink = [](const std::string& msg) {
    std::clog << "warning: " << msg << '\n';
  };
  return sink;
}
}  // namespace detail

// Replaces the sink used for non-fatal diagnostics (pass an empty function to silence).
inline void set_warning_handler(std::function<void(const std::string&)> handler) {
  detail::warning_sink() = std::move(handler);
}

inline void warn(const std::string& msg) {
  if (auto& sink = detail::warning_sink()) sink(msg);
}

class SerialManipulator {
 public:
  SerialManipulator() = default;

  SerialManipulator(std::vector<DhRow> rows, DhConvention convention, VectorXd q_min, VectorXd q_max,
                    VectorXd qdot_max, UnitDualQuaternion flange = {})
      : rows_(std::move(rows)),
        convention_(convention),
        q_min_(std::move(q_min)),
        q_max_(std::move(q_max)),
        qdot_max_(std::move(qdot_max)),
        flange_(flange) {
    const auto n = static_cast<Eigen::Index>(rows_.size());
    if (n == 0) throw InvalidInput("manipulator needs at least one joint");
    if (q_min_.size() != n || q_max_.size() != n || qdot_max_.size() != n)
      throw InvalidInput("joint limit vectors must have one entry per DH row");
    for (Eigen::Index i = 0; i < n; ++i) {
      if (!(q_min_(i) < q_max_(i))) throw InvalidInput("q_min must be below q_max for joint " + std::to_string(i + 1));
      if (!(qdot_max_(i) > 0.0)) throw InvalidInput("qdot_max must be positive for joint " + std::to_string(i + 1));
    }
  }

  int n_joints() const { return static_cast<int>(rows_.size()); }
  const std::vector<DhRow>& dh_rows() const { return rows_; }
  DhConvention convention() const { return convention_; }
  const VectorXd& q_min() const { return q_min_; }
  const VectorXd& q_max() const { return q_max_; }
  const VectorXd& qdot_max() const { return qdot_max_; }
  const UnitDualQuaternion& flange() const { return flange_; }

  void check_dimension(const VectorXd& q) const {
    if (q.size() != n_joints())
      throw InvalidInput("joint vector has " + std::to_string(q.size()) + " entries, robot has " +
                         std::to_string(n_joints()));
  }

  bool within_limits(const VectorXd& q, double tol = 0.0) const {
    return ((q - q_min_).array() >= -tol).all() && ((q_max_ - q).array() >= -tol).all();
  }

 private:
  std::vector<DhRow> rows_;
  DhConvention convention_{DhConvention::standard};
  VectorXd q_min_, q_max_, qdot_max_;
  UnitDualQuaternion flange_;
};

namespace detail {

inline UnitDualQuaternion rot_x(double a) { return UnitDualQuaternion::from_rotation(Quaternion::from_axis_angle(Vec3::UnitX(), a)); }
inline UnitDualQuaternion rot_z(double a) { return UnitDualQuaternion::from_rotation(Quaternion::from_axis_angle(Vec3::UnitZ(), a)); }
inline UnitDualQuaternion trans_x(double a) { return UnitDualQuaternion::from_translation({a, 0.0, 0.0}); }
inline UnitDualQuaternion trans_z(double d) { return UnitDualQuaternion::from_translation({0.0, 0.0, d}); }

// Forward pass shared by fkm and the Jacobians. `screws` receives, per joint,
// the unit joint screw (rotation line or translation direction) in the base
// frame as a dual quaternion w with d(pose)/dq_i = 0.5 * w * pose.
inline UnitDualQuaternion forward(const SerialManipulator& robot, const VectorXd& q,
                                  std::vector<DualQuaternion>* screws) {
  robot.check_dimension(q);
  if (!robot.within_limits(q)) warn("fkm evaluated outside joint limits");
  const DualQuaternion k_rot{{0, 0, 0, 1}, {0, 0, 0, 0}};
  const DualQuaternion k_lin{{0, 0, 0, 0}, {0, 0, 0, 1}};
  UnitDualQuaternion x;
  if (screws) screws->clear();
  for (int i = 0; i < robot.n_joints(); ++i) {
    const DhRow& row = robot.dh_rows()[static_cast<std::size_t>(i)];
    const double qi = q(i);
    const double theta = row.type == JointType::revolute ? row.theta + qi : row.theta;
    const double d = row.type == JointType::prismatic ? row.d + qi : row.d;
    if (robot.convention() == DhConvention::modified) x = x * rot_x(row.alpha) * trans_x(row.a);
    if (screws) {
      const DualQuaternion& k = row.type == JointType::revolute ? k_rot : k_lin;
      screws->push_back(x.dq() * k * x.dq().conj());
    }
    x = x * rot_z(theta) * trans_z(d);
    if (robot.convention() == DhConvention::standard) x = x * trans_x(row.a) * rot_x(row.alpha);
  }
  return normalize_pose((x * robot.flange()).dq());
}

}  // namespace detail

// End-effector (flange) pose in the robot base frame.
inline UnitDualQuaternion fkm(const SerialManipulator& robot, const VectorXd& q) {
  return detail::forward(robot, q, nullptr);
}

// Jacobians of the frame x = prefix * fkm(q) * suffix.
struct TaskJacobians {
  UnitDualQuaternion pose;  // the differentiated frame
  MatrixXd J_pose;          // 8 x n, vec8(xdot) = J_pose qdot
  MatrixXd J_trans;         // 3 x n, translation of the frame origin
  MatrixXd J_rot;           // 4 x n, rotation quaternion
  MatrixXd J_line_dir;      // 3 x n, direction r * axis * r^*
  Vec3 line_dir;            // current value of that direction
};

inline Mat3 skew(const Vec3& v) {
  Mat3 s;
  s << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return s;
}

// Translation/rotation/direction Jacobians derived from a pose Jacobian.
inline void derive_task_blocks(TaskJacobians& J, const Vec3& local_axis) {
  const Quaternion& r = J.pose.rotation();
  const Quaternion& d = J.pose.dq().dual;
  const MatrixXd JP = J.J_pose.topRows<4>();
  const MatrixXd JD = J.J_pose.bottomRows<4>();
  const Mat4 conj_m = Eigen::Vector4d(1, -1, -1, -1).asDiagonal();
  // t = 2 D P^*
  const MatrixXd Jt4 = 2.0 * (hamilton_minus(r.conj()) * JD + hamilton_plus(d) * conj_m * JP);
  J.J_trans = Jt4.bottomRows<3>();
  J.J_rot = JP;
  // angular velocity omega = vec3(2 rdot r^*)
  const MatrixXd Jw = (2.0 * hamilton_minus(r.conj()) * JP).bottomRows<3>();
  J.line_dir = r.rotate(local_axis);
  J.J_line_dir = -skew(J.line_dir) * Jw;
}

inline TaskJacobians pose_jacobian(const SerialManipulator& robot, const VectorXd& q,
                                   const UnitDualQuaternion& prefix = {}, const UnitDualQuaternion& suffix = {},
                                   const Vec3& local_axis = Vec3::UnitZ()) {
  std::vector<DualQuaternion> screws;
  const UnitDualQuaternion ee = detail::forward(robot, q, &screws);
  TaskJacobians J;
  J.pose = normalize_pose((prefix * ee * suffix).dq());
  J.J_pose.resize(8, robot.n_joints());
  for (int i = 0; i < robot.n_joints(); ++i) {
    const DualQuaternion w = prefix.dq() * screws[static_cast<std::size_t>(i)] * prefix.dq().conj();
    J.J_pose.col(i) = (0.5 * (w * J.pose.dq())).vec8();
  }
  derive_task_blocks(J, local_axis);
  return J;
}

// Row of dD/dq for D = squared distance from the moving point p to the static line L.
inline RowVectorXd dist_jacobian_point_line(const MatrixXd& J_trans, const Vec3& p, const PluckerLine& L) {
  const Vec3 e = p.cross(L.l) - L.m;
  return 2.0 * e.transpose() * (-skew(L.l)) * J_trans;
}

// Row of dd/dq for d = signed distance from the moving point to the static plane P.
inline RowVectorXd dist_jacobian_point_plane(const MatrixXd& J_trans, const PlanePrimitive& P) {
  return P.n.transpose() * J_trans;
}

// Row of df/dq for f = 2 - 2 <l_n, c_axis>, c_axis static.
inline RowVectorXd angle_jacobian_line_line(const MatrixXd& J_line_dir, const Vec3& /*l_n*/, const Vec3& c_axis) {
  return -2.0 * c_axis.transpose() * J_line_dir;
}

// ---------------------------------------------------------------------------
// Robot model file (YAML)
//
//   name: franka_panda            # optional
//   convention: modified          # standard | modified
//   n_joints: 7
//   dh:                           # one row per joint: [theta, d, a, alpha, type]
//     - [0.0, 0.333, 0.0, 0.0, R] #   type R (revolute) or P (prismatic)
//   q_min: [...]                  # rad (m for prismatic)
//   q_max: [...]
//   qdot_max: [...]               # rad/s
//   flange: [x, y, z, rx, ry, rz] # optional fixed offset, m and rotation vector rad
// ---------------------------------------------------------------------------

struct ModelParseError : InvalidInput {
  using InvalidInput::InvalidInput;
};

namespace detail {

inline std::string where(const YAML::Node& node) {
  const auto mark = node.Mark();
  if (mark.line < 0) return "";
  return " (line " + std::to_string(mark.line + 1) + ")";
}

inline double as_number(const YAML::Node& node, const std::string& ctx) {
  if (!node || !node.IsScalar()) throw ModelParseError(ctx + ": expected a number" + where(node));
  try {
    return node.as<double>();
  } catch (const YAML::Exception&) {
    throw ModelParseError(ctx + ": '" + node.Scalar() + "' is not a number" + where(node));
  }
}

inline VectorXd as_vector(const YAML::Node& node, const std::string& field, int n) {
  if (!node) throw ModelParseError("missing field '" + field + "'");
  if (!node.IsSequence()) throw ModelParseError("field '" + field + "': expected a list" + where(node));
  if (static_cast<int>(node.size()) != n)
    throw ModelParseError("field '" + field + "': expected " + std::to_string(n) + " entries, got " +
                          std::to_string(node.size()) + where(node));
  VectorXd v(n);
  for (int i = 0; i < n; ++i)
    v(i) = as_number(node[static_cast<std::size_t>(i)], "field '" + field + "' entry " + std::to_string(i + 1));
  return v;
}

}  // namespace detail

inline SerialManipulator parse_robot_model(const YAML::Node& root) {
  using detail::as_number;
  if (!root.IsMap()) throw ModelParseError("robot model: top level must be a mapping");
  static const char* kKnown[] = {"name", "convention", "n_joints", "dh", "q_min", "q_max", "qdot_max", "flange"};
  for (const auto& kv : root) {
    const auto key = kv.first.as<std::string>();
    if (std::find(std::begin(kKnown), std::end(kKnown), key) == std::end(kKnown))
      throw ModelParseError("unknown field '" + key + "'" + detail::where(kv.first));
  }
  if (!root["n_joints"]) throw ModelParseError("missing field 'n_joints'");
  const int n = static_cast<int>(as_number(root["n_joints"], "field 'n_joints'"));
  if (n <= 0) throw ModelParseError("field 'n_joints': must be positive");

  DhConvention conv = DhConvention::standard;
  if (root["convention"]) {
    const auto c = root["convention"].as<std::string>();
    if (c == "standard") conv = DhConvention::standard;
    else if (c == "modified") conv = DhConvention::modified;
    else throw ModelParseError("field 'convention': expected standard or modified, got '" + c + "'");
  }

  const YAML::Node dh = root["dh"];
  if (!dh || !dh.IsSequence()) throw ModelParseError("missing field 'dh' (list of rows)");
  if (static_cast<int>(dh.size()) != n)
    throw ModelParseError("field 'dh': expected " + std::to_string(n) + " rows, got " + std::to_string(dh.size()));
  static const char* kCols[] = {"theta", "d", "a", "alpha", "type"};
  std::vector<DhRow> rows;
  for (int i = 0; i < n; ++i) {
    const YAML::Node row = dh[static_cast<std::size_t>(i)];
    const std::string ctx = "dh row " + std::to_string(i + 1);
    if (!row.IsSequence() || (row.size() != 4 && row.size() != 5))
      throw ModelParseError(ctx + ": expected [theta, d, a, alpha, type]" + detail::where(row));
    DhRow r;
    double* fields[] = {&r.theta, &r.d, &r.a, &r.alpha};
    for (std::size_t c = 0; c < 4; ++c) *fields[c] = as_number(row[c], ctx + ", field '" + kCols[c] + "'");
    if (row.size() == 5) {
      const auto t = row[4].as<std::string>();
      if (t == "R" || t == "revolute") r.type = JointType::revolute;
      else if (t == "P" || t == "prismatic") r.type = JointType::prismatic;
      else throw ModelParseError(ctx + ", field 'type': expected R or P, got '" + t + "'" + detail::where(row[4]));
    }
    rows.push_back(r);
  }

  UnitDualQuaternion flange;
  if (root["flange"]) {
    const VectorXd f = detail::as_vector(root["flange"], "flange", 6);
    flange = UnitDualQuaternion::from_rotation_translation(Quaternion::from_rotation_vector(f.tail<3>()), f.head<3>());
  }
  return SerialManipulator(std::move(rows), conv, detail::as_vector(root["q_min"], "q_min", n),
                           detail::as_vector(root["q_max"], "q_max", n),
                           detail::as_vector(root["qdot_max"], "qdot_max", n), flange);
}

inline SerialManipulator load_robot_model_string(const std::string& text) {
  try {
    return parse_robot_model(YAML::Load(text));
  } catch (const YAML::ParserException& e) {
    throw ModelParseError(std::string("robot model: ") + e.what());
  }
}

inline SerialManipulator load_robot_model(const std::string& path) {
  try {
    return parse_robot_model(YAML::LoadFile(path));
  } catch (const YAML::BadFile&) {
    throw ModelParseError("cannot open robot model '" + path + "'");
  } catch (const YAML::ParserException& e) {
    throw ModelParseError("robot model '" + path + "': " + e.what());
  }
}

}  // namespace pdt
