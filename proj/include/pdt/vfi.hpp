#pragma once

// Vector-field-inequality rows. Every row has the form a . u <= rhs, where u is
// either the joint velocity (motion law) or the parameter rate (adaptation law).
//
// Sign conventions, with raw = the signed distance error before the gain:
//   keep-out / keep-above  (patient cylinder, plane) : a = -J_d, rhs =  gain * raw
//   keep-in                (guide cylinder, cone)    : a = +J_d, rhs = -gain * raw
//   joint position                                   : rhs = gain * (margin to the limit)
//   joint velocity                                   : gain = 1, rhs = qdot_max
//
// Row order inside assemble_constraints is fixed:
//   patient cylinder (one row per checked point), guide cylinder, cone, plane,
//   joint position upper (n), joint position lower (n),
//   joint velocity upper (n), joint velocity lower (n).

#include <string>
#include <string_view>
#include <vector>

#include "pdt/kinematics.hpp"

namespace pdt {

enum class RowLabel {
  patient_cylinder_keep_out,
  guide_cylinder_keep_in,
  cone_keep_in,
  plane_keep_above,
  joint_pos_upper,
  joint_pos_lower,
  joint_vel_upper,
  joint_vel_lower,
};

inline std::string_view to_string(RowLabel label) {
  switch (label) {
    case RowLabel::patient_cylinder_keep_out: return "patient_cylinder_keep_out";
    case RowLabel::guide_cylinder_keep_in: return "guide_cylinder_keep_in";
    case RowLabel::cone_keep_in: return "cone_keep_in";
    case RowLabel::plane_keep_above: return "plane_keep_above";
    case RowLabel::joint_pos_upper: return "joint_pos_upper";
    case RowLabel::joint_pos_lower: return "joint_pos_lower";
    case RowLabel::joint_vel_upper: return "joint_vel_upper";
    case RowLabel::joint_vel_lower: return "joint_vel_lower";
  }
  return "unknown";
}

inline bool is_keep_in(RowLabel label) {
  return label == RowLabel::guide_cylinder_keep_in || label == RowLabel::cone_keep_in;
}

struct ConstraintRow {
  RowVectorXd a;
  double rhs{0.0};
  RowLabel label{RowLabel::patient_cylinder_keep_out};
  double gain{1.0};
  double raw_distance{0.0};  // D - R^2, f - f(theta), d, or the joint margin
};

// rhs implied by (label, gain, raw_distance).
inline double rhs_from_raw(const ConstraintRow& row) {
  return is_keep_in(row.label) ? -row.gain * row.raw_distance : row.gain * row.raw_distance;
}

inline ConstraintRow row_point_outside_cylinder(const RowVectorXd& Jd_row, double D, const CylinderPrimitive& cyl,
                                                double eta_c) {
  const double raw = D - cyl.radius * cyl.radius;
  return {-Jd_row, eta_c * raw, RowLabel::patient_cylinder_keep_out, eta_c, raw};
}

inline ConstraintRow row_point_inside_cylinder(const RowVectorXd& Jd_row, double D, const CylinderPrimitive& cyl,
                                               double eta_g) {
  const double raw = D - cyl.radius * cyl.radius;
  return {Jd_row, -eta_g * raw, RowLabel::guide_cylinder_keep_in, eta_g, raw};
}

inline ConstraintRow row_line_in_cone(const RowVectorXd& Jf_row, double f, const ConePrimitive& cone, double eta_o) {
  const double raw = f - angle_distance(cone.half_angle);
  return {Jf_row, -eta_o * raw, RowLabel::cone_keep_in, eta_o, raw};
}

inline ConstraintRow row_point_above_plane(const RowVectorXd& Jd_row, double d, double eta_P) {
  return {-Jd_row, eta_P * d, RowLabel::plane_keep_above, eta_P, d};
}

inline std::vector<ConstraintRow> joint_limit_rows(const SerialManipulator& robot, const VectorXd& q,
                                                   double eta_joint) {
  robot.check_dimension(q);
  const int n = robot.n_joints();
  std::vector<ConstraintRow> rows;
  rows.reserve(static_cast<std::size_t>(4 * n));
  auto unit = [n](int i, double s) {
    RowVectorXd a = RowVectorXd::Zero(n);
    a(i) = s;
    return a;
  };
  for (int i = 0; i < n; ++i) {
    const double m = robot.q_max()(i) - q(i);
    rows.push_back({unit(i, 1.0), eta_joint * m, RowLabel::joint_pos_upper, eta_joint, m});
  }
  for (int i = 0; i < n; ++i) {
    const double m = q(i) - robot.q_min()(i);
    rows.push_back({unit(i, -1.0), eta_joint * m, RowLabel::joint_pos_lower, eta_joint, m});
  }
  for (int i = 0; i < n; ++i)
    rows.push_back({unit(i, 1.0), robot.qdot_max()(i), RowLabel::joint_vel_upper, 1.0, robot.qdot_max()(i)});
  for (int i = 0; i < n; ++i)
    rows.push_back({unit(i, -1.0), robot.qdot_max()(i), RowLabel::joint_vel_lower, 1.0, robot.qdot_max()(i)});
  return rows;
}

struct VfiGains {
  double eta_c{1.0};      // patient cylinder
  double eta_g{1.0};      // guide cylinder
  double eta_o{1.0};      // cone
  double eta_P{5.0};      // plane
  double eta_joint{1.0};  // joint position rows
};

// Which families a procedure step enforces.
struct ActiveFamilies {
  bool patient{false};
  bool guide{false};
  bool cone{false};
  bool plane{false};

  static ActiveFamilies for_step(int step) {
    if (step == 3) return {false, true, true, true};
    return {true, false, false, false};
  }
};

// Robot points checked against the patient cylinder.
enum class PatientPoint { needle_tip, end_effector };

struct ConstraintScene {
  CylinderPrimitive patient_cylinder;
  CylinderPrimitive guide_cylinder;
  ConePrimitive cone;
  PlanePrimitive target_plane;
  VfiGains gains;
  std::vector<PatientPoint> patient_points{PatientPoint::needle_tip, PatientPoint::end_effector};

  // Cone axis and plane normal must both follow the guide direction.
  void validate(double tol = 1e-9) const {
    const Vec3& lg = guide_cylinder.axis.l;
    if ((cone.axis.l - lg).norm() > tol || (cone.axis.m - guide_cylinder.axis.m).norm() > tol)
      throw InvalidInput("cone axis must coincide with the guide line");
    if ((target_plane.n - lg).norm() > tol) throw InvalidInput("target plane normal must equal the guide direction");
    if (!is_valid(patient_cylinder.axis) || !is_valid(guide_cylinder.axis))
      throw InvalidInput("cylinder axes must be valid Plucker lines");
  }
};

// A point on the (estimated) robot and its Jacobian with respect to the
// decision variable of the law being assembled (q or a_hat).
struct TrackedPoint {
  Vec3 p;
  MatrixXd J;  // 3 x k
};

// Estimated geometry the rows are built from.
struct ConstraintState {
  std::vector<TrackedPoint> patient_points;  // checked against the patient cylinder
  TrackedPoint tip;                          // needle tip
  Vec3 needle_dir{Vec3::UnitZ()};            // unit needle direction l_n
  MatrixXd J_dir;                            // 3 x k
};

struct ConstraintSet {
  MatrixXd B;
  VectorXd b;
  std::vector<ConstraintRow> rows;
};

inline ConstraintSet stack_rows(std::vector<ConstraintRow> rows, Eigen::Index k) {
  ConstraintSet s;
  s.B.resize(static_cast<Eigen::Index>(rows.size()), k);
  s.b.resize(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].a.size() != k) throw InvalidInput("constraint row has the wrong number of columns");
    s.B.row(static_cast<Eigen::Index>(i)) = rows[i].a;
    s.b(static_cast<Eigen::Index>(i)) = rows[i].rhs;
  }
  s.rows = std::move(rows);
  return s;
}

// Primitive rows only (no joint rows); used directly by the adaptation law.
inline std::vector<ConstraintRow> geometric_rows(const ConstraintScene& scene, const ActiveFamilies& active,
                                                 const ConstraintState& st) {
  std::vector<ConstraintRow> rows;
  const VfiGains& g = scene.gains;
  if (active.patient) {
    for (const TrackedPoint& pt : st.patient_points) {
      const PluckerLine& L = scene.patient_cylinder.axis;
      rows.push_back(row_point_outside_cylinder(dist_jacobian_point_line(pt.J, pt.p, L), sq_dist_point_line(pt.p, L),
                                                scene.patient_cylinder, g.eta_c));
    }
  }
  if (active.guide) {
    const PluckerLine& L = scene.guide_cylinder.axis;
    rows.push_back(row_point_inside_cylinder(dist_jacobian_point_line(st.tip.J, st.tip.p, L),
                                             sq_dist_point_line(st.tip.p, L), scene.guide_cylinder, g.eta_g));
  }
  if (active.cone) {
    const Vec3& c = scene.cone.axis.l;
    rows.push_back(row_line_in_cone(angle_jacobian_line_line(st.J_dir, st.needle_dir, c),
                                    line_angle_f(st.needle_dir, c).f, scene.cone, g.eta_o));
  }
  if (active.plane) {
    rows.push_back(row_point_above_plane(dist_jacobian_point_plane(st.tip.J, scene.target_plane),
                                         signed_dist_point_plane(st.tip.p, scene.target_plane), g.eta_P));
  }
  return rows;
}

// Full (B, b) of the motion law for a procedure step (0 = warm-up behaves as step 1).
inline ConstraintSet assemble_constraints(const ConstraintScene& scene, int step, const ConstraintState& st,
                                          const SerialManipulator& robot, const VectorXd& q) {
  if (step < 0 || step > 3) throw InvalidInput("procedure step must be 0, 1, 2 or 3");
  std::vector<ConstraintRow> rows = geometric_rows(scene, ActiveFamilies::for_step(step), st);
  std::vector<ConstraintRow> joints = joint_limit_rows(robot, q, scene.gains.eta_joint);
  rows.insert(rows.end(), std::make_move_iterator(joints.begin()), std::make_move_iterator(joints.end()));
  return stack_rows(std::move(rows), robot.n_joints());
}

}  // namespace pdt
