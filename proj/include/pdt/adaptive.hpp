#pragma once

// Estimated kinematic chain transmitter -> base -> flange -> needle, the
// constrained motion law and the constrained parameter-adaptation law.
//
// Parameter vector a_hat (12 entries):
//   [0..2]  base translation, expressed in the rotated base frame (m)
//   [3..5]  base rotation vector (rad)
//   [6..8]  needle-tip translation, expressed in the rotated needle frame (m)
//   [9..11] needle-tip rotation vector (rad)
// A (t, v) pair maps to the pose exp(v) * (1 + eps t / 2), so its world
// translation is R(v) t.
//
// The needle insertion axis is +z of the needle frame. The needle line
// direction l_n runs from the tip back towards the hub (-z), so an aligned
// needle has l_n equal to the outward guide direction.

#include <Eigen/Dense>

#include <optional>
#include <vector>

#include "pdt/kinematics.hpp"
#include "pdt/qp.hpp"
#include "pdt/vfi.hpp"

namespace pdt {

using Vec12 = Eigen::Matrix<double, 12, 1>;

inline const Vec3 kNeedleLineLocal{0.0, 0.0, -1.0};

inline UnitDualQuaternion pose_from_params(const Vec3& t, const Vec3& v) {
  const Quaternion r = Quaternion::from_rotation_vector(v);
  return UnitDualQuaternion::from_rotation_translation(r, r.rotate(t));
}

struct AdaptiveParameters {
  Vec12 v{Vec12::Zero()};

  static AdaptiveParameters from_poses(const UnitDualQuaternion& base, const UnitDualQuaternion& needle) {
    AdaptiveParameters a;
    a.v.segment<3>(0) = base.rotation().conj().rotate(base.translation());
    a.v.segment<3>(3) = base.rotation().rotation_vector();
    a.v.segment<3>(6) = needle.rotation().conj().rotate(needle.translation());
    a.v.segment<3>(9) = needle.rotation().rotation_vector();
    return a;
  }

  UnitDualQuaternion base_pose() const { return pose_from_params(v.segment<3>(0), v.segment<3>(3)); }
  UnitDualQuaternion needle_pose() const { return pose_from_params(v.segment<3>(6), v.segment<3>(9)); }

  // Keeps both rotation vectors below pi in magnitude. The represented poses
  // do not change.
  void rechart() {
    for (int k : {3, 9}) {
      const double th = v.segment<3>(k).norm();
      if (th >= M_PI) v.segment<3>(k) *= (th - 2.0 * M_PI * std::round(th / (2.0 * M_PI))) / th;
    }
  }
};

// T_transmitter<-base(a) * fkm(q) * T_flange<-needle(a)
inline UnitDualQuaternion estimated_needle_pose(const SerialManipulator& robot, const VectorXd& q,
                                                const AdaptiveParameters& a) {
  return normalize_pose((a.base_pose() * fkm(robot, q) * a.needle_pose()).dq());
}

namespace detail {

// d/dv of the exponential map r(v), one 4-vector per component of v.
inline Eigen::Matrix<double, 4, 3> rotation_vector_jacobian(const Vec3& v) {
  const double th = v.norm();
  double s, c;  // s = sin(th/2)/th, c = (ds/dth)/th
  if (th < 1e-3) {
    s = 0.5 - th * th / 48.0;
    c = -1.0 / 24.0 + th * th / 960.0;
  } else {
    s = std::sin(0.5 * th) / th;
    c = (0.5 * th * std::cos(0.5 * th) - std::sin(0.5 * th)) / (th * th * th);
  }
  Eigen::Matrix<double, 4, 3> J;
  J.row(0) = -0.5 * s * v.transpose();
  J.bottomRows<3>() = s * Mat3::Identity() + c * v * v.transpose();
  return J;
}

// 8 x 6 derivative of vec8(pose_from_params(t, v)) with respect to (t, v).
inline Eigen::Matrix<double, 8, 6> param_pose_jacobian(const Vec3& t, const Vec3& v) {
  const Quaternion r = Quaternion::from_rotation_vector(v);
  const Eigen::Matrix<double, 4, 3> dr = rotation_vector_jacobian(v);
  const Quaternion tq = Quaternion::pure(t);
  Eigen::Matrix<double, 8, 6> J = Eigen::Matrix<double, 8, 6>::Zero();
  for (int j = 0; j < 3; ++j) {
    J.block<4, 1>(4, j) = (0.5 * (r * Quaternion::pure(Vec3::Unit(j)))).vec4();
    const Quaternion drj = Quaternion::from_vec4(dr.col(j));
    J.block<4, 1>(0, 3 + j) = drj.vec4();
    J.block<4, 1>(4, 3 + j) = (0.5 * (drj * tq)).vec4();
  }
  return J;
}

}  // namespace detail

// Everything the two laws need about the estimated chain at (q, a_hat).
struct EstimatedGeometry {
  TaskJacobians needle_q;  // needle frame, derivatives w.r.t. q
  TaskJacobians flange_q;  // flange frame, derivatives w.r.t. q
  TaskJacobians needle_a;  // needle frame, derivatives w.r.t. a_hat (8 x 12 J_pose)
  TaskJacobians flange_a;  // flange frame, derivatives w.r.t. a_hat
};

inline EstimatedGeometry estimate_geometry(const SerialManipulator& robot, const VectorXd& q,
                                           const AdaptiveParameters& a) {
  const UnitDualQuaternion B = a.base_pose(), N = a.needle_pose();
  EstimatedGeometry g;
  g.needle_q = pose_jacobian(robot, q, B, N, kNeedleLineLocal);
  g.flange_q = pose_jacobian(robot, q, B);
  const UnitDualQuaternion E = fkm(robot, q);
  const Eigen::Matrix<double, 8, 6> dB = detail::param_pose_jacobian(a.v.segment<3>(0), a.v.segment<3>(3));
  const Eigen::Matrix<double, 8, 6> dN = detail::param_pose_jacobian(a.v.segment<3>(6), a.v.segment<3>(9));

  g.needle_a.pose = g.needle_q.pose;
  g.needle_a.J_pose.resize(8, 12);
  g.needle_a.J_pose.leftCols<6>() = dq_hamilton_minus((E * N).dq()) * dB;
  g.needle_a.J_pose.rightCols<6>() = dq_hamilton_plus((B * E).dq()) * dN;
  derive_task_blocks(g.needle_a, kNeedleLineLocal);

  g.flange_a.pose = g.flange_q.pose;
  g.flange_a.J_pose = MatrixXd::Zero(8, 12);
  g.flange_a.J_pose.leftCols<6>() = dq_hamilton_minus(E.dq()) * dB;
  derive_task_blocks(g.flange_a, Vec3::UnitZ());
  return g;
}

// 8 x 12 Jacobian of vec8(estimated needle pose) w.r.t. a_hat at fixed q.
inline MatrixXd parameter_jacobian(const SerialManipulator& robot, const VectorXd& q, const AdaptiveParameters& a) {
  return estimate_geometry(robot, q, a).needle_a.J_pose;
}

// Central-difference reference for parameter_jacobian.
inline MatrixXd parameter_jacobian_fd(const SerialManipulator& robot, const VectorXd& q, const AdaptiveParameters& a,
                                      double h = 1e-7) {
  const UnitDualQuaternion y0 = estimated_needle_pose(robot, q, a);
  auto aligned = [&](const UnitDualQuaternion& y) {
    return dot(y.rotation(), y0.rotation()) < 0.0 ? Vec8(-y.vec8()) : y.vec8();
  };
  MatrixXd J(8, 12);
  for (int j = 0; j < 12; ++j) {
    AdaptiveParameters ap = a, am = a;
    ap.v(j) += h;
    am.v(j) -= h;
    J.col(j) = (aligned(estimated_needle_pose(robot, q, ap)) - aligned(estimated_needle_pose(robot, q, am))) / (2 * h);
  }
  return J;
}

// Rows of the adaptation law mirror the motion-law primitives; the tracked
// points switch between q-Jacobians and a_hat-Jacobians.
inline ConstraintState constraint_state(const ConstraintScene& scene, const TaskJacobians& needle,
                                        const TaskJacobians& flange) {
  ConstraintState st;
  for (PatientPoint pp : scene.patient_points) {
    const TaskJacobians& src = pp == PatientPoint::needle_tip ? needle : flange;
    st.patient_points.push_back({src.pose.translation(), src.J_trans});
  }
  st.tip = {needle.pose.translation(), needle.J_trans};
  st.needle_dir = needle.line_dir;
  st.J_dir = needle.J_line_dir;
  return st;
}

enum class TaskKind { none, rotation_only, full_pose, translation_only };

struct TaskTarget {
  TaskKind kind{TaskKind::none};
  VectorXd x_d;     // 4, 8 or 3 entries
  VectorXd xdot_d;  // same length as x_d

  static TaskTarget none() { return {}; }
  static TaskTarget rotation(const Quaternion& r_d) { return {TaskKind::rotation_only, r_d.vec4(), VectorXd::Zero(4)}; }
  static TaskTarget pose(const UnitDualQuaternion& x_d) { return {TaskKind::full_pose, x_d.vec8(), VectorXd::Zero(8)}; }
  static TaskTarget translation(const Vec3& p_d, const Vec3& v_d = Vec3::Zero()) {
    return {TaskKind::translation_only, p_d, v_d};
  }

  Eigen::Index dimension() const {
    switch (kind) {
      case TaskKind::rotation_only: return 4;
      case TaskKind::full_pose: return 8;
      case TaskKind::translation_only: return 3;
      case TaskKind::none: return 0;
    }
    return 0;
  }
};

struct TaskError {
  VectorXd e;  // x_hat - x_d in the target's representation
  MatrixXd J;  // d e / d (decision variable)
};

// Error and its Jacobian for any decision variable: `frame` carries the pose,
// its J_pose and the derived blocks.
inline TaskError task_error(const TaskTarget& target, const TaskJacobians& frame) {
  if (target.x_d.size() != target.dimension() || target.xdot_d.size() != target.dimension())
    throw InvalidInput("task target has the wrong dimension for its kind");
  const auto k = frame.J_pose.cols();
  TaskError te;
  switch (target.kind) {
    case TaskKind::none:
      te.e = VectorXd::Zero(0);
      te.J = MatrixXd::Zero(0, k);
      break;
    case TaskKind::rotation_only: {
      // s (r_hat r_d^*) - 1, s picks the hemisphere closest to the identity
      const Quaternion rd_conj = Quaternion::from_vec4(target.x_d).conj();
      const Quaternion rel = frame.pose.rotation() * rd_conj;
      const double s = rel.w < 0.0 ? -1.0 : 1.0;
      te.e = s * rel.vec4() - Vec4(1, 0, 0, 0);
      te.J = s * hamilton_minus(rd_conj) * frame.J_rot;
      break;
    }
    case TaskKind::full_pose: {
      const Vec8 xd = target.x_d;
      const double s = frame.pose.vec8().head<4>().dot(xd.head<4>()) < 0.0 ? -1.0 : 1.0;
      te.e = s * frame.pose.vec8() - xd;
      te.J = s * frame.J_pose;
      break;
    }
    case TaskKind::translation_only:
      te.e = frame.pose.translation() - target.x_d;
      te.J = frame.J_trans;
      break;
  }
  return te;
}

struct ControllerGains {
  double eta_align{0.5};       // task gain in steps 1 and 2, 1/s
  double eta_insert{0.2};      // task gain in step 3, 1/s
  double lambda{1e-3};         // motion damping
  double eta_adapt{5.0};       // adaptation gain, 1/s
  double lambda_adapt{0.01};   // adaptation damping
  double adapt_tol{1e-10};     // feasibility tolerance of the adaptation QP
  double pos_thresh{1.5e-3};   // convergence threshold, m
  double ang_thresh{0.5 * M_PI / 180.0};  // convergence threshold, rad

  double eta_for(TaskKind kind) const { return kind == TaskKind::translation_only ? eta_insert : eta_align; }

  void validate() const {
    if (!(eta_align > 0.0) || !(eta_insert > 0.0)) throw InvalidInput("task gains must be positive");
    if (!(lambda > 0.0) || !(lambda_adapt > 0.0)) throw InvalidInput("damping factors must be positive");
    if (!(eta_adapt > 0.0)) throw InvalidInput("adaptation gain must be positive");
    if (!(adapt_tol > 0.0) || adapt_tol >= 1e-9) throw InvalidInput("adaptation tolerance must lie in (0, 1e-9)");
    if (!(pos_thresh > 0.0) || !(ang_thresh > 0.0)) throw InvalidInput("convergence thresholds must be positive");
  }
};

struct ControlResult {
  VectorXd qdot;
  bool stopped{false};  // QP infeasible: the robot is commanded to rest
  QpSolution qp;
};

// Motion law. `frame` is the estimated needle frame with q-Jacobians.
// `xdot_adapt`, when given, is the task-space rate J_{x,a} a_dot caused by the
// concurrent parameter update; the robot motion cancels it.
inline ControlResult nominal_control_step(const TaskJacobians& frame, const TaskTarget& target, const MatrixXd& B,
                                          const VectorXd& b, const ControllerGains& gains,
                                          const VectorXd& xdot_adapt = {}) {
  const auto n = frame.J_pose.cols();
  const TaskError te = task_error(target, frame);
  if (xdot_adapt.size() != 0 && xdot_adapt.size() != te.e.size())
    throw InvalidInput("adaptation rate has the wrong dimension for the task");
  VectorXd e_term = gains.eta_for(target.kind) * te.e - target.xdot_d;
  if (xdot_adapt.size() != 0) e_term += xdot_adapt;
  ControlResult out;
  out.qp = solve_qp(build_damped_ls_qp(te.J, e_term, gains.lambda, B, b));
  if (out.qp.optimal()) {
    out.qdot = out.qp.u_star;
  } else {
    out.qdot = VectorXd::Zero(n);
    out.stopped = true;
  }
  return out;
}

inline ControlResult nominal_control_step(const SerialManipulator& robot, const VectorXd& q,
                                          const AdaptiveParameters& a, const TaskTarget& target, const MatrixXd& B,
                                          const VectorXd& b, const ControllerGains& gains) {
  return nominal_control_step(estimate_geometry(robot, q, a).needle_q, target, B, b, gains);
}

// Sign-consistent vec8(y_hat) - vec8(y).
inline Vec8 pose_residual(const UnitDualQuaternion& y_hat, const UnitDualQuaternion& y) {
  const double s = dot(y_hat.rotation(), y.rotation()) < 0.0 ? -1.0 : 1.0;
  return y_hat.vec8() - s * y.vec8();
}

struct AdaptationResult {
  Vec12 a_dot{Vec12::Zero()};
  bool paused{false};    // QP infeasible, no update this tick
  double lyapunov{0.0};  // x_breve' J_{x,a} a_dot, must be <= 0
  VectorXd xdot_adapt;   // J_{x,a} a_dot for the target's task
};

// Rows B_a, b_a of the adaptation law.
inline ConstraintSet adaptation_constraints(const ConstraintScene& scene, const ActiveFamilies& active,
                                            const EstimatedGeometry& g) {
  return stack_rows(geometric_rows(scene, active, constraint_state(scene, g.needle_a, g.flange_a)), 12);
}

// Adaptation law with the Lyapunov row appended to (B_a, b_a).
inline AdaptationResult adaptation_step(const EstimatedGeometry& g, const UnitDualQuaternion& y_measured,
                                        const TaskTarget& target, const MatrixXd& B_a, const VectorXd& b_a,
                                        const ControllerGains& gains) {
  const Vec8 y_tilde = pose_residual(g.needle_a.pose, y_measured);
  const TaskError te = task_error(target, g.needle_a);
  const RowVectorXd lyap = te.e.size() > 0 ? RowVectorXd(te.e.transpose() * te.J) : RowVectorXd::Zero(12);

  MatrixXd A(B_a.rows() + 1, 12);
  VectorXd b(B_a.rows() + 1);
  if (B_a.rows() > 0) {
    A.topRows(B_a.rows()) = B_a;
    b.head(B_a.rows()) = b_a;
  }
  A.bottomRows<1>() = lyap;
  b(B_a.rows()) = 0.0;

  AdaptationResult out;
  const QpProblem p = build_damped_ls_qp(g.needle_a.J_pose, gains.eta_adapt * y_tilde, gains.lambda_adapt, A, b);
  const QpSolution s = solve_qp(p, QpTolerances{gains.adapt_tol, 1e-7});
  if (!s.optimal()) {
    out.paused = true;
    warn("adaptation QP infeasible, parameters held");
    return out;
  }
  out.a_dot = s.u_star;
  out.lyapunov = lyap.dot(out.a_dot);
  out.xdot_adapt = te.J * out.a_dot;
  return out;
}

inline AdaptationResult adaptation_step(const SerialManipulator& robot, const VectorXd& q,
                                        const AdaptiveParameters& a, const UnitDualQuaternion& y_measured,
                                        const TaskTarget& target, const MatrixXd& B_a, const VectorXd& b_a,
                                        const ControllerGains& gains) {
  return adaptation_step(estimate_geometry(robot, q, a), y_measured, target, B_a, b_a, gains);
}

// Re-solves the motion law against the explicit Euler step of (q, a_hat):
// the task term asks for the rate that makes the stepped estimated task land
// where the continuous law predicts, and each geometric row bounds the actual
// change of its distance over the step instead of its linearisation. `cs` is
// the unmodified motion constraint set for `step` at (q, a_hat). A pass whose
// QP is infeasible ends the iteration with the last feasible q_dot.
inline VectorXd discrete_correction(const SerialManipulator& robot, const VectorXd& q, const AdaptiveParameters& a,
                                    const Vec12& a_dot, const TaskTarget& target, const ConstraintScene& scene,
                                    int step, const ConstraintSet& cs, const VectorXd& xdot_adapt,
                                    const ControllerGains& gains, double dt, VectorXd qdot, int passes = 2) {
  if (target.kind == TaskKind::none) return qdot;
  const EstimatedGeometry g = estimate_geometry(robot, q, a);
  const TaskError te = task_error(target, g.needle_q);
  const TaskError ta = task_error(target, g.needle_a);
  const VectorXd xa = xdot_adapt.size() ? xdot_adapt : VectorXd(VectorXd::Zero(te.e.size()));
  AdaptiveParameters next = a;
  next.v += dt * a_dot;
  const ActiveFamilies active = ActiveFamilies::for_step(step);
  for (int pass = 0; pass < passes; ++pass) {
    const EstimatedGeometry g1 = estimate_geometry(robot, q + dt * qdot, next);
    const VectorXd r = te.e + dt * (te.J * qdot + ta.J * a_dot) - task_error(target, g1.needle_q).e;
    const std::vector<ConstraintRow> rows1 =
        geometric_rows(scene, active, constraint_state(scene, g1.needle_q, g1.flange_q));
    VectorXd b = cs.b;
    for (std::size_t i = 0; i < rows1.size(); ++i) {
      const auto k = static_cast<Eigen::Index>(i);
      const double sign = is_keep_in(cs.rows[i].label) ? 1.0 : -1.0;
      const double rate = (rows1[i].raw_distance - cs.rows[i].raw_distance) / dt;
      b(k) = cs.rows[i].rhs - (sign * rate - cs.B.row(k).dot(qdot));
    }
    const ControlResult cr = nominal_control_step(g.needle_q, target, cs.B, b, gains, VectorXd(xa - r / dt));
    if (cr.stopped) break;
    qdot = cr.qdot;
  }
  return qdot;
}

struct PoseDiscrepancy {
  double position;  // m
  double angle;     // rad, between needle axes
};

inline PoseDiscrepancy pose_discrepancy(const UnitDualQuaternion& a, const UnitDualQuaternion& b) {
  return {(a.translation() - b.translation()).norm(),
          line_angle_f(a.rotation().rotate(kNeedleLineLocal), b.rotation().rotate(kNeedleLineLocal)).phi};
}

inline bool convergence_check(const UnitDualQuaternion& y_hat, const UnitDualQuaternion& y_measured,
                              const ControllerGains& gains) {
  const PoseDiscrepancy d = pose_discrepancy(y_hat, y_measured);
  return d.position < gains.pos_thresh && d.angle < gains.ang_thresh;
}

}  // namespace pdt
