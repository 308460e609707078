#pragma once

// Self-verification suites: analytic Jacobians against central differences,
// QP solutions against their KKT conditions, and the quintic boundary
// identities.

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "pdt/adaptive.hpp"
#include "pdt/trajectory.hpp"

namespace pdt {

struct CheckResult {
  std::string suite;
  std::string name;
  double error{0.0};  // worst case over the suite's samples
  double tolerance{0.0};
  bool pass() const { return error <= tolerance; }
};

struct CheckOptions {
  bool strict{false};  // tighten the Jacobian tolerance from 1e-5 to 1e-6
  int configurations{100};
  int qp_instances{1000};
  std::uint64_t seed{20240501};

  double jacobian_tolerance() const { return strict ? 1e-6 : 1e-5; }
};

// Analytic distance-Jacobian rows under test; replaceable for mutation tests.
struct DistanceJacobians {
  std::function<RowVectorXd(const MatrixXd&, const Vec3&, const PluckerLine&)> point_line = dist_jacobian_point_line;
  std::function<RowVectorXd(const MatrixXd&, const PlanePrimitive&)> point_plane = dist_jacobian_point_plane;
  std::function<RowVectorXd(const MatrixXd&, const Vec3&, const Vec3&)> line_angle = angle_jacobian_line_line;
};

// Random strictly convex QP whose constraints admit a known point.
inline QpProblem random_qp_instance(std::mt19937_64& rng, int n, int l) {
  std::normal_distribution<double> N(0.0, 1.0);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  Eigen::MatrixXd M(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) M(i, j) = N(rng);
  QpProblem p;
  p.H = M * M.transpose() + 0.1 * Eigen::MatrixXd::Identity(n, n);
  p.g.resize(n);
  for (int i = 0; i < n; ++i) p.g(i) = 3.0 * N(rng);
  p.A.resize(l, n);
  for (int i = 0; i < l; ++i)
    for (int j = 0; j < n; ++j) p.A(i, j) = N(rng);
  Eigen::VectorXd u0(n);
  for (int i = 0; i < n; ++i) u0(i) = N(rng);
  p.b = p.A * u0;
  for (int i = 0; i < l; ++i) p.b(i) += U(rng) < 0.2 ? 0.0 : U(rng);
  return p;
}

namespace detail {

inline Vec3 random_unit3(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Vec3 v;
  do v = Vec3(n(rng), n(rng), n(rng));
  while (v.norm() < 1e-9);
  return v.normalized();
}

inline VectorXd random_configuration(const SerialManipulator& r, std::mt19937_64& rng) {
  VectorXd q(r.n_joints());
  for (int i = 0; i < r.n_joints(); ++i)
    q(i) = std::uniform_real_distribution<double>(r.q_min()(i) + 1e-3, r.q_max()(i) - 1e-3)(rng);
  return q;
}

inline AdaptiveParameters random_parameters(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  AdaptiveParameters a;
  for (int k = 0; k < 12; ++k) a.v(k) = u(rng) * (k < 3 ? 0.6 : k < 6 ? 1.0 : k < 9 ? 0.1 : 0.5);
  return a;
}

// Worst |analytic - central difference| of one Jacobian, scaled by max(1, |J|).
inline double fd_error(const MatrixXd& analytic, const std::function<VectorXd(const VectorXd&)>& f, const VectorXd& x,
                       double h = 1e-6) {
  MatrixXd fd(analytic.rows(), analytic.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    VectorXd xp = x, xm = x;
    xp(i) += h;
    xm(i) -= h;
    fd.col(i) = (f(xp) - f(xm)) / (2.0 * h);
  }
  return (analytic - fd).lpNorm<Eigen::Infinity>() / std::max(1.0, analytic.lpNorm<Eigen::Infinity>());
}

}  // namespace detail

inline std::vector<CheckResult> check_jacobians(const SerialManipulator& robot, const CheckOptions& opt = {},
                                                const DistanceJacobians& dj = {}) {
  const double tol = opt.jacobian_tolerance();
  std::vector<CheckResult> out;
  for (const char* name : {"pose", "translation", "line", "point-line distance", "point-plane distance",
                           "line-angle distance", "parameter"})
    out.push_back({"jacobian", name, 0.0, tol});
  auto record = [&](std::size_t k, double e) { out[k].error = std::max(out[k].error, e); };

  std::mt19937_64 rng(opt.seed);
  for (int trial = 0; trial < opt.configurations; ++trial) {
    const VectorXd q = detail::random_configuration(robot, rng);
    const AdaptiveParameters a = detail::random_parameters(rng);
    const EstimatedGeometry g = estimate_geometry(robot, q, a);
    const TaskJacobians& J = g.needle_q;
    const auto pose_at = [&](const VectorXd& qq) { return estimated_needle_pose(robot, qq, a); };
    const auto aligned = [&](const UnitDualQuaternion& y) {
      return dot(y.rotation(), J.pose.rotation()) < 0.0 ? Vec8(-y.vec8()) : y.vec8();
    };
    const Vec3 tip = J.pose.translation();
    const PluckerLine line = line_from_point_direction(tip + 0.2 * detail::random_unit3(rng), detail::random_unit3(rng));
    const PlanePrimitive plane = PlanePrimitive::from_point_normal(tip + 0.1 * detail::random_unit3(rng),
                                                                   detail::random_unit3(rng));
    const Vec3 axis = detail::random_unit3(rng);

    record(0, detail::fd_error(J.J_pose, [&](const VectorXd& x) -> VectorXd { return aligned(pose_at(x)); }, q));
    record(1, detail::fd_error(J.J_trans, [&](const VectorXd& x) -> VectorXd { return pose_at(x).translation(); }, q));
    record(2, detail::fd_error(J.J_line_dir,
                               [&](const VectorXd& x) -> VectorXd { return pose_at(x).rotation().rotate(kNeedleLineLocal); },
                               q));
    record(3, detail::fd_error(dj.point_line(J.J_trans, tip, line), [&](const VectorXd& x) -> VectorXd {
             return VectorXd::Constant(1, sq_dist_point_line(pose_at(x).translation(), line));
           }, q));
    record(4, detail::fd_error(dj.point_plane(J.J_trans, plane), [&](const VectorXd& x) -> VectorXd {
             return VectorXd::Constant(1, signed_dist_point_plane(pose_at(x).translation(), plane));
           }, q));
    record(5, detail::fd_error(dj.line_angle(J.J_line_dir, J.line_dir, axis), [&](const VectorXd& x) -> VectorXd {
             return VectorXd::Constant(1, line_angle_f(pose_at(x).rotation().rotate(kNeedleLineLocal), axis).f);
           }, q));
    const MatrixXd Ja = parameter_jacobian(robot, q, a);
    record(6, (Ja - parameter_jacobian_fd(robot, q, a, 1e-6)).lpNorm<Eigen::Infinity>() /
                  std::max(1.0, Ja.lpNorm<Eigen::Infinity>()));
  }
  return out;
}

inline std::vector<CheckResult> check_qp(const CheckOptions& opt = {}) {
  const QpTolerances tol;
  CheckResult status{"qp", "optimal status", 0.0, 0.0};
  CheckResult primal{"qp", "primal feasibility", 0.0, tol.feasibility};
  CheckResult dual{"qp", "dual feasibility", 0.0, 0.0};
  CheckResult stat{"qp", "stationarity", 0.0, tol.stationarity};
  CheckResult comp{"qp", "complementarity", 0.0, tol.stationarity};
  std::mt19937_64 rng(opt.seed + 1);
  std::uniform_int_distribution<int> dim(1, 12);
  for (int trial = 0; trial < opt.qp_instances; ++trial) {
    const int n = dim(rng);
    const int l = std::uniform_int_distribution<int>(0, 4 * n)(rng);
    const QpProblem p = random_qp_instance(rng, n, l);
    const QpSolution s = solve_qp(p, tol);
    if (!s.optimal()) {
      status.error += 1.0;
      continue;
    }
    const KktReport k = kkt_report(p, s.u_star, s.multipliers);
    const double scale = std::max({1.0, p.g.lpNorm<Eigen::Infinity>(), p.b.size() ? p.b.lpNorm<Eigen::Infinity>() : 0.0});
    primal.error = std::max(primal.error, k.primal);
    dual.error = std::max(dual.error, k.dual);
    stat.error = std::max(stat.error, k.stationarity / scale);
    comp.error = std::max(comp.error, k.complementarity / scale);
  }
  return {status, primal, dual, stat, comp};
}

inline std::vector<CheckResult> check_quintic(const CheckOptions& opt = {}) {
  const double tol = 1e-12;
  CheckResult ends{"quintic", "scaling boundary identities", 0.0, tol};
  CheckResult seg{"quintic", "segment endpoints at rest", 0.0, tol};
  CheckResult vel{"quintic", "velocity matches differenced position", 0.0, 1e-7};
  CheckResult peak{"quintic", "peak speed 15/8 L/T at mid-time", 0.0, tol};
  const QuinticScaling a = quintic_scaling(0.0), b = quintic_scaling(1.0);
  ends.error = std::max({std::abs(a.s), std::abs(b.s - 1.0), std::abs(a.sdot), std::abs(b.sdot), std::abs(a.sddot),
                         std::abs(b.sddot)});
  std::mt19937_64 rng(opt.seed + 2);
  std::uniform_real_distribution<double> T(0.5, 30.0);
  for (int trial = 0; trial < 20; ++trial) {
    const Vec3 p0 = 0.3 * detail::random_unit3(rng), p1 = 0.3 * detail::random_unit3(rng);
    const QuinticSegment s(p0, p1, T(rng));
    const double L = (p1 - p0).norm(), D = s.duration();
    seg.error = std::max({seg.error, (s.eval(0.0).x_d - p0).norm(), (s.eval(D).x_d - p1).norm(),
                          s.eval(0.0).xdot_d.norm(), s.eval(D).xdot_d.norm()});
    peak.error = std::max(peak.error, std::abs(s.eval(0.5 * D).xdot_d.norm() - 1.875 * L / D));
    const double h = 1e-6 * D;
    for (double t = 0.05 * D; t < D; t += 0.1 * D) {
      const Vec3 fd = (s.eval(t + h).x_d - s.eval(t - h).x_d) / (2.0 * h);
      vel.error = std::max(vel.error, (fd - s.eval(t).xdot_d).norm());
    }
  }
  return {ends, seg, vel, peak};
}

inline std::vector<CheckResult> run_self_checks(const SerialManipulator& robot, const CheckOptions& opt = {}) {
  std::vector<CheckResult> all = check_jacobians(robot, opt);
  for (auto&& r : check_qp(opt)) all.push_back(std::move(r));
  for (auto&& r : check_quintic(opt)) all.push_back(std::move(r));
  return all;
}

inline std::string format_check(const CheckResult& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%s %s: %s (error %.3g, tolerance %.3g)", r.pass() ? "PASS" : "FAIL", r.suite.c_str(),
                r.name.c_str(), r.error, r.tolerance);
  return buf;
}

}  // namespace pdt
