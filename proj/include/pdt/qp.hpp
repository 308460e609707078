#pragma once

// Dense dual active-set solver (Goldfarb-Idnani) for strictly convex QPs
//
//   minimize    0.5 u' H u + g' u
//   subject to  A u <= b
//
// sized for the tiny problems of the control loop (n <= 12, l <= 64). The
// solver starts from the unconstrained minimum and adds the most violated
// constraint at each outer iteration, keeping the factorization
// J = L^-T Q, R (upper triangular) of the active normals.

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "pdt/errors.hpp"

namespace pdt {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct QpProblem {
  MatrixXd H;  // n x n, symmetric positive definite
  VectorXd g;  // n
  MatrixXd A;  // l x n
  VectorXd b;  // l
};

enum class QpStatus { optimal, infeasible };

struct QpSolution {
  VectorXd u_star;
  VectorXd multipliers;         // l, zero for inactive rows
  std::vector<int> active_set;  // rows tight at the optimum
  double kkt_residual{0.0};     // max of the four KKT violations
  QpStatus status{QpStatus::infeasible};
  int iterations{0};

  bool optimal() const { return status == QpStatus::optimal; }
};

struct QpTolerances {
  double feasibility{1e-8};
  double stationarity{1e-7};
};

struct KktReport {
  double primal;          // max(A u - b)_+
  double dual;            // max(-lambda)_+
  double stationarity;    // |H u + g + A' lambda|_inf
  double complementarity; // |lambda' (A u - b)|
  double max() const { return std::max({primal, dual, stationarity, complementarity}); }
};

inline KktReport kkt_report(const QpProblem& p, const VectorXd& u, const VectorXd& lambda) {
  KktReport r{0.0, 0.0, 0.0, 0.0};
  VectorXd grad = p.H * u + p.g;
  if (p.A.rows() > 0) {
    const VectorXd slack = p.A * u - p.b;
    r.primal = std::max(0.0, slack.maxCoeff());
    r.dual = std::max(0.0, -lambda.minCoeff());
    r.complementarity = std::abs(lambda.dot(slack));
    grad += p.A.transpose() * lambda;
  }
  r.stationarity = grad.lpNorm<Eigen::Infinity>();
  return r;
}

inline void validate(const QpProblem& p) {
  const auto n = p.H.rows();
  if (p.H.cols() != n || p.g.size() != n) throw InvalidInput("QP: H must be n x n and g of length n");
  if (p.A.cols() != n && p.A.rows() > 0) throw InvalidInput("QP: A must have n columns");
  if (p.A.rows() != p.b.size()) throw InvalidInput("QP: A and b row counts differ");
  if ((p.H - p.H.transpose()).lpNorm<Eigen::Infinity>() > 1e-10 * std::max(1.0, p.H.lpNorm<Eigen::Infinity>()))
    throw InvalidInput("QP: H is not symmetric");
}

namespace detail {

// Givens rotation zeroing b in (a, b); returns (c, s) with c a + s b = h.
inline void givens(double a, double b, double& c, double& s, double& h) {
  h = std::hypot(a, b);
  if (h == 0.0) {
    c = 1.0;
    s = 0.0;
  } else {
    c = a / h;
    s = b / h;
  }
}

}  // namespace detail

inline QpSolution solve_qp(const QpProblem& p, const QpTolerances& tol = {}) {
  validate(p);
  const auto n = p.H.rows();
  const auto l = p.A.rows();

  Eigen::LLT<MatrixXd> llt(p.H);
  if (llt.info() != Eigen::Success) throw InvalidInput("QP: H is not positive definite");

  QpSolution sol;
  sol.multipliers = VectorXd::Zero(l);

  // J = L^-T; columns [0, q) span the active normals, [q, n) their complement.
  MatrixXd J = llt.matrixU().solve(MatrixXd::Identity(n, n));
  MatrixXd R = MatrixXd::Zero(n, n);
  VectorXd x = -llt.solve(p.g);

  std::vector<int> active;   // constraint index per active slot
  std::vector<double> u;     // multiplier per active slot
  std::vector<char> is_active(static_cast<std::size_t>(l), 0);
  std::vector<char> skip(static_cast<std::size_t>(l), 0);

  // Constraint i in Goldfarb-Idnani form: s_i(x) = b_i - a_i x >= 0, normal n_i = -a_i.
  for (Eigen::Index i = 0; i < l; ++i) {
    if (p.A.row(i).squaredNorm() == 0.0) {
      if (p.b(i) < -tol.feasibility) {
        sol.status = QpStatus::infeasible;
        sol.u_star = x;
        return sol;
      }
      skip[static_cast<std::size_t>(i)] = 1;
    }
  }

  auto slack = [&](Eigen::Index i) { return p.b(i) - p.A.row(i).dot(x); };

  auto add_constraint = [&](const VectorXd& normal) -> bool {
    const auto q = static_cast<Eigen::Index>(active.size());
    VectorXd d = J.transpose() * normal;
    for (Eigen::Index j = n - 1; j > q; --j) {
      double c, s, h;
      detail::givens(d(j - 1), d(j), c, s, h);
      if (s == 0.0) continue;
      d(j - 1) = h;
      d(j) = 0.0;
      const VectorXd cj1 = J.col(j - 1);
      J.col(j - 1) = c * cj1 + s * J.col(j);
      J.col(j) = -s * cj1 + c * J.col(j);
    }
    R.col(q).head(q + 1) = d.head(q + 1);
    return std::abs(d(q)) > 1e-14 * std::max(1.0, d.norm());
  };

  auto drop_slot = [&](std::size_t slot) {
    const auto q = static_cast<Eigen::Index>(active.size());
    const auto k = static_cast<Eigen::Index>(slot);
    for (Eigen::Index c = k; c < q - 1; ++c) R.col(c) = R.col(c + 1);
    R.col(q - 1).setZero();
    for (Eigen::Index j = k; j < q - 1; ++j) {
      double c, s, h;
      detail::givens(R(j, j), R(j + 1, j), c, s, h);
      if (s == 0.0) continue;
      for (Eigen::Index col = j; col < q - 1; ++col) {
        const double a = R(j, col), bb = R(j + 1, col);
        R(j, col) = c * a + s * bb;
        R(j + 1, col) = -s * a + c * bb;
      }
      const VectorXd cj = J.col(j);
      J.col(j) = c * cj + s * J.col(j + 1);
      J.col(j + 1) = -s * cj + c * J.col(j + 1);
    }
    is_active[static_cast<std::size_t>(active[slot])] = 0;
    active.erase(active.begin() + static_cast<std::ptrdiff_t>(slot));
    u.erase(u.begin() + static_cast<std::ptrdiff_t>(slot));
  };

  const int max_iter = 50 * static_cast<int>(n + l + 1);
  int iter = 0;
  const double inf = std::numeric_limits<double>::infinity();

  while (true) {
    // pick the most violated constraint
    Eigen::Index pick = -1;
    double worst = -tol.feasibility;
    for (Eigen::Index i = 0; i < l; ++i) {
      if (skip[static_cast<std::size_t>(i)] || is_active[static_cast<std::size_t>(i)]) continue;
      const double si = slack(i);
      if (si < worst) {
        worst = si;
        pick = i;
      }
    }
    if (pick < 0) break;

    const VectorXd normal = -p.A.row(pick).transpose();
    double u_plus = 0.0;

    while (true) {
      if (++iter > max_iter) {
        sol.status = QpStatus::infeasible;
        sol.u_star = x;
        sol.iterations = iter;
        return sol;
      }
      const auto q = static_cast<Eigen::Index>(active.size());
      const VectorXd d = J.transpose() * normal;
      const VectorXd z = J.rightCols(n - q) * d.tail(n - q);
      VectorXd r(q);
      if (q > 0) r = R.topLeftCorner(q, q).triangularView<Eigen::Upper>().solve(d.head(q));

      // partial (dual) step length
      double t1 = inf;
      std::size_t drop = 0;
      for (Eigen::Index j = 0; j < q; ++j) {
        if (r(j) > 1e-14) {
          const double tj = u[static_cast<std::size_t>(j)] / r(j);
          if (tj < t1) {
            t1 = tj;
            drop = static_cast<std::size_t>(j);
          }
        }
      }
      // full (primal) step length
      const double zn = z.dot(normal);
      const double t2 = (z.norm() > 1e-14 && zn > 1e-300) ? -slack(pick) / zn : inf;

      if (t1 == inf && t2 == inf) {
        sol.status = QpStatus::infeasible;
        sol.u_star = x;
        sol.iterations = iter;
        return sol;
      }
      if (t2 == inf) {
        for (Eigen::Index j = 0; j < q; ++j) u[static_cast<std::size_t>(j)] -= t1 * r(j);
        u_plus += t1;
        drop_slot(drop);
        continue;
      }
      const double t = std::min(t1, t2);
      x += t * z;
      for (Eigen::Index j = 0; j < q; ++j) u[static_cast<std::size_t>(j)] -= t * r(j);
      u_plus += t;
      if (t2 <= t1) {
        if (!add_constraint(normal)) {
          // normal dependent on the active set: treat as satisfied
          skip[static_cast<std::size_t>(pick)] = 1;
          break;
        }
        active.push_back(static_cast<int>(pick));
        u.push_back(u_plus);
        is_active[static_cast<std::size_t>(pick)] = 1;
        break;
      }
      drop_slot(drop);
    }
  }

  sol.u_star = x;
  sol.iterations = iter;
  for (std::size_t s = 0; s < active.size(); ++s)
    sol.multipliers(active[s]) = std::max(0.0, u[s]);
  for (Eigen::Index i = 0; i < l; ++i)
    if (std::abs(slack(i)) <= tol.feasibility) sol.active_set.push_back(static_cast<int>(i));
  const KktReport rep = kkt_report(p, x, sol.multipliers);
  sol.kkt_residual = rep.max();
  sol.status = rep.primal <= tol.feasibility ? QpStatus::optimal : QpStatus::infeasible;
  return sol;
}

// min |J u + e|^2 + lambda^2 |u|^2  s.t.  A u <= b
inline QpProblem build_damped_ls_qp(const MatrixXd& J, const VectorXd& e_term, double lambda, const MatrixXd& A,
                                    const VectorXd& b) {
  if (!(lambda > 0.0)) throw InvalidInput("damping factor must be positive");
  if (J.rows() != e_term.size()) throw InvalidInput("task Jacobian and error have different lengths");
  if (A.rows() != b.size() || (A.rows() > 0 && A.cols() != J.cols()))
    throw InvalidInput("constraint matrix does not match the number of variables");
  const auto n = J.cols();
  QpProblem p;
  p.H = 2.0 * (J.transpose() * J + lambda * lambda * MatrixXd::Identity(n, n));
  p.H = 0.5 * (p.H + p.H.transpose());
  p.g = 2.0 * J.transpose() * e_term;
  p.A = A.rows() > 0 ? A : MatrixXd(0, n);
  p.b = b;
  return p;
}

}  // namespace pdt
