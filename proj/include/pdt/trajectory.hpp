#pragma once

// Rest-to-rest straight-line segment with quintic time scaling
//   s(tau) = 10 tau^3 - 15 tau^4 + 6 tau^5,  tau = t / T.

#include "pdt/geomalg.hpp"

namespace pdt {

struct QuinticScaling {
  double s;
  double sdot;   // ds/dtau
  double sddot;  // d2s/dtau2
};

inline QuinticScaling quintic_scaling(double tau) {
  const double t2 = tau * tau, t3 = t2 * tau;
  return {t3 * (10.0 - 15.0 * tau + 6.0 * t2), 30.0 * t2 * (1.0 - 2.0 * tau + t2), 60.0 * tau * (1.0 - 3.0 * tau + 2.0 * t2)};
}

struct TrajectoryPoint {
  Vec3 x_d;
  Vec3 xdot_d;
};

class QuinticSegment {
 public:
  QuinticSegment(const Vec3& p_start, const Vec3& p_end, double duration)
      : p_start_(p_start), p_end_(p_end), T_(duration) {
    if (!(duration > 0.0)) throw InvalidInput("trajectory duration must be positive");
  }

  const Vec3& p_start() const { return p_start_; }
  const Vec3& p_end() const { return p_end_; }
  double duration() const { return T_; }

  // Clamps to the end state for t > T.
  TrajectoryPoint eval(double t) const {
    if (!(t >= 0.0)) throw InvalidInput("trajectory time must be non-negative");
    if (t >= T_) return {p_end_, Vec3::Zero()};
    const QuinticScaling q = quintic_scaling(t / T_);
    const Vec3 delta = p_end_ - p_start_;
    return {p_start_ + q.s * delta, (q.sdot / T_) * delta};
  }

 private:
  Vec3 p_start_, p_end_;
  double T_;
};

}  // namespace pdt
