#pragma once

// Ground-truth world, noisy sensors, scenario randomization and the
// three-step insertion procedure.
//
// World frame = electromagnetic transmitter frame. The bronchoscope sensor
// sits at the target puncture point with its x axis along the trachea and
// its z axis along the outward puncture guide line.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "pdt/adaptive.hpp"
#include "pdt/trajectory.hpp"

namespace pdt {

struct NoiseModel {
  double pos_sigma{1e-3};                  // m, per axis
  double ang_sigma{0.2 * M_PI / 180.0};    // rad, rotation angle about a random axis

  void validate() const {
    if (!(pos_sigma >= 0.0) || !(ang_sigma >= 0.0)) throw InvalidInput("noise sigmas must be non-negative");
  }
  bool noise_free() const { return pos_sigma == 0.0 && ang_sigma == 0.0; }
};

struct ScenarioConfig {
  Vec3 base_translation{-0.45, 0.0, 0.25};  // true robot base in the transmitter frame, m
  Vec3 base_rotation{0.0, 0.0, 0.0};        // true base rotation vector, rad
  Vec3 needle_translation{0.0, 0.0, 0.1};   // true needle tip in the flange frame, m
  Vec3 needle_rotation{0.0, 0.0, 0.0};      // rad
  Vec3 target_center{0.0, 0.0, 0.0};        // m
  double target_cube{0.010};                // edge of the target sampling cube, m
  double guide_xy_min{0.05};                // |x|, |y| components of the raw guide direction
  double guide_xy_max{0.4};
  double guide_z_min{0.7};
  double guide_z_max{1.0};
  double base_pos_uncertainty{0.2};                       // +- m per axis
  double base_rot_uncertainty{10.0 * M_PI / 180.0};       // +- rad per rotation-vector component
  double needle_pos_uncertainty{0.01};                    // +- m per axis
  double needle_rot_uncertainty{5.0 * M_PI / 180.0};      // +- rad per rotation-vector component
  bool perturb_parameters{true};
  double start_distance{0.3};                 // d_p, m
  double patient_radius{0.2};                 // R_p, m
  double guide_radius{1.5e-3};                // R_g, m
  double cone_half_angle{0.5 * M_PI / 180.0}; // theta_o, rad
  std::vector<PatientPoint> patient_points{PatientPoint::needle_tip, PatientPoint::end_effector};
  VectorXd q_home{(VectorXd(7) << 0.0, -M_PI / 4, 0.0, -3 * M_PI / 4, 0.0, M_PI / 2, M_PI / 4).finished()};

  void validate() const {
    if (!(target_cube >= 0.0)) throw InvalidInput("target_cube must be non-negative");
    if (!(guide_xy_min >= 0.0 && guide_xy_min <= guide_xy_max)) throw InvalidInput("guide_xy range is invalid");
    if (!(guide_z_min > 0.0 && guide_z_min <= guide_z_max)) throw InvalidInput("guide_z range must be positive");
    if (!(base_pos_uncertainty >= 0.0 && base_rot_uncertainty >= 0.0 && needle_pos_uncertainty >= 0.0 &&
          needle_rot_uncertainty >= 0.0))
      throw InvalidInput("uncertainty ranges must be non-negative");
    if (!(start_distance > 0.0)) throw InvalidInput("start_distance must be positive");
    if (!(patient_radius > 0.0) || !(guide_radius > 0.0)) throw InvalidInput("cylinder radii must be positive");
    if (!(cone_half_angle > 0.0 && cone_half_angle < M_PI / 2)) throw InvalidInput("cone half angle must be in (0, pi/2)");
  }
};

struct ProcedureConfig {
  double dt{0.01};              // control and sensor tick, s
  double insertion_time{20.0};  // T of the step-3 quintic, s
  double settle_time{1.0};      // extra step-3 time after the trajectory ends, s
  double warmup_cap{30.0};      // adaptation-only window, s
  double step1_cap{30.0};       // s
  double step2_cap{60.0};       // s
  double align_tol{0.25 * M_PI / 180.0};  // needle-to-guide angle that ends step 1 and gates step 3, rad
  double start_tol{0.5e-3};               // tip-to-start distance that gates step 3, m

  void validate() const {
    if (!(dt > 0.0)) throw InvalidInput("dt must be positive");
    if (!(insertion_time > 0.0)) throw InvalidInput("insertion_time must be positive");
    if (!(settle_time >= 0.0)) throw InvalidInput("settle_time must be non-negative");
    if (!(warmup_cap >= 0.0) || !(step1_cap > 0.0) || !(step2_cap > 0.0)) throw InvalidInput("step caps must be positive");
    if (!(align_tol > 0.0) || !(start_tol > 0.0)) throw InvalidInput("step tolerances must be positive");
  }
};

// Everything a trial needs besides the robot model and the seed.
struct TrialSettings {
  ScenarioConfig scenario;
  NoiseModel noise;
  ProcedureConfig procedure;
  ControllerGains gains;
  VfiGains vfi;

  void validate() const {
    scenario.validate();
    noise.validate();
    procedure.validate();
    gains.validate();
    for (double g : {vfi.eta_c, vfi.eta_g, vfi.eta_o, vfi.eta_P, vfi.eta_joint})
      if (!(g > 0.0)) throw InvalidInput("VFI gains must be positive");
  }
};

struct Scenario {
  std::uint64_t seed{0};
  UnitDualQuaternion true_base_pose;
  UnitDualQuaternion true_needle_pose;
  AdaptiveParameters initial_a_hat;
  Vec3 target_point{Vec3::Zero()};       // p_p
  Vec3 guide_direction{Vec3::UnitZ()};   // l_g, outward
  Vec3 nominal_trachea{Vec3::UnitY()};   // unit, orthogonal to l_g
  Vec3 nominal_midline{Vec3::UnitZ()};   // equals l_g
  UnitDualQuaternion bronchoscope_pose;  // true pose of the target sensor
  double start_distance{0.3};
  VectorXd q0;
  TrialSettings settings;
};

namespace detail {

// Independent, reproducible stream for (seed, purpose).
inline std::mt19937_64 make_stream(std::uint64_t seed, std::uint64_t purpose) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(purpose), 0x70647473u};
  return std::mt19937_64(seq);
}

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline Vec3 uniform_box(std::mt19937_64& rng, double half) {
  return {uniform(rng, -half, half), uniform(rng, -half, half), uniform(rng, -half, half)};
}

inline constexpr std::uint64_t kGeometryStream = 0;
inline constexpr std::uint64_t kNoiseStream = 1;

}  // namespace detail

inline UnitDualQuaternion sensor_frame(const Vec3& p, const Vec3& x_axis, const Vec3& z_axis) {
  Mat3 R;
  R.col(0) = x_axis;
  R.col(1) = z_axis.cross(x_axis);
  R.col(2) = z_axis;
  const Eigen::Quaterniond e(R);
  return UnitDualQuaternion::from_rotation_translation(Quaternion(e.w(), e.x(), e.y(), e.z()).normalized(), p);
}

inline Scenario generate_scenario(std::uint64_t seed, const TrialSettings& settings) {
  settings.validate();
  const ScenarioConfig& c = settings.scenario;
  std::mt19937_64 rng = detail::make_stream(seed, detail::kGeometryStream);

  Scenario s;
  s.seed = seed;
  s.settings = settings;
  s.true_base_pose = pose_from_params(Quaternion::from_rotation_vector(c.base_rotation).conj().rotate(c.base_translation),
                                      c.base_rotation);
  s.true_needle_pose = pose_from_params(
      Quaternion::from_rotation_vector(c.needle_rotation).conj().rotate(c.needle_translation), c.needle_rotation);

  s.target_point = c.target_center + detail::uniform_box(rng, 0.5 * c.target_cube);
  const double sx = detail::uniform(rng, 0.0, 1.0) < 0.5 ? -1.0 : 1.0;
  const double sy = detail::uniform(rng, 0.0, 1.0) < 0.5 ? -1.0 : 1.0;
  const Vec3 raw(sx * detail::uniform(rng, c.guide_xy_min, c.guide_xy_max),
                 sy * detail::uniform(rng, c.guide_xy_min, c.guide_xy_max), detail::uniform(rng, c.guide_z_min, c.guide_z_max));
  s.guide_direction = raw.normalized();
  s.nominal_midline = s.guide_direction;
  s.nominal_trachea = (Vec3::UnitY() - Vec3::UnitY().dot(s.guide_direction) * s.guide_direction).normalized();
  s.bronchoscope_pose = sensor_frame(s.target_point, s.nominal_trachea, s.guide_direction);
  s.start_distance = c.start_distance;
  s.q0 = c.q_home;

  AdaptiveParameters a = AdaptiveParameters::from_poses(s.true_base_pose, s.true_needle_pose);
  const Vec3 db = detail::uniform_box(rng, c.base_pos_uncertainty);
  const Vec3 dbr = detail::uniform_box(rng, c.base_rot_uncertainty);
  const Vec3 dn = detail::uniform_box(rng, c.needle_pos_uncertainty);
  const Vec3 dnr = detail::uniform_box(rng, c.needle_rot_uncertainty);
  if (c.perturb_parameters) {
    a.v.segment<3>(0) += db;
    a.v.segment<3>(3) += dbr;
    a.v.segment<3>(6) += dn;
    a.v.segment<3>(9) += dnr;
  }
  s.initial_a_hat = a;
  return s;
}

// Rotation about a uniformly random axis by a Gaussian angle, then Gaussian
// translation noise per axis.
inline UnitDualQuaternion sensor_measure(const UnitDualQuaternion& true_pose, const NoiseModel& noise,
                                         std::mt19937_64& rng) {
  if (noise.noise_free()) return true_pose;
  std::normal_distribution<double> n01(0.0, 1.0);
  Vec3 axis(n01(rng), n01(rng), n01(rng));
  while (axis.norm() < 1e-12) axis = Vec3(n01(rng), n01(rng), n01(rng));
  const double angle = noise.ang_sigma * n01(rng);
  const Vec3 dp(noise.pos_sigma * n01(rng), noise.pos_sigma * n01(rng), noise.pos_sigma * n01(rng));
  const Quaternion r = (Quaternion::from_axis_angle(axis.normalized(), angle) * true_pose.rotation()).normalized();
  return UnitDualQuaternion::from_rotation_translation(r, true_pose.translation() + dp);
}

inline VectorXd integrate_joint_state(const VectorXd& q, const VectorXd& qdot, double dt) {
  if (q.size() != qdot.size()) throw InvalidInput("q and qdot sizes differ");
  return q + dt * qdot;
}

// Primitives from the bronchoscope measurement, all in the transmitter frame.
inline ConstraintScene build_scene(const UnitDualQuaternion& bronchoscope_measured, const ScenarioConfig& c,
                                   const VfiGains& gains) {
  const Vec3 p = bronchoscope_measured.translation();
  const Vec3 lg = bronchoscope_measured.rotation().rotate(Vec3::UnitZ()).normalized();
  const Vec3 trachea = bronchoscope_measured.rotation().rotate(Vec3::UnitX()).normalized();
  const PluckerLine guide = line_from_point_direction(p, lg);
  ConstraintScene s;
  s.patient_cylinder = CylinderPrimitive(line_from_point_direction(p, trachea), c.patient_radius);
  s.guide_cylinder = CylinderPrimitive(guide, c.guide_radius);
  s.cone = ConePrimitive(guide, c.cone_half_angle);
  s.target_plane = PlanePrimitive::from_point_normal(p, lg);
  s.gains = gains;
  s.patient_points = c.patient_points;
  return s;
}

enum class TrialStatus { completed, infeasible_stop, timeout };

inline std::string_view to_string(TrialStatus s) {
  switch (s) {
    case TrialStatus::completed: return "completed";
    case TrialStatus::infeasible_stop: return "infeasible_stop";
    case TrialStatus::timeout: return "timeout";
  }
  return "unknown";
}

// Signed distances of the estimated (or true) geometry to every primitive.
struct GeometryDistances {
  std::vector<double> patient;  // D - R_p^2 per patient point, m^2
  double guide{0.0};            // D - R_g^2, m^2
  double cone{0.0};             // f - f(theta_o)
  double plane{0.0};            // m
  double guide_radial{0.0};     // tip-to-guide-axis distance, m
  double angle{0.0};            // needle-to-guide angle, rad
};

inline GeometryDistances measure_distances(const ConstraintScene& scene, const UnitDualQuaternion& needle,
                                           const UnitDualQuaternion& flange) {
  GeometryDistances d;
  const Vec3 tip = needle.translation();
  const Vec3 ln = needle.rotation().rotate(kNeedleLineLocal);
  for (PatientPoint pp : scene.patient_points) {
    const Vec3 p = pp == PatientPoint::needle_tip ? tip : flange.translation();
    d.patient.push_back(sq_dist_point_line(p, scene.patient_cylinder.axis) -
                        scene.patient_cylinder.radius * scene.patient_cylinder.radius);
  }
  const double D = sq_dist_point_line(tip, scene.guide_cylinder.axis);
  d.guide = D - scene.guide_cylinder.radius * scene.guide_cylinder.radius;
  d.guide_radial = std::sqrt(std::max(D, 0.0));
  const LineAngle la = line_angle_f(ln, scene.cone.axis.l);
  d.cone = la.f - angle_distance(scene.cone.half_angle);
  d.angle = la.phi;
  d.plane = signed_dist_point_plane(tip, scene.target_plane);
  return d;
}

struct TraceRow {
  double t{0.0};
  int step{0};
  VectorXd q;
  Vec12 a_hat;
  UnitDualQuaternion y_true, y_meas, y_hat;
  Vec3 x_d{Vec3::Zero()};           // desired tip position (step 2 and 3), m
  GeometryDistances est, truth;     // estimated and true geometry against the commanded primitives
  double tip_target_est{0.0};       // |t_hat - p_measured|, m
  double tip_target_true{0.0};      // |t_true - p_true|, m
  double base_pos_error{0.0}, base_rot_error{0.0};      // m, rad
  double needle_pos_error{0.0}, needle_rot_error{0.0};  // m, rad
  double lyapunov{0.0};
  bool adapt_paused{false};
};

struct TrialRecord {
  std::uint64_t seed{0};
  TrialStatus status{TrialStatus::completed};
  int ticks{0};
  double dt{0.01};
  double duration{0.0};
  bool warmup_converged{false};
  double warmup_time{0.0};
  std::array<double, 4> step_start{{0.0, -1.0, -1.0, -1.0}};
  UnitDualQuaternion bronchoscope_measured;
  UnitDualQuaternion final_true_pose, final_measured_pose, final_estimated_pose;
  VectorXd final_q;
  AdaptiveParameters final_a_hat;
  double max_lyapunov{-std::numeric_limits<double>::infinity()};
  int adapt_pauses{0};
  int coupled_ticks{0};  // ticks where the motion absorbed the adaptation's effect on the constraints
  // Extremes over the relevant steps, on estimated and on true geometry.
  double min_patient_margin_est{std::numeric_limits<double>::infinity()};   // steps 1-2, distance - R_p, m
  double min_patient_margin_true{std::numeric_limits<double>::infinity()};
  double max_guide_violation_est{-std::numeric_limits<double>::infinity()};  // step 3, radial - R_g, m
  double max_guide_violation_true{-std::numeric_limits<double>::infinity()};
  double max_cone_violation_est{-std::numeric_limits<double>::infinity()};   // step 3, phi - theta_o, rad
  double max_cone_violation_true{-std::numeric_limits<double>::infinity()};
  double min_plane_est{std::numeric_limits<double>::infinity()};             // step 3, m
  double min_plane_true{std::numeric_limits<double>::infinity()};
  double max_joint_violation{0.0};                                           // rad beyond [q_min, q_max]
  std::vector<TraceRow> trace;  // filled only when requested
};

namespace detail {

inline double rotation_angle(const Quaternion& a, const Quaternion& b) {
  return 2.0 * std::acos(std::min(1.0, std::abs(dot(a, b))));
}

inline Quaternion align_insertion_axis(const Quaternion& r_hat, const Vec3& guide) {
  return (rotation_between(r_hat.rotate(Vec3::UnitZ()), -guide) * r_hat).normalized();
}

}  // namespace detail

struct TickCommand {
  VectorXd qdot;
  AdaptationResult adapt;
  bool stopped{false};
  bool coupled{false};
};

namespace detail {

// Both laws for one tick. While the robot moves, the parameter update is first
// computed without B_a and the motion law is asked to cancel its effect on the
// task and on every estimated constraint distance; if that motion QP is
// infeasible the update falls back to the B_a-constrained law. The motion
// command is then corrected for the discrete step. In the warm-up only the
// constrained adaptation runs.
inline TickCommand control_tick(const SerialManipulator& robot, const VectorXd& q, const AdaptiveParameters& a,
                                const EstimatedGeometry& g, const UnitDualQuaternion& y_meas, const TaskTarget& target,
                                const ConstraintScene& scene, int step, const ControllerGains& gains, double dt) {
  TickCommand out;
  out.qdot = VectorXd::Zero(robot.n_joints());
  const ConstraintSet ca = adaptation_constraints(scene, ActiveFamilies::for_step(step), g);
  if (step == 0) {
    out.adapt = adaptation_step(g, y_meas, target, ca.B, ca.b, gains);
    return out;
  }
  const ConstraintState cq = constraint_state(scene, g.needle_q, g.flange_q);

  const ConstraintSet cs = assemble_constraints(scene, step, cq, robot, q);
  const auto corrected = [&] {
    return discrete_correction(robot, q, a, out.adapt.a_dot, target, scene, step, cs, out.adapt.xdot_adapt, gains, dt,
                               out.qdot);
  };
  const AdaptationResult free = adaptation_step(g, y_meas, target, MatrixXd(0, 12), VectorXd(0), gains);
  if (!free.paused) {
    VectorXd b = cs.b;
    b.head(ca.B.rows()) -= ca.B * free.a_dot;
    const ControlResult cr = nominal_control_step(g.needle_q, target, cs.B, b, gains, free.xdot_adapt);
    if (!cr.stopped) {
      out.adapt = free;
      out.qdot = cr.qdot;
      out.coupled = true;
      out.qdot = corrected();
      return out;
    }
  }

  out.adapt = adaptation_step(g, y_meas, target, ca.B, ca.b, gains);
  const ControlResult cr = nominal_control_step(g.needle_q, target, cs.B, cs.b, gains, out.adapt.xdot_adapt);
  out.qdot = cr.qdot;
  out.stopped = cr.stopped;
  if (!out.stopped) out.qdot = corrected();
  return out;
}

}  // namespace detail

inline TrialRecord run_trial(const SerialManipulator& robot, const Scenario& sc, bool keep_trace = false) {
  const TrialSettings& st = sc.settings;
  const ProcedureConfig& pc = st.procedure;
  const ControllerGains& gains = st.gains;
  const double dt = pc.dt;
  std::mt19937_64 noise_rng = detail::make_stream(sc.seed, detail::kNoiseStream);

  TrialRecord rec;
  rec.seed = sc.seed;
  rec.dt = dt;
  rec.bronchoscope_measured = sensor_measure(sc.bronchoscope_pose, st.noise, noise_rng);
  const ConstraintScene scene = build_scene(rec.bronchoscope_measured, st.scenario, st.vfi);
  const Vec3 p_meas = rec.bronchoscope_measured.translation();
  const Vec3 lg_meas = scene.guide_cylinder.axis.l;
  const Vec3 p_start = p_meas + sc.start_distance * lg_meas;
  std::optional<QuinticSegment> insertion;

  VectorXd q = sc.q0;
  robot.check_dimension(q);
  AdaptiveParameters a = sc.initial_a_hat;

  int step = 0;
  double t = 0.0, t_step = 0.0;
  TaskTarget target = TaskTarget::none();
  const auto cap_ticks = [&](double seconds) { return static_cast<long>(std::llround(seconds / dt)); };
  long step_ticks = 0;

  const long max_ticks = cap_ticks(pc.warmup_cap + pc.step1_cap + pc.step2_cap + pc.insertion_time + pc.settle_time) + 10;
  for (long k = 0; k <= max_ticks; ++k) {
    const UnitDualQuaternion E = fkm(robot, q);
    const UnitDualQuaternion y_true = sc.true_base_pose * E * sc.true_needle_pose;
    const UnitDualQuaternion y_meas = sensor_measure(y_true, st.noise, noise_rng);
    const EstimatedGeometry g = estimate_geometry(robot, q, a);
    const UnitDualQuaternion& y_hat = g.needle_q.pose;
    const Vec3 l_hat = g.needle_q.line_dir;
    const double angle_hat = line_angle_f(l_hat, lg_meas).phi;

    // Step transitions are decided on the state at the start of the tick.
    bool advanced = true;
    while (advanced) {
      advanced = false;
      if (step == 0) {
        const bool conv = convergence_check(y_hat, y_meas, gains);
        if (conv || step_ticks >= cap_ticks(pc.warmup_cap)) {
          rec.warmup_converged = conv;
          rec.warmup_time = t_step;
          step = 1;
          step_ticks = 0;
          t_step = 0.0;
          rec.step_start[1] = t;
          target = TaskTarget::rotation(detail::align_insertion_axis(y_hat.rotation(), lg_meas));
          advanced = true;
        }
      } else if (step == 1) {
        if (angle_hat < pc.align_tol) {
          step = 2;
          step_ticks = 0;
          t_step = 0.0;
          rec.step_start[2] = t;
          const Quaternion r_d = detail::align_insertion_axis(y_hat.rotation(), lg_meas);
          target = TaskTarget::pose(UnitDualQuaternion::from_rotation_translation(r_d, p_start));
          advanced = true;
        }
      } else if (step == 2) {
        if ((y_hat.translation() - p_start).norm() < pc.start_tol && angle_hat < pc.align_tol &&
            convergence_check(y_hat, y_meas, gains)) {
          step = 3;
          step_ticks = 0;
          t_step = 0.0;
          rec.step_start[3] = t;
          insertion.emplace(y_hat.translation(), p_meas, pc.insertion_time);
          advanced = true;
        }
      }
    }
    if (step == 3) {
      const TrajectoryPoint tp = insertion->eval(t_step);
      target = TaskTarget::translation(tp.x_d, tp.xdot_d);
    }

    // Bookkeeping on the state of this tick.
    const GeometryDistances de = measure_distances(scene, y_hat, g.flange_q.pose);
    const GeometryDistances dtru = measure_distances(scene, y_true, sc.true_base_pose * E);
    const double Rp = st.scenario.patient_radius;
    if (step == 1 || step == 2) {
      for (double D : de.patient) rec.min_patient_margin_est = std::min(rec.min_patient_margin_est, std::sqrt(std::max(D + Rp * Rp, 0.0)) - Rp);
      for (double D : dtru.patient) rec.min_patient_margin_true = std::min(rec.min_patient_margin_true, std::sqrt(std::max(D + Rp * Rp, 0.0)) - Rp);
    }
    if (step == 3) {
      const double Rg = st.scenario.guide_radius, th = st.scenario.cone_half_angle;
      rec.max_guide_violation_est = std::max(rec.max_guide_violation_est, de.guide_radial - Rg);
      rec.max_guide_violation_true = std::max(rec.max_guide_violation_true, dtru.guide_radial - Rg);
      rec.max_cone_violation_est = std::max(rec.max_cone_violation_est, de.angle - th);
      rec.max_cone_violation_true = std::max(rec.max_cone_violation_true, dtru.angle - th);
      rec.min_plane_est = std::min(rec.min_plane_est, de.plane);
      rec.min_plane_true = std::min(rec.min_plane_true, dtru.plane);
    }
    for (int i = 0; i < robot.n_joints(); ++i)
      rec.max_joint_violation = std::max({rec.max_joint_violation, q(i) - robot.q_max()(i), robot.q_min()(i) - q(i)});

    rec.final_true_pose = y_true;
    rec.final_measured_pose = y_meas;
    rec.final_estimated_pose = y_hat;
    rec.final_q = q;
    rec.final_a_hat = a;
    rec.ticks = static_cast<int>(k);
    rec.duration = t;

    const bool done = step == 3 && t_step >= pc.insertion_time + pc.settle_time - 1e-9;
    const bool over = (step == 1 && step_ticks >= cap_ticks(pc.step1_cap)) ||
                      (step == 2 && step_ticks >= cap_ticks(pc.step2_cap)) || k == max_ticks;

    // Laws.
    AdaptationResult ar;
    VectorXd qdot = VectorXd::Zero(robot.n_joints());
    bool stopped = false;
    if (!done && !over) {
      const TickCommand cmd = detail::control_tick(robot, q, a, g, y_meas, target, scene, step, gains, dt);
      ar = cmd.adapt;
      stopped = cmd.stopped;
      qdot = cmd.qdot;
      rec.max_lyapunov = std::max(rec.max_lyapunov, ar.lyapunov);
      rec.adapt_pauses += ar.paused ? 1 : 0;
      rec.coupled_ticks += cmd.coupled ? 1 : 0;
    }

    if (keep_trace) {
      TraceRow row;
      row.t = t;
      row.step = step;
      row.q = q;
      row.a_hat = a.v;
      row.y_true = y_true;
      row.y_meas = y_meas;
      row.y_hat = y_hat;
      if (target.kind == TaskKind::translation_only) row.x_d = target.x_d;
      if (target.kind == TaskKind::full_pose) row.x_d = p_start;
      row.est = de;
      row.truth = dtru;
      row.tip_target_est = (y_hat.translation() - p_meas).norm();
      row.tip_target_true = (y_true.translation() - sc.target_point).norm();
      const UnitDualQuaternion Bh = a.base_pose(), Nh = a.needle_pose();
      row.base_pos_error = (Bh.translation() - sc.true_base_pose.translation()).norm();
      row.base_rot_error = detail::rotation_angle(Bh.rotation(), sc.true_base_pose.rotation());
      row.needle_pos_error = (Nh.translation() - sc.true_needle_pose.translation()).norm();
      row.needle_rot_error = detail::rotation_angle(Nh.rotation(), sc.true_needle_pose.rotation());
      row.lyapunov = ar.lyapunov;
      row.adapt_paused = ar.paused;
      rec.trace.push_back(std::move(row));
    }

    if (done) {
      rec.status = TrialStatus::completed;
      return rec;
    }
    if (over) {
      rec.status = TrialStatus::timeout;
      return rec;
    }
    if (stopped) {
      rec.status = TrialStatus::infeasible_stop;
      return rec;
    }

    q = integrate_joint_state(q, qdot, dt);
    a.v += dt * ar.a_dot;
    a.rechart();
    t += dt;
    t_step += dt;
    ++step_ticks;
  }
  rec.status = TrialStatus::timeout;
  return rec;
}

// Seed of trial `index` in a batch.
inline std::uint64_t trial_seed(std::uint64_t base_seed, std::size_t index) { return base_seed + index; }

struct BatchOptions {
  bool parallel{true};
  unsigned workers{0};  // 0 = hardware concurrency
  bool keep_trace{false};
  // Called once per finished trial from the worker that ran it.
  std::function<void(std::size_t, const Scenario&, TrialRecord&)> on_trial;
};

struct BatchResult {
  std::vector<Scenario> scenarios;
  std::vector<TrialRecord> records;
};

inline BatchResult run_batch(const SerialManipulator& robot, std::size_t n_trials, std::uint64_t base_seed,
                             const TrialSettings& settings, const BatchOptions& opt = {}) {
  if (n_trials < 1) throw InvalidInput("n_trials must be at least 1");
  settings.validate();
  BatchResult out;
  out.scenarios.resize(n_trials);
  out.records.resize(n_trials);
  auto work = [&](std::size_t i) {
    out.scenarios[i] = generate_scenario(trial_seed(base_seed, i), settings);
    out.records[i] = run_trial(robot, out.scenarios[i], opt.keep_trace || static_cast<bool>(opt.on_trial));
    if (opt.on_trial) opt.on_trial(i, out.scenarios[i], out.records[i]);
    if (!opt.keep_trace) {
      out.records[i].trace.clear();
      out.records[i].trace.shrink_to_fit();
    }
  };
  unsigned workers = opt.workers ? opt.workers : std::max(1u, std::thread::hardware_concurrency());
  workers = static_cast<unsigned>(std::min<std::size_t>(workers, n_trials));
  if (!opt.parallel || workers <= 1) {
    for (std::size_t i = 0; i < n_trials; ++i) work(i);
    return out;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = next++; i < n_trials; i = next++) work(i);
      } catch (...) {
        errors[w] = std::current_exception();
        next = n_trials;
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

}  // namespace pdt
