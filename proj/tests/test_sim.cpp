#include <gtest/gtest.h>

#include <array>
#include <cmath>

#include "pdt/io.hpp"
#include "test_util.hpp"

using namespace pdt;

namespace {

const SerialManipulator& panda() {
  static const SerialManipulator r = load_robot_model(std::string(PDT_CONFIG_DIR) + "/panda.yaml");
  return r;
}

TrialSettings noise_free() {
  TrialSettings st;
  st.noise.pos_sigma = 0.0;
  st.noise.ang_sigma = 0.0;
  return st;
}

double max_abs_diff(const VectorXd& a, const VectorXd& b) { return (a - b).lpNorm<Eigen::Infinity>(); }

}  // namespace

TEST(GenerateScenario, SameSeedSameScenario) {
  const TrialSettings st;
  const Scenario a = generate_scenario(42, st), b = generate_scenario(42, st), c = generate_scenario(43, st);
  EXPECT_EQ(a.target_point, b.target_point);
  EXPECT_EQ(a.guide_direction, b.guide_direction);
  EXPECT_EQ(a.initial_a_hat.v, b.initial_a_hat.v);
  EXPECT_NE(a.target_point, c.target_point);
  EXPECT_NE(a.initial_a_hat.v, c.initial_a_hat.v);
}

TEST(GenerateScenario, TargetsInCubeAndGuidesSpreadOverUpperOctants) {
  const TrialSettings st;
  const ScenarioConfig& c = st.scenario;
  std::array<int, 4> octant{};
  const int n = 4000;
  for (int s = 0; s < n; ++s) {
    const Scenario sc = generate_scenario(static_cast<std::uint64_t>(s), st);
    EXPECT_LE((sc.target_point - c.target_center).lpNorm<Eigen::Infinity>(), 0.5 * c.target_cube);
    const Vec3& l = sc.guide_direction;
    EXPECT_NEAR(l.norm(), 1.0, 1e-12);
    EXPECT_GT(l.z(), 0.0);
    EXPECT_NEAR(sc.nominal_trachea.dot(l), 0.0, 1e-12);
    // Component ratios of the raw direction survive normalisation.
    EXPECT_GE(std::abs(l.x()) / l.z(), c.guide_xy_min / c.guide_z_max - 1e-12);
    EXPECT_LE(std::abs(l.x()) / l.z(), c.guide_xy_max / c.guide_z_min + 1e-12);
    ++octant[(l.x() > 0 ? 1 : 0) + (l.y() > 0 ? 2 : 0)];
  }
  for (int k : octant) EXPECT_NEAR(static_cast<double>(k) / n, 0.25, 0.03);
}

TEST(GenerateScenario, PerturbationStaysWithinBoundsAndCanBeDisabled) {
  TrialSettings st;
  const ScenarioConfig& c = st.scenario;
  for (std::uint64_t s = 0; s < 200; ++s) {
    const Scenario sc = generate_scenario(s, st);
    const Vec12 d = sc.initial_a_hat.v - AdaptiveParameters::from_poses(sc.true_base_pose, sc.true_needle_pose).v;
    EXPECT_LE(d.segment<3>(0).lpNorm<Eigen::Infinity>(), c.base_pos_uncertainty);
    EXPECT_LE(d.segment<3>(3).lpNorm<Eigen::Infinity>(), c.base_rot_uncertainty);
    EXPECT_LE(d.segment<3>(6).lpNorm<Eigen::Infinity>(), c.needle_pos_uncertainty);
    EXPECT_LE(d.segment<3>(9).lpNorm<Eigen::Infinity>(), c.needle_rot_uncertainty);
  }
  st.scenario.perturb_parameters = false;
  const Scenario sc = generate_scenario(7, st);
  EXPECT_EQ(sc.initial_a_hat.v, AdaptiveParameters::from_poses(sc.true_base_pose, sc.true_needle_pose).v);
  EXPECT_LT((sc.true_base_pose.translation() - st.scenario.base_translation).norm(), 1e-15);
}

TEST(SensorMeasure, NoiseStatisticsMatchTheModel) {
  NoiseModel nm;
  std::mt19937_64 rng(5);
  const UnitDualQuaternion x = pdt::testing::random_pose(rng, 0.3);
  const int n = 20000;
  Vec3 sum = Vec3::Zero(), sq = Vec3::Zero();
  double ang_sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const UnitDualQuaternion y = sensor_measure(x, nm, rng);
    const Vec3 d = y.translation() - x.translation();
    sum += d;
    sq += d.cwiseProduct(d);
    const double c = std::min(1.0, std::abs(dot(y.rotation(), x.rotation())));
    ang_sq += std::pow(2.0 * std::acos(c), 2);
  }
  for (int k = 0; k < 3; ++k) {
    EXPECT_NEAR(sum(k) / n, 0.0, 5.0 * nm.pos_sigma / std::sqrt(n));
    EXPECT_NEAR(std::sqrt(sq(k) / n), nm.pos_sigma, 0.03 * nm.pos_sigma);
  }
  EXPECT_NEAR(std::sqrt(ang_sq / n), nm.ang_sigma, 0.03 * nm.ang_sigma);

  nm.pos_sigma = nm.ang_sigma = 0.0;
  EXPECT_EQ(sensor_measure(x, nm, rng).vec8(), x.vec8());
}

TEST(IntegrateJointState, IsTheExplicitEulerStep) {
  VectorXd q(3), qd(3);
  q << 0.1, -0.2, 0.3;
  qd << 1.0, 2.0, -3.0;
  EXPECT_LT(max_abs_diff(integrate_joint_state(q, qd, 0.01), q + 0.01 * qd), 1e-16);
  EXPECT_LT(max_abs_diff(integrate_joint_state(q, 2.0 * qd, 0.01) - q, 2.0 * (integrate_joint_state(q, qd, 0.01) - q)),
            1e-15);
  EXPECT_EQ(integrate_joint_state(q, VectorXd::Zero(3), 0.01), q);
  EXPECT_THROW(integrate_joint_state(q, VectorXd::Zero(2), 0.01), InvalidInput);
}

TEST(RunTrial, IdealCaseReachesTheTarget) {
  TrialSettings st = noise_free();
  st.scenario.perturb_parameters = false;
  const Scenario sc = generate_scenario(3, st);
  const TrialRecord rec = run_trial(panda(), sc);
  ASSERT_EQ(rec.status, TrialStatus::completed);
  const PunctureMetrics m = compute_metrics(rec, sc);
  EXPECT_LT(m.position_error, 1e-4);
  EXPECT_LT(m.guide_angle, st.scenario.cone_half_angle);
  EXPECT_TRUE(rec.warmup_converged);
}

TEST(RunTrial, StepsAdvanceInOrder) {
  const Scenario sc = generate_scenario(11, TrialSettings{});
  const TrialRecord rec = run_trial(panda(), sc, true);
  ASSERT_EQ(rec.status, TrialStatus::completed);
  ASSERT_EQ(static_cast<int>(rec.trace.size()), rec.ticks + 1);
  int prev = 0;
  for (const TraceRow& r : rec.trace) {
    EXPECT_GE(r.step, prev);
    EXPECT_GE(r.step, 0);
    EXPECT_LE(r.step, 3);
    prev = r.step;
  }
  EXPECT_EQ(rec.trace.back().step, 3);
  EXPECT_LT(rec.step_start[0], rec.step_start[1]);
  EXPECT_LE(rec.step_start[1], rec.step_start[2]);
  EXPECT_LT(rec.step_start[2], rec.step_start[3]);
}

TEST(RunTrial, NoiseFreeSafetyInvariants) {
  const TrialSettings st = noise_free();
  for (std::uint64_t seed = 1; seed <= 6; ++seed) {
    SCOPED_TRACE(seed);
    const TrialRecord rec = run_trial(panda(), generate_scenario(seed, st));
    ASSERT_EQ(rec.status, TrialStatus::completed);
    EXPECT_GE(rec.min_patient_margin_est, 0.0);
    EXPECT_GE(rec.min_plane_est, -1e-6);
    EXPECT_LE(rec.max_guide_violation_est, 1e-6);
    EXPECT_LE(rec.max_cone_violation_est, 1e-6);
    EXPECT_LE(rec.max_joint_violation, 1e-6);
    EXPECT_LE(rec.max_lyapunov, 1e-9);
  }
}

TEST(RunTrial, HalvingTheStepBarelyMovesTheOutcome) {
  TrialSettings coarse = noise_free(), fine = noise_free();
  fine.procedure.dt = 0.5 * coarse.procedure.dt;
  for (std::uint64_t seed : {2u, 9u}) {
    const TrialRecord a = run_trial(panda(), generate_scenario(seed, coarse));
    const TrialRecord b = run_trial(panda(), generate_scenario(seed, fine));
    ASSERT_EQ(a.status, TrialStatus::completed);
    ASSERT_EQ(b.status, TrialStatus::completed);
    EXPECT_LT((a.final_true_pose.translation() - b.final_true_pose.translation()).norm(), 1e-4);
  }
}

TEST(RunBatch, SingleTrialEqualsRunTrialAndParallelEqualsSerial) {
  const TrialSettings st;
  const BatchResult one = run_batch(panda(), 1, 17, st);
  const Scenario sc = generate_scenario(17, st);
  const TrialRecord direct = run_trial(panda(), sc);
  EXPECT_EQ(summary_csv(one.records, one.scenarios), summary_csv({direct}, {sc}));

  BatchOptions serial, parallel;
  serial.parallel = false;
  parallel.workers = 4;
  const BatchResult s = run_batch(panda(), 4, 30, st, serial), p = run_batch(panda(), 4, 30, st, parallel);
  EXPECT_EQ(summary_csv(s.records, s.scenarios), summary_csv(p.records, p.scenarios));
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(s.records[i].seed, trial_seed(30, i));
    EXPECT_EQ(s.records[i].final_q, p.records[i].final_q);
  }
}

TEST(RunBatch, RejectsInvalidInput) {
  EXPECT_THROW(run_batch(panda(), 0, 1, TrialSettings{}), InvalidInput);
  TrialSettings st;
  st.procedure.dt = 0.0;
  EXPECT_THROW(run_batch(panda(), 1, 1, st), InvalidInput);
  st = TrialSettings{};
  st.vfi.eta_g = -1.0;
  EXPECT_THROW(generate_scenario(1, st), InvalidInput);
}
