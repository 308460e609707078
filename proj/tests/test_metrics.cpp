#include <gtest/gtest.h>

#include "pdt/metrics.hpp"
#include "test_util.hpp"

using namespace pdt;

namespace {

MetricGeometry perfect_geometry() {
  MetricGeometry g;
  g.midline = Vec3::UnitZ();
  g.trachea = Vec3::UnitX();
  g.guide_true = g.guide_measured = Vec3::UnitZ();
  g.needle_dir = Vec3::UnitZ();
  g.trachea_measured = Vec3::UnitX();
  g.tip = g.target_true = g.target_measured = Vec3(0.1, -0.2, 0.05);
  return g;
}

double rad(double deg) { return deg * M_PI / 180.0; }

// A completed trial whose needle ends on the true guide line at the target.
std::pair<TrialRecord, Scenario> perfect_trial(std::uint64_t seed) {
  TrialSettings st;
  st.scenario.perturb_parameters = false;
  const Scenario sc = generate_scenario(seed, st);
  TrialRecord rec;
  rec.seed = seed;
  rec.status = TrialStatus::completed;
  rec.bronchoscope_measured = sc.bronchoscope_pose;
  const Quaternion r = detail::align_insertion_axis(Quaternion(1, 0, 0, 0), sc.guide_direction);
  rec.final_true_pose = UnitDualQuaternion::from_rotation_translation(r, sc.target_point);
  return {rec, sc};
}

}  // namespace

TEST(Summarize, LinearInterpolationQuartiles) {
  const SummaryStats s = summarize({4, 1, 3, 2});
  EXPECT_DOUBLE_EQ(s.median, 2.5);
  EXPECT_DOUBLE_EQ(s.iqr, 1.5);
  EXPECT_DOUBLE_EQ(s.mean, 2.5);
  EXPECT_DOUBLE_EQ(s.sd, std::sqrt(5.0 / 3.0));
  EXPECT_EQ(s.min, 1.0);
  EXPECT_EQ(s.max, 4.0);
  EXPECT_EQ(s.n, 4u);
}

TEST(Summarize, ConstantSingletonAndEmpty) {
  const SummaryStats c = summarize({0.7, 0.7, 0.7});
  EXPECT_EQ(c.sd, 0.0);
  EXPECT_EQ(c.iqr, 0.0);
  const SummaryStats one = summarize({3.25});
  EXPECT_EQ(one.mean, 3.25);
  EXPECT_EQ(one.median, 3.25);
  EXPECT_EQ(one.sd, 0.0);
  EXPECT_THROW(summarize({}), InvalidInput);
}

TEST(Summarize, PercentileEndpoints) {
  const std::vector<double> s{1.0, 2.0, 10.0};
  EXPECT_EQ(percentile_sorted(s, 0.0), 1.0);
  EXPECT_EQ(percentile_sorted(s, 1.0), 10.0);
  EXPECT_DOUBLE_EQ(percentile_sorted(s, 0.75), 6.0);
  EXPECT_THROW(percentile_sorted(s, 1.5), InvalidInput);
}

TEST(Spearman, FractionalRanksAverageTies) {
  const std::vector<double> r = fractional_ranks({1, 2, 2, 3, 4, 4, 4, 5, 6, 7});
  EXPECT_EQ(r, (std::vector<double>{1, 2.5, 2.5, 4, 6, 6, 6, 8, 9, 10}));
}

TEST(Spearman, HandRankedTiedFixture) {
  // ranks x: 1 2.5 2.5 4 6 6 6 8 9 10, ranks y: 10 8.5 8.5 6 7 5 3.5 3.5 2 1
  // sum dx dy = -77, sum dx^2 = 80, sum dy^2 = 81.5
  const Correlation c = spearman({1, 2, 2, 3, 4, 4, 4, 5, 6, 7}, {10, 9, 9, 7, 8, 6, 5, 5, 3, 1});
  EXPECT_NEAR(c.r, -77.0 / std::sqrt(80.0 * 81.5), 1e-15);
  EXPECT_NEAR(c.p, 1.9169252349655297e-05, 1e-13);
  EXPECT_EQ(c.n, 10u);

  const Correlation d =
      spearman({3.1, 1.2, 1.2, 5.0, 2.2, 2.2, 2.2, 0.7, 4.4, 3.3}, {2, 1, 3, 5, 2, 2, 4, 0, 5, 3});
  EXPECT_NEAR(d.r, 0.7554896055043757, 1e-14);
  EXPECT_NEAR(d.p, 0.01150038214517835, 1e-12);
}

TEST(Spearman, MonotoneAndReversed) {
  std::vector<double> x, y, z;
  for (int i = 0; i < 12; ++i) {
    x.push_back(0.3 * i * i - i);
    y.push_back(std::exp(x.back()));
    z.push_back(-x.back());
  }
  EXPECT_EQ(spearman(x, y).r, 1.0);
  EXPECT_EQ(spearman(x, y).p, 0.0);
  EXPECT_EQ(spearman(x, z).r, -1.0);
}

TEST(Spearman, InvariantUnderIncreasingTransforms) {
  std::mt19937_64 rng(71);
  std::normal_distribution<double> n01;
  std::vector<double> x, y, fx, gy;
  for (int i = 0; i < 50; ++i) {
    x.push_back(n01(rng));
    y.push_back(x.back() + n01(rng));
    fx.push_back(std::atan(3.0 * x.back()) + 2.0);
    gy.push_back(std::cbrt(y.back()));
  }
  EXPECT_EQ(spearman(x, y).r, spearman(fx, gy).r);
}

TEST(Spearman, RejectsUndefinedInput) {
  EXPECT_THROW(spearman({1, 2, 3}, {1, 2}), InvalidInput);
  EXPECT_THROW(spearman({1, 2}, {1, 2}), InvalidInput);
  EXPECT_THROW(spearman({1, 1, 1}, {1, 2, 3}), InvalidInput);
}

TEST(Spearman, SharedNoiseConstructionIsStronglyCorrelated) {
  std::mt19937_64 rng(72);
  std::normal_distribution<double> target(0.0, 1e-3), tracking(0.0, 0.15e-3);
  std::vector<double> eps_m, eps_n;
  for (int i = 0; i < 100; ++i) {
    const double offset = target(rng);  // measured target off the midline plane
    eps_m.push_back(std::abs(offset));
    eps_n.push_back(std::abs(offset + tracking(rng)));
  }
  const Correlation c = spearman(eps_m, eps_n);
  EXPECT_GT(c.r, 0.9);
  EXPECT_LT(c.p, 1e-3);
}

TEST(PunctureMetricsTest, PerfectInsertionIsZero) {
  const PunctureMetrics m = compute_metrics(perfect_geometry());
  for (const MetricField& f : metric_fields()) EXPECT_EQ(m.*f.member, 0.0) << f.key;
}

TEST(PunctureMetricsTest, TiltInsideTheCrossSection) {
  MetricGeometry g = perfect_geometry();
  g.needle_dir = Quaternion::from_axis_angle(Vec3::UnitX(), rad(10)).rotate(Vec3::UnitZ());
  const PunctureMetrics m = compute_metrics(g);
  EXPECT_NEAR(m.delta_mn, rad(10), 1e-12);
  EXPECT_NEAR(m.delta_n, rad(10), 1e-12);

  g.needle_dir = Quaternion::from_axis_angle(Vec3::UnitY(), rad(10)).rotate(Vec3::UnitZ());
  const PunctureMetrics along = compute_metrics(g);
  EXPECT_NEAR(along.delta_mn, 0.0, 1e-12);
  EXPECT_NEAR(along.delta_n, rad(10), 1e-12);
}

TEST(PunctureMetricsTest, DistancesToPlaneAndTargets) {
  MetricGeometry g = perfect_geometry();
  g.tip += Vec3(3e-3, 2e-3, -1e-3);           // plane normal is y
  g.target_measured += Vec3(0.0, -4e-3, 0.0);
  const PunctureMetrics m = compute_metrics(g);
  EXPECT_NEAR(m.eps_n, 2e-3, 1e-15);
  EXPECT_NEAR(m.eps_m, 4e-3, 1e-15);
  EXPECT_NEAR(m.position_error, std::sqrt(14.0) * 1e-3, 1e-15);
  EXPECT_NEAR(m.eps_r, std::sqrt(9.0 + 36.0 + 1.0) * 1e-3, 1e-15);
}

TEST(PunctureMetricsTest, ProjectedAngleMatchesExplicitProjection) {
  std::mt19937_64 rng(73);
  for (int trial = 0; trial < 200; ++trial) {
    MetricGeometry g = perfect_geometry();
    g.midline = pdt::testing::random_unit(rng);
    g.trachea = pdt::testing::random_unit(rng).cross(g.midline).normalized();
    g.needle_dir = pdt::testing::random_unit(rng);
    g.guide_measured = pdt::testing::random_unit(rng);
    // coordinates in the cross-section basis {midline, trachea x midline}
    const Vec3 e1 = g.midline, e2 = g.trachea.cross(g.midline);
    const auto oracle = [&](const Vec3& d) { return std::atan2(std::abs(d.dot(e2)), d.dot(e1)); };
    const PunctureMetrics m = compute_metrics(g);
    EXPECT_NEAR(m.delta_mn, oracle(g.needle_dir), 1e-9);
    EXPECT_NEAR(m.delta_mm, oracle(g.guide_measured), 1e-9);
  }
}

TEST(PunctureMetricsTest, RigidFrameInvariance) {
  std::mt19937_64 rng(74);
  for (int trial = 0; trial < 50; ++trial) {
    MetricGeometry g;
    g.midline = pdt::testing::random_unit(rng);
    g.trachea = pdt::testing::random_unit(rng).cross(g.midline).normalized();
    g.guide_true = pdt::testing::random_unit(rng);
    g.guide_measured = pdt::testing::random_unit(rng);
    g.trachea_measured = pdt::testing::random_unit(rng);
    g.needle_dir = pdt::testing::random_unit(rng);
    g.tip = pdt::testing::random_vec(rng, 0.1);
    g.target_true = pdt::testing::random_vec(rng, 0.1);
    g.target_measured = pdt::testing::random_vec(rng, 0.1);
    const UnitDualQuaternion T = pdt::testing::random_pose(rng, 1.0);
    const Quaternion& r = T.rotation();
    MetricGeometry h = g;
    for (Vec3* d : {&h.midline, &h.trachea, &h.guide_true, &h.guide_measured, &h.trachea_measured, &h.needle_dir})
      *d = r.rotate(*d);
    for (Vec3* p : {&h.tip, &h.target_true, &h.target_measured}) *p = transform_point(T, *p);
    const PunctureMetrics a = compute_metrics(g), b = compute_metrics(h);
    for (const MetricField& f : metric_fields()) EXPECT_NEAR(a.*f.member, b.*f.member, 1e-9) << f.key;
  }
}

TEST(PunctureMetricsTest, IncompleteTrialHasNoMetrics) {
  auto [rec, sc] = perfect_trial(5);
  rec.status = TrialStatus::timeout;
  EXPECT_THROW(compute_metrics(rec, sc), MetricUnavailable);
}

TEST(BatchReportTest, SinglePerfectTrialHasZeroMedians) {
  const auto [rec, sc] = perfect_trial(6);
  const BatchReport rep = batch_report({rec}, {sc});
  EXPECT_EQ(rep.n_completed, 1u);
  EXPECT_EQ(rep.failure_rate, 0.0);
  for (const auto& m : rep.metrics) EXPECT_NEAR(m.stats.median, 0.0, 1e-9) << m.field.key;
  EXPECT_FALSE(rep.eps_mn.has_value());
}

TEST(BatchReportTest, CountsFailuresAndEmitsTables) {
  std::vector<TrialRecord> recs;
  std::vector<Scenario> scs;
  for (std::uint64_t s = 0; s < 6; ++s) {
    auto [rec, sc] = perfect_trial(s);
    const Vec3 normal = sc.nominal_midline.cross(sc.nominal_trachea);
    const double k = static_cast<double>(s);
    rec.bronchoscope_measured = UnitDualQuaternion::from_translation(1e-3 * k * normal) * sc.bronchoscope_pose;
    rec.final_true_pose = UnitDualQuaternion::from_translation(0.9e-3 * k * normal) * rec.final_true_pose;
    if (s == 4) rec.status = TrialStatus::infeasible_stop;
    if (s == 5) rec.status = TrialStatus::timeout;
    recs.push_back(rec);
    scs.push_back(sc);
  }
  const BatchReport rep = batch_report(recs, scs);
  EXPECT_EQ(rep.n_trials, 6u);
  EXPECT_EQ(rep.n_completed, 4u);
  EXPECT_EQ(rep.n_infeasible, 1u);
  EXPECT_EQ(rep.n_timeout, 1u);
  EXPECT_NEAR(rep.failure_rate, 2.0 / 6.0, 1e-15);
  ASSERT_TRUE(rep.eps_mn.has_value());
  EXPECT_NEAR(rep.eps_mn->r, 1.0, 1e-12);
  EXPECT_EQ(rep.stats("eps_r").n, 4u);
  EXPECT_THROW(rep.stats("nope"), InvalidInput);

  const std::string csv = report_csv(rep);
  EXPECT_EQ(csv.rfind("metric,unit,n,mean,sd,median,iqr,min,max\n", 0), 0u);
  EXPECT_NE(csv.find("\neps_n,mm,4,"), std::string::npos);
  EXPECT_NE(csv.find("\ntimeout,count,1"), std::string::npos);
  const std::string text = report_text(rep);
  EXPECT_NE(text.find("failure rate 33.333%"), std::string::npos);
  EXPECT_NE(text.find("spearman (eps_m, eps_n): r = 1.000"), std::string::npos);
}
