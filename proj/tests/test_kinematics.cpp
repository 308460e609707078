#include <gtest/gtest.h>

#include <fstream>

#include "pdt/kinematics.hpp"
#include "test_util.hpp"

using namespace pdt;

namespace {

SerialManipulator panda() { return load_robot_model(std::string(PDT_CONFIG_DIR) + "/panda.yaml"); }

VectorXd panda_home() {
  VectorXd q(7);
  q << 0.0, -M_PI / 4, 0.0, -3 * M_PI / 4, 0.0, M_PI / 2, M_PI / 4;
  return q;
}

VectorXd random_q(const SerialManipulator& r, std::mt19937_64& rng) {
  VectorXd q(r.n_joints());
  for (int i = 0; i < r.n_joints(); ++i)
    q(i) = std::uniform_real_distribution<double>(r.q_min()(i), r.q_max()(i))(rng);
  return q;
}

// Independent matrix-chain oracle straight from the DH table.
Eigen::Matrix4d dh_matrix_chain(const SerialManipulator& r, const VectorXd& q) {
  auto rx = [](double a) {
    Eigen::Matrix4d T = Eigen::Matrix4d::Identity();
    T.block<3, 3>(0, 0) = Eigen::AngleAxisd(a, Eigen::Vector3d::UnitX()).toRotationMatrix();
    return T;
  };
  auto rz = [](double a) {
    Eigen::Matrix4d T = Eigen::Matrix4d::Identity();
    T.block<3, 3>(0, 0) = Eigen::AngleAxisd(a, Eigen::Vector3d::UnitZ()).toRotationMatrix();
    return T;
  };
  auto tx = [](double a) {
    Eigen::Matrix4d T = Eigen::Matrix4d::Identity();
    T(0, 3) = a;
    return T;
  };
  auto tz = [](double d) {
    Eigen::Matrix4d T = Eigen::Matrix4d::Identity();
    T(2, 3) = d;
    return T;
  };
  Eigen::Matrix4d T = Eigen::Matrix4d::Identity();
  for (int i = 0; i < r.n_joints(); ++i) {
    const DhRow& row = r.dh_rows()[static_cast<std::size_t>(i)];
    const double th = row.theta + (row.type == JointType::revolute ? q(i) : 0.0);
    const double d = row.d + (row.type == JointType::prismatic ? q(i) : 0.0);
    if (r.convention() == DhConvention::modified) T = T * rx(row.alpha) * tx(row.a) * rz(th) * tz(d);
    else T = T * rz(th) * tz(d) * tx(row.a) * rx(row.alpha);
  }
  return T * pdt::testing::homogeneous(r.flange().rotation(), r.flange().translation());
}

VectorXd random_rate(std::mt19937_64& rng, int n) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  VectorXd v(n);
  for (int i = 0; i < n; ++i) v(i) = u(rng);
  return v;
}

struct QuietWarnings {
  QuietWarnings() { set_warning_handler({}); }
  ~QuietWarnings() { set_warning_handler([](const std::string& m) { std::clog << "warning: " << m << '\n'; }); }
};

Vec8 signed_vec8(const UnitDualQuaternion& x, const UnitDualQuaternion& ref) {
  return dot(x.rotation(), ref.rotation()) < 0 ? Vec8(-x.vec8()) : x.vec8();
}

SerialManipulator one_joint(JointType type, double a = 0.0) {
  VectorXd lo(1), hi(1), vmax(1);
  lo << -3.0;
  hi << 3.0;
  vmax << 1.0;
  return SerialManipulator({DhRow{0.0, 0.0, a, 0.0, type}}, DhConvention::standard, lo, hi, vmax);
}

}  // namespace

TEST(Fkm, SingleJointZeroOffsetsIsIdentity) {
  const auto r = one_joint(JointType::revolute);
  EXPECT_LT((fkm(r, VectorXd::Zero(1)).vec8() - UnitDualQuaternion::identity().vec8()).norm(), 1e-15);
}

TEST(Fkm, Planar2RAtZero) {
  VectorXd lo = VectorXd::Constant(2, -3), hi = VectorXd::Constant(2, 3), v = VectorXd::Ones(2);
  const SerialManipulator r({DhRow{0, 0, 1.0, 0, JointType::revolute}, DhRow{0, 0, 1.0, 0, JointType::revolute}},
                            DhConvention::standard, lo, hi, v);
  EXPECT_LT((fkm(r, VectorXd::Zero(2)).translation() - Vec3(2, 0, 0)).norm(), 1e-15);
  VectorXd q(2);
  q << M_PI / 2, -M_PI / 2;
  EXPECT_LT((fkm(r, q).translation() - Vec3(1, 1, 0)).norm(), 1e-14);
}

TEST(Fkm, PandaHomeMatchesMatrixChain) {
  const auto r = panda();
  const UnitDualQuaternion x = fkm(r, panda_home());
  const Eigen::Matrix4d T = dh_matrix_chain(r, panda_home());
  EXPECT_LT((x.translation() - T.topRightCorner<3, 1>()).norm(), 1e-10);
  EXPECT_LT((x.rotation().rotation_matrix() - T.topLeftCorner<3, 3>()).norm(), 1e-10);
  // flange sits ~0.59 m above the base, pointing down
  EXPECT_NEAR(x.translation().z(), 0.5903, 1e-3);
  EXPECT_LT((x.rotation().rotate(Vec3::UnitZ()) - Vec3(0, 0, -1)).norm(), 1e-9);
}

TEST(Fkm, RandomConfigurationsMatchMatrixChain) {
  const auto r = panda();
  std::mt19937_64 rng(21);
  for (int i = 0; i < 100; ++i) {
    const VectorXd q = random_q(r, rng);
    const UnitDualQuaternion x = fkm(r, q);
    const Eigen::Matrix4d T = dh_matrix_chain(r, q);
    EXPECT_LT((x.translation() - T.topRightCorner<3, 1>()).norm(), 1e-10);
    EXPECT_LT((x.rotation().rotation_matrix() - T.topLeftCorner<3, 3>()).norm(), 1e-10);
  }
}

TEST(Fkm, WrongDimensionThrows) {
  EXPECT_THROW(fkm(panda(), VectorXd::Zero(6)), InvalidInput);
}

TEST(Fkm, OutOfLimitsWarnsButEvaluates) {
  QuietWarnings restore;
  std::vector<std::string> seen;
  set_warning_handler([&](const std::string& m) { seen.push_back(m); });
  VectorXd q = panda_home();
  q(3) = 0.5;  // above q_max(3)
  EXPECT_NO_THROW(fkm(panda(), q));
  EXPECT_EQ(seen.size(), 1u);
}

TEST(PoseJacobian, OneJointCircularMotion) {
  const auto r = one_joint(JointType::revolute, 1.0);
  for (double q0 : {0.0, 0.4, -1.3, 2.5}) {
    VectorXd q(1);
    q << q0;
    const TaskJacobians J = pose_jacobian(r, q);
    EXPECT_LT((J.J_trans.col(0) - Vec3(-std::sin(q0), std::cos(q0), 0)).norm(), 1e-14);
  }
}

TEST(PoseJacobian, AllBlocksMatchCentralDifferences) {
  const auto r = panda();
  std::mt19937_64 rng(22);
  const double h = 1e-6;
  QuietWarnings quiet;
  for (int trial = 0; trial < 100; ++trial) {
    const VectorXd q = random_q(r, rng);
    const UnitDualQuaternion prefix = pdt::testing::random_pose(rng, 0.5);
    const UnitDualQuaternion suffix = pdt::testing::random_pose(rng, 0.2);
    const Vec3 axis = pdt::testing::random_unit(rng);
    const TaskJacobians J = pose_jacobian(r, q, prefix, suffix, axis);
    for (int i = 0; i < r.n_joints(); ++i) {
      VectorXd qp = q, qm = q;
      qp(i) += h;
      qm(i) -= h;
      const UnitDualQuaternion xp = prefix * fkm(r, qp) * suffix, xm = prefix * fkm(r, qm) * suffix;
      const Vec8 dpose = (signed_vec8(xp, J.pose) - signed_vec8(xm, J.pose)) / (2 * h);
      EXPECT_LT((J.J_pose.col(i) - dpose).lpNorm<Eigen::Infinity>(), 1e-5);
      const Vec3 dt = (xp.translation() - xm.translation()) / (2 * h);
      EXPECT_LT((J.J_trans.col(i) - dt).lpNorm<Eigen::Infinity>(), 1e-5);
      const Vec3 dl = (xp.rotation().rotate(axis) - xm.rotation().rotate(axis)) / (2 * h);
      EXPECT_LT((J.J_line_dir.col(i) - dl).lpNorm<Eigen::Infinity>(), 1e-5);
    }
  }
}

TEST(PoseJacobian, FirstOrderExpansionRemainderIsQuadratic) {
  const auto r = panda();
  std::mt19937_64 rng(23);
  const VectorXd q = panda_home();
  const VectorXd dir = random_rate(rng, 7).normalized();
  const TaskJacobians J = pose_jacobian(r, q);
  double prev = 0.0;
  for (double s : {1e-2, 5e-3, 2.5e-3}) {
    const Vec8 rem = signed_vec8(fkm(r, q + s * dir), J.pose) - J.pose.vec8() - J.J_pose * (s * dir);
    if (prev > 0.0) EXPECT_NEAR(prev / rem.norm(), 4.0, 0.2);
    prev = rem.norm();
  }
}

TEST(PoseJacobian, SpinAboutOwnAxisLeavesOriginFixed) {
  VectorXd lo = VectorXd::Constant(3, -3), hi = VectorXd::Constant(3, 3), v = VectorXd::Ones(3);
  const SerialManipulator r3({DhRow{0, 0.1, 0.3, 0.5, JointType::revolute}, DhRow{0, 0.0, 0.2, -0.3, JointType::revolute},
                              DhRow{0, 0.0, 0.0, 0.0, JointType::revolute}},
                             DhConvention::standard, lo, hi, v);
  // joint 3 has zero offsets: moving it only spins the final frame about its own z
  VectorXd q(3);
  q << 0.3, -0.7, 0.2;
  const TaskJacobians J = pose_jacobian(r3, q);
  EXPECT_LT(J.J_trans.col(2).norm(), 1e-14);
  // the line direction along the spin axis is unaffected
  EXPECT_LT(pose_jacobian(r3, q, {}, {}, Vec3::UnitZ()).J_line_dir.col(2).norm(), 1e-14);
}

TEST(DistJacobianPointLine, ZeroOnTheLine) {
  const auto r = one_joint(JointType::revolute, 1.0);
  VectorXd q(1);
  q << 0.3;
  const TaskJacobians J = pose_jacobian(r, q);
  const PluckerLine L = line_from_point_direction(J.pose.translation(), Vec3::UnitZ());
  EXPECT_LT(dist_jacobian_point_line(J.J_trans, J.pose.translation(), L).norm(), 1e-15);
}

TEST(DistJacobianPointLine, MatchesFiniteDifferenceAlongTrajectory) {
  const auto r = panda();
  std::mt19937_64 rng(24);
  QuietWarnings quiet;
  for (int trial = 0; trial < 100; ++trial) {
    const VectorXd q = random_q(r, rng);
    const PluckerLine L = line_from_point_direction(pdt::testing::random_vec(rng), pdt::testing::random_unit(rng));
    const TaskJacobians J = pose_jacobian(r, q);
    const RowVectorXd row = dist_jacobian_point_line(J.J_trans, J.pose.translation(), L);
    const VectorXd qd = random_rate(rng, 7);
    const double h = 1e-6;
    const double fd = (sq_dist_point_line(fkm(r, q + h * qd).translation(), L) -
                       sq_dist_point_line(fkm(r, q - h * qd).translation(), L)) / (2 * h);
    EXPECT_NEAR(row.dot(qd), fd, 1e-5);
  }
}

TEST(DistJacobianPointLine, RadialScalingOnPrismaticJoint) {
  // prismatic joint carried onto the x axis, line = z axis: D = x^2, dD/dq = 2x
  const auto r = one_joint(JointType::prismatic);
  const auto prefix = UnitDualQuaternion::from_rotation(Quaternion::from_axis_angle(Vec3::UnitY(), M_PI / 2));
  const PluckerLine zaxis = line_from_point_direction(Vec3::Zero(), Vec3::UnitZ());
  auto row_value = [&](double x) {
    VectorXd q(1);
    q << x;
    const TaskJacobians J = pose_jacobian(r, q, prefix);
    EXPECT_NEAR(J.pose.translation().x(), x, 1e-12);
    return dist_jacobian_point_line(J.J_trans, J.pose.translation(), zaxis)(0);
  };
  EXPECT_NEAR(row_value(1.0), 2.0, 1e-12);
  EXPECT_NEAR(row_value(2.0), 2.0 * row_value(1.0), 1e-12);
  EXPECT_NEAR(row_value(-0.5), -1.0, 1e-12);
}

TEST(DistJacobianPointPlane, CasesAndFiniteDifference) {
  const auto r = panda();
  std::mt19937_64 rng(25);
  QuietWarnings quiet;
  // column orthogonal to n contributes nothing
  MatrixXd Jt = MatrixXd::Zero(3, 2);
  Jt.col(0) = Vec3(1, 0, 0);
  Jt.col(1) = Vec3(0, 0, 1);
  const PlanePrimitive P{Vec3::UnitZ(), 0.1};
  const RowVectorXd row = dist_jacobian_point_plane(Jt, P);
  EXPECT_EQ(row(0), 0.0);
  EXPECT_EQ(row(1), 1.0);
  EXPECT_LT((dist_jacobian_point_plane(Jt, PlanePrimitive{-P.n, -P.d_offset}) + row).norm(), 1e-16);
  for (int trial = 0; trial < 100; ++trial) {
    const VectorXd q = random_q(r, rng);
    const PlanePrimitive Q = PlanePrimitive::from_point_normal(pdt::testing::random_vec(rng), pdt::testing::random_unit(rng));
    const TaskJacobians J = pose_jacobian(r, q);
    const VectorXd qd = random_rate(rng, 7);
    const double h = 1e-6;
    const double fd = (signed_dist_point_plane(fkm(r, q + h * qd).translation(), Q) -
                       signed_dist_point_plane(fkm(r, q - h * qd).translation(), Q)) / (2 * h);
    EXPECT_NEAR(dist_jacobian_point_plane(J.J_trans, Q).dot(qd), fd, 1e-6);
  }
}

TEST(AngleJacobianLineLine, StationaryAtAlignment) {
  // a joint spinning a direction about an axis perpendicular to it; at alignment f has a minimum
  const auto r = one_joint(JointType::revolute);
  const Vec3 local = Vec3::UnitX();
  VectorXd q(1);
  q << 0.0;
  const TaskJacobians J = pose_jacobian(r, q, {}, {}, local);
  EXPECT_LT(angle_jacobian_line_line(J.J_line_dir, J.line_dir, J.line_dir).norm(), 1e-15);
}

TEST(AngleJacobianLineLine, MatchesFiniteDifferenceOnRotatingJoint) {
  const auto r = one_joint(JointType::revolute);
  const Vec3 local = Vec3(1, 0, 1).normalized();
  const Vec3 c = Vec3(0.3, 0.8, 0.1).normalized();
  for (double q0 : {-2.0, -0.5, 0.1, 1.7}) {
    VectorXd q(1);
    q << q0;
    const TaskJacobians J = pose_jacobian(r, q, {}, {}, local);
    const double h = 1e-6;
    VectorXd qp = q, qm = q;
    qp(0) += h;
    qm(0) -= h;
    const double fp = line_angle_f(fkm(r, qp).rotation().rotate(local), c).f;
    const double fm = line_angle_f(fkm(r, qm).rotation().rotate(local), c).f;
    EXPECT_NEAR(angle_jacobian_line_line(J.J_line_dir, J.line_dir, c)(0), (fp - fm) / (2 * h), 1e-5);
  }
}

TEST(RobotModelFile, LoadsDefaultPanda) {
  const auto r = panda();
  EXPECT_EQ(r.n_joints(), 7);
  EXPECT_EQ(r.convention(), DhConvention::modified);
  EXPECT_NEAR(r.qdot_max()(6), 2.61, 1e-12);
}

TEST(RobotModelFile, ReportsRowAndField) {
  const std::string bad = R"(
n_joints: 2
convention: standard
dh:
  - [0, 0, 1, 0, R]
  - [0, 0, oops, 0, R]
q_min: [-1, -1]
q_max: [1, 1]
qdot_max: [1, 1]
)";
  try {
    load_robot_model_string(bad);
    FAIL() << "expected a parse error";
  } catch (const ModelParseError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("dh row 2"), std::string::npos) << msg;
    EXPECT_NE(msg.find("'a'"), std::string::npos) << msg;
  }
}

TEST(RobotModelFile, RejectsInconsistentLimits) {
  const std::string bad = R"(
n_joints: 1
dh: [[0, 0, 1, 0]]
q_min: [1]
q_max: [-1]
qdot_max: [1]
)";
  EXPECT_THROW(load_robot_model_string(bad), InvalidInput);
  EXPECT_THROW(load_robot_model_string("n_joints: 1\ndh: [[0,0,1,0]]\nq_min: [-1]\nq_max: [1]\nqdot_max: [1]\nextra: 3\n"),
               ModelParseError);
  EXPECT_THROW(load_robot_model("/nonexistent/robot.yaml"), ModelParseError);
}
