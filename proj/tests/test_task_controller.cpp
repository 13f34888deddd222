#include <cmath>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "morphopt/controller.hpp"
#include "test_support.hpp"

using namespace morphopt;
using morphopt::testing::random_q;

namespace {

VecX vec(std::initializer_list<double> v) {
  VecX out(static_cast<Eigen::Index>(v.size()));
  std::copy(v.begin(), v.end(), out.data());
  return out;
}

// Six joints with passive links in between.
KinematicChain six_dof_chain(const MountedPose& pose = {}) {
  return assemble(default_library(), MorphologyState{{3, 2, 8, 4, 7, 5, 6, 1, 11}}, pose);
}

EePose pose_at(const KinematicChain& chain, const VecX& q) { return forward_kinematics(chain, q).ee; }

ReferenceTrajectory hold(const EePose& pose, double duration, double dt, OrientationMode mode) {
  std::vector<Waypoint> wps{{pose, 0.0, SegmentKind::transfer, mode, 0.0},
                            {pose, duration, SegmentKind::transfer, mode, 0.0}};
  return resample(wps, dt);
}

// Random configuration of the six-dof chain that is well away from
// singularities and joint limits.
VecX regular_configuration(std::mt19937_64& rng, const KinematicChain& chain) {
  for (;;) {
    VecX q = 0.6 * random_q(rng, chain);
    if (manipulability(jacobian(chain, q)) > 1e-3) return q;
  }
}

}  // namespace

// ------------------------------------------------------------------ task

TEST(DrillingTask, DefaultHolesAndFirstDrillBottom) {
  const DrillingTaskParams p = default_drilling_params();
  ASSERT_EQ(p.holes.size(), 6u);
  for (const auto& h : p.holes) EXPECT_DOUBLE_EQ(h.x(), -1.5);
  const auto wps = drilling_waypoints(p);
  auto bottom = std::find_if(wps.begin(), wps.end(), [](const Waypoint& w) { return w.segment == SegmentKind::drill_out; });
  ASSERT_NE(bottom, wps.begin());
  EXPECT_TRUE(std::prev(bottom)->pose.position.isApprox(Vec3(-1.6, 0.15, 0.45), 1e-12));
  EXPECT_TRUE(wps.front().pose.position.isApprox(Vec3(-1.45, 0.15, 0.45), 1e-12));
}

TEST(DrillingTask, Validation) {
  DrillingTaskParams p = default_drilling_params();
  p.depth = 0.0;
  EXPECT_THROW(drilling_waypoints(p), ValidationError);
  p = default_drilling_params();
  p.holes[2].x() = -1.4;
  EXPECT_THROW(drilling_waypoints(p), ValidationError);
  p = default_drilling_params();
  p.wall_normal = Vec3(1, 0, 0.5);
  EXPECT_THROW(drilling_waypoints(p), ValidationError);
  p = default_drilling_params();
  p.holes.clear();
  EXPECT_THROW(drilling_waypoints(p), ValidationError);
}

TEST(DrillingTask, ToolAxisIntoWallThroughout) {
  const ReferenceTrajectory traj = drilling_task(default_drilling_params(), 0.01);
  for (const auto& s : traj.samples) {
    const Vec3 z = s.pose.orientation.toRotationMatrix().col(2);
    ASSERT_NEAR(z.dot(Vec3::UnitX()), -1.0, 1e-12);
    ASSERT_EQ(s.orientation_mode, OrientationMode::tool_axis_only);
  }
}

TEST(DrillingTask, SampleCountMatchesDuration) {
  const auto wps = drilling_waypoints(default_drilling_params());
  for (double dt : {0.01, 0.1}) {
    const ReferenceTrajectory traj = resample(wps, dt);
    const auto expected = static_cast<std::size_t>(std::ceil(wps.back().time / dt - 1e-9)) + 1;
    EXPECT_EQ(traj.size(), expected);
    EXPECT_DOUBLE_EQ(traj.samples.back().time, wps.back().time);
    EXPECT_TRUE(traj.samples.back().pose.position.isApprox(wps.back().pose.position));
  }
}

TEST(DrillingTask, SegmentsAreLabelled) {
  const ReferenceTrajectory traj = drilling_task(default_drilling_params(), 0.1);
  int in = 0, out = 0, transfer = 0;
  for (const auto& s : traj.samples) {
    in += s.segment == SegmentKind::drill_in;
    out += s.segment == SegmentKind::drill_out;
    transfer += s.segment == SegmentKind::transfer;
    if (s.pose.position.x() < -1.5 + 1e-9) {
      ASSERT_NE(s.segment, SegmentKind::transfer);
    }
  }
  EXPECT_GT(in, 0);
  EXPECT_GT(out, 0);
  EXPECT_GT(transfer, 0);
}

TEST(DrillingTask, JsonRoundTripAndMalformedInput) {
  DrillingTaskParams p = default_drilling_params();
  p.contact_force = 15.0;
  const DrillingTaskParams back = task_from_json(task_to_json(p));
  EXPECT_EQ(task_to_json(back), task_to_json(p));
  EXPECT_THROW(task_from_json(nlohmann::json{{"holes", "nope"}}), ValidationError);
  EXPECT_THROW(task_from_json(nlohmann::json{{"holes", {{1.0, 2.0}}}}), ValidationError);
  EXPECT_THROW(task_from_json(nlohmann::json::object()), ValidationError);
}

TEST(Resample, TwoWaypoints) {
  const Quat a = Quat::Identity();
  const Quat b(Eigen::AngleAxisd(1.0, Vec3::UnitZ()));
  const std::vector<Waypoint> wps{{EePose{Vec3(0, 0, 0), a}, 0.0}, {EePose{Vec3(1, 2, 3), b}, 1.0}};
  const ReferenceTrajectory traj = resample(wps, 0.01);
  ASSERT_EQ(traj.size(), 101u);
  EXPECT_TRUE(traj[50].pose.position.isApprox(Vec3(0.5, 1.0, 1.5), 1e-12));
  EXPECT_NEAR(Eigen::AngleAxisd(traj[50].pose.orientation).angle(), 0.5, 1e-12);
  EXPECT_TRUE(traj[0].linear_velocity.isApprox(Vec3(1, 2, 3), 1e-9));
  EXPECT_TRUE(traj[0].angular_velocity.isApprox(Vec3(0, 0, 1), 1e-9));
}

TEST(Resample, ConstantTrajectory) {
  const EePose p{Vec3(0.3, -0.2, 0.9), Quat(Eigen::AngleAxisd(0.4, Vec3::UnitY()))};
  const ReferenceTrajectory traj = hold(p, 2.0, 0.01, OrientationMode::full);
  ASSERT_EQ(traj.size(), 201u);
  for (const auto& s : traj.samples) {
    ASSERT_TRUE(s.pose.position.isApprox(p.position, 1e-15));
    ASSERT_TRUE(s.pose.orientation.isApprox(p.orientation, 1e-15));
    ASSERT_LT(s.linear_velocity.norm() + s.angular_velocity.norm(), 1e-12);
  }
}

TEST(Resample, RejectsBadInput) {
  const EePose p{Vec3::Zero(), Quat::Identity()};
  EXPECT_THROW(resample({{p, 0.0}, {p, 0.0}}, 0.01), std::invalid_argument);
  EXPECT_THROW(resample({{p, 0.0}, {p, 1.0}}, 0.0), std::invalid_argument);
  EXPECT_THROW(resample({}, 0.01), std::invalid_argument);
}

TEST(Resample, TrajectoryCsv) {
  std::ostringstream s;
  write_trajectory_csv(s, drilling_task(default_drilling_params(), 0.1));
  std::istringstream in(s.str());
  std::string header, first;
  std::getline(in, header);
  std::getline(in, first);
  EXPECT_EQ(header, "t,x,y,z,qw,qx,qy,qz,segment");
  EXPECT_EQ(first.substr(0, 16), "0,-1.45,0.15,0.4");
}

// ------------------------------------------------------------------ IK

TEST(InverseKinematics, FixedPointTakesNoIterations) {
  const KinematicChain chain = six_dof_chain();
  std::mt19937_64 rng(51);
  for (int trial = 0; trial < 20; ++trial) {
    const VecX q = random_q(rng, chain);
    const IkResult r = ik_solve(chain, pose_at(chain, q), q, OrientationMode::full);
    EXPECT_TRUE(r.converged);
    EXPECT_EQ(r.iterations, 0);
    EXPECT_EQ(r.q, q);
  }
}

TEST(InverseKinematics, UnreachableTargetFails) {
  const KinematicChain chain = six_dof_chain();
  const EePose far{Vec3(10, 0, 1), Quat::Identity()};
  const IkResult r = ik_solve(chain, far, VecX::Zero(chain.dof), OrientationMode::full);
  EXPECT_FALSE(r.converged);
  EXPECT_GT(r.position_error, 5.0);
  EXPECT_THROW(ik_solve(assemble(default_library(), MorphologyState{{7, 11}}, MountedPose{}), far, VecX(),
                        OrientationMode::full),
               DimensionError);
}

TEST(InverseKinematics, ToolAxisModeIgnoresTwist) {
  const KinematicChain chain = six_dof_chain();
  const VecX q = vec({0.3, -0.6, 0.8, 0.2, -0.4, 0.5});
  EePose target = pose_at(chain, q);
  target.orientation = target.orientation * Quat(Eigen::AngleAxisd(0.7, Vec3::UnitZ()));
  const IkResult axis_only = ik_solve(chain, target, q, OrientationMode::tool_axis_only);
  EXPECT_TRUE(axis_only.converged);
  EXPECT_EQ(axis_only.iterations, 0);
  const IkResult full = ik_solve(chain, target, q, OrientationMode::full);
  EXPECT_GT(full.iterations, 0);
}

TEST(InverseKinematics, ConvergesFromNearbyStarts) {
  const KinematicChain chain = six_dof_chain();
  std::mt19937_64 rng(52);
  std::normal_distribution<double> g(0.0, 0.2);
  int converged = 0;
  const int trials = 200;
  for (int trial = 0; trial < trials; ++trial) {
    const VecX q = regular_configuration(rng, chain);
    VecX q0 = q;
    for (int j = 0; j < chain.dof; ++j) q0[j] += g(rng);
    const EePose target = pose_at(chain, q);
    const IkResult r = ik_solve(chain, target, q0, OrientationMode::full);
    if (!r.converged) continue;
    ++converged;
    const EePose reached = pose_at(chain, r.q);
    ASSERT_LT((reached.position - target.position).norm(), 1e-4);
    ASSERT_TRUE((r.q.array() >= chain.q_lower.array()).all() && (r.q.array() <= chain.q_upper.array()).all());
  }
  EXPECT_GE(converged, trials * 9 / 10);
}

TEST(WarmStarts, DistinctSolutionsForRedundantChain) {
  const KinematicChain chain = six_dof_chain();
  const EePose target = pose_at(chain, vec({0.3, -0.6, 0.8, 0.2, -0.4, 0.5}));
  const ReferenceTrajectory traj = hold(target, 1.0, 0.1, OrientationMode::tool_axis_only);
  const WarmStartSet ws = warm_starts(chain, traj, 5, 7);
  ASSERT_EQ(ws.solutions.size(), 5u);
  for (std::size_t a = 0; a < ws.solutions.size(); ++a) {
    EXPECT_LT((pose_at(chain, ws.solutions[a]).position - target.position).norm(), 1e-4);
    for (std::size_t b = a + 1; b < ws.solutions.size(); ++b)
      EXPECT_GE((ws.solutions[a] - ws.solutions[b]).norm(), 0.05);
  }
  EXPECT_LE(ws.attempts, 20);

  const WarmStartSet again = warm_starts(chain, traj, 5, 7);
  ASSERT_EQ(again.solutions.size(), ws.solutions.size());
  for (std::size_t a = 0; a < ws.solutions.size(); ++a) EXPECT_EQ(again.solutions[a], ws.solutions[a]);
}

TEST(WarmStarts, FailureModes) {
  const KinematicChain chain = six_dof_chain();
  const ReferenceTrajectory far = hold(EePose{Vec3(10, 0, 1), Quat::Identity()}, 1.0, 0.1, OrientationMode::full);
  const WarmStartSet ws = warm_starts(chain, far, 5, 1);
  EXPECT_TRUE(ws.solutions.empty());
  EXPECT_GT(ws.best_position_error, 5.0);
  const KinematicChain passive = assemble(default_library(), MorphologyState{{7, 11}}, MountedPose{});
  EXPECT_TRUE(warm_starts(passive, far, 5, 1).solutions.empty());
  EXPECT_THROW(warm_starts(chain, far, 0, 1), std::invalid_argument);
}

// ------------------------------------------------------------------ MPC

TEST(Mpc, AtRestOnReference) {
  const KinematicChain chain = six_dof_chain();
  const VecX q = vec({0.3, -0.6, 0.8, 0.2, -0.4, 0.5});
  const ControllerConfig cfg;
  const ReferenceTrajectory traj = hold(pose_at(chain, q), 1.0, cfg.dt, OrientationMode::full);
  const MpcCommand cmd = mpc_step(chain, q, VecX::Zero(6), std::span(traj.samples).first(10), cfg);
  EXPECT_TRUE(cmd.solver_ok);
  EXPECT_LE(cmd.u.norm(), 1e-6);
}

TEST(Mpc, OffsetProducesCorrectiveMotion) {
  const KinematicChain chain = six_dof_chain();
  const VecX q = vec({0.3, -0.6, 0.8, 0.2, -0.4, 0.5});
  const ControllerConfig cfg;
  for (int axis = 0; axis < 3; ++axis) {
    EePose target = pose_at(chain, q);
    target.position[axis] += 0.01;
    const ReferenceTrajectory traj = hold(target, 1.0, cfg.dt, OrientationMode::full);
    const MpcCommand cmd = mpc_step(chain, q, VecX::Zero(6), std::span(traj.samples).first(10), cfg);
    const Vec3 v = jacobian(chain, q).topRows<3>() * cmd.u;
    EXPECT_GT(v[axis], 0.0) << "axis " << axis;
  }
}

TEST(Mpc, CommandsRespectVelocityCap) {
  const KinematicChain chain = six_dof_chain();
  std::mt19937_64 rng(53);
  std::normal_distribution<double> g;
  const ControllerConfig cfg;
  for (int trial = 0; trial < 200; ++trial) {
    const VecX q = random_q(rng, chain);
    EePose target = pose_at(chain, random_q(rng, chain));
    const ReferenceTrajectory traj = hold(target, 1.0, cfg.dt, OrientationMode::full);
    VecX qd(6);
    for (int j = 0; j < 6; ++j) qd[j] = g(rng);
    const MpcCommand cmd = mpc_step(chain, q, qd, std::span(traj.samples).first(10), cfg);
    ASSERT_LE(cmd.u.cwiseAbs().maxCoeff(), 2.0 + 1e-12);
    const VecX next = q + cmd.u * cfg.dt;
    // the command never drives a joint out of its limits within the horizon
    ASSERT_TRUE((next.array() >= chain.q_lower.array() - 1e-12).all());
    ASSERT_TRUE((next.array() <= chain.q_upper.array() + 1e-12).all());
  }
}

TEST(Mpc, InvariantToCommonGainScale) {
  const KinematicChain chain = six_dof_chain();
  const VecX q = vec({0.3, -0.6, 0.8, 0.2, -0.4, 0.5});
  EePose target = pose_at(chain, q);
  target.position += Vec3(0.002, -0.001, 0.001);
  const ReferenceTrajectory traj = hold(target, 1.0, 0.01, OrientationMode::full);
  const ControllerConfig base;
  ControllerConfig scaled = base;
  scaled.position_gain *= 7.0;
  scaled.orientation_gain *= 7.0;
  scaled.regularizer *= 7.0;
  const auto window = std::span(traj.samples).first(10);
  const VecX qd = vec({0.1, 0.0, -0.1, 0.05, 0.0, 0.02});
  const VecX a = mpc_step(chain, q, qd, window, base).u;
  const VecX b = mpc_step(chain, q, qd, window, scaled).u;
  EXPECT_LT((a - b).norm(), 1e-9 * std::max(1.0, a.norm()));
}

TEST(Mpc, WindowMustMatchHorizon) {
  const KinematicChain chain = six_dof_chain();
  const ReferenceTrajectory traj = hold(pose_at(chain, VecX::Zero(6)), 1.0, 0.01, OrientationMode::full);
  EXPECT_THROW(mpc_step(chain, VecX::Zero(6), VecX::Zero(6), std::span(traj.samples).first(4), ControllerConfig{}),
               DimensionError);
}

TEST(Mpc, ConfigValidation) {
  ControllerConfig c;
  c.horizon = 0;
  EXPECT_THROW(validate_controller_config(c), ValidationError);
  c = ControllerConfig{};
  c.position_gain = -1.0;
  EXPECT_THROW(validate_controller_config(c), ValidationError);
}

TEST(InternalModel, QuaternionStaysUnit) {
  std::mt19937_64 rng(54);
  std::normal_distribution<double> g;
  Quat o = Quat::Identity();
  for (int i = 0; i < 10000; ++i) {
    o = propagate_quaternion(o, Vec3(g(rng), g(rng), g(rng)), 0.01);
    ASSERT_NEAR(o.norm(), 1.0, 1e-12);
  }
}

TEST(InternalModel, ConstantRatePropagation) {
  // first-order step then renormalization: the rotation angle is 2 atan(|w| dt / 2)
  const Quat o = propagate_quaternion(Quat::Identity(), Vec3(0, 0, 2.0), 0.25);
  const Eigen::AngleAxisd aa(o);
  EXPECT_NEAR(aa.angle(), 2.0 * std::atan(0.25), 1e-12);
  EXPECT_TRUE(aa.axis().isApprox(Vec3::UnitZ(), 1e-12));
  InternalState x;
  Jacobian j = Jacobian::Zero(6, 1);
  j(0, 0) = 1.0;
  const InternalState next = propagate(x, j, Vec6::Zero(), vec({0.5}), vec({0.0}), 0.1);
  EXPECT_TRUE(next.linear_velocity.isApprox(Vec3(0.5, 0, 0)));
  EXPECT_TRUE(next.position.isApprox(Vec3(0.05, 0, 0)));
}

// ------------------------------------------------------------------ rollout

TEST(Rollout, RegulatesToConstantReference) {
  const KinematicChain chain = six_dof_chain();
  std::mt19937_64 rng(55);
  std::normal_distribution<double> g(0.0, 0.05);
  const ControllerConfig cfg;
  for (int trial = 0; trial < 10; ++trial) {
    const VecX q = regular_configuration(rng, chain);
    VecX q0 = q;
    for (int j = 0; j < chain.dof; ++j) q0[j] += g(rng);
    const ReferenceTrajectory traj = hold(pose_at(chain, q), 1.0, cfg.dt, OrientationMode::full);
    const Rollout r = rollout(chain, q0, traj, cfg);
    ASSERT_EQ(r.size(), 101u);
    EXPECT_LT(r.position_residual.back(), 1e-6) << "trial " << trial;
    for (const auto& u : r.u) ASSERT_LE(u.cwiseAbs().maxCoeff(), 2.0 + 1e-12);
  }
}

TEST(Rollout, LoopCountMatchesTrajectory) {
  const KinematicChain chain = six_dof_chain();
  const VecX q = vec({0.3, -0.6, 0.8, 0.2, -0.4, 0.5});
  const ReferenceTrajectory traj = hold(pose_at(chain, q), 60.0, 0.01, OrientationMode::full);
  const Rollout r = rollout(chain, q, traj, ControllerConfig{});
  EXPECT_EQ(r.size(), 6001u);
  EXPECT_FALSE(r.any_flag(kSolverFailure));
  EXPECT_LT(*std::max_element(r.position_residual.begin(), r.position_residual.end()), 1e-9);
}

TEST(Rollout, TracksDrillingTask) {
  const ModuleLibrary lib = default_library();
  const KinematicChain chain = assemble(lib, MorphologyState{{1, 6, 8, 2, 3, 4, 11}}, MountedPose{-0.6, 0.0, kPi / 2});
  const ReferenceTrajectory traj = drilling_task(default_drilling_params(), 0.01);
  const WarmStartSet ws = warm_starts(chain, traj, 5, 3);
  ASSERT_FALSE(ws.solutions.empty());
  double best = std::numeric_limits<double>::infinity();
  for (const VecX& q0 : ws.solutions) {
    const Rollout r = rollout(chain, q0, traj, ControllerConfig{});
    double mean_sq = 0.0;
    for (double e : r.position_residual) mean_sq += e * e;
    best = std::min(best, mean_sq / static_cast<double>(r.size()));
  }
  EXPECT_LT(best, 1e-6);
}

TEST(Rollout, CsvLayout) {
  const KinematicChain chain = assemble(default_library(), MorphologyState{{1, 2, 3, 11}}, MountedPose{});
  const VecX q = vec({0.1, 0.2, 0.3});
  const Rollout r = rollout(chain, q, hold(pose_at(chain, q), 0.05, 0.01, OrientationMode::full), ControllerConfig{});
  std::ostringstream s;
  write_rollout_csv(s, r);
  const std::string out = s.str();
  EXPECT_EQ(out.substr(0, out.find('\n')), "t,q0,q1,q2,u0,u1,u2,position_residual,orientation_residual,flags");
  EXPECT_EQ(std::count(out.begin(), out.end(), '\n'), 7);
}
