#pragma once

#include <vector>

#include <json.hpp>

#include "morphopt/geometry.hpp"
#include "morphopt/module_library.hpp"
#include "morphopt/morphology.hpp"

namespace morphopt {

/// One assembled module: input flange -> pre -> joint rotation -> post -> output flange.
struct ChainSegment {
  int module_id = 0;
  ModuleKind kind = ModuleKind::link_straight;
  Transform pre = Transform::Identity();
  Transform post = Transform::Identity();
  bool actuated = false;
  Vec3 axis = Vec3::UnitZ();  // local, after `pre`
  double mass = 0.0;
  Vec3 com = Vec3::Zero();  // body frame (after the joint)
  Mat3 inertia = Mat3::Zero();
  double capsule_radius = 0.0;
};

struct KinematicChain {
  Transform base = Transform::Identity();
  MountedPose pose;
  double platform_height = 0.5;
  std::vector<ChainSegment> segments;
  int dof = 0;
  VecX q_lower;
  VecX q_upper;
  VecX qd_max;
  VecX tau_max;

  /// Chains below three joints cannot follow a five-dimensional task.
  bool degenerate() const { return dof < 3; }
  bool empty() const { return segments.empty(); }
};

inline ChainSegment make_segment(const ModuleSpec& spec) {
  ChainSegment s;
  s.module_id = spec.id;
  s.kind = spec.kind;
  s.mass = spec.mass;
  s.com = spec.com_offset;
  s.inertia = spec.inertia;
  s.capsule_radius = spec.capsule_radius;
  const double len = spec.length;
  switch (spec.kind) {
    case ModuleKind::joint_straight:
      s.actuated = true;
      s.axis = Vec3::UnitZ();
      s.post = translation_z(len);
      break;
    case ModuleKind::joint_elbow:
      s.actuated = true;
      s.axis = Vec3::UnitY();
      s.pre = translation_z(0.5 * len);
      s.post = translation_z(0.5 * len);
      break;
    case ModuleKind::link_straight:
    case ModuleKind::end_effector:
      s.post = translation_z(len);
      break;
    case ModuleKind::link_elbow:
      s.post = translation_z(0.5 * len) * rotation(Vec3::UnitY(), 0.5 * kPi) * translation_z(0.5 * len);
      break;
  }
  return s;
}

/// Builds the serial chain for `morphology` mounted at `pose`.  The base frame
/// sits on top of the platform at (x, y, platform_height) with yaw theta.  An
/// end effector with no body modules in front of it is not mounted, so that
/// morphology yields an empty chain.
inline KinematicChain assemble(const ModuleLibrary& library, const MorphologyState& morphology,
                               const MountedPose& pose, double platform_height = 0.5) {
  validate_morphology(morphology, library.end_effector_id());
  KinematicChain chain;
  chain.pose = pose;
  chain.platform_height = platform_height;
  chain.base = planar_transform(pose.x, pose.y, pose.theta, platform_height);
  if (morphology.body_count() == 0) {
    chain.q_lower.resize(0);
    chain.q_upper.resize(0);
    chain.qd_max.resize(0);
    chain.tau_max.resize(0);
    return chain;
  }
  std::vector<double> lo, hi, vel, tau;
  for (int id : morphology.sequence) {
    const ModuleSpec& spec = library.at(id);
    chain.segments.push_back(make_segment(spec));
    if (is_joint(spec.kind)) {
      lo.push_back(spec.joint_position_limits->lower);
      hi.push_back(spec.joint_position_limits->upper);
      vel.push_back(*spec.joint_velocity_limit);
      tau.push_back(*spec.torque_limit);
    }
  }
  chain.dof = static_cast<int>(lo.size());
  auto to_vec = [](const std::vector<double>& v) {
    return VecX(Eigen::Map<const VecX>(v.data(), static_cast<Eigen::Index>(v.size())));
  };
  chain.q_lower = to_vec(lo);
  chain.q_upper = to_vec(hi);
  chain.qd_max = to_vec(vel);
  chain.tau_max = to_vec(tau);
  return chain;
}

/// World frames of every module for one configuration.
struct ChainFrames {
  std::vector<Transform> inputs;  // input flange of each module
  std::vector<Transform> bodies;  // frame after the joint (= input * pre for passive modules)
  Transform tip = Transform::Identity();
};

inline void check_dof(const KinematicChain& chain, const VecX& q) {
  if (q.size() != chain.dof)
    throw DimensionError("joint vector has " + std::to_string(q.size()) + " entries, chain has " +
                         std::to_string(chain.dof) + " dof");
}

inline ChainFrames chain_frames(const KinematicChain& chain, const VecX& q) {
  check_dof(chain, q);
  ChainFrames f;
  f.inputs.reserve(chain.segments.size());
  f.bodies.reserve(chain.segments.size());
  Transform t = chain.base;
  int j = 0;
  for (const auto& seg : chain.segments) {
    f.inputs.push_back(t);
    Transform body = t * seg.pre;
    if (seg.actuated) body = body * rotation(seg.axis, q[j++]);
    f.bodies.push_back(body);
    t = body * seg.post;
  }
  f.tip = t;
  return f;
}

struct FkResult {
  EePose ee;
  std::vector<Transform> module_frames;
  Transform tip = Transform::Identity();
};

inline FkResult forward_kinematics(const KinematicChain& chain, const VecX& q) {
  ChainFrames frames = chain_frames(chain, q);
  FkResult out;
  out.tip = frames.tip;
  out.ee.position = frames.tip.translation();
  out.ee.orientation = quat_from_transform(frames.tip);
  out.module_frames = std::move(frames.inputs);
  return out;
}

/**
 * Tip transform and geometric Jacobian in one sweep.  Column j maps the rate
 * of joint j to [linear; angular] tip velocity in the world frame.  This is
 * the hot path of the controller; it does not allocate beyond `jac`.
 */
inline void tip_and_jacobian(const KinematicChain& chain, const VecX& q, Transform& tip, Jacobian& jac) {
  check_dof(chain, q);
  jac.resize(6, chain.dof);
  Eigen::Matrix<double, 3, Eigen::Dynamic> axes(3, chain.dof);
  Eigen::Matrix<double, 3, Eigen::Dynamic> origins(3, chain.dof);
  Transform t = chain.base;
  int j = 0;
  for (const auto& seg : chain.segments) {
    Transform body = t * seg.pre;
    if (seg.actuated) {
      axes.col(j) = body.linear() * seg.axis;
      origins.col(j) = body.translation();
      body = body * rotation(seg.axis, q[j]);
      ++j;
    }
    t = body * seg.post;
  }
  tip = t;
  const Vec3 p = tip.translation();
  for (int c = 0; c < chain.dof; ++c) {
    const Vec3 z = axes.col(c);
    jac.block<3, 1>(0, c) = z.cross(p - Vec3(origins.col(c)));
    jac.block<3, 1>(3, c) = z;
  }
}

inline Jacobian jacobian(const KinematicChain& chain, const VecX& q) {
  if (chain.dof == 0) throw DimensionError("jacobian of a chain without joints");
  Transform tip;
  Jacobian jac;
  tip_and_jacobian(chain, q, tip, jac);
  return jac;
}

/// det(J J^T), without the square root.  Zero whenever d < 6.
inline double manipulability(const Jacobian& jac) {
  if (jac.cols() < 6) return 0.0;
  const Mat6 jjt = jac * jac.transpose();
  return std::max(0.0, jjt.determinant());
}

/// Upper bound on the distance from the base origin to the tip.
inline double reach_bound(const KinematicChain& chain) {
  double total = 0.0;
  for (const auto& seg : chain.segments) total += seg.pre.translation().norm() + seg.post.translation().norm();
  return total;
}

inline VecX clamp_to_limits(const KinematicChain& chain, const VecX& q) {
  return q.cwiseMax(chain.q_lower).cwiseMin(chain.q_upper);
}

inline nlohmann::json chain_to_json(const KinematicChain& chain) {
  auto tf_json = [](const Transform& t) {
    nlohmann::json rows = nlohmann::json::array();
    for (int r = 0; r < 4; ++r) rows.push_back({t.matrix()(r, 0), t.matrix()(r, 1), t.matrix()(r, 2), t.matrix()(r, 3)});
    return rows;
  };
  nlohmann::json segs = nlohmann::json::array();
  for (const auto& s : chain.segments) {
    nlohmann::json js{{"module_id", s.module_id},
                      {"kind", std::string(to_string(s.kind))},
                      {"pre", tf_json(s.pre)},
                      {"post", tf_json(s.post)},
                      {"capsule_radius", s.capsule_radius}};
    if (s.actuated)
      js["axis"] = {s.axis.x(), s.axis.y(), s.axis.z()};
    else
      js["axis"] = nullptr;
    segs.push_back(js);
  }
  return {{"base", tf_json(chain.base)}, {"dof", chain.dof}, {"segments", segs}};
}

}  // namespace morphopt
