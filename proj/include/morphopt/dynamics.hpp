#pragma once

#include <cmath>
#include <optional>
#include <ostream>
#include <vector>

#include "morphopt/kinematics.hpp"

namespace morphopt {

/**
 * Recursive Newton-Euler inverse dynamics in world coordinates.
 *
 * Returns tau = M(q) qdd + B(q, qd) qd + g(q) + J^T(q) f_ext where `f_ext` is
 * the wrench [force; moment] the tool exerts on the environment, taken at the
 * tip.  Every module body rides on the frame after its own joint.
 */
inline VecX inverse_dynamics(const KinematicChain& chain, const VecX& q, const VecX& qd, const VecX& qdd,
                             const Vec6& f_ext, const Vec3& gravity = Vec3(0.0, 0.0, -kGravity)) {
  if (chain.dof == 0) throw DimensionError("inverse dynamics of a chain without joints");
  check_dof(chain, q);
  check_dof(chain, qd);
  check_dof(chain, qdd);

  const std::size_t n = chain.segments.size();
  std::vector<Vec3> force(n), moment(n), com(n), axis(n), origin(n);

  Vec3 omega = Vec3::Zero();
  Vec3 alpha = Vec3::Zero();
  Vec3 point = chain.base.translation();
  Vec3 accel = Vec3::Zero();
  Transform t = chain.base;
  int j = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const ChainSegment& seg = chain.segments[i];
    Transform body = t * seg.pre;
    const Vec3 o = body.translation();
    const Vec3 r = o - point;
    accel += alpha.cross(r) + omega.cross(omega.cross(r));
    point = o;
    if (seg.actuated) {
      const Vec3 z = body.linear() * seg.axis;
      axis[i] = z;
      origin[i] = o;
      alpha += z * qdd[j] + omega.cross(z * qd[j]);
      omega += z * qd[j];
      body = body * rotation(seg.axis, q[j]);
      ++j;
    }
    const Vec3 c = body * seg.com;
    const Vec3 rc = c - point;
    const Vec3 accel_c = accel + alpha.cross(rc) + omega.cross(omega.cross(rc));
    const Mat3 rot = body.linear();
    const Mat3 inertia_w = rot * seg.inertia * rot.transpose();
    com[i] = c;
    force[i] = seg.mass * (accel_c - gravity);
    moment[i] = inertia_w * alpha + omega.cross(inertia_w * omega);
    t = body * seg.post;
  }

  const Vec3 ref = t.translation();
  Vec3 f = f_ext.head<3>();
  Vec3 m = f_ext.tail<3>();
  VecX tau(chain.dof);
  j = chain.dof - 1;
  for (std::size_t k = n; k-- > 0;) {
    m += (com[k] - ref).cross(force[k]) + moment[k];
    f += force[k];
    if (chain.segments[k].actuated) {
      tau[j--] = axis[k].dot(m + (ref - origin[k]).cross(f));
    }
  }
  return tau;
}

/// Per-loop joint torques of one rollout together with the joint ratings.
struct TorqueTrajectory {
  std::vector<VecX> torques;
  VecX limits;
};

/// Mean over loops of the summed absolute joint torques.
inline double effort_metric(const TorqueTrajectory& traj) {
  if (traj.torques.empty()) throw std::invalid_argument("effort of an empty torque trajectory");
  double total = 0.0;
  for (const auto& tau : traj.torques) total += tau.cwiseAbs().sum();
  return total / static_cast<double>(traj.torques.size());
}

struct TorqueCheck {
  bool feasible = true;
  std::optional<std::size_t> first_violation;  // loop index
  int joint = -1;
};

/// Strict per-sample bound |tau_ij| < tau_max_j.
inline TorqueCheck torque_feasible(const TorqueTrajectory& traj) {
  for (std::size_t i = 0; i < traj.torques.size(); ++i) {
    const VecX& tau = traj.torques[i];
    if (tau.size() != traj.limits.size()) throw DimensionError("torque vector and limit sizes differ");
    for (Eigen::Index j = 0; j < tau.size(); ++j) {
      if (!(std::abs(tau[j]) < traj.limits[j])) return {false, i, static_cast<int>(j)};
    }
  }
  return {};
}

struct JointDerivatives {
  std::vector<VecX> velocity;
  std::vector<VecX> acceleration;
};

/**
 * Finite-difference joint rates: central differences inside, second-order
 * one-sided stencils at both ends (exact for quadratics).
 */
inline JointDerivatives differentiate_joint_trajectory(const std::vector<VecX>& q, double dt) {
  const std::size_t n = q.size();
  if (n < 3) throw std::invalid_argument("need at least three samples to differentiate");
  if (!(dt > 0.0)) throw std::invalid_argument("dt must be positive");
  JointDerivatives d;
  d.velocity.resize(n);
  d.acceleration.resize(n);
  const double inv2 = 1.0 / (2.0 * dt);
  const double inv_sq = 1.0 / (dt * dt);
  for (std::size_t i = 1; i + 1 < n; ++i) {
    d.velocity[i] = (q[i + 1] - q[i - 1]) * inv2;
    d.acceleration[i] = (q[i + 1] - 2.0 * q[i] + q[i - 1]) * inv_sq;
  }
  d.velocity[0] = (-3.0 * q[0] + 4.0 * q[1] - q[2]) * inv2;
  d.velocity[n - 1] = (3.0 * q[n - 1] - 4.0 * q[n - 2] + q[n - 3]) * inv2;
  if (n >= 4) {
    d.acceleration[0] = (2.0 * q[0] - 5.0 * q[1] + 4.0 * q[2] - q[3]) * inv_sq;
    d.acceleration[n - 1] = (2.0 * q[n - 1] - 5.0 * q[n - 2] + 4.0 * q[n - 3] - q[n - 4]) * inv_sq;
  } else {
    d.acceleration[0] = d.acceleration[1];
    d.acceleration[2] = d.acceleration[1];
  }
  return d;
}

inline void write_torque_csv(std::ostream& out, const TorqueTrajectory& traj) {
  out << "loop";
  for (Eigen::Index j = 0; j < traj.limits.size(); ++j) out << ",tau" << j;
  out << '\n';
  for (std::size_t i = 0; i < traj.torques.size(); ++i) {
    out << i;
    for (Eigen::Index j = 0; j < traj.torques[i].size(); ++j) out << ',' << traj.torques[i][j];
    out << '\n';
  }
}

}  // namespace morphopt
