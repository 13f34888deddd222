#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <ostream>
#include <random>
#include <span>
#include <vector>

#include "morphopt/box_qp.hpp"
#include "morphopt/kinematics.hpp"
#include "morphopt/task.hpp"

namespace morphopt {

struct ControllerConfig {
  double position_gain = 10.0;
  double orientation_gain = 4.0;
  double regularizer = 1e-4;
  int horizon = 10;
  double dt = 0.01;
  double qp_tolerance = 1e-8;
};

inline void validate_controller_config(const ControllerConfig& c) {
  if (c.position_gain < 0.0 || c.orientation_gain < 0.0 || c.regularizer < 0.0)
    throw ValidationError("controller gains must be non-negative");
  if (c.horizon < 1) throw ValidationError("controller horizon must be at least 1");
  if (!(c.dt > 0.0)) throw ValidationError("controller dt must be positive");
}

// ------------------------------------------------------------------ IK

struct IkOptions {
  double position_tolerance = 1e-4;
  double orientation_tolerance = 1e-3;
  int max_iterations = 500;
  double damping = 0.02;
  double max_step = 0.5;
};

struct IkResult {
  VecX q;
  bool converged = false;
  int iterations = 0;
  double position_error = std::numeric_limits<double>::infinity();
  double orientation_error = std::numeric_limits<double>::infinity();
};

/// Stacked [position; orientation] task error and its Jacobian.
struct TaskError {
  Vec6 error;
  Jacobian jac;
};

inline TaskError task_error(const Transform& tip, const Jacobian& jac, const EePose& target, OrientationMode mode) {
  TaskError t;
  const Quat o = quat_from_transform(tip);
  t.error.head<3>() = tip.translation() - target.position;
  t.error.tail<3>() = mask_orientation(orientation_error(target.orientation, o), mode);
  Mat3 g = orientation_error_jacobian(target.orientation, o);
  if (mode == OrientationMode::tool_axis_only) g.row(2).setZero();
  t.jac.resize(6, jac.cols());
  t.jac.topRows<3>() = jac.topRows<3>();
  t.jac.bottomRows<3>() = g * jac.bottomRows<3>();
  return t;
}

/**
 * Damped least-squares IK from q_init.  Steps are clamped to the joint limits.
 * In tool-axis-only mode the twist about the tool z axis is not constrained,
 * leaving a five-dimensional residual.
 */
inline IkResult ik_solve(const KinematicChain& chain, const EePose& target, const VecX& q_init, OrientationMode mode,
                         const IkOptions& opts = {}) {
  if (chain.dof < 1) throw DimensionError("IK needs at least one joint");
  IkResult res;
  res.q = clamp_to_limits(chain, q_init);
  Transform tip;
  Jacobian jac;
  const double lambda2 = opts.damping * opts.damping;
  for (int it = 0; it <= opts.max_iterations; ++it) {
    tip_and_jacobian(chain, res.q, tip, jac);
    const TaskError te = task_error(tip, jac, target, mode);
    res.position_error = te.error.head<3>().norm();
    res.orientation_error = te.error.tail<3>().norm();
    res.iterations = it;
    if (res.position_error < opts.position_tolerance && res.orientation_error < opts.orientation_tolerance) {
      res.converged = true;
      return res;
    }
    if (it == opts.max_iterations) break;
    const Mat6 jjt = te.jac * te.jac.transpose() + lambda2 * Mat6::Identity();
    VecX step = -te.jac.transpose() * jjt.ldlt().solve(te.error);
    const double norm = step.norm();
    if (norm > opts.max_step) step *= opts.max_step / norm;
    const VecX next = clamp_to_limits(chain, res.q + step);
    if ((next - res.q).norm() < 1e-12) break;
    res.q = next;
  }
  return res;
}

struct WarmStartSet {
  std::vector<VecX> solutions;
  /// Smallest position error seen over all attempts (0 once one converged).
  double best_position_error = std::numeric_limits<double>::infinity();
  int attempts = 0;
};

/**
 * Up to k distinct IK solutions for the first reference pose, each started
 * from a uniformly random configuration.  Solutions closer than
 * `min_separation` (rad, joint-space norm) to an earlier one are discarded and
 * re-seeded, within a budget of 4 k attempts.
 */
inline WarmStartSet warm_starts(const KinematicChain& chain, const ReferenceTrajectory& traj, int k,
                                std::uint64_t seed, const IkOptions& opts = {}, double min_separation = 0.05) {
  if (k < 1) throw std::invalid_argument("warm start count must be at least 1");
  WarmStartSet out;
  if (chain.dof < 1 || traj.size() == 0) return out;
  const ReferenceSample& first = traj[0];

  const double distance = (first.pose.position - chain.base.translation()).norm();
  const double reach = reach_bound(chain);
  if (distance > reach + opts.position_tolerance) {
    out.best_position_error = distance - reach;
    return out;
  }

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int budget = 4 * k;
  while (out.attempts < budget && static_cast<int>(out.solutions.size()) < k) {
    ++out.attempts;
    VecX q0(chain.dof);
    for (int j = 0; j < chain.dof; ++j) q0[j] = chain.q_lower[j] + unit(rng) * (chain.q_upper[j] - chain.q_lower[j]);
    const IkResult r = ik_solve(chain, first.pose, q0, first.orientation_mode, opts);
    out.best_position_error = std::min(out.best_position_error, r.position_error);
    if (!r.converged) continue;
    const bool duplicate = std::any_of(out.solutions.begin(), out.solutions.end(),
                                       [&](const VecX& s) { return (s - r.q).norm() < min_separation; });
    if (!duplicate) out.solutions.push_back(r.q);
  }
  if (!out.solutions.empty()) out.best_position_error = 0.0;
  return out;
}

// ------------------------------------------------------------------ internal model

/// X = [p, o, p_dot, omega] in the world frame.
struct InternalState {
  Vec3 position = Vec3::Zero();
  Quat orientation = Quat::Identity();
  Vec3 linear_velocity = Vec3::Zero();
  Vec3 angular_velocity = Vec3::Zero();
};

/**
 * One step of the discretized end-effector model with a frozen Jacobian.
 * Velocities are updated first from the change in joint-rate command plus the
 * J_dot q_dot drift; pose is then integrated with the updated velocity.
 */
inline InternalState propagate(const InternalState& x, const Jacobian& jac, const Vec6& drift, const VecX& command,
                               const VecX& previous_command, double dt) {
  InternalState next;
  Vec6 v;
  v << x.linear_velocity, x.angular_velocity;
  v += drift * dt + jac * (command - previous_command);
  next.linear_velocity = v.head<3>();
  next.angular_velocity = v.tail<3>();
  next.position = x.position + next.linear_velocity * dt;
  next.orientation = propagate_quaternion(x.orientation, next.angular_velocity, dt);
  return next;
}

// ------------------------------------------------------------------ MPC

struct MpcCommand {
  VecX u;
  bool solver_ok = true;
  bool constrained = false;  // the box-constrained solver was needed
  std::vector<InternalState> prediction;
};

namespace detail {

/// Per-joint command bounds: velocity cap intersected with the rate that
/// keeps every node of the horizon inside the position limits.
inline void command_bounds(const KinematicChain& chain, const VecX& q, const ControllerConfig& cfg, VecX& lo,
                           VecX& hi) {
  const double span = cfg.horizon * cfg.dt;
  lo = (-chain.qd_max).cwiseMax((chain.q_lower - q) / span);
  hi = chain.qd_max.cwiseMin((chain.q_upper - q) / span);
  for (Eigen::Index j = 0; j < lo.size(); ++j) {
    if (lo[j] > hi[j]) lo[j] = hi[j] = std::clamp(0.0, hi[j], lo[j]);
    lo[j] = std::min(lo[j], 0.0);
    hi[j] = std::max(hi[j], 0.0);
  }
}

}  // namespace detail

/**
 * Receding-horizon tracking step.
 *
 * Decision variables are joint-rate commands u_0..u_{H-1}.  With the Jacobian
 * frozen at q, the pose at node k+1 is linear in the cumulative command
 * S_k = u_0 + ... + u_k, so the unconstrained problem is block tridiagonal in
 * S and solved with a block Thomas sweep.  If that optimum leaves the command
 * box, the dense box-constrained QP in u is solved instead.  Returns u_0.
 */
inline MpcCommand mpc_step(const KinematicChain& chain, const Transform& tip, const Jacobian& jac, const VecX& q,
                           const VecX& qd_prev, std::span<const ReferenceSample> window, const ControllerConfig& cfg,
                           bool record_prediction = false) {
  const int d = chain.dof;
  const int horizon = cfg.horizon;
  if (static_cast<int>(window.size()) != horizon) throw DimensionError("reference window must match the horizon");
  const double dt = cfg.dt;
  MpcCommand out;

  Vec6 drift = Vec6::Zero();
  if (qd_prev.squaredNorm() > 0.0) {
    Transform tip2;
    Jacobian jac2;
    tip_and_jacobian(chain, q + qd_prev * dt, tip2, jac2);
    drift = (jac2 - jac) * qd_prev / dt;
  }

  const Vec3 p0 = tip.translation();
  const Quat o0 = quat_from_transform(tip);
  const double wp = std::sqrt(cfg.position_gain);
  const double wo = std::sqrt(cfg.orientation_gain);
  const double reg = cfg.regularizer;

  std::vector<Eigen::Matrix<double, 6, Eigen::Dynamic>> a(horizon);
  std::vector<Vec6> c(horizon);
  for (int k = 0; k < horizon; ++k) {
    const ReferenceSample& ref = window[static_cast<std::size_t>(k)];
    Mat3 g = orientation_error_jacobian(ref.pose.orientation, o0);
    if (ref.orientation_mode == OrientationMode::tool_axis_only) g.row(2).setZero();
    const Vec3 e0 = mask_orientation(orientation_error(ref.pose.orientation, o0), ref.orientation_mode);
    const Vec6 acc = drift * (dt * dt * 0.5 * (k + 1) * (k + 2));
    a[k].resize(6, d);
    a[k].topRows<3>() = wp * dt * jac.topRows<3>();
    a[k].bottomRows<3>() = wo * dt * g * jac.bottomRows<3>();
    c[k].head<3>() = wp * (p0 + acc.head<3>() - ref.pose.position);
    c[k].tail<3>() = wo * (e0 + g * acc.tail<3>());
  }

  // Block Thomas on the normal equations in S.
  const MatX identity = MatX::Identity(d, d);
  std::vector<MatX> pivot_inv(horizon);
  std::vector<VecX> rhs(horizon);
  for (int k = 0; k < horizon; ++k) {
    MatX diag = a[k].transpose() * a[k] + reg * (k + 1 < horizon ? 2.0 : 1.0) * identity;
    VecX r = -a[k].transpose() * c[k];
    if (k > 0) {
      diag -= reg * reg * pivot_inv[k - 1];
      r += reg * (pivot_inv[k - 1] * rhs[k - 1]);
    }
    Eigen::LLT<MatX> llt(diag);
    if (llt.info() != Eigen::Success) {
      out.u = VecX::Zero(d);
      out.solver_ok = false;
      return out;
    }
    pivot_inv[k] = llt.solve(identity);
    rhs[k] = r;
  }
  std::vector<VecX> cumulative(horizon);
  cumulative[horizon - 1] = pivot_inv[horizon - 1] * rhs[horizon - 1];
  for (int k = horizon - 2; k >= 0; --k) cumulative[k] = pivot_inv[k] * (rhs[k] + reg * cumulative[k + 1]);

  VecX lo, hi;
  detail::command_bounds(chain, q, cfg, lo, hi);
  VecX plan(static_cast<Eigen::Index>(horizon) * d);
  bool inside = true;
  for (int k = 0; k < horizon; ++k) {
    const VecX u = k == 0 ? cumulative[0] : VecX(cumulative[k] - cumulative[k - 1]);
    plan.segment(static_cast<Eigen::Index>(k) * d, d) = u;
    inside = inside && (u.array() >= lo.array() - 1e-12).all() && (u.array() <= hi.array() + 1e-12).all();
  }

  if (!inside) {
    out.constrained = true;
    // Node k depends on u_0..u_k, so block (i, j) of the Hessian is the sum
    // of a_k^T a_k over k >= max(i, j); the gradient uses the same suffix sums.
    const Eigen::Index n = plan.size();
    MatX hessian = reg * MatX::Identity(n, n);
    VecX gradient(n);
    MatX tail_h = MatX::Zero(d, d);
    VecX tail_g = VecX::Zero(d);
    for (int k = horizon - 1; k >= 0; --k) {
      tail_h.noalias() += a[k].transpose() * a[k];
      tail_g.noalias() += a[k].transpose() * c[k];
      const Eigen::Index o = static_cast<Eigen::Index>(k) * d;
      gradient.segment(o, d) = tail_g;
      for (int j = 0; j <= k; ++j) {
        const Eigen::Index oj = static_cast<Eigen::Index>(j) * d;
        hessian.block(o, oj, d, d) += tail_h;
        if (j != k) hessian.block(oj, o, d, d) += tail_h;
      }
    }
    const VecX lo_all = lo.replicate(horizon, 1);
    const VecX hi_all = hi.replicate(horizon, 1);
    const BoxQpResult qp = solve_box_qp(hessian, gradient, lo_all, hi_all, plan, cfg.qp_tolerance);
    plan = qp.x;
    if (!qp.converged && !plan.allFinite()) {
      out.u = VecX::Zero(d);
      out.solver_ok = false;
      return out;
    }
  }

  out.u = plan.head(d).cwiseMax(lo).cwiseMin(hi);
  if (!out.u.allFinite()) {
    out.u = VecX::Zero(d);
    out.solver_ok = false;
    return out;
  }

  if (record_prediction) {
    InternalState x;
    x.position = p0;
    x.orientation = o0;
    const Vec6 v0 = jac * qd_prev;
    x.linear_velocity = v0.head<3>();
    x.angular_velocity = v0.tail<3>();
    VecX previous = qd_prev;
    for (int k = 0; k < horizon; ++k) {
      const VecX u = plan.segment(static_cast<Eigen::Index>(k) * d, d);
      x = propagate(x, jac, drift, u, previous, dt);
      out.prediction.push_back(x);
      previous = u;
    }
  }
  return out;
}

inline MpcCommand mpc_step(const KinematicChain& chain, const VecX& q, const VecX& qd_prev,
                           std::span<const ReferenceSample> window, const ControllerConfig& cfg,
                           bool record_prediction = false) {
  check_dof(chain, q);
  check_dof(chain, qd_prev);
  Transform tip;
  Jacobian jac;
  tip_and_jacobian(chain, q, tip, jac);
  return mpc_step(chain, tip, jac, q, qd_prev, window, cfg, record_prediction);
}

// ------------------------------------------------------------------ rollout

enum RolloutFlag : std::uint8_t {
  kSolverFailure = 1,
  kPositionClamped = 2,
};

struct Rollout {
  double dt = 0.01;
  std::vector<VecX> q;
  std::vector<VecX> u;
  std::vector<EePose> ee;
  std::vector<double> position_residual;
  std::vector<double> orientation_residual;
  std::vector<double> manipulability;
  std::vector<std::uint8_t> flags;

  std::size_t size() const { return q.size(); }
  bool any_flag(std::uint8_t mask) const {
    return std::any_of(flags.begin(), flags.end(), [&](std::uint8_t f) { return (f & mask) != 0; });
  }
};

/// Closed-loop tracking of `traj` from q0: one MPC step per reference sample,
/// integrating q <- q + u dt with position clamping.
inline Rollout rollout(const KinematicChain& chain, const VecX& q0, const ReferenceTrajectory& traj,
                       const ControllerConfig& cfg) {
  validate_controller_config(cfg);
  check_dof(chain, q0);
  if (chain.dof < 1) throw DimensionError("rollout needs at least one joint");
  const std::size_t n = traj.size();
  Rollout r;
  r.dt = cfg.dt;
  r.q.reserve(n);
  r.u.reserve(n);
  r.ee.reserve(n);
  r.position_residual.reserve(n);
  r.orientation_residual.reserve(n);
  r.manipulability.reserve(n);
  r.flags.reserve(n);

  VecX q = clamp_to_limits(chain, q0);
  VecX qd_prev = VecX::Zero(chain.dof);
  std::vector<ReferenceSample> window(static_cast<std::size_t>(cfg.horizon));
  Transform tip;
  Jacobian jac;
  for (std::size_t i = 0; i < n; ++i) {
    tip_and_jacobian(chain, q, tip, jac);
    const ReferenceSample& ref = traj[i];
    const EePose pose{tip.translation(), quat_from_transform(tip)};
    r.q.push_back(q);
    r.ee.push_back(pose);
    r.position_residual.push_back((pose.position - ref.pose.position).norm());
    r.orientation_residual.push_back(
        mask_orientation(orientation_error(ref.pose.orientation, pose.orientation), ref.orientation_mode).norm());
    r.manipulability.push_back(manipulability(jac));

    for (int k = 0; k < cfg.horizon; ++k) window[static_cast<std::size_t>(k)] = traj[std::min(i + 1 + k, n - 1)];
    const MpcCommand cmd = mpc_step(chain, tip, jac, q, qd_prev, window, cfg);
    std::uint8_t flag = cmd.solver_ok ? 0 : kSolverFailure;
    const VecX next = q + cmd.u * cfg.dt;
    const VecX clamped = clamp_to_limits(chain, next);
    if ((clamped - next).cwiseAbs().maxCoeff() > 0.0) flag |= kPositionClamped;
    r.u.push_back(cmd.u);
    r.flags.push_back(flag);
    qd_prev = cmd.u;
    q = clamped;
  }
  return r;
}

inline void write_rollout_csv(std::ostream& out, const Rollout& r) {
  const Eigen::Index d = r.q.empty() ? 0 : r.q.front().size();
  out << "t";
  for (Eigen::Index j = 0; j < d; ++j) out << ",q" << j;
  for (Eigen::Index j = 0; j < d; ++j) out << ",u" << j;
  out << ",position_residual,orientation_residual,flags\n";
  out.precision(10);
  for (std::size_t i = 0; i < r.size(); ++i) {
    out << static_cast<double>(i) * r.dt;
    for (Eigen::Index j = 0; j < d; ++j) out << ',' << r.q[i][j];
    for (Eigen::Index j = 0; j < d; ++j) out << ',' << r.u[i][j];
    out << ',' << r.position_residual[i] << ',' << r.orientation_residual[i] << ',' << static_cast<int>(r.flags[i])
        << '\n';
  }
}

}  // namespace morphopt
