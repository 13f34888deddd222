#pragma once

#include <cmath>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "morphopt/collision.hpp"
#include "morphopt/controller.hpp"
#include "morphopt/dynamics.hpp"
#include "morphopt/morphology.hpp"
#include "morphopt/task.hpp"

namespace morphopt {

inline constexpr double kPenalty = 1e10;

struct ObjectiveWeights {
  double w = 10.0;
  double w_f = 0.01;
  double w_m = 1.0;
  double xi = 1e-3;
};

inline void validate_weights(const ObjectiveWeights& o) {
  if (!(o.w > 0.0)) throw ValidationError("weight w must be positive");
  if (!(o.xi > 0.0)) throw ValidationError("threshold xi must be positive");
  if (!(o.w_f >= 0.0) || !(o.w_m >= 0.0)) throw ValidationError("w_f and w_m must be non-negative");
}

/// Hierarchical cost: the soft bonus only applies once E_sum is below xi.
inline double total_cost(double e_track, double e_collision, double e_dynamic, double f_eff, double m_man,
                         const ObjectiveWeights& weights) {
  const double e_sum = e_track + e_collision + e_dynamic;
  if (e_sum < weights.xi) return e_sum - weights.w * std::exp(-weights.w_f * f_eff + weights.w_m * m_man);
  return e_sum;
}

struct EvaluationReport {
  double e_track = kPenalty;
  double e_collision = 0.0;
  double e_dynamic = 0.0;
  double e_sum = kPenalty;
  double f_eff = 0.0;
  double m_man = 0.0;
  double e = kPenalty;
  bool feasible = false;
  int chosen_warm_start = -1;

  // diagnostics
  std::vector<int> morphology;
  MountedPose pose;
  int dof = 0;
  int warm_start_count = 0;
  int ik_attempts = 0;
  double ik_residual = 0.0;
  double min_clearance = std::numeric_limits<double>::infinity();
  long first_collision_loop = -1;
  long first_torque_violation_loop = -1;
  int torque_violation_joint = -1;
  double max_torque_ratio = 0.0;
  int solver_failures = 0;
  int clamped_loops = 0;
  std::string status;
};

inline void finalize(EvaluationReport& r, const ObjectiveWeights& weights) {
  r.e_sum = r.e_track + r.e_collision + r.e_dynamic;
  r.e = total_cost(r.e_track, r.e_collision, r.e_dynamic, r.f_eff, r.m_man, weights);
  r.feasible = r.e_sum < weights.xi;
}

/// Mean over loops of squared position error plus squared (masked) orientation error.
inline double tracking_error(const Rollout& rollout, const ReferenceTrajectory& traj) {
  if (rollout.ee.size() != traj.size()) throw DimensionError("rollout and trajectory lengths differ");
  if (traj.size() == 0) throw DimensionError("empty trajectory");
  double total = 0.0;
  for (std::size_t i = 0; i < traj.size(); ++i) {
    const ReferenceSample& ref = traj[i];
    const EePose& ee = rollout.ee[i];
    const Vec3 e_o = mask_orientation(orientation_error(ref.pose.orientation, ee.orientation), ref.orientation_mode);
    total += (ee.position - ref.pose.position).squaredNorm() + e_o.squaredNorm();
  }
  return total / static_cast<double>(traj.size());
}

struct ConstraintPenalties {
  double e_collision = 0.0;
  double e_dynamic = 0.0;
  double min_clearance = std::numeric_limits<double>::infinity();
  long first_collision_loop = -1;
  TorqueCheck torque;
};

/// Collision is checked at every loop against the obstacles active for that
/// loop's segment; torques against the joint ratings.
inline ConstraintPenalties constraint_penalties(const Rollout& rollout, const KinematicChain& chain,
                                                const Environment& env, const ReferenceTrajectory& traj,
                                                const TorqueTrajectory& torques) {
  if (rollout.q.size() != traj.size()) throw DimensionError("rollout and trajectory lengths differ");
  ConstraintPenalties out;
  const std::vector<Obstacle> placed = place_environment(env, chain.pose);
  for (std::size_t i = 0; i < rollout.q.size(); ++i) {
    const Clearance c = clearance(module_capsules(chain, rollout.q[i]), placed, env, traj[i].segment);
    out.min_clearance = std::min(out.min_clearance, c.min_distance);
    if (c.colliding && out.first_collision_loop < 0) out.first_collision_loop = static_cast<long>(i);
  }
  if (out.first_collision_loop >= 0) out.e_collision = kPenalty;
  out.torque = torque_feasible(torques);
  if (!out.torque.feasible) out.e_dynamic = kPenalty;
  return out;
}

/// Joint torques along a rollout, with the contact force pushing along the
/// tool axis on loops that carry one.
inline TorqueTrajectory rollout_torques(const KinematicChain& chain, const Rollout& rollout,
                                        const ReferenceTrajectory& traj, const Vec3& gravity = Vec3(0, 0, -kGravity)) {
  TorqueTrajectory out;
  out.limits = chain.tau_max;
  const JointDerivatives d = differentiate_joint_trajectory(rollout.q, rollout.dt);
  out.torques.reserve(rollout.q.size());
  for (std::size_t i = 0; i < rollout.q.size(); ++i) {
    Vec6 wrench = Vec6::Zero();
    if (traj[i].contact_force != 0.0)
      wrench.head<3>() = traj[i].contact_force * (rollout.ee[i].orientation * Vec3::UnitZ());
    out.torques.push_back(inverse_dynamics(chain, rollout.q[i], d.velocity[i], d.acceleration[i], wrench, gravity));
  }
  return out;
}

/// Everything evaluate() needs besides the genome.
struct EvaluationContext {
  ModuleLibrary library = default_library();
  ReferenceTrajectory trajectory;
  Environment environment = default_environment();
  ObjectiveWeights weights;
  ControllerConfig controller;
  IkOptions ik;
  Workcell workcell;
  int warm_starts = 5;
  double platform_height = 0.5;
};

/// Context for the default drilling job at the given control period.
inline EvaluationContext default_context(double dt = 0.01) {
  EvaluationContext ctx;
  ctx.trajectory = drilling_task(default_drilling_params(), dt);
  ctx.controller.dt = dt;
  return ctx;
}

/// Scores one warm start: rollout, tracking, penalties and soft terms.
inline EvaluationReport score_warm_start(const KinematicChain& chain, const VecX& q0, const EvaluationContext& ctx) {
  EvaluationReport r;
  const Rollout ro = rollout(chain, q0, ctx.trajectory, ctx.controller);
  r.e_track = tracking_error(ro, ctx.trajectory);
  const TorqueTrajectory torques = rollout_torques(chain, ro, ctx.trajectory);
  const ConstraintPenalties pen = constraint_penalties(ro, chain, ctx.environment, ctx.trajectory, torques);
  r.e_collision = pen.e_collision;
  r.e_dynamic = pen.e_dynamic;
  r.min_clearance = pen.min_clearance;
  r.first_collision_loop = pen.first_collision_loop;
  if (!pen.torque.feasible) {
    r.first_torque_violation_loop = static_cast<long>(*pen.torque.first_violation);
    r.torque_violation_joint = pen.torque.joint;
  }
  for (const auto& tau : torques.torques)
    r.max_torque_ratio = std::max(r.max_torque_ratio, tau.cwiseAbs().cwiseQuotient(chain.tau_max).maxCoeff());
  r.f_eff = effort_metric(torques);
  double m = 0.0;
  for (double v : ro.manipulability) m += v;
  r.m_man = m / static_cast<double>(ro.manipulability.size());
  for (auto f : ro.flags) {
    if (f & kSolverFailure) ++r.solver_failures;
    if (f & kPositionClamped) ++r.clamped_loops;
  }
  finalize(r, ctx.weights);
  r.status = r.feasible ? "feasible" : (r.e_collision > 0.0 ? "collision" : (r.e_dynamic > 0.0 ? "torque" : "tracking"));
  return r;
}

/**
 * Total objective over the genome space.  Degenerate morphologies and failed
 * IK fold into graded sentinels above the penalty level; otherwise every warm
 * start is rolled out and the lowest-E one is reported.
 */
inline EvaluationReport evaluate(const DesignGenome& genome, const EvaluationContext& ctx, std::uint64_t seed) {
  const int n = static_cast<int>(ctx.library.size());
  validate_genome(genome, n, ctx.workcell);
  const MorphologyState morph = decode(genome.module_states, n, seed);
  const KinematicChain chain = assemble(ctx.library, morph, genome.pose, ctx.platform_height);

  EvaluationReport best;
  best.morphology = morph.sequence;
  best.pose = genome.pose;
  best.dof = chain.dof;
  if (chain.degenerate()) {
    best.e_track = kPenalty + 10.0 * (3 - chain.dof);
    best.status = "degenerate";
    finalize(best, ctx.weights);
    return best;
  }

  const WarmStartSet ws = warm_starts(chain, ctx.trajectory, ctx.warm_starts, seed ^ 0x9e3779b97f4a7c15ULL, ctx.ik);
  if (ws.solutions.empty()) {
    best.e_track = kPenalty + ws.best_position_error;
    best.ik_attempts = ws.attempts;
    best.ik_residual = ws.best_position_error;
    best.status = "ik-failure";
    finalize(best, ctx.weights);
    return best;
  }

  for (std::size_t k = 0; k < ws.solutions.size(); ++k) {
    EvaluationReport r = score_warm_start(chain, ws.solutions[k], ctx);
    if (k == 0 || r.e < best.e) {
      r.chosen_warm_start = static_cast<int>(k);
      best = std::move(r);
    }
  }
  best.morphology = morph.sequence;
  best.pose = genome.pose;
  best.dof = chain.dof;
  best.warm_start_count = static_cast<int>(ws.solutions.size());
  best.ik_attempts = ws.attempts;
  return best;
}

inline std::string morphology_string(const std::vector<int>& seq) {
  std::ostringstream s;
  for (std::size_t i = 0; i < seq.size(); ++i) s << (i ? "-" : "") << seq[i];
  return s.str();
}

inline nlohmann::json report_to_json(const EvaluationReport& r) {
  auto finite_or_null = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  return {{"E", r.e},
          {"E_sum", r.e_sum},
          {"E_track", r.e_track},
          {"E_collision", r.e_collision},
          {"E_dynamic", r.e_dynamic},
          {"F_eff", r.f_eff},
          {"M_man", r.m_man},
          {"feasible", r.feasible},
          {"chosen_warm_start", r.chosen_warm_start},
          {"morphology", r.morphology},
          {"pose", {r.pose.x, r.pose.y, r.pose.theta}},
          {"dof", r.dof},
          {"status", r.status},
          {"diagnostics",
           {{"warm_start_count", r.warm_start_count},
            {"ik_attempts", r.ik_attempts},
            {"ik_residual", r.ik_residual},
            {"min_clearance", finite_or_null(r.min_clearance)},
            {"first_collision_loop", r.first_collision_loop},
            {"first_torque_violation_loop", r.first_torque_violation_loop},
            {"torque_violation_joint", r.torque_violation_joint},
            {"max_torque_ratio", r.max_torque_ratio},
            {"solver_failures", r.solver_failures},
            {"clamped_loops", r.clamped_loops}}}};
}

inline void write_report_csv_header(std::ostream& out) {
  out << "eval,E,E_sum,E_track,E_collision,E_dynamic,F_eff,M_man,feasible,dof,morphology,x,y,theta,status\n";
}

inline void append_report_csv(std::ostream& out, long index, const EvaluationReport& r) {
  out.precision(12);
  out << index << ',' << r.e << ',' << r.e_sum << ',' << r.e_track << ',' << r.e_collision << ',' << r.e_dynamic
      << ',' << r.f_eff << ',' << r.m_man << ',' << (r.feasible ? 1 : 0) << ',' << r.dof << ','
      << morphology_string(r.morphology) << ',' << r.pose.x << ',' << r.pose.y << ',' << r.pose.theta << ','
      << r.status << '\n';
}

}  // namespace morphopt
