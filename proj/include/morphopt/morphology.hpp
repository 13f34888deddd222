#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include <json.hpp>

#include "morphopt/geometry.hpp"
#include "morphopt/module_library.hpp"

namespace morphopt {

/// Assembly sequence of module ids, terminated by the end effector (EoM).
struct MorphologyState {
  std::vector<int> sequence;

  int end_id() const { return sequence.empty() ? 0 : sequence.back(); }
  /// Number of body modules (everything before the end effector).
  std::size_t body_count() const { return sequence.empty() ? 0 : sequence.size() - 1; }
  bool operator==(const MorphologyState&) const = default;
};

/// Drops everything after the first occurrence of eom_id.
inline std::vector<int> truncate_at_eom(std::span<const int> seq, int eom_id) {
  std::vector<int> out;
  for (int id : seq) {
    out.push_back(id);
    if (id == eom_id) break;
  }
  return out;
}

inline bool effective_equal(std::span<const int> a, std::span<const int> b, int eom_id) {
  return truncate_at_eom(a, eom_id) == truncate_at_eom(b, eom_id);
}

inline bool effective_equal(const MorphologyState& a, const MorphologyState& b, int eom_id) {
  return effective_equal(std::span<const int>(a.sequence), std::span<const int>(b.sequence), eom_id);
}

inline void validate_morphology(const MorphologyState& state, int eom_id) {
  if (state.sequence.empty() || state.sequence.back() != eom_id)
    throw ValidationError("morphology must end with the end-effector id " + std::to_string(eom_id));
  if (static_cast<int>(state.sequence.size()) > eom_id)
    throw ValidationError("morphology longer than the module count");
  std::vector<int> seen(static_cast<std::size_t>(eom_id) + 1, 0);
  for (int id : state.sequence) {
    if (id < 1 || id > eom_id) throw ValidationError("morphology references unknown id " + std::to_string(id));
    if (seen[static_cast<std::size_t>(id)]++) throw ValidationError("module id " + std::to_string(id) + " repeated");
  }
}

/**
 * Maps a continuous module-state vector onto a morphology.
 *
 * Entry i holds the state of module id i + 1 and the last entry belongs to the
 * end effector.  Modules are taken in descending state order and the sequence
 * stops at the end effector.  Equal states are ordered by a shuffle drawn from
 * `seed`, so each tied module is equally likely to come first.
 */
inline MorphologyState decode(const VecX& states, std::uint64_t seed) {
  const auto n = static_cast<std::size_t>(states.size());
  if (n == 0) throw DimensionError("module-state vector is empty");
  std::vector<int> ids(n);
  std::iota(ids.begin(), ids.end(), 1);
  std::mt19937_64 rng(seed);
  std::shuffle(ids.begin(), ids.end(), rng);
  std::stable_sort(ids.begin(), ids.end(),
                   [&](int a, int b) { return states[a - 1] > states[b - 1]; });
  return MorphologyState{truncate_at_eom(ids, static_cast<int>(n))};
}

inline MorphologyState decode(const VecX& states, int expected_size, std::uint64_t seed) {
  if (states.size() != expected_size)
    throw DimensionError("module-state vector has " + std::to_string(states.size()) + " entries, expected " +
                         std::to_string(expected_size));
  return decode(states, seed);
}

/// Base position box and yaw range for the mounted pose.
struct Workcell {
  double x_min = -0.6;
  double x_max = 0.6;
  double y_min = -0.3;
  double y_max = 0.3;
  double theta_min = -kPi;
  double theta_max = kPi;

  bool valid() const { return x_min <= x_max && y_min <= y_max && theta_min <= theta_max; }
};

struct MountedPose {
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;
  bool operator==(const MountedPose&) const = default;
};

inline bool contains(const Workcell& cell, const MountedPose& p) {
  return p.x >= cell.x_min && p.x <= cell.x_max && p.y >= cell.y_min && p.y <= cell.y_max &&
         p.theta >= cell.theta_min && p.theta <= cell.theta_max;
}

/// Joint optimization variables: module states in [0, 1]^(m+1) plus the base pose.
struct DesignGenome {
  VecX module_states;
  MountedPose pose;

  Eigen::Index dimension() const { return module_states.size() + 3; }

  VecX to_vector() const {
    VecX v(dimension());
    v.head(module_states.size()) = module_states;
    v.tail<3>() << pose.x, pose.y, pose.theta;
    return v;
  }

  static DesignGenome from_vector(const VecX& v) {
    if (v.size() < 4) throw DimensionError("genome vector too short");
    DesignGenome g;
    g.module_states = v.head(v.size() - 3);
    g.pose = MountedPose{v[v.size() - 3], v[v.size() - 2], v[v.size() - 1]};
    return g;
  }

  bool operator==(const DesignGenome& o) const {
    return module_states.size() == o.module_states.size() && module_states == o.module_states && pose == o.pose;
  }
};

inline void validate_genome(const DesignGenome& g, int module_count, const Workcell& cell) {
  if (g.module_states.size() != module_count)
    throw DimensionError("genome has " + std::to_string(g.module_states.size()) + " module states, expected " +
                         std::to_string(module_count));
  if (!g.module_states.allFinite() || (g.module_states.array() < 0.0).any() || (g.module_states.array() > 1.0).any())
    throw ValidationError("module states must lie in [0, 1]");
  if (!contains(cell, g.pose)) throw ValidationError("mounted pose outside the workcell");
}

inline DesignGenome random_genome(std::uint64_t seed, const Workcell& cell, int module_count) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  DesignGenome g;
  g.module_states.resize(module_count);
  for (int i = 0; i < module_count; ++i) g.module_states[i] = unit(rng);
  g.pose.x = cell.x_min + unit(rng) * (cell.x_max - cell.x_min);
  g.pose.y = cell.y_min + unit(rng) * (cell.y_max - cell.y_min);
  g.pose.theta = cell.theta_min + unit(rng) * (cell.theta_max - cell.theta_min);
  return g;
}

/// Lower / upper bounds of the flattened genome vector.
inline std::pair<VecX, VecX> genome_bounds(int module_count, const Workcell& cell) {
  VecX lo = VecX::Zero(module_count + 3);
  VecX hi = VecX::Ones(module_count + 3);
  lo.tail<3>() << cell.x_min, cell.y_min, cell.theta_min;
  hi.tail<3>() << cell.x_max, cell.y_max, cell.theta_max;
  return {lo, hi};
}

inline nlohmann::json genome_to_json(const DesignGenome& g) {
  return {{"module_states", std::vector<double>(g.module_states.data(), g.module_states.data() + g.module_states.size())},
          {"pose", {g.pose.x, g.pose.y, g.pose.theta}}};
}

inline DesignGenome genome_from_json(const nlohmann::json& j) {
  try {
    const auto states = j.at("module_states").get<std::vector<double>>();
    const auto pose = j.at("pose").get<std::vector<double>>();
    if (pose.size() != 3) throw ValidationError("pose must be [x, y, theta]");
    DesignGenome g;
    g.module_states = Eigen::Map<const VecX>(states.data(), static_cast<Eigen::Index>(states.size()));
    g.pose = MountedPose{pose[0], pose[1], pose[2]};
    return g;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed genome: ") + e.what());
  }
}

}  // namespace morphopt
