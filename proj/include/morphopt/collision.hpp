#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "morphopt/kinematics.hpp"

namespace morphopt {

/// Segment swept by a sphere.
struct Capsule {
  Vec3 a = Vec3::Zero();
  Vec3 b = Vec3::Zero();
  double radius = 0.0;
};

/// Box with yaw about the z axis.
struct BoxShape {
  Vec3 center = Vec3::Zero();
  Vec3 half_extents = Vec3::Zero();
  double yaw = 0.0;
};

/// Solid half-space {p : normal . (p - point) <= 0}.
struct PlaneShape {
  Vec3 normal = Vec3::UnitZ();
  Vec3 point = Vec3::Zero();
};

enum class ActiveDuring { all, transfer_only };
/// base-frame obstacles travel with the mounted pose (the platform itself).
enum class ObstacleFrame { world, base };

struct Obstacle {
  std::string name;
  std::variant<BoxShape, Capsule, PlaneShape> shape;
  ActiveDuring active_during = ActiveDuring::all;
  ObstacleFrame frame = ObstacleFrame::world;
  /// The first module sits on the platform; it is not checked against it.
  bool skip_base_module = false;
};

struct Environment {
  std::vector<Obstacle> obstacles;
  double d_safe = 0.02;
  bool self_collision = false;
};

// ---------------------------------------------------------------- primitives

inline double point_segment_distance(const Vec3& p, const Vec3& a, const Vec3& b) {
  const Vec3 ab = b - a;
  const double len2 = ab.squaredNorm();
  double t = len2 > 0.0 ? (p - a).dot(ab) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return (a + t * ab - p).norm();
}

/// Closest distance between segments p1-q1 and p2-q2.
inline double segment_segment_distance(const Vec3& p1, const Vec3& q1, const Vec3& p2, const Vec3& q2) {
  constexpr double eps = 1e-15;
  const Vec3 d1 = q1 - p1;
  const Vec3 d2 = q2 - p2;
  const Vec3 r = p1 - p2;
  const double a = d1.squaredNorm();
  const double e = d2.squaredNorm();
  const double f = d2.dot(r);
  double s = 0.0;
  double t = 0.0;
  if (a <= eps && e <= eps) return r.norm();
  if (a <= eps) {
    t = std::clamp(f / e, 0.0, 1.0);
  } else {
    const double c = d1.dot(r);
    if (e <= eps) {
      s = std::clamp(-c / a, 0.0, 1.0);
    } else {
      const double b = d1.dot(d2);
      const double denom = a * e - b * b;
      s = denom > eps * a * e ? std::clamp((b * f - c * e) / denom, 0.0, 1.0) : 0.0;
      t = (b * s + f) / e;
      if (t < 0.0) {
        t = 0.0;
        s = std::clamp(-c / a, 0.0, 1.0);
      } else if (t > 1.0) {
        t = 1.0;
        s = std::clamp((b - c) / a, 0.0, 1.0);
      }
    }
  }
  return ((p1 + s * d1) - (p2 + t * d2)).norm();
}

/// Signed distance from a point to a box (negative inside).
inline double point_box_signed_distance(const Vec3& p, const BoxShape& box) {
  const Mat3 rot = Eigen::AngleAxisd(box.yaw, Vec3::UnitZ()).toRotationMatrix();
  const Vec3 local = rot.transpose() * (p - box.center);
  const Vec3 d = local.cwiseAbs() - box.half_extents;
  const double outside = d.cwiseMax(0.0).norm();
  const double inside = std::min(d.maxCoeff(), 0.0);
  return outside + inside;
}

/**
 * Minimum signed distance between a segment and a box.  The signed distance
 * to a convex set is convex along the segment, so a golden-section search on
 * the segment parameter converges to the global minimum.
 */
inline double segment_box_signed_distance(const Vec3& a, const Vec3& b, const BoxShape& box) {
  const Mat3 rot = Eigen::AngleAxisd(box.yaw, Vec3::UnitZ()).toRotationMatrix();
  const Vec3 la = rot.transpose() * (a - box.center);
  const Vec3 lab = rot.transpose() * (b - a);
  auto f = [&](double t) {
    const Vec3 d = (la + t * lab).cwiseAbs() - box.half_extents;
    return d.cwiseMax(0.0).norm() + std::min(d.maxCoeff(), 0.0);
  };
  constexpr double inv_phi = 0.6180339887498949;
  double lo = 0.0;
  double hi = 1.0;
  double x1 = hi - inv_phi * (hi - lo);
  double x2 = lo + inv_phi * (hi - lo);
  double f1 = f(x1);
  double f2 = f(x2);
  for (int it = 0; it < 80 && hi - lo > 1e-13; ++it) {
    if (f1 <= f2) {
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = hi - inv_phi * (hi - lo);
      f1 = f(x1);
    } else {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = lo + inv_phi * (hi - lo);
      f2 = f(x2);
    }
  }
  return std::min({f(0.0), f(1.0), f1, f2});
}

/// Separation minus radii; negative values mean penetration.
inline double capsule_obstacle_distance(const Capsule& c, const Obstacle& o) {
  return std::visit(
      [&](const auto& shape) -> double {
        using T = std::decay_t<decltype(shape)>;
        if constexpr (std::is_same_v<T, Capsule>) {
          return segment_segment_distance(c.a, c.b, shape.a, shape.b) - c.radius - shape.radius;
        } else if constexpr (std::is_same_v<T, PlaneShape>) {
          const Vec3 n = shape.normal.normalized();
          return std::min(n.dot(c.a - shape.point), n.dot(c.b - shape.point)) - c.radius;
        } else {
          return segment_box_signed_distance(c.a, c.b, shape) - c.radius;
        }
      },
      o.shape);
}

inline double capsule_capsule_distance(const Capsule& x, const Capsule& y) {
  return segment_segment_distance(x.a, x.b, y.a, y.b) - x.radius - y.radius;
}

/// Moves a base-frame obstacle to the world frame for the given mounted pose.
inline Obstacle place_obstacle(const Obstacle& o, const MountedPose& pose) {
  if (o.frame == ObstacleFrame::world) return o;
  const Transform t = planar_transform(pose.x, pose.y, pose.theta);
  Obstacle out = o;
  out.frame = ObstacleFrame::world;
  std::visit(
      [&](auto& shape) {
        using T = std::decay_t<decltype(shape)>;
        if constexpr (std::is_same_v<T, Capsule>) {
          shape.a = t * shape.a;
          shape.b = t * shape.b;
        } else if constexpr (std::is_same_v<T, PlaneShape>) {
          shape.normal = t.linear() * shape.normal;
          shape.point = t * shape.point;
        } else {
          shape.center = t * shape.center;
          shape.yaw += pose.theta;
        }
      },
      out.shape);
  return out;
}

/// Radius of a sphere around the obstacle, or infinity for unbounded shapes.
inline double bounding_radius(const Obstacle& o, Vec3& center) {
  return std::visit(
      [&](const auto& shape) -> double {
        using T = std::decay_t<decltype(shape)>;
        if constexpr (std::is_same_v<T, Capsule>) {
          center = 0.5 * (shape.a + shape.b);
          return 0.5 * (shape.b - shape.a).norm() + shape.radius;
        } else if constexpr (std::is_same_v<T, PlaneShape>) {
          return std::numeric_limits<double>::infinity();
        } else {
          center = shape.center;
          return shape.half_extents.norm();
        }
      },
      o.shape);
}

// ---------------------------------------------------------------- robot queries

/// One capsule per module, from its input flange to its output flange.
inline std::vector<Capsule> module_capsules(const KinematicChain& chain, const ChainFrames& frames) {
  std::vector<Capsule> caps;
  caps.reserve(chain.segments.size());
  for (std::size_t i = 0; i < chain.segments.size(); ++i) {
    const Vec3 a = frames.inputs[i].translation();
    const Vec3 b = i + 1 < chain.segments.size() ? frames.inputs[i + 1].translation() : frames.tip.translation();
    caps.push_back({a, b, chain.segments[i].capsule_radius});
  }
  return caps;
}

inline std::vector<Capsule> module_capsules(const KinematicChain& chain, const VecX& q) {
  return module_capsules(chain, chain_frames(chain, q));
}

struct Clearance {
  double min_distance = std::numeric_limits<double>::infinity();
  bool colliding = false;
};

inline bool obstacle_active(const Obstacle& o, SegmentKind segment) {
  return o.active_during == ActiveDuring::all || segment == SegmentKind::transfer;
}

/// Obstacles resolved into the world frame once per mounted pose.
inline std::vector<Obstacle> place_environment(const Environment& env, const MountedPose& pose) {
  std::vector<Obstacle> out;
  out.reserve(env.obstacles.size());
  for (const auto& o : env.obstacles) out.push_back(place_obstacle(o, pose));
  return out;
}

/// Minimum signed clearance over (capsule, active obstacle) pairs; colliding
/// iff it drops below d_safe.  `placed` must come from place_environment.
inline Clearance clearance(const std::vector<Capsule>& caps, const std::vector<Obstacle>& placed,
                           const Environment& env, SegmentKind segment) {
  Clearance out;
  for (const auto& o : placed) {
    if (!obstacle_active(o, segment)) continue;
    Vec3 center = Vec3::Zero();
    const double bound = bounding_radius(o, center);
    for (std::size_t i = 0; i < caps.size(); ++i) {
      if (i == 0 && o.skip_base_module) continue;
      const Capsule& c = caps[i];
      if (std::isfinite(bound)) {
        const double lower = point_segment_distance(center, c.a, c.b) - bound - c.radius;
        if (lower >= out.min_distance) continue;
      }
      out.min_distance = std::min(out.min_distance, capsule_obstacle_distance(c, o));
    }
  }
  if (env.self_collision) {
    for (std::size_t i = 0; i < caps.size(); ++i)
      for (std::size_t j = i + 2; j < caps.size(); ++j)
        out.min_distance = std::min(out.min_distance, capsule_capsule_distance(caps[i], caps[j]));
  }
  out.colliding = out.min_distance < env.d_safe;
  return out;
}

inline Clearance clearance(const KinematicChain& chain, const VecX& q, const Environment& env, SegmentKind segment) {
  if (chain.empty()) return {};
  return clearance(module_capsules(chain, q), place_environment(env, chain.pose), env, segment);
}

// ---------------------------------------------------------------- defaults and IO

/**
 * Platform box under the base (0.9 x 0.7 x 0.5 m, moves with the mounted
 * pose), the wall half-space x <= -1.5 m (ignored while drilling) and the
 * floor.
 */
inline Environment default_environment(double platform_height = 0.5) {
  Environment env;
  env.d_safe = 0.02;
  Obstacle platform;
  platform.name = "platform";
  platform.shape = BoxShape{Vec3(0.0, 0.0, 0.5 * platform_height), Vec3(0.45, 0.35, 0.5 * platform_height), 0.0};
  platform.frame = ObstacleFrame::base;
  platform.skip_base_module = true;
  env.obstacles.push_back(platform);

  Obstacle wall;
  wall.name = "wall";
  wall.shape = PlaneShape{Vec3::UnitX(), Vec3(-1.5, 0.0, 0.0)};
  wall.active_during = ActiveDuring::transfer_only;
  env.obstacles.push_back(wall);

  Obstacle floor;
  floor.name = "floor";
  floor.shape = PlaneShape{Vec3::UnitZ(), Vec3::Zero()};
  env.obstacles.push_back(floor);
  return env;
}

namespace detail {
inline nlohmann::json vec_json(const Vec3& v) { return {v.x(), v.y(), v.z()}; }
inline Vec3 json_vec(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  if (v.size() != 3) throw ValidationError("expected a 3-vector");
  return Vec3(v[0], v[1], v[2]);
}
}  // namespace detail

inline nlohmann::json environment_to_json(const Environment& env) {
  using detail::vec_json;
  nlohmann::json obs = nlohmann::json::array();
  for (const auto& o : env.obstacles) {
    nlohmann::json j;
    std::visit(
        [&](const auto& s) {
          using T = std::decay_t<decltype(s)>;
          if constexpr (std::is_same_v<T, Capsule>) {
            j = {{"shape", "capsule"}, {"a", vec_json(s.a)}, {"b", vec_json(s.b)}, {"radius", s.radius}};
          } else if constexpr (std::is_same_v<T, PlaneShape>) {
            j = {{"shape", "plane"}, {"normal", vec_json(s.normal)}, {"point", vec_json(s.point)}};
          } else {
            j = {{"shape", "box"}, {"center", vec_json(s.center)}, {"half_extents", vec_json(s.half_extents)},
                 {"yaw", s.yaw}};
          }
        },
        o.shape);
    if (!o.name.empty()) j["name"] = o.name;
    j["active_during"] = o.active_during == ActiveDuring::all ? "all" : "transfer-only";
    j["frame"] = o.frame == ObstacleFrame::world ? "world" : "base";
    j["skip_base_module"] = o.skip_base_module;
    obs.push_back(j);
  }
  return {{"d_safe", env.d_safe}, {"self_collision", env.self_collision}, {"obstacles", obs}};
}

inline Environment environment_from_json(const nlohmann::json& j) {
  using detail::json_vec;
  Environment env;
  try {
    env.d_safe = j.value("d_safe", 0.02);
    env.self_collision = j.value("self_collision", false);
    for (const auto& jo : j.at("obstacles")) {
      Obstacle o;
      o.name = jo.value("name", std::string{});
      const std::string shape = jo.at("shape").get<std::string>();
      if (shape == "box") {
        BoxShape b{json_vec(jo.at("center")), json_vec(jo.at("half_extents")), jo.value("yaw", 0.0)};
        if ((b.half_extents.array() < 0.0).any()) throw ValidationError("box half_extents must be non-negative");
        o.shape = b;
      } else if (shape == "capsule") {
        o.shape = Capsule{json_vec(jo.at("a")), json_vec(jo.at("b")), jo.at("radius").get<double>()};
      } else if (shape == "plane") {
        PlaneShape p{json_vec(jo.at("normal")), json_vec(jo.at("point"))};
        if (p.normal.norm() < 1e-12) throw ValidationError("plane normal must be non-zero");
        p.normal.normalize();
        o.shape = p;
      } else {
        throw ValidationError("unknown obstacle shape '" + shape + "'");
      }
      const std::string active = jo.value("active_during", std::string("all"));
      if (active == "all") o.active_during = ActiveDuring::all;
      else if (active == "transfer-only") o.active_during = ActiveDuring::transfer_only;
      else throw ValidationError("unknown active_during '" + active + "'");
      const std::string frame = jo.value("frame", std::string("world"));
      if (frame == "world") o.frame = ObstacleFrame::world;
      else if (frame == "base") o.frame = ObstacleFrame::base;
      else throw ValidationError("unknown obstacle frame '" + frame + "'");
      o.skip_base_module = jo.value("skip_base_module", false);
      env.obstacles.push_back(std::move(o));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed environment: ") + e.what());
  }
  if (!(env.d_safe >= 0.0)) throw ValidationError("d_safe must be non-negative");
  return env;
}

}  // namespace morphopt
