#pragma once

#include <cmath>
#include <ostream>
#include <vector>

#include <json.hpp>

#include "morphopt/geometry.hpp"

namespace morphopt {

struct Waypoint {
  EePose pose;
  double time = 0.0;
  SegmentKind segment = SegmentKind::transfer;  // label of the motion that ends here
  OrientationMode orientation_mode = OrientationMode::full;
  double contact_force = 0.0;  // newtons along the tool axis while moving into this waypoint
};

struct ReferenceSample {
  double time = 0.0;
  EePose pose;
  Vec3 linear_velocity = Vec3::Zero();
  Vec3 angular_velocity = Vec3::Zero();
  SegmentKind segment = SegmentKind::transfer;
  OrientationMode orientation_mode = OrientationMode::full;
  double contact_force = 0.0;
};

/// Reference poses sampled at the controller period.
struct ReferenceTrajectory {
  std::vector<ReferenceSample> samples;
  double dt = 0.01;

  std::size_t size() const { return samples.size(); }
  double duration() const { return samples.empty() ? 0.0 : samples.back().time - samples.front().time; }
  const ReferenceSample& operator[](std::size_t i) const { return samples[i]; }
};

/**
 * Linear interpolation of positions and slerp of orientations at period dt.
 * Samples at t0 + k dt; the final sample is pinned to the last waypoint.
 */
inline ReferenceTrajectory resample(const std::vector<Waypoint>& waypoints, double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("dt must be positive");
  if (waypoints.empty()) throw std::invalid_argument("no waypoints");
  for (std::size_t i = 1; i < waypoints.size(); ++i)
    if (!(waypoints[i].time > waypoints[i - 1].time))
      throw std::invalid_argument("waypoint times must be strictly increasing");

  const double t0 = waypoints.front().time;
  const double t1 = waypoints.back().time;
  const auto steps = static_cast<std::size_t>(std::ceil((t1 - t0) / dt - 1e-9));
  ReferenceTrajectory traj;
  traj.dt = dt;
  traj.samples.resize(steps + 1);

  std::size_t seg = 0;
  for (std::size_t k = 0; k <= steps; ++k) {
    ReferenceSample& s = traj.samples[k];
    s.time = k == steps ? t1 : std::min(t0 + static_cast<double>(k) * dt, t1);
    if (k == 0) {
      const Waypoint& w = waypoints.front();
      s.pose = w.pose;
      s.segment = w.segment;
      s.orientation_mode = w.orientation_mode;
      s.contact_force = w.contact_force;
      continue;
    }
    while (seg + 2 < waypoints.size() && s.time > waypoints[seg + 1].time) ++seg;
    if (waypoints.size() == 1) {
      s.pose = waypoints.front().pose;
      s.segment = waypoints.front().segment;
      s.orientation_mode = waypoints.front().orientation_mode;
      continue;
    }
    const Waypoint& a = waypoints[seg];
    const Waypoint& b = waypoints[seg + 1];
    const double u = std::clamp((s.time - a.time) / (b.time - a.time), 0.0, 1.0);
    if (u >= 1.0) {
      s.pose = b.pose;
    } else {
      s.pose.position = (1.0 - u) * a.pose.position + u * b.pose.position;
      s.pose.orientation = a.pose.orientation.slerp(u, b.pose.orientation).normalized();
    }
    s.segment = b.segment;
    s.orientation_mode = b.orientation_mode;
    s.contact_force = b.contact_force;
  }

  for (std::size_t k = 0; k + 1 < traj.samples.size(); ++k) {
    ReferenceSample& s = traj.samples[k];
    const ReferenceSample& n = traj.samples[k + 1];
    const double h = n.time - s.time;
    if (h <= 0.0) continue;
    s.linear_velocity = (n.pose.position - s.pose.position) / h;
    const Eigen::AngleAxisd delta(n.pose.orientation * s.pose.orientation.conjugate());
    s.angular_velocity = delta.axis() * delta.angle() / h;
  }
  return traj;
}

/// Geometry and speeds of a wall-drilling job.
struct DrillingTaskParams {
  std::vector<Vec3> holes;
  double depth = 0.1;
  double standoff = 0.05;
  double transfer_speed = 0.10;
  double drill_speed = 0.02;
  Vec3 wall_normal = Vec3::UnitX();  // points from the wall toward the robot
  double dwell = 0.0;
  double contact_force = 0.0;
};

/// Six holes on the wall plane x = -1.5 m.
inline DrillingTaskParams default_drilling_params() {
  DrillingTaskParams p;
  p.holes = {Vec3(-1.5, 0.15, 0.45), Vec3(-1.5, -0.15, 0.45), Vec3(-1.5, -0.15, 0.30),
             Vec3(-1.5, 0.15, 0.30), Vec3(-1.5, 0.15, 0.15),  Vec3(-1.5, -0.15, 0.15)};
  return p;
}

/// Tool orientation whose z axis points into the wall (along -normal).
inline Quat tool_orientation_for_wall(const Vec3& wall_normal) {
  const Vec3 z = -wall_normal.normalized();
  Vec3 x = Vec3::UnitZ() - Vec3::UnitZ().dot(z) * z;
  if (x.norm() < 1e-9) x = Vec3::UnitX() - Vec3::UnitX().dot(z) * z;
  x.normalize();
  Mat3 r;
  r.col(0) = x;
  r.col(1) = z.cross(x);
  r.col(2) = z;
  return Quat(r).normalized();
}

inline void validate_drilling_params(const DrillingTaskParams& p) {
  if (p.holes.empty()) throw ValidationError("drilling task needs at least one hole");
  if (!(p.depth > 0.0)) throw ValidationError("drilling depth must be positive");
  if (!(p.standoff >= 0.0)) throw ValidationError("standoff must be non-negative");
  if (!(p.transfer_speed > 0.0) || !(p.drill_speed > 0.0)) throw ValidationError("speeds must be positive");
  if (!(p.dwell >= 0.0)) throw ValidationError("dwell must be non-negative");
  if (p.wall_normal.norm() < 1e-12) throw ValidationError("wall normal must be non-zero");
  const Vec3 n = p.wall_normal.normalized();
  if (std::abs(n.z()) > 1e-9) throw ValidationError("wall must be vertical");
  for (const auto& h : p.holes)
    if (std::abs(n.dot(h - p.holes.front())) > 1e-9) throw ValidationError("holes do not lie on one wall plane");
}

/**
 * Waypoints of the drilling job.  Per hole: approach from the standoff point
 * to the wall and drill to depth (drill-in), back out to the standoff
 * (drill-out); straight transfers between standoff points.  The tool axis is
 * held perpendicular to the wall throughout, twist left free.
 */
inline std::vector<Waypoint> drilling_waypoints(const DrillingTaskParams& p) {
  validate_drilling_params(p);
  const Vec3 n = p.wall_normal.normalized();
  const Quat tool = tool_orientation_for_wall(n);
  std::vector<Waypoint> wps;
  double t = 0.0;
  auto add = [&](const Vec3& pos, double duration, SegmentKind kind, double force) {
    t += duration;
    wps.push_back({EePose{pos, tool}, t, kind, OrientationMode::tool_axis_only, force});
  };
  for (std::size_t i = 0; i < p.holes.size(); ++i) {
    const Vec3 entry = p.holes[i];
    const Vec3 standoff = entry + p.standoff * n;
    const Vec3 bottom = entry - p.depth * n;
    if (i == 0) {
      wps.push_back({EePose{standoff, tool}, 0.0, SegmentKind::transfer, OrientationMode::tool_axis_only, 0.0});
    } else {
      add(standoff, (standoff - wps.back().pose.position).norm() / p.transfer_speed, SegmentKind::transfer, 0.0);
    }
    if (p.standoff > 0.0) add(entry, p.standoff / p.transfer_speed, SegmentKind::drill_in, 0.0);
    add(bottom, p.depth / p.drill_speed, SegmentKind::drill_in, p.contact_force);
    if (p.dwell > 0.0) add(bottom, p.dwell, SegmentKind::drill_in, p.contact_force);
    add(entry, p.depth / p.drill_speed, SegmentKind::drill_out, 0.0);
    if (p.standoff > 0.0) add(standoff, p.standoff / p.transfer_speed, SegmentKind::drill_out, 0.0);
  }
  return wps;
}

inline ReferenceTrajectory drilling_task(const DrillingTaskParams& p, double dt = 0.01) {
  return resample(drilling_waypoints(p), dt);
}

inline void write_trajectory_csv(std::ostream& out, const ReferenceTrajectory& traj) {
  out << "t,x,y,z,qw,qx,qy,qz,segment\n";
  out.precision(10);
  for (const auto& s : traj.samples) {
    const auto& p = s.pose.position;
    const auto& o = s.pose.orientation;
    out << s.time << ',' << p.x() << ',' << p.y() << ',' << p.z() << ',' << o.w() << ',' << o.x() << ',' << o.y()
        << ',' << o.z() << ',' << to_string(s.segment) << '\n';
  }
}

inline nlohmann::json task_to_json(const DrillingTaskParams& p) {
  nlohmann::json holes = nlohmann::json::array();
  for (const auto& h : p.holes) holes.push_back({h.x(), h.y(), h.z()});
  return {{"holes", holes},
          {"depth", p.depth},
          {"standoff", p.standoff},
          {"transfer_speed", p.transfer_speed},
          {"drill_speed", p.drill_speed},
          {"wall_normal", {p.wall_normal.x(), p.wall_normal.y(), p.wall_normal.z()}},
          {"dwell", p.dwell},
          {"contact_force", p.contact_force}};
}

inline DrillingTaskParams task_from_json(const nlohmann::json& j) {
  DrillingTaskParams p;
  try {
    for (const auto& h : j.at("holes")) {
      const auto v = h.get<std::vector<double>>();
      if (v.size() != 3) throw ValidationError("hole coordinates must have 3 entries");
      p.holes.emplace_back(v[0], v[1], v[2]);
    }
    p.depth = j.value("depth", p.depth);
    p.standoff = j.value("standoff", p.standoff);
    p.transfer_speed = j.value("transfer_speed", p.transfer_speed);
    p.drill_speed = j.value("drill_speed", p.drill_speed);
    if (j.contains("wall_normal")) {
      const auto v = j["wall_normal"].get<std::vector<double>>();
      if (v.size() != 3) throw ValidationError("wall_normal must have 3 entries");
      p.wall_normal = Vec3(v[0], v[1], v[2]);
    }
    p.dwell = j.value("dwell", p.dwell);
    p.contact_force = j.value("contact_force", p.contact_force);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed task: ") + e.what());
  }
  validate_drilling_params(p);
  return p;
}

}  // namespace morphopt
