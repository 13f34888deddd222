#pragma once

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <string_view>

#include <Eigen/Dense>
#include <Eigen/Geometry>

namespace morphopt {

using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat3 = Eigen::Matrix3d;
using Mat6 = Eigen::Matrix<double, 6, 6>;
using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;
using Quat = Eigen::Quaterniond;
using Transform = Eigen::Isometry3d;
using Jacobian = Eigen::Matrix<double, 6, Eigen::Dynamic>;

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kGravity = 9.81;

/// Thrown for malformed input files and violated data invariants.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Thrown when vector or matrix sizes disagree with the chain or library.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// How much of the orientation target is enforced.  In tool-axis-only mode
/// rotation about the tool z axis (the drill bit) is left free.
enum class OrientationMode { full, tool_axis_only };

/// Segment label of a reference sample; collision filtering depends on it.
enum class SegmentKind { transfer, drill_in, drill_out };

inline std::string_view to_string(OrientationMode mode) {
  return mode == OrientationMode::full ? "full" : "tool-axis-only";
}

inline OrientationMode orientation_mode_from_string(std::string_view s) {
  if (s == "full") return OrientationMode::full;
  if (s == "tool-axis-only") return OrientationMode::tool_axis_only;
  throw ValidationError("unknown orientation mode '" + std::string(s) + "'");
}

inline std::string_view to_string(SegmentKind kind) {
  switch (kind) {
    case SegmentKind::transfer: return "transfer";
    case SegmentKind::drill_in: return "drill-in";
    case SegmentKind::drill_out: return "drill-out";
  }
  return "transfer";
}

inline SegmentKind segment_kind_from_string(std::string_view s) {
  if (s == "transfer") return SegmentKind::transfer;
  if (s == "drill-in") return SegmentKind::drill_in;
  if (s == "drill-out") return SegmentKind::drill_out;
  throw ValidationError("unknown segment kind '" + std::string(s) + "'");
}

/// End-effector pose in the world frame.
struct EePose {
  Vec3 position = Vec3::Zero();
  Quat orientation = Quat::Identity();
};

inline Mat3 skew(const Vec3& v) {
  Mat3 s;
  s << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
       -v.y(), v.x(), 0.0;
  return s;
}

inline Transform translation(const Vec3& t) {
  Transform out = Transform::Identity();
  out.translation() = t;
  return out;
}

inline Transform translation_z(double d) { return translation(Vec3(0.0, 0.0, d)); }

inline Transform rotation(const Vec3& axis, double angle) {
  Transform out = Transform::Identity();
  out.linear() = Eigen::AngleAxisd(angle, axis).toRotationMatrix();
  return out;
}

/// Planar pose of the manipulator base: translation in x/y and yaw about z.
inline Transform planar_transform(double x, double y, double yaw, double z = 0.0) {
  Transform out = Transform::Identity();
  out.linear() = Eigen::AngleAxisd(yaw, Vec3::UnitZ()).toRotationMatrix();
  out.translation() = Vec3(x, y, z);
  return out;
}

/// Relative rotation ref^-1 * o, flipped onto the w >= 0 hemisphere.
inline Quat relative_rotation(const Quat& ref, const Quat& o) {
  Quat rel = ref.conjugate() * o;
  if (rel.w() < 0.0) rel.coeffs() = -rel.coeffs();
  return rel;
}

/// Orientation error as twice the vector part of ref^-1 * o, expressed in the
/// reference frame.  Equals the rotation angle (rad) for small errors; the z
/// component is the twist about the reference tool axis.
inline Vec3 orientation_error(const Quat& ref, const Quat& o) {
  return 2.0 * relative_rotation(ref, o).vec();
}

/// Derivative of orientation_error with respect to a small world-frame
/// rotation applied to o.
inline Mat3 orientation_error_jacobian(const Quat& ref, const Quat& o) {
  const Quat rel = relative_rotation(ref, o);
  return (rel.w() * Mat3::Identity() - skew(rel.vec())) * ref.toRotationMatrix().transpose();
}

/// Zeroes the twist component when only the tool axis matters.
inline Vec3 mask_orientation(Vec3 e, OrientationMode mode) {
  if (mode == OrientationMode::tool_axis_only) e.z() = 0.0;
  return e;
}

/// One forward-Euler step of o_dot = o (x) [0, w_body / 2], renormalized.
/// omega is given in the world frame and rotated into the body frame first.
inline Quat propagate_quaternion(const Quat& o, const Vec3& omega_world, double dt) {
  const Vec3 omega_body = o.toRotationMatrix().transpose() * omega_world;
  const Quat half(0.0, 0.5 * omega_body.x(), 0.5 * omega_body.y(), 0.5 * omega_body.z());
  Quat out;
  out.coeffs() = o.coeffs() + (o * half).coeffs() * dt;
  out.normalize();
  return out;
}

inline Quat quat_from_transform(const Transform& t) {
  Quat q(t.linear());
  q.normalize();
  return q;
}

}  // namespace morphopt
