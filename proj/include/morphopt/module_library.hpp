#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "morphopt/geometry.hpp"

namespace morphopt {

enum class ModuleKind { joint_straight, joint_elbow, link_straight, link_elbow, end_effector };

inline bool is_joint(ModuleKind kind) {
  return kind == ModuleKind::joint_straight || kind == ModuleKind::joint_elbow;
}

inline std::string_view to_string(ModuleKind kind) {
  switch (kind) {
    case ModuleKind::joint_straight: return "joint-straight";
    case ModuleKind::joint_elbow: return "joint-elbow";
    case ModuleKind::link_straight: return "link-straight";
    case ModuleKind::link_elbow: return "link-elbow";
    case ModuleKind::end_effector: return "end-effector";
  }
  return "unknown";
}

inline ModuleKind module_kind_from_string(std::string_view s) {
  for (auto k : {ModuleKind::joint_straight, ModuleKind::joint_elbow, ModuleKind::link_straight,
                 ModuleKind::link_elbow, ModuleKind::end_effector}) {
    if (to_string(k) == s) return k;
  }
  throw ValidationError("unknown module kind '" + std::string(s) + "'");
}

struct JointLimits {
  double lower = -2.7;
  double upper = 2.7;
  bool operator==(const JointLimits&) const = default;
};

/**
 * @brief Physical description of one interchangeable module.
 *
 * Geometry conventions (module frame: z is the outgoing axis of the input
 * flange):
 * - joint-straight: rotates about local z at the input flange, output at +z * length
 * - joint-elbow: pivot about local y at length / 2, output continues along the rotated z
 * - link-straight: pure translation of length along z
 * - link-elbow: length / 2 along z, fixed +90 deg bend about y, length / 2 along the new z
 * - end-effector: translation of length along z; tool z is the drill axis
 *
 * com_offset and inertia are expressed in the frame after the joint rotation
 * (the input frame for passive modules).
 */
struct ModuleSpec {
  int id = 0;
  ModuleKind kind = ModuleKind::link_straight;
  std::string name;
  double length = 0.0;
  double mass = 0.0;
  Vec3 com_offset = Vec3::Zero();
  Mat3 inertia = Mat3::Zero();
  double capsule_radius = 0.0;
  std::optional<double> torque_limit;
  std::optional<JointLimits> joint_position_limits;
  std::optional<double> joint_velocity_limit;

  bool operator==(const ModuleSpec& o) const {
    return id == o.id && kind == o.kind && name == o.name && length == o.length && mass == o.mass &&
           com_offset == o.com_offset && inertia == o.inertia && capsule_radius == o.capsule_radius &&
           torque_limit == o.torque_limit && joint_position_limits == o.joint_position_limits &&
           joint_velocity_limit == o.joint_velocity_limit;
  }
};

inline void validate_module(const ModuleSpec& m) {
  const std::string where = "module " + std::to_string(m.id) + ": ";
  auto finite = [](double v) { return std::isfinite(v); };
  if (!(m.length > 0.0) || !finite(m.length)) throw ValidationError(where + "length must be positive");
  if (!(m.mass >= 0.0) || !finite(m.mass)) throw ValidationError(where + "mass must be non-negative");
  if (!(m.capsule_radius > 0.0) || !finite(m.capsule_radius))
    throw ValidationError(where + "capsule_radius must be positive");
  if (!m.com_offset.allFinite() || !m.inertia.allFinite())
    throw ValidationError(where + "non-finite inertial parameters");
  if ((m.inertia - m.inertia.transpose()).cwiseAbs().maxCoeff() > 1e-12)
    throw ValidationError(where + "inertia tensor must be symmetric");
  if (is_joint(m.kind)) {
    if (!m.torque_limit || !(*m.torque_limit > 0.0))
      throw ValidationError(where + "joint modules need a positive torque_limit");
    if (!m.joint_position_limits || !(m.joint_position_limits->lower < m.joint_position_limits->upper))
      throw ValidationError(where + "joint modules need joint_position_limits with lower < upper");
    if (!m.joint_velocity_limit || !(*m.joint_velocity_limit > 0.0))
      throw ValidationError(where + "joint modules need a positive joint_velocity_limit");
  }
}

/// Catalog of m body modules plus the end effector (id m + 1).  Immutable
/// once constructed; the constructor enforces every invariant.
class ModuleLibrary {
 public:
  ModuleLibrary() = default;

  explicit ModuleLibrary(std::vector<ModuleSpec> modules) : modules_(std::move(modules)) {
    std::sort(modules_.begin(), modules_.end(),
              [](const ModuleSpec& a, const ModuleSpec& b) { return a.id < b.id; });
    if (modules_.empty()) throw ValidationError("module library is empty");
    std::set<int> ids;
    int end_effectors = 0;
    int joints = 0;
    for (const auto& m : modules_) {
      if (!ids.insert(m.id).second) throw ValidationError("duplicate module id " + std::to_string(m.id));
      validate_module(m);
      if (m.kind == ModuleKind::end_effector) ++end_effectors;
      if (is_joint(m.kind)) ++joints;
    }
    const int n = static_cast<int>(modules_.size());
    if (*ids.begin() != 1 || *ids.rbegin() != n)
      throw ValidationError("module ids must cover exactly 1.." + std::to_string(n));
    if (end_effectors != 1 || modules_.back().kind != ModuleKind::end_effector)
      throw ValidationError("library needs exactly one end-effector, with the largest id");
    if (joints == 0) throw ValidationError("library contains no joint module");
  }

  const std::vector<ModuleSpec>& modules() const { return modules_; }
  /// Number of body modules (m).
  int body_count() const { return static_cast<int>(modules_.size()) - 1; }
  /// m + 1: dimension of the module-state vector.
  int size() const { return static_cast<int>(modules_.size()); }
  int end_effector_id() const { return size(); }

  const ModuleSpec& at(int id) const {
    if (id < 1 || id > size()) throw ValidationError("unknown module id " + std::to_string(id));
    return modules_[static_cast<std::size_t>(id - 1)];
  }

  bool operator==(const ModuleLibrary&) const = default;

 private:
  std::vector<ModuleSpec> modules_;
};

namespace detail {

inline Mat3 cylinder_inertia(double mass, double radius, double length) {
  const double axial = 0.5 * mass * radius * radius;
  const double transverse = mass * (3.0 * radius * radius + length * length) / 12.0;
  return Vec3(transverse, transverse, axial).asDiagonal();
}

inline ModuleSpec joint_module(int id, ModuleKind kind, double torque_limit) {
  constexpr double length = 0.25;
  constexpr double mass = 3.5;
  constexpr double radius = 0.06;
  ModuleSpec m;
  m.id = id;
  m.kind = kind;
  m.name = std::string(kind == ModuleKind::joint_straight ? "straight" : "elbow") + " joint " +
           std::to_string(id);
  m.length = length;
  m.mass = mass;
  m.com_offset = kind == ModuleKind::joint_straight ? Vec3(0.0, 0.0, 0.5 * length) : Vec3::Zero();
  m.inertia = cylinder_inertia(mass, radius, length);
  m.capsule_radius = radius;
  m.torque_limit = torque_limit;
  m.joint_position_limits = JointLimits{-2.7, 2.7};
  m.joint_velocity_limit = 2.0;
  return m;
}

inline ModuleSpec link_module(int id, ModuleKind kind, double length) {
  // 1.0 kg per 0.3 m, uniform rod
  const double mass = length / 0.3;
  ModuleSpec m;
  m.id = id;
  m.kind = kind;
  m.name = std::string(kind == ModuleKind::link_straight ? "straight" : "elbow") + " link " +
           std::to_string(id);
  m.length = length;
  m.mass = mass;
  m.com_offset = Vec3(0.0, 0.0, 0.5 * length);
  const double transverse = mass * length * length / 12.0;
  const double radius = 0.05;
  m.inertia = Vec3(transverse, transverse, 0.5 * mass * radius * radius).asDiagonal();
  m.capsule_radius = radius;
  return m;
}

}  // namespace detail

/// Built-in ten-module catalog: six joints (ids 1-6), straight links of
/// 0.3/0.4/0.6 m (ids 7-9), an elbow link (id 10) and the 10 kg drilling end
/// effector (id 11).
inline ModuleLibrary default_library() {
  using detail::joint_module;
  using detail::link_module;
  std::vector<ModuleSpec> mods;
  mods.push_back(joint_module(1, ModuleKind::joint_straight, 120.0));
  mods.push_back(joint_module(2, ModuleKind::joint_elbow, 120.0));
  mods.push_back(joint_module(3, ModuleKind::joint_straight, 200.0));
  mods.push_back(joint_module(4, ModuleKind::joint_elbow, 120.0));
  mods.push_back(joint_module(5, ModuleKind::joint_straight, 120.0));
  mods.push_back(joint_module(6, ModuleKind::joint_elbow, 200.0));
  mods.push_back(link_module(7, ModuleKind::link_straight, 0.3));
  mods.push_back(link_module(8, ModuleKind::link_straight, 0.4));
  mods.push_back(link_module(9, ModuleKind::link_straight, 0.6));
  mods.push_back(link_module(10, ModuleKind::link_elbow, 0.2));

  ModuleSpec tool;
  tool.id = 11;
  tool.kind = ModuleKind::end_effector;
  tool.name = "drill";
  tool.length = 0.2;
  tool.mass = 10.0;
  tool.com_offset = Vec3(0.0, 0.0, 0.1);
  tool.inertia = detail::cylinder_inertia(10.0, 0.05, 0.2);
  tool.capsule_radius = 0.025;
  mods.push_back(tool);
  return ModuleLibrary(std::move(mods));
}

// JSON schema: top-level array of module records.

inline void to_json(nlohmann::json& j, const ModuleSpec& m) {
  j = nlohmann::json::object();
  j["id"] = m.id;
  j["kind"] = std::string(to_string(m.kind));
  if (!m.name.empty()) j["name"] = m.name;
  j["length"] = m.length;
  j["mass"] = m.mass;
  j["com_offset"] = {m.com_offset.x(), m.com_offset.y(), m.com_offset.z()};
  nlohmann::json rows = nlohmann::json::array();
  for (int r = 0; r < 3; ++r) rows.push_back({m.inertia(r, 0), m.inertia(r, 1), m.inertia(r, 2)});
  j["inertia"] = rows;
  j["capsule_radius"] = m.capsule_radius;
  if (m.torque_limit) j["torque_limit"] = *m.torque_limit;
  if (m.joint_position_limits)
    j["joint_position_limits"] = {m.joint_position_limits->lower, m.joint_position_limits->upper};
  if (m.joint_velocity_limit) j["joint_velocity_limit"] = *m.joint_velocity_limit;
}

inline void from_json(const nlohmann::json& j, ModuleSpec& m) {
  m = ModuleSpec{};
  m.id = j.at("id").get<int>();
  m.kind = module_kind_from_string(j.at("kind").get<std::string>());
  m.name = j.value("name", std::string{});
  m.length = j.at("length").get<double>();
  m.mass = j.at("mass").get<double>();
  const auto com = j.at("com_offset").get<std::vector<double>>();
  if (com.size() != 3) throw ValidationError("com_offset must have 3 entries");
  m.com_offset = Vec3(com[0], com[1], com[2]);
  const auto rows = j.at("inertia").get<std::vector<std::vector<double>>>();
  if (rows.size() != 3) throw ValidationError("inertia must be 3x3");
  for (int r = 0; r < 3; ++r) {
    if (rows[r].size() != 3) throw ValidationError("inertia must be 3x3");
    for (int c = 0; c < 3; ++c) m.inertia(r, c) = rows[r][c];
  }
  m.capsule_radius = j.at("capsule_radius").get<double>();
  if (j.contains("torque_limit") && !j["torque_limit"].is_null())
    m.torque_limit = j["torque_limit"].get<double>();
  if (j.contains("joint_position_limits") && !j["joint_position_limits"].is_null()) {
    const auto lim = j["joint_position_limits"].get<std::vector<double>>();
    if (lim.size() != 2) throw ValidationError("joint_position_limits must have 2 entries");
    m.joint_position_limits = JointLimits{lim[0], lim[1]};
  }
  if (j.contains("joint_velocity_limit") && !j["joint_velocity_limit"].is_null())
    m.joint_velocity_limit = j["joint_velocity_limit"].get<double>();
}

inline nlohmann::json library_to_json(const ModuleLibrary& lib) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& m : lib.modules()) arr.push_back(m);
  return arr;
}

inline ModuleLibrary library_from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw ValidationError("library file must hold a top-level array");
  std::vector<ModuleSpec> mods;
  try {
    for (const auto& rec : j) mods.push_back(rec.get<ModuleSpec>());
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed module record: ") + e.what());
  }
  return ModuleLibrary(std::move(mods));
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open '" + path.string() + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError("failed to parse '" + path.string() + "': " + e.what());
  }
}

inline void write_json_file(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write '" + path.string() + "'");
  out << j.dump(2) << '\n';
}

inline ModuleLibrary load_library(const std::filesystem::path& path) {
  try {
    return library_from_json(read_json_file(path));
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

inline void save_library(const std::filesystem::path& path, const ModuleLibrary& lib) {
  write_json_file(path, library_to_json(lib));
}

/// FNV-1a over the compact JSON form; recorded in run manifests.
inline std::uint64_t library_hash(const ModuleLibrary& lib) {
  const std::string text = library_to_json(lib).dump();
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace morphopt
