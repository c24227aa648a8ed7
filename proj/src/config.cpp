#include "avio/config.hpp"

#include <fstream>
#include <stdexcept>
#include <variant>
#include <vector>

#include <yaml-cpp/yaml.h>

namespace avio {

const char* to_string(Mode mode) {
  switch (mode) {
    case Mode::kPointOnly: return "point-only";
    case Mode::kPointLine: return "point-line";
    case Mode::kStructVio: return "structvio";
  }
  return "?";
}

Mode parse_mode(const std::string& name) {
  if (name == "point-only" || name == "point_only") return Mode::kPointOnly;
  if (name == "point-line" || name == "point+line" || name == "point_line") return Mode::kPointLine;
  if (name == "structvio") return Mode::kStructVio;
  throw std::runtime_error("unknown mode '" + name + "' (expected point-only, point-line or structvio)");
}

namespace {

constexpr double kDeg = M_PI / 180.0;

struct Field {
  const char* section;
  const char* key;
  std::variant<double*, int*, bool*> target;
  double scale = 1.0;  // file value * scale = internal value
};

std::vector<Field> fields(RunConfig& c) {
  return {
      {"camera", "fx", &c.camera.fx},
      {"camera", "fy", &c.camera.fy},
      {"camera", "cx", &c.camera.cx},
      {"camera", "cy", &c.camera.cy},
      {"camera", "omega", &c.camera.omega},
      {"camera", "width", &c.camera.width},
      {"camera", "height", &c.camera.height},
      {"imu", "gyro_noise", &c.imu.gyro_noise},
      {"imu", "accel_noise", &c.imu.accel_noise},
      {"imu", "gyro_walk", &c.imu.gyro_walk},
      {"imu", "accel_walk", &c.imu.accel_walk},
      {"imu", "gravity", &c.imu.gravity},
      {"features", "max_points", &c.max_points},
      {"features", "max_lines", &c.max_lines},
      {"features", "max_clones", &c.max_clones},
      {"features", "min_point_views", &c.min_point_views},
      {"filter", "sigma_line_px", &c.sigma_line_px},
      {"filter", "sigma_point_px", &c.sigma_point_px},
      {"filter", "gate_confidence", &c.gate_confidence},
      {"filter", "reprojection_threshold_px", &c.reprojection_threshold_px},
      {"filter", "sigma_phi_deg", &c.sigma_phi, kDeg},
      {"filter", "merge_threshold_deg", &c.merge_threshold, kDeg},
      {"filter", "rho0", &c.rho0},
      {"filter", "sigma_rho0", &c.sigma_rho0},
      {"filter", "segment_sigma_px", &c.segment_sigma_px},
      {"filter", "min_point_parallax_deg", &c.min_point_parallax, kDeg},
      {"filter", "accumulate", &c.accumulate},
      {"filter", "multi_world", &c.multi_world},
      {"filter", "divergence_position_m", &c.divergence_position_m},
      {"filter", "init_window_s", &c.init_window_s},
      {"tracker", "gate_distance_px", &c.tracker.gate_distance_px},
      {"tracker", "gate_angle_deg", &c.tracker.gate_angle_rad, kDeg},
      {"tracker", "samples", &c.tracker.samples},
      {"tracker", "patch_side", &c.tracker.patch_side},
      {"tracker", "search_px", &c.tracker.search_px},
      {"tracker", "search_step_px", &c.tracker.search_step_px},
      {"tracker", "zncc_threshold", &c.tracker.zncc_threshold},
      {"tracker", "delayed_drop", &c.tracker.delayed_drop},
      {"tracker", "classify_distance_px", &c.tracker.classify_distance_px},
      {"tracker", "classify_angle_deg", &c.tracker.classify_angle_rad, kDeg},
      {"tracker", "init_close_distance_px", &c.tracker.init_close_distance_px},
      {"tracker", "init_close_angle_deg", &c.tracker.init_close_angle_rad, kDeg},
      {"tracker", "init_min_length_px", &c.tracker.init_min_length_px},
      {"tracker", "ransac_min_support", &c.tracker.ransac_min_support},
      {"tracker", "ransac_max_iterations", &c.tracker.ransac_max_iterations},
      {"tracker", "world_separation_deg", &c.tracker.world_separation_rad, kDeg},
      {"initial", "roll_pitch_deg", &c.initial.roll_pitch, kDeg},
      {"initial", "yaw_deg", &c.initial.yaw, kDeg},
      {"initial", "position_m", &c.initial.position},
      {"initial", "velocity_mps", &c.initial.velocity},
      {"initial", "gyro_bias", &c.initial.gyro_bias},
      {"initial", "accel_bias", &c.initial.accel_bias},
      {"initial", "ext_rotation_deg", &c.initial.ext_rotation, kDeg},
      {"initial", "ext_translation_m", &c.initial.ext_translation},
      {"evaluation", "align_window_s", &c.align_window_s},
  };
}

}  // namespace

RunConfig load_run_config(const std::string& path) {
  RunConfig c;
  YAML::Node root;
  try {
    root = YAML::LoadFile(path);
  } catch (const YAML::Exception& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
  try {
    if (root["mode"]) c.mode = parse_mode(root["mode"].as<std::string>());
    if (root["seed"]) c.seed = root["seed"].as<uint64_t>();
    const YAML::Node& doc = root;  // const lookups do not insert missing keys
    for (const Field& f : fields(c)) {
      const YAML::Node section = doc[f.section];
      if (!section || !section.IsMap()) continue;
      const YAML::Node n = section[f.key];
      if (!n || n.IsNull()) continue;
      try {
        if (auto* d = std::get_if<double*>(&f.target)) **d = n.as<double>() * f.scale;
        else if (auto* i = std::get_if<int*>(&f.target)) **i = n.as<int>();
        else **std::get_if<bool*>(&f.target) = n.as<bool>();
      } catch (const YAML::Exception& e) {
        throw std::runtime_error(path + ": " + f.section + "." + f.key + ": " + e.what());
      }
    }
    if (const auto ext = root["extrinsics"]) {
      if (const auto q = ext["rotation_wxyz"]) {
        c.extrinsics.rotation = Rotation(q[0].as<double>(), q[1].as<double>(), q[2].as<double>(), q[3].as<double>());
      }
      if (const auto t = ext["translation_m"]) {
        c.extrinsics.translation = Vec3(t[0].as<double>(), t[1].as<double>(), t[2].as<double>());
      }
    }
  } catch (const YAML::Exception& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
  if (c.max_points <= 0 || c.max_lines <= 0 || c.max_clones < 3) {
    throw std::runtime_error(path + ": feature budgets must be positive and max_clones >= 3");
  }
  return c;
}

void save_run_config(const RunConfig& cfg, const std::string& path) {
  RunConfig c = cfg;
  YAML::Emitter out;
  out << YAML::BeginMap;
  out << YAML::Key << "mode" << YAML::Value << to_string(c.mode);
  out << YAML::Key << "seed" << YAML::Value << c.seed;
  const auto all = fields(c);
  std::string section;
  for (size_t k = 0; k < all.size(); ++k) {
    const Field& f = all[k];
    if (section != f.section) {
      if (!section.empty()) out << YAML::EndMap;
      section = f.section;
      out << YAML::Key << section << YAML::Value << YAML::BeginMap;
    }
    out << YAML::Key << f.key << YAML::Value;
    if (auto* d = std::get_if<double*>(&f.target)) out << YAML::Precision(17) << **d / f.scale;
    else if (auto* i = std::get_if<int*>(&f.target)) out << **i;
    else out << **std::get_if<bool*>(&f.target);
  }
  if (!section.empty()) out << YAML::EndMap;
  const Quat q = c.extrinsics.rotation.quat();
  out << YAML::Key << "extrinsics" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "rotation_wxyz" << YAML::Value << YAML::Flow << YAML::BeginSeq << q.w() << q.x() << q.y()
      << q.z() << YAML::EndSeq;
  out << YAML::Key << "translation_m" << YAML::Value << YAML::Flow << YAML::BeginSeq << c.extrinsics.translation.x()
      << c.extrinsics.translation.y() << c.extrinsics.translation.z() << YAML::EndSeq;
  out << YAML::EndMap << YAML::EndMap;
  std::ofstream f(path);
  if (!f) throw std::runtime_error(path + ": cannot write");
  f << out.c_str() << '\n';
}

}  // namespace avio
