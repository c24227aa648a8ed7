#pragma once

#include <cstdint>
#include <string>

#include "avio/filter.hpp"
#include "avio/geom.hpp"
#include "avio/tracker.hpp"

namespace avio {

enum class Mode { kPointOnly, kPointLine, kStructVio };

const char* to_string(Mode mode);
/// Accepts "point-only", "point-line" / "point+line", "structvio".
Mode parse_mode(const std::string& name);

struct RunConfig {
  CameraModel camera;
  Pose extrinsics;  // imu_from_camera
  ImuNoiseParams imu;
  InitialUncertainty initial;
  TrackerParams tracker;

  Mode mode = Mode::kStructVio;
  int max_points = 125;
  int max_lines = 30;
  int max_clones = 30;
  double sigma_line_px = 1.5;
  double sigma_point_px = 1.0;
  double gate_confidence = 0.95;
  double reprojection_threshold_px = 4.0;
  double sigma_phi = 5.0 * M_PI / 180.0;
  double merge_threshold = 5.0 * M_PI / 180.0;
  double rho0 = 0.3;         // 1/m, initial inverse depth of new lines
  double sigma_rho0 = 5.0;   // 1/m
  double segment_sigma_px = 3.0;  // detection error used for the initial theta uncertainty
  double min_point_parallax = 1.0 * M_PI / 180.0;
  int min_point_views = 3;
  bool accumulate = true;
  bool multi_world = true;  // false: at most one horizontal world (Manhattan)
  double init_window_s = 0.5;  // accelerometer averaging for roll/pitch when no ground truth
  double divergence_position_m = 1e6;
  uint64_t seed = 1;
  double align_window_s = 5.0;
};

/// Reads a YAML run configuration on top of the defaults. Angles in the file
/// are in degrees (keys end in _deg). Throws std::runtime_error on bad input.
RunConfig load_run_config(const std::string& path);
void save_run_config(const RunConfig& cfg, const std::string& path);

}  // namespace avio
