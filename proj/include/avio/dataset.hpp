#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "avio/frame.hpp"
#include "avio/geom.hpp"

namespace avio {

/// Parse or I/O failure; the message names the file and, for parse errors, the line.
class LoadError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GroundTruthRow {
  int64_t t_ns = 0;
  Pose pose;  // world_from_imu
  Vec3 velocity = Vec3::Zero();
  Vec3 gyro_bias = Vec3::Zero();
  Vec3 accel_bias = Vec3::Zero();
};

struct Dataset {
  std::vector<int64_t> imu_t_ns;
  std::vector<ImuSample> imu;
  std::vector<FrameData> frames;
  std::optional<std::vector<GroundTruthRow>> truth;
};

/// Reads an ASL-layout directory: imu0/data.csv, cam0/data.csv, optional
/// cam0/detections.txt and state_groundtruth_estimate0/data.csv.
Dataset load_euroc(const std::string& dir);

/// Writes the layout read by load_euroc. Frame patches are not written.
void write_euroc(const Dataset& data, const std::string& dir);

/// Detection file grammar (one record per frame, '#' starts a comment):
///   F <timestamp_ns> <num_segments> <num_points>
///   S <x1> <y1> <x2> <y2> [<truth_id>]     undistorted pixels
///   P <id> <u> <v>                         raw pixels
std::vector<FrameData> read_detections(const std::string& path);
void write_detections(const std::vector<FrameData>& frames, const std::string& path);

Trajectory truth_trajectory(const std::vector<GroundTruthRow>& rows);

/// "timestamp tx ty tz qx qy qz qw"
std::string format_tum_line(double t, const Pose& pose);
void write_tum(const Trajectory& traj, const std::string& path);
Trajectory read_tum(const std::string& path);

}  // namespace avio
