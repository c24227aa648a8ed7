#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "avio/atlanta.hpp"
#include "avio/geom.hpp"
#include "avio/tracker.hpp"

namespace avio {

struct PointDetection {
  int id = -1;
  Vec2 px = Vec2::Zero();  // raw (distorted) pixels
};

/// One camera frame as delivered by a front end: undistorted line segments,
/// raw point detections with track ids, and optionally image intensities.
struct FrameData {
  int64_t t_ns = 0;
  std::vector<LineSegment2D> segments;
  std::vector<int> segment_truth;  // generating line id per segment, -1 if unknown
  std::vector<PointDetection> points;
  std::string image;  // file name from cam0/data.csv, may be empty
  std::shared_ptr<const PatchSource> patches;

  double t() const { return static_cast<double>(t_ns) * 1e-9; }
};

/// Timestamped pose sequence (world_from_body).
struct TrajectorySample {
  double t = 0.0;
  Pose pose;
};
using Trajectory = std::vector<TrajectorySample>;

}  // namespace avio
