#pragma once

#include <stdexcept>
#include <utility>
#include <vector>

#include "avio/frame.hpp"
#include "avio/geom.hpp"

namespace avio {

class MetricError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Index pairs (estimate, reference) with |dt| <= tolerance, nearest first.
std::vector<std::pair<size_t, size_t>> match_by_time(const Trajectory& est, const Trajectory& ref,
                                                     double tolerance = 0.01);

struct AlignmentResult {
  Pose transform;          // maps estimate coordinates into the reference frame
  bool yaw_only = false;   // 4-DoF alignment was used
  bool rank_warning = false;
  int matches = 0;
};

/// Rigid alignment over estimate samples with t in [t_begin, t_end].
/// Degenerate (collinear) windows fall back to yaw + translation.
/// Throws MetricError with fewer than 3 matches.
AlignmentResult align_trajectories(const Trajectory& est, const Trajectory& ref, double t_begin, double t_end,
                                   bool yaw_only = false, double tolerance = 0.01);

Trajectory transform_trajectory(const Pose& T, const Trajectory& traj);

struct RelativeError {
  double length = 0.0;  // meters of travel
  double rmse = 0.0;
  double mean = 0.0;
  int count = 0;
};

struct ErrorMetrics {
  double rmse = 0.0;
  double max = 0.0;
  int count = 0;
  std::vector<std::pair<double, double>> errors;  // (t, position error) over the window
  std::vector<RelativeError> relative;
  double length = 0.0;         // reference length
  double drift_percent = 0.0;  // rmse / length
};

/// Position RMSE and max over [t_begin, t_end] of an aligned estimate.
/// Throws MetricError when nothing matches.
ErrorMetrics compute_errors(const Trajectory& aligned, const Trajectory& ref, double t_begin, double t_end,
                            const std::vector<double>& rpe_lengths = {}, double tolerance = 0.01);

std::vector<RelativeError> relative_position_errors(const Trajectory& est, const Trajectory& ref,
                                                    const std::vector<double>& lengths, double tolerance = 0.01);

double trajectory_length(const Trajectory& traj);

}  // namespace avio
