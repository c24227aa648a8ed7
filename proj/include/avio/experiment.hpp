#pragma once

#include <vector>

#include "avio/config.hpp"
#include "avio/pipeline.hpp"
#include "avio/sim.hpp"

namespace avio {

/// Run configuration matching a simulated rig (camera, extrinsics, IMU noise).
RunConfig config_for(const sim::SimData& data, Mode mode);

/// Ground-truth IMU state at the sample nearest to time t; biases are left
/// at zero as a filter would assume them.
ImuState truth_state_at(const sim::SimData& data, double t);

Trajectory truth_trajectory(const sim::SimData& data);

struct SyntheticRun {
  RunResult result;
  double final_position_error = 0.0;  // meters
  double final_heading_error = 0.0;   // radians, absolute yaw difference
  double rmse = 0.0;                  // position RMSE over all frames, meters
  double seconds = 0.0;               // wall time of the estimator
};

/// Runs the estimator on simulated data, starting from the true state at the
/// first frame. Errors are measured in the ground-truth frame directly since
/// the start pose is shared.
SyntheticRun run_synthetic(const sim::SimData& data, const RunConfig& config);

}  // namespace avio
