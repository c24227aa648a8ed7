#include "avio/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

namespace avio {

RunConfig config_for(const sim::SimData& data, Mode mode) {
  RunConfig cfg;
  cfg.camera = data.camera;
  cfg.extrinsics = data.extrinsics;
  cfg.imu = data.imu_noise;
  cfg.mode = mode;
  return cfg;
}

namespace {

size_t nearest_truth(const sim::SimData& data, double t) {
  const int64_t t_ns = static_cast<int64_t>(std::llround(t * 1e9));
  const auto it = std::lower_bound(data.truth_t_ns.begin(), data.truth_t_ns.end(), t_ns);
  if (it == data.truth_t_ns.begin()) return 0;
  if (it == data.truth_t_ns.end()) return data.truth_t_ns.size() - 1;
  const size_t k = static_cast<size_t>(it - data.truth_t_ns.begin());
  return (*it - t_ns) < (t_ns - data.truth_t_ns[k - 1]) ? k : k - 1;
}

}  // namespace

ImuState truth_state_at(const sim::SimData& data, double t) {
  const auto& k = data.truth.at(nearest_truth(data, t));
  ImuState s;
  s.orientation = k.pose.rotation;
  s.position = k.pose.translation;
  s.velocity = k.velocity;
  return s;
}

Trajectory truth_trajectory(const sim::SimData& data) {
  Trajectory out;
  out.reserve(data.truth.size());
  for (size_t k = 0; k < data.truth.size(); ++k) {
    out.push_back({static_cast<double>(data.truth_t_ns[k]) * 1e-9, data.truth[k].pose});
  }
  return out;
}

SyntheticRun run_synthetic(const sim::SimData& data, const RunConfig& config) {
  SyntheticRun out;
  if (data.frames.empty()) return out;
  const auto start = std::chrono::steady_clock::now();
  out.result = run_vio(config, data.imu.samples, data.frames, truth_state_at(data, data.frames.front().t()));
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (out.result.trajectory.empty()) return out;

  double sum = 0.0;
  for (const auto& s : out.result.trajectory) {
    const auto& truth = data.truth[nearest_truth(data, s.t)];
    sum += (s.pose.translation - truth.pose.translation).squaredNorm();
  }
  out.rmse = std::sqrt(sum / static_cast<double>(out.result.trajectory.size()));
  const auto& last = out.result.trajectory.back();
  const auto& truth = data.truth[nearest_truth(data, last.t)];
  out.final_position_error = (last.pose.translation - truth.pose.translation).norm();
  out.final_heading_error = std::abs(wrap_angle(yaw_of(last.pose.rotation) - yaw_of(truth.pose.rotation)));
  if (out.result.aborted) {
    out.final_position_error = out.rmse = out.final_heading_error = std::numeric_limits<double>::infinity();
  }
  return out;
}

}  // namespace avio
