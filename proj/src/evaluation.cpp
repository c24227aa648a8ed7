#include "avio/evaluation.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Geometry>
#include <Eigen/SVD>

namespace avio {

std::vector<std::pair<size_t, size_t>> match_by_time(const Trajectory& est, const Trajectory& ref,
                                                     double tolerance) {
  std::vector<std::pair<size_t, size_t>> out;
  if (ref.empty()) return out;
  for (size_t i = 0; i < est.size(); ++i) {
    const double t = est[i].t;
    auto it = std::lower_bound(ref.begin(), ref.end(), t, [](const TrajectorySample& s, double v) { return s.t < v; });
    size_t best = ref.size();
    double dt = tolerance;
    if (it != ref.end() && std::abs(it->t - t) <= dt) {
      best = it - ref.begin();
      dt = std::abs(it->t - t);
    }
    if (it != ref.begin() && std::abs((it - 1)->t - t) <= dt) best = (it - 1) - ref.begin();
    if (best < ref.size()) out.emplace_back(i, best);
  }
  return out;
}

namespace {

Pose yaw_alignment(const Eigen::Matrix3Xd& src, const Eigen::Matrix3Xd& dst, double fallback_yaw) {
  const Vec3 ms = src.rowwise().mean();
  const Vec3 md = dst.rowwise().mean();
  double sn = 0.0, cs = 0.0;
  for (int i = 0; i < src.cols(); ++i) {
    const Vec3 a = src.col(i) - ms;
    const Vec3 b = dst.col(i) - md;
    sn += a.x() * b.y() - a.y() * b.x();
    cs += a.x() * b.x() + a.y() * b.y();
  }
  const double yaw = std::hypot(sn, cs) > 1e-12 ? std::atan2(sn, cs) : fallback_yaw;
  const Rotation R = Rotation::exp(Vec3(0, 0, yaw));
  return Pose(R, md - R * ms);
}

}  // namespace

AlignmentResult align_trajectories(const Trajectory& est, const Trajectory& ref, double t_begin, double t_end,
                                   bool yaw_only, double tolerance) {
  std::vector<std::pair<size_t, size_t>> m;
  for (const auto& p : match_by_time(est, ref, tolerance)) {
    if (est[p.first].t >= t_begin && est[p.first].t <= t_end) m.push_back(p);
  }
  if (m.size() < 3) throw MetricError("alignment needs at least 3 matched poses, got " + std::to_string(m.size()));
  Eigen::Matrix3Xd src(3, m.size()), dst(3, m.size());
  for (size_t k = 0; k < m.size(); ++k) {
    src.col(k) = est[m[k].first].pose.translation;
    dst.col(k) = ref[m[k].second].pose.translation;
  }
  AlignmentResult res;
  res.matches = static_cast<int>(m.size());
  const Eigen::Matrix3Xd centered = src.colwise() - src.rowwise().mean();
  const Vec3 sv = Eigen::JacobiSVD<Mat3>(centered * centered.transpose()).singularValues();
  res.rank_warning = !(sv[1] > 1e-8 * std::max(sv[0], 1e-300));
  const double fallback_yaw =
      yaw_of(ref[m.front().second].pose.rotation) - yaw_of(est[m.front().first].pose.rotation);
  if (yaw_only || res.rank_warning) {
    res.yaw_only = true;
    res.transform = yaw_alignment(src, dst, fallback_yaw);
    return res;
  }
  const Mat4 T = Eigen::umeyama(src, dst, false);
  res.transform = Pose(Rotation::from_matrix(T.topLeftCorner<3, 3>()), T.topRightCorner<3, 1>());
  return res;
}

Trajectory transform_trajectory(const Pose& T, const Trajectory& traj) {
  Trajectory out;
  out.reserve(traj.size());
  for (const auto& s : traj) out.push_back({s.t, T * s.pose});
  return out;
}

double trajectory_length(const Trajectory& traj) {
  double len = 0.0;
  for (size_t i = 1; i < traj.size(); ++i) len += (traj[i].pose.translation - traj[i - 1].pose.translation).norm();
  return len;
}

std::vector<RelativeError> relative_position_errors(const Trajectory& est, const Trajectory& ref,
                                                    const std::vector<double>& lengths, double tolerance) {
  const auto m = match_by_time(est, ref, tolerance);
  std::vector<double> dist(m.size(), 0.0);
  for (size_t k = 1; k < m.size(); ++k) {
    dist[k] = dist[k - 1] +
              (ref[m[k].second].pose.translation - ref[m[k - 1].second].pose.translation).norm();
  }
  std::vector<RelativeError> out;
  for (double L : lengths) {
    RelativeError e;
    e.length = L;
    double sum = 0.0, sum2 = 0.0;
    size_t j = 0;
    for (size_t i = 0; i < m.size(); ++i) {
      j = std::max(j, i);
      while (j < m.size() && dist[j] - dist[i] < L) ++j;
      if (j >= m.size()) break;
      const Pose& ei = est[m[i].first].pose;
      const Pose& ej = est[m[j].first].pose;
      const Pose& gi = ref[m[i].second].pose;
      const Pose& gj = ref[m[j].second].pose;
      const Vec3 de = (gi.rotation * ei.rotation.inverse()) * (ej.translation - ei.translation);
      const double err = (de - (gj.translation - gi.translation)).norm();
      sum += err;
      sum2 += err * err;
      ++e.count;
    }
    if (e.count > 0) {
      e.mean = sum / e.count;
      e.rmse = std::sqrt(sum2 / e.count);
    }
    out.push_back(e);
  }
  return out;
}

ErrorMetrics compute_errors(const Trajectory& aligned, const Trajectory& ref, double t_begin, double t_end,
                            const std::vector<double>& rpe_lengths, double tolerance) {
  ErrorMetrics out;
  double sum2 = 0.0;
  for (const auto& [i, j] : match_by_time(aligned, ref, tolerance)) {
    if (aligned[i].t < t_begin || aligned[i].t > t_end) continue;
    const double e = (aligned[i].pose.translation - ref[j].pose.translation).norm();
    out.errors.emplace_back(aligned[i].t, e);
    sum2 += e * e;
    out.max = std::max(out.max, e);
  }
  if (out.errors.empty()) throw MetricError("no matched poses in the evaluation window");
  out.count = static_cast<int>(out.errors.size());
  out.rmse = std::sqrt(sum2 / out.count);
  out.length = trajectory_length(ref);
  out.drift_percent = out.length > 0 ? 100.0 * out.rmse / out.length : 0.0;
  if (!rpe_lengths.empty()) out.relative = relative_position_errors(aligned, ref, rpe_lengths, tolerance);
  return out;
}

}  // namespace avio
