#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "avio/atlanta.hpp"
#include "avio/geom.hpp"

namespace avio {

/// Camera pose together with the segment observed from it.
struct LineView {
  Pose cam_pose;  // world_from_camera
  LineSegment2D seg;
};

struct GaussNewtonOptions {
  int max_iterations = 10;
  int max_halvings = 5;
  double step_tolerance = 1e-8;
  double diff_step = 1e-6;
};

template <int N>
struct GaussNewtonReport {
  Eigen::Matrix<double, N, 1> x;
  Eigen::Matrix<double, N, N> information;  // Lambda of the last normal equation
  Eigen::Matrix<double, N, 1> rhs;          // Y of the last normal equation
  double initial_cost = 0.0;
  double cost = 0.0;
  int iterations = 0;
  bool converged = false;
  bool failed = false;  // no descent possible from the start point
};

/// Plain Gauss-Newton with step halving over a whitened residual function.
/// Jacobians come from central differences. `normalize` maps every trial
/// point back onto the parameter domain.
template <int N>
GaussNewtonReport<N> gauss_newton(
    const Eigen::Matrix<double, N, 1>& x0,
    const std::function<VecX(const Eigen::Matrix<double, N, 1>&)>& residual,
    const std::function<Eigen::Matrix<double, N, 1>(const Eigen::Matrix<double, N, 1>&)>& normalize,
    const GaussNewtonOptions& opt = {}) {
  using VecN = Eigen::Matrix<double, N, 1>;
  using MatN = Eigen::Matrix<double, N, N>;
  GaussNewtonReport<N> rep;
  rep.x = x0;
  VecX r = residual(x0);
  rep.initial_cost = rep.cost = r.squaredNorm();
  for (int it = 0; it < opt.max_iterations; ++it) {
    Eigen::Matrix<double, Eigen::Dynamic, N> J(r.size(), N);
    for (int k = 0; k < N; ++k) {
      VecN d = VecN::Zero();
      d[k] = opt.diff_step;
      J.col(k) = (residual(rep.x + d) - residual(rep.x - d)) / (2.0 * opt.diff_step);
    }
    const MatN H = J.transpose() * J;
    const VecN g = -(J.transpose() * r);
    rep.information = H;
    rep.rhs = g;
    rep.iterations = it + 1;
    Eigen::LDLT<MatN> ldlt(H);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) {
      rep.failed = it == 0;
      return rep;
    }
    const VecN step = ldlt.solve(g);
    if (!step.allFinite()) {
      rep.failed = it == 0;
      return rep;
    }
    double alpha = 1.0;
    bool accepted = false;
    for (int h = 0; h <= opt.max_halvings; ++h, alpha *= 0.5) {
      const VecN trial = normalize(rep.x + alpha * step);
      VecX r_trial = residual(trial);
      const double c = r_trial.squaredNorm();
      if (std::isfinite(c) && c <= rep.cost) {
        rep.x = trial;
        rep.cost = c;
        r = std::move(r_trial);
        accepted = true;
        break;
      }
    }
    if (!accepted || step.norm() < opt.step_tolerance) {
      rep.converged = accepted || step.norm() < 1e-6;
      rep.failed = !rep.converged && it == 0;
      return rep;
    }
  }
  rep.converged = true;
  return rep;
}

struct LineSolveReport {
  Vec2 params = Vec2::Zero();  // (theta, rho)
  Mat2 information = Mat2::Zero();
  Vec2 rhs = Vec2::Zero();
  double cost = 0.0;
  int iterations = 0;
  bool converged = false;
};

/// Whitened residuals of one line over a set of views (2 rows per view,
/// views whose projection degenerates contribute a zero pair).
VecX line_view_residuals(const Vec2& l, LineAxis axis, const LineFrame& frame, const std::vector<LineView>& views,
                         const CameraModel& cam, double sigma_px);

/// Minimizes the reprojection cost plus the prior term. On failure the line's
/// current parameters are returned with converged = false.
LineSolveReport triangulate_line(const StructuralLine& line, const LinePrior& prior,
                                 const std::vector<LineView>& views, const LineFrame& frame,
                                 const CameraModel& cam, double sigma_px, const GaussNewtonOptions& opt = {});

struct AccumulationResult {
  LinePrior prior;
  bool accumulated = false;
};

/// Folds measurements that leave the window into the line prior.
AccumulationResult accumulate_information(const StructuralLine& line, const LinePrior& prior,
                                          const std::vector<LineView>& dropped, const LineFrame& frame,
                                          const CameraModel& cam, double sigma_px,
                                          const GaussNewtonOptions& opt = {});

/// Range of the line covered by the segment's endpoint rays. Returns the
/// previous range when a ray is within 0.5 degrees of the line direction.
Vec2 update_range(const StructuralLine& line, const LineView& view, const LineFrame& frame, const CameraModel& cam);

/// Largest endpoint distance (pixels) over the views; nullopt if any view degenerates.
std::optional<double> max_reprojection_error(const StructuralLine& line, const std::vector<LineView>& views,
                                             const LineFrame& frame, const CameraModel& cam);

/// true keeps the line: every endpoint distance is <= threshold_px.
bool reprojection_outlier_check(const StructuralLine& line, const std::vector<LineView>& views,
                                const LineFrame& frame, const CameraModel& cam, double threshold_px = 4.0);

/// Point observation in undistorted pixel coordinates.
struct PointView {
  Pose cam_pose;  // world_from_camera
  Vec2 px;
};

struct PointPrior {
  Vec3 mean = Vec3::Zero();  // world coordinates
  Mat3 cov = Mat3::Identity();
};

enum class PointTriangulationError { kTooFewViews, kLowParallax, kBehindCamera, kNoConvergence };

struct PointSolveReport {
  std::optional<Vec3> point;
  PointTriangulationError error = PointTriangulationError::kNoConvergence;
  double cost = 0.0;
};

/// Inverse-depth Gauss-Newton anchored at the first view. A prior (if any)
/// lifts the parallax requirement.
PointSolveReport triangulate_point(const std::vector<PointView>& views, const CameraModel& cam, double sigma_px,
                                   const std::optional<PointPrior>& prior = std::nullopt,
                                   double min_parallax_rad = M_PI / 180.0);

/// Angle between the bearing rays of the first view and the most divergent other view.
double max_parallax(const std::vector<PointView>& views, const CameraModel& cam);

struct PointAccumulationResult {
  PointPrior prior;
  bool accumulated = false;
};

PointAccumulationResult accumulate_point_information(const Vec3& estimate, const std::optional<PointPrior>& prior,
                                                     const std::vector<PointView>& dropped, const CameraModel& cam,
                                                     double sigma_px);

}  // namespace avio
