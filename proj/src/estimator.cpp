#include "avio/estimator.hpp"

#include <cmath>

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

namespace avio {

namespace {

// Upper factor U with U^T U = info, after clamping tiny eigenvalues.
template <int N>
Eigen::Matrix<double, N, N> whitening_from_cov(const Eigen::Matrix<double, N, N>& cov) {
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, N, N>> es(0.5 * (cov + cov.transpose()));
  Eigen::Matrix<double, N, 1> ev = es.eigenvalues().cwiseMax(1e-12);
  return ev.cwiseInverse().cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
}

VecX line_cost_residuals(const Vec2& l, const StructuralLine& line, const LinePrior& prior,
                         const Mat2& prior_sqrt_info, const std::vector<LineView>& views, const LineFrame& frame,
                         const CameraModel& cam, double sigma_px) {
  VecX r(2 * views.size() + 2);
  r.head(2 * views.size()) = line_view_residuals(l, line.axis, frame, views, cam, sigma_px);
  const Vec2 d(wrap_angle(l.x() - prior.mean.x()), l.y() - prior.mean.y());
  r.tail<2>() = prior_sqrt_info * d;
  return r;
}

}  // namespace

VecX line_view_residuals(const Vec2& l, LineAxis axis, const LineFrame& frame, const std::vector<LineView>& views,
                         const CameraModel& cam, double sigma_px) {
  VecX r = VecX::Zero(2 * views.size());
  for (size_t k = 0; k < views.size(); ++k) {
    const auto proj = project_line(l.x(), l.y(), axis, frame.world_from_start, frame.anchor, views[k].cam_pose, cam);
    if (!proj) continue;
    const Vec3 n = normalize_image_line(proj->line);
    r[2 * k] = views[k].seg.a.dot(n) / sigma_px;
    r[2 * k + 1] = views[k].seg.b.dot(n) / sigma_px;
  }
  return r;
}

LineSolveReport triangulate_line(const StructuralLine& line, const LinePrior& prior,
                                 const std::vector<LineView>& views, const LineFrame& frame,
                                 const CameraModel& cam, double sigma_px, const GaussNewtonOptions& opt) {
  const Mat2 U = whitening_from_cov<2>(prior.cov);
  auto residual = [&](const Vec2& l) {
    return line_cost_residuals(l, line, prior, U, views, frame, cam, sigma_px);
  };
  auto normalize = [](const Vec2& l) { return normalize_line_params(l); };
  const auto gn = gauss_newton<2>(line.params(), residual, normalize, opt);

  LineSolveReport rep;
  rep.iterations = gn.iterations;
  rep.information = gn.information;
  rep.rhs = gn.rhs;
  if (gn.failed) {
    rep.params = line.params();
    rep.cost = gn.initial_cost;
    rep.converged = false;
    return rep;
  }
  rep.params = gn.x;
  rep.cost = gn.cost;
  rep.converged = gn.converged;
  return rep;
}

AccumulationResult accumulate_information(const StructuralLine& line, const LinePrior& prior,
                                          const std::vector<LineView>& dropped, const LineFrame& frame,
                                          const CameraModel& cam, double sigma_px, const GaussNewtonOptions& opt) {
  AccumulationResult out{prior, false};
  if (dropped.empty()) return out;
  GaussNewtonOptions tight = opt;
  tight.max_iterations = std::max(opt.max_iterations, 20);
  tight.step_tolerance = std::min(opt.step_tolerance, 1e-12);
  const Mat2 U = whitening_from_cov<2>(prior.cov);
  auto residual = [&](const Vec2& l) {
    return line_cost_residuals(l, line, prior, U, dropped, frame, cam, sigma_px);
  };
  auto normalize = [](const Vec2& l) { return normalize_line_params(l); };
  const auto gn = gauss_newton<2>(line.params(), residual, normalize, tight);
  if (gn.failed) return out;

  Eigen::SelfAdjointEigenSolver<Mat2> es(gn.information);
  if (es.eigenvalues().minCoeff() < 1e-12) return out;
  out.prior.mean = gn.x;
  out.prior.cov = gn.information.inverse();
  out.prior.cov = 0.5 * (out.prior.cov + out.prior.cov.transpose()).eval();
  out.accumulated = true;
  return out;
}

Vec2 update_range(const StructuralLine& line, const LineView& view, const LineFrame& frame, const CameraModel& cam) {
  if (!(line.rho > 0.0)) return line.range;
  const Vec3 p0 = line_point_world(line.theta, line.rho, line.axis, frame.world_from_start, frame.anchor);
  const Vec3 u = line_direction_world(line.axis, frame.world_from_start);
  const Vec3 c = view.cam_pose.translation;
  const Mat3 R_wc = view.cam_pose.rotation.matrix();
  const double cos_min = std::cos(0.5 * M_PI / 180.0);

  double t[2];
  const Vec3 ends[2] = {view.seg.a, view.seg.b};
  for (int i = 0; i < 2; ++i) {
    const Vec3 d = (R_wc * (cam.K_inv() * ends[i])).normalized();
    const double b = u.dot(d);
    if (std::abs(b) > cos_min) return line.range;
    const Vec3 w0 = p0 - c;
    t[i] = (b * d.dot(w0) - u.dot(w0)) / (1.0 - b * b);
  }
  return t[0] <= t[1] ? Vec2(t[0], t[1]) : Vec2(t[1], t[0]);
}

std::optional<double> max_reprojection_error(const StructuralLine& line, const std::vector<LineView>& views,
                                             const LineFrame& frame, const CameraModel& cam) {
  double worst = 0.0;
  for (const auto& v : views) {
    const auto proj = project_line(line.theta, line.rho, line.axis, frame.world_from_start, frame.anchor,
                                   v.cam_pose, cam);
    if (!proj) return std::nullopt;
    const Vec3 n = normalize_image_line(proj->line);
    worst = std::max({worst, std::abs(v.seg.a.dot(n)), std::abs(v.seg.b.dot(n))});
  }
  return worst;
}

bool reprojection_outlier_check(const StructuralLine& line, const std::vector<LineView>& views,
                                const LineFrame& frame, const CameraModel& cam, double threshold_px) {
  const auto err = max_reprojection_error(line, views, frame, cam);
  return err && *err <= threshold_px;
}

double max_parallax(const std::vector<PointView>& views, const CameraModel& cam) {
  if (views.size() < 2) return 0.0;
  auto bearing = [&](const PointView& v) {
    const Vec2 n = cam.pixel_to_normalized(v.px);
    return Vec3(v.cam_pose.rotation * Vec3(n.x(), n.y(), 1.0)).normalized();
  };
  const Vec3 b0 = bearing(views.front());
  double best = 0.0;
  for (size_t k = 1; k < views.size(); ++k) {
    best = std::max(best, std::acos(std::clamp(b0.dot(bearing(views[k])), -1.0, 1.0)));
  }
  return best;
}

namespace {

std::optional<Vec3> linear_triangulation(const std::vector<PointView>& views, const CameraModel& cam) {
  Eigen::MatrixXd A(2 * views.size(), 4);
  for (size_t k = 0; k < views.size(); ++k) {
    const Pose T_cw = views[k].cam_pose.inverse();
    Eigen::Matrix<double, 3, 4> P;
    P.leftCols<3>() = T_cw.rotation.matrix();
    P.col(3) = T_cw.translation;
    const Vec2 n = cam.pixel_to_normalized(views[k].px);
    A.row(2 * k) = n.x() * P.row(2) - P.row(0);
    A.row(2 * k + 1) = n.y() * P.row(2) - P.row(1);
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeFullV);
  const Vec4 X = svd.matrixV().col(3);
  if (std::abs(X[3]) < 1e-12) return std::nullopt;
  return Vec3(X.head<3>() / X[3]);
}

VecX point_residuals(const Vec3& p_w, const std::vector<PointView>& views, const CameraModel& cam, double sigma_px) {
  VecX r(2 * views.size());
  for (size_t k = 0; k < views.size(); ++k) {
    const Vec3 pc = views[k].cam_pose.inverse() * p_w;
    const double z = std::abs(pc.z()) < 1e-9 ? 1e-9 : pc.z();
    const Vec2 px(cam.fx * pc.x() / z + cam.cx, cam.fy * pc.y() / z + cam.cy);
    r.segment<2>(2 * k) = (px - views[k].px) / sigma_px;
  }
  return r;
}

}  // namespace

PointSolveReport triangulate_point(const std::vector<PointView>& views, const CameraModel& cam, double sigma_px,
                                   const std::optional<PointPrior>& prior, double min_parallax_rad) {
  PointSolveReport rep;
  if (views.size() < (prior ? 1u : 2u)) {
    rep.error = PointTriangulationError::kTooFewViews;
    return rep;
  }
  if (!prior && max_parallax(views, cam) < min_parallax_rad) {
    rep.error = PointTriangulationError::kLowParallax;
    return rep;
  }

  const Pose& anchor = views.front().cam_pose;
  const Pose anchor_inv = anchor.inverse();
  Vec3 guess;
  if (prior) {
    guess = anchor_inv * prior->mean;
  } else if (auto lin = linear_triangulation(views, cam)) {
    guess = anchor_inv * *lin;
  } else {
    guess = Vec3(0, 0, 5.0);
  }
  if (!(guess.z() > 0.05)) {
    const Vec2 n = cam.pixel_to_normalized(views.front().px);
    guess = Vec3(n.x(), n.y(), 1.0) * 5.0;
  }

  Mat3 prior_sqrt = Mat3::Zero();
  if (prior) prior_sqrt = whitening_from_cov<3>(prior->cov);

  auto to_world = [&](const Vec3& x) { return anchor * Vec3(Vec3(x.x(), x.y(), 1.0) / x.z()); };
  auto residual = [&](const Vec3& x) -> VecX {
    const Vec3 p_w = to_world(x);
    VecX r = point_residuals(p_w, views, cam, sigma_px);
    if (!prior) return r;
    VecX full(r.size() + 3);
    full << r, prior_sqrt * (p_w - prior->mean);
    return full;
  };
  auto normalize = [](const Vec3& x) { return x; };
  const Vec3 x0(guess.x() / guess.z(), guess.y() / guess.z(), 1.0 / guess.z());
  GaussNewtonOptions opt;
  opt.max_iterations = 15;
  opt.diff_step = 1e-7;
  const auto gn = gauss_newton<3>(x0, residual, normalize, opt);
  if (gn.failed || !gn.x.allFinite() || gn.x.z() <= 0.0) {
    rep.error = PointTriangulationError::kNoConvergence;
    return rep;
  }
  const Vec3 p_w = to_world(gn.x);
  for (const auto& v : views) {
    if ((v.cam_pose.inverse() * p_w).z() <= kMinDepth) {
      rep.error = PointTriangulationError::kBehindCamera;
      return rep;
    }
  }
  rep.point = p_w;
  rep.cost = gn.cost;
  return rep;
}

PointAccumulationResult accumulate_point_information(const Vec3& estimate, const std::optional<PointPrior>& prior,
                                                     const std::vector<PointView>& dropped, const CameraModel& cam,
                                                     double sigma_px) {
  PointAccumulationResult out;
  if (prior) out.prior = *prior;
  if (dropped.empty()) return out;
  Mat3 prior_sqrt = Mat3::Zero();
  if (prior) prior_sqrt = whitening_from_cov<3>(prior->cov);
  auto residual = [&](const Vec3& p_w) -> VecX {
    VecX r = point_residuals(p_w, dropped, cam, sigma_px);
    if (!prior) return r;
    VecX full(r.size() + 3);
    full << r, prior_sqrt * (p_w - prior->mean);
    return full;
  };
  GaussNewtonOptions opt;
  opt.max_iterations = 20;
  opt.step_tolerance = 1e-10;
  opt.diff_step = 1e-6;
  const auto gn = gauss_newton<3>(estimate, residual, [](const Vec3& x) { return x; }, opt);
  if (gn.failed) return out;
  Eigen::SelfAdjointEigenSolver<Mat3> es(gn.information);
  if (es.eigenvalues().minCoeff() < 1e-9) return out;
  out.prior.mean = gn.x;
  out.prior.cov = gn.information.inverse();
  out.prior.cov = 0.5 * (out.prior.cov + out.prior.cov.transpose()).eval();
  out.accumulated = true;
  return out;
}

}  // namespace avio
