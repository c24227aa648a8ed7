#include <cmath>
#include <random>

#include <Eigen/Dense>
#include <gtest/gtest.h>

#include "avio/estimator.hpp"
#include "avio/sim.hpp"

namespace avio {
namespace {

CameraModel test_camera() {
  CameraModel cam;
  cam.fx = cam.fy = 380;
  cam.cx = 320;
  cam.cy = 240;
  return cam;
}

Pose level_camera(double yaw, const Vec3& position) {
  Mat3 R;
  R.col(0) = Vec3(0, -1, 0);
  R.col(1) = Vec3(0, 0, -1);
  R.col(2) = Vec3(1, 0, 0);
  return Pose(Rotation::exp(Vec3(0, 0, yaw)), position) * Pose(Rotation::from_matrix(R), Vec3::Zero());
}

Vec2 project(const Vec3& p, const Pose& cam_pose, const CameraModel& cam) {
  return *project_point(cam_pose.inverse() * p, cam, false);
}

// Horizontal world-X line 6 m ahead seen from cameras sliding sideways.
struct LineScene {
  CameraModel cam = test_camera();
  LineAxis axis = LineAxis::Y;
  LineFrame frame;
  Vec3 point{6.0, 0.5, 2.2};
  Vec2 truth;
  std::vector<LineView> views;

  explicit LineScene(int n, double noise_px = 0.0, uint64_t seed = 1) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> N(0.0, 1.0);
    for (int k = 0; k < n; ++k) {
      const Pose cp = level_camera(0.05 * k, Vec3(0.2 * k, -0.3 * k, 1.5));
      const Vec2 a = project(point - 1.5 * Vec3::UnitY(), cp, cam) + noise_px * Vec2(N(rng), N(rng));
      const Vec2 b = project(point + 1.5 * Vec3::UnitY(), cp, cam) + noise_px * Vec2(N(rng), N(rng));
      views.push_back({cp, LineSegment2D(a, b)});
    }
    frame.world_from_start = Mat3::Identity();
    frame.anchor = views.front().cam_pose.translation;
    truth = *line_params_through(point, axis, frame.world_from_start, frame.anchor);
  }

  StructuralLine initial(double dtheta = 0.05, double rho_scale = 1.4) const {
    StructuralLine l;
    l.axis = axis;
    l.theta = truth.x() + dtheta;
    l.rho = truth.y() * rho_scale;
    return l;
  }
};

const LinePrior kDiffuse{Vec2::Zero(), Mat2::Identity() * 1e8};

TEST(TriangulateLine, NoiselessViewsRecoverTruth) {
  const LineScene sc(3);
  StructuralLine l = sc.initial();
  LinePrior prior = kDiffuse;
  prior.mean = l.params();
  const auto r = triangulate_line(l, prior, sc.views, sc.frame, sc.cam, 1.0);
  EXPECT_TRUE(r.converged);
  EXPECT_LT((r.params - sc.truth).norm(), 1e-6);
}

TEST(TriangulateLine, NoViewsReturnsPriorMean) {
  const LineScene sc(3);
  StructuralLine l = sc.initial();
  const LinePrior prior{Vec2(0.4, 0.25), Mat2::Identity() * 0.1};
  const auto r = triangulate_line(l, prior, {}, sc.frame, sc.cam, 1.0);
  EXPECT_LT((r.params - prior.mean).norm(), 1e-12);
}

TEST(TriangulateLine, DistantLineAlongMotionDoesNotDiverge) {
  // Translation along the line carries no depth information.
  const CameraModel cam = test_camera();
  std::vector<LineView> views;
  const Vec3 p(50.0, 2.0, 3.0);
  for (int k = 0; k < 5; ++k) {
    const Pose cp = level_camera(0.0, Vec3(0.5 * k, 0, 1.5));
    views.push_back({cp, LineSegment2D(project(p + Vec3(2, 0, 0), cp, cam), project(p + Vec3(8, 0, 0), cp, cam))});
  }
  LineFrame frame{Mat3::Identity(), views.front().cam_pose.translation};
  StructuralLine l;
  l.axis = LineAxis::X;
  const Vec2 t = *line_params_through(p, l.axis, frame.world_from_start, frame.anchor);
  l.theta = t.x();
  l.rho = 0.3;
  const LinePrior prior{l.params(), Mat2(Vec2(0.01, 25.0).asDiagonal())};
  const auto r = triangulate_line(l, prior, views, frame, cam, 1.0);
  EXPECT_TRUE(r.params.allFinite());
  EXPECT_LE(r.params.y(), 0.3 + 1e-9);
}

TEST(AccumulateInformation, InformationOnlyGrows) {
  const LineScene sc(4);
  const StructuralLine l = sc.initial(0.0, 1.0);
  const LinePrior prior{sc.truth, Mat2(Vec2(0.01, 0.5).asDiagonal())};
  const auto acc = accumulate_information(l, prior, {sc.views[2]}, sc.frame, sc.cam, 1.0);
  ASSERT_TRUE(acc.accumulated);
  const Mat2 gain = acc.prior.cov.inverse() - prior.cov.inverse();
  EXPECT_GE(Eigen::SelfAdjointEigenSolver<Mat2>(gain).eigenvalues().minCoeff(), -1e-9);
}

TEST(AccumulateInformation, SplitTrackMatchesBatch) {
  const LineScene sc(10, 0.5, 3);
  const StructuralLine l = sc.initial();
  LinePrior diffuse = kDiffuse;
  diffuse.mean = l.params();
  const std::vector<LineView> first(sc.views.begin(), sc.views.begin() + 5);
  const std::vector<LineView> second(sc.views.begin() + 5, sc.views.end());
  const auto acc = accumulate_information(l, diffuse, first, sc.frame, sc.cam, 1.0);
  const auto split = triangulate_line(l, acc.prior, second, sc.frame, sc.cam, 1.0);
  const Vec2 batch = sim::batch_oracle(sc.views, sc.axis, sc.frame, sc.cam, l.params());
  EXPECT_LT((split.params - batch).norm() / batch.norm(), 1e-3);
}

TEST(AccumulateInformation, NewMeanIsStationary) {
  const LineScene sc(6, 0.5, 5);
  const StructuralLine l = sc.initial();
  LinePrior diffuse = kDiffuse;
  diffuse.mean = l.params();
  const auto acc = accumulate_information(l, diffuse, sc.views, sc.frame, sc.cam, 1.0);
  ASSERT_TRUE(acc.accumulated);
  // Gradient of the reprojection cost at the accumulated mean.
  auto cost = [&](const Vec2& x) {
    const Vec2 d = x - diffuse.mean;
    return line_view_residuals(x, sc.axis, sc.frame, sc.views, sc.cam, 1.0).squaredNorm() +
           d.dot(diffuse.cov.inverse() * d);
  };
  const double h = 1e-6;
  Vec2 g;
  for (int i = 0; i < 2; ++i) {
    Vec2 e = Vec2::Zero();
    e[i] = h;
    g[i] = (cost(acc.prior.mean + e) - cost(acc.prior.mean - e)) / (2 * h);
  }
  EXPECT_LT(g.norm(), 1e-4);
}

TEST(Range, VerticalLineFromHeightsZeroToOne) {
  CameraModel cam;
  cam.fx = cam.fy = 100;
  cam.cx = 50;
  cam.cy = 50;
  const Pose cp = level_camera(0.0, Vec3::Zero());
  StructuralLine l;
  l.theta = 0.0;
  l.rho = 1.0;
  l.range = Vec2(5.0, 6.0);
  const LineFrame frame{Mat3::Identity(), Vec3::Zero()};
  const LineView v{cp, LineSegment2D(project(Vec3(1, 0, 0), cp, cam), project(Vec3(1, 0, 1), cp, cam))};
  const Vec2 r = update_range(l, v, frame, cam);
  // The stored range keeps what it had and grows to cover the new view.
  EXPECT_LE(std::min(r.x(), r.y()), 0.0 + 1e-9);
  EXPECT_GE(std::max(r.x(), r.y()), 1.0 - 1e-9);
  StructuralLine fresh = l;
  fresh.range = Vec2(0.5, 0.5);
  const Vec2 r1 = update_range(fresh, v, frame, cam);
  EXPECT_NEAR(r1.x(), 0.0, 1e-9);
  EXPECT_NEAR(r1.y(), 1.0, 1e-9);
  fresh.range = r1;
  EXPECT_EQ(update_range(fresh, v, frame, cam), r1);
}

TEST(ReprojectionCheck, ThresholdIsInclusive) {
  const LineScene sc(3);
  StructuralLine l = sc.initial(0.0, 1.0);
  EXPECT_TRUE(reprojection_outlier_check(l, sc.views, sc.frame, sc.cam));

  std::vector<LineView> views = sc.views;
  const Vec2 n = views[1].seg.line().head<2>();
  views[1].seg = LineSegment2D(views[1].seg.pa() + 6.0 * n, views[1].seg.pb());
  EXPECT_FALSE(reprojection_outlier_check(l, views, sc.frame, sc.cam));

  views = sc.views;
  views[1].seg = LineSegment2D(views[1].seg.pa() + 4.0 * n, views[1].seg.pb());
  EXPECT_NEAR(*max_reprojection_error(l, views, sc.frame, sc.cam), 4.0, 1e-9);
  EXPECT_TRUE(reprojection_outlier_check(l, views, sc.frame, sc.cam, 4.0 + 1e-9));
}

TEST(TriangulatePoint, TwoViewExact) {
  const CameraModel cam = test_camera();
  const Vec3 p(3.0, 0.2, 1.3);
  std::vector<PointView> views;
  for (double y : {0.0, 0.5}) {
    const Pose cp = level_camera(0.0, Vec3(0, y, 1.5));
    views.push_back({cp, project(p, cp, cam)});
  }
  const auto r = triangulate_point(views, cam, 1.0);
  ASSERT_TRUE(r.point);
  EXPECT_LT((*r.point - p).norm(), 1e-9);
}

TEST(TriangulatePoint, ZeroBaselineIsRejected) {
  const CameraModel cam = test_camera();
  const Pose cp = level_camera(0.0, Vec3(0, 0, 1.5));
  const Vec2 px = project(Vec3(3, 0, 1), cp, cam);
  const auto r = triangulate_point({{cp, px}, {cp, px}}, cam, 1.0);
  EXPECT_FALSE(r.point);
  EXPECT_EQ(r.error, PointTriangulationError::kLowParallax);
}

TEST(TriangulatePoint, NoisyFiveViews) {
  const CameraModel cam = test_camera();
  std::mt19937_64 rng(21);
  std::normal_distribution<double> N(0.0, 1.0);
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  double sq = 0.0;
  int n = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const Vec3 p(5.0 + 2.0 * U(rng), 2.0 * U(rng), 1.5 + U(rng));
    std::vector<PointView> views;
    for (int k = 0; k < 5; ++k) {
      const Pose cp = level_camera(0.0, Vec3(0.3 * k, 0.5 * k, 1.5));
      views.push_back({cp, project(p, cp, cam) + Vec2(N(rng), N(rng))});
    }
    const auto r = triangulate_point(views, cam, 1.0);
    if (!r.point) continue;
    sq += (*r.point - p).squaredNorm();
    ++n;
  }
  ASSERT_GT(n, 190);
  EXPECT_LT(std::sqrt(sq / n), 0.05);
}

TEST(GaussNewton, FitsQuadraticBowl) {
  using V2 = Eigen::Matrix<double, 2, 1>;
  const auto rep = gauss_newton<2>(
      V2(3.0, -2.0), [](const V2& x) { return VecX(Vec2(x.x() - 1.0, 2.0 * (x.y() + 0.5))); },
      [](const V2& x) { return x; });
  EXPECT_TRUE(rep.converged);
  EXPECT_LT((rep.x - V2(1.0, -0.5)).norm(), 1e-8);
}

}  // namespace
}  // namespace avio
