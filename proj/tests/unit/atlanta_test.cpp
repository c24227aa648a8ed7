#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "avio/atlanta.hpp"

namespace avio {
namespace {

CameraModel unit_camera() {
  CameraModel cam;
  cam.fx = cam.fy = 1.0;
  cam.cx = cam.cy = 0.0;
  return cam;
}

// Homogeneous vectors equal up to scale and sign.
bool same_direction(const Vec3& a, const Vec3& b, double tol = 1e-12) {
  const Vec3 u = a.normalized(), v = b.normalized();
  return std::min((u - v).norm(), (u + v).norm()) < tol;
}

TEST(AxisRotation, Constants) {
  EXPECT_TRUE(axis_rotation(LineAxis::Z).isApprox(Mat3::Identity()));
  Mat3 x;
  x.col(0) = Vec3(0, 0, -1);
  x.col(1) = Vec3(0, 1, 0);
  x.col(2) = Vec3(1, 0, 0);
  EXPECT_TRUE(axis_rotation(LineAxis::X).isApprox(x));
  for (LineAxis a : {LineAxis::X, LineAxis::Y, LineAxis::Z}) {
    const Mat3 R = axis_rotation(a);
    EXPECT_TRUE((R.transpose() * R).isApprox(Mat3::Identity(), 1e-15));
    EXPECT_NEAR(R.determinant(), 1.0, 1e-15);
  }
}

TEST(HeadingRotation, QuarterTurn) {
  EXPECT_TRUE(heading_rotation(0.0).isApprox(Mat3::Identity()));
  Mat3 expected;
  expected << 0, 1, 0, -1, 0, 0, 0, 0, 1;
  EXPECT_TRUE(heading_rotation(M_PI / 2).isApprox(expected, 1e-15));
}

TEST(HeadingRotation, Composes) {
  EXPECT_TRUE((heading_rotation(0.3) * heading_rotation(-1.1)).isApprox(heading_rotation(-0.8), 1e-15));
}

TEST(ProjectLine, VerticalLineThroughXAxis) {
  const auto p = project_line(0.0, 1.0, LineAxis::Z, Mat3::Identity(), Vec3::Zero(), Pose(), unit_camera());
  ASSERT_TRUE(p);
  EXPECT_TRUE(same_direction(p->line, Vec3(0, -1, 0)));
}

TEST(ProjectLine, InvariantToTranslationAlongLine) {
  const Mat3 R = heading_rotation(0.4);
  const Vec3 anchor(0.2, -0.3, 0.1);
  const CameraModel cam = unit_camera();
  const Pose c0(Rotation::exp(Vec3(1.2, 0.1, -0.3)), Vec3(-2, 0.5, 0.3));
  const Vec3 dir = line_direction_world(LineAxis::Y, R);
  const Pose c1(c0.rotation, c0.translation + 3.7 * dir);
  const auto a = project_line(0.7, 0.4, LineAxis::Y, R, anchor, c0, cam);
  const auto b = project_line(0.7, 0.4, LineAxis::Y, R, anchor, c1, cam);
  ASSERT_TRUE(a && b);
  EXPECT_TRUE(same_direction(a->line, b->line, 1e-10));
}

TEST(ProjectLine, PassesThroughProjectedPoints) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  CameraModel cam;
  cam.fx = 400;
  cam.fy = 390;
  cam.cx = 320;
  cam.cy = 240;
  for (int i = 0; i < 200; ++i) {
    const Mat3 R = heading_rotation(U(rng));
    const Vec3 anchor(U(rng), U(rng), U(rng));
    const double theta = M_PI * U(rng), rho = 1.0 + U(rng) * 0.5;
    const Pose cam_pose(Rotation::exp(Vec3(U(rng), U(rng), U(rng))), Vec3(U(rng), U(rng), U(rng)) * 0.2);
    const auto p = project_line(theta, rho, LineAxis::X, R, anchor, cam_pose, cam);
    ASSERT_TRUE(p);
    const Vec3 l = normalize_image_line(p->line);
    for (double s : {-2.0, 0.5, 3.0}) {
      const Vec3 q = cam_pose.inverse() *
                     (line_point_world(theta, rho, LineAxis::X, R, anchor) + s * line_direction_world(LineAxis::X, R));
      const Vec3 px = cam.K() * q;
      EXPECT_LT(std::abs(l.dot(px / px.z())), 1e-8);
    }
  }
}

TEST(VanishingPoints, AxisAlignedCamera) {
  const auto v = vanishing_points(0.0, Rotation(), unit_camera());
  EXPECT_TRUE(same_direction(v.z, Vec3(0, 0, 1)));
  EXPECT_TRUE(same_direction(v.x, Vec3(1, 0, 0)));
  EXPECT_TRUE(same_direction(v.y, Vec3(0, 1, 0)));
}

TEST(VanishingPoints, QuarterTurnSwapsHorizontalAxes) {
  const CameraModel cam = unit_camera();
  const Rotation r = Rotation::exp(Vec3(0.3, -0.2, 0.9));
  EXPECT_TRUE(same_direction(vanishing_points(0.4, r, cam).x, vanishing_points(0.4 + M_PI / 2, r, cam).y, 1e-12));
}

TEST(Horizon, IdentityAndPitchedCamera) {
  const CameraModel unit = unit_camera();
  EXPECT_TRUE(same_direction(horizon_line(Rotation(), unit), Vec3(0, 0, 1)));

  // Camera Y along world -Z: the horizon is the image row through the principal point.
  CameraModel cam;
  cam.fx = cam.fy = 300;
  cam.cx = 320;
  cam.cy = 240;
  Mat3 R;
  R.col(0) = Vec3(0, -1, 0);
  R.col(1) = Vec3(0, 0, -1);
  R.col(2) = Vec3(1, 0, 0);
  const Vec3 h = horizon_line(Rotation::from_matrix(R), cam);
  EXPECT_TRUE(same_direction(h, Vec3(0, 1, -240), 1e-12));
}

TEST(Horizon, ContainsHorizontalVanishingPoints) {
  CameraModel cam;
  cam.fx = cam.fy = 380;
  cam.cx = 320;
  cam.cy = 240;
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  for (int i = 0; i < 100; ++i) {
    const Rotation r = Rotation::exp(Vec3(U(rng), U(rng), U(rng)));
    const double phi = M_PI * U(rng);
    const Vec3 h = horizon_line(r, cam).normalized();
    const auto v = vanishing_points(phi, r, cam);
    EXPECT_LT(std::abs(h.dot(v.x.normalized())), 1e-9);
    EXPECT_LT(std::abs(h.dot(v.y.normalized())), 1e-9);
  }
}

TEST(InitLine, VerticalSegmentThetaFromMidpoint) {
  const LineSegment2D seg(Vec2(0.5, 0.0), Vec2(1.5, 0.0));
  const auto line =
      init_line_from_segment(seg, LineAxis::Z, Mat3::Identity(), Pose(), unit_camera(), 0.3, 5.0);
  ASSERT_TRUE(line);
  EXPECT_NEAR(line->theta, 0.0, 1e-12);
  EXPECT_DOUBLE_EQ(line->rho, 0.3);
  EXPECT_DOUBLE_EQ(line->prior.cov(1, 1), 25.0);
}

TEST(Reanchor, SameAnchorIsIdentity) {
  StructuralLine line;
  line.theta = 0.4;
  line.rho = 0.7;
  const Mat2 cov = Mat2::Identity() * 0.01;
  const auto r = reanchor_line(line, cov, Vec3(1, 2, 3), Vec3(1, 2, 3), heading_rotation(0.2));
  ASSERT_TRUE(r);
  EXPECT_NEAR(r->line.theta, 0.4, 1e-12);
  EXPECT_NEAR(r->line.rho, 0.7, 1e-12);
  EXPECT_TRUE(r->jacobian.isApprox(Mat2::Identity(), 1e-6));
}

TEST(Reanchor, VerticalLineMovedAnchor) {
  StructuralLine line;
  line.theta = 0.0;
  line.rho = 1.0;
  const auto r = reanchor_line(line, Mat2::Identity(), Vec3::Zero(), Vec3(0.5, 0, 0), Mat3::Identity());
  ASSERT_TRUE(r);
  // The line through (1, 0) seen from (0.5, 0): straight ahead at 0.5 m.
  EXPECT_NEAR(r->line.theta, 0.0, 1e-12);
  EXPECT_NEAR(r->line.rho, 2.0, 1e-12);
  const Vec3 p = line_point_world(r->line.theta, r->line.rho, LineAxis::Z, Mat3::Identity(), Vec3(0.5, 0, 0));
  EXPECT_NEAR(p.x(), 1.0, 1e-12);
  EXPECT_NEAR(p.y(), 0.0, 1e-12);
}

TEST(Endpoints, VerticalUnitRange) {
  StructuralLine line;
  line.theta = 0.0;
  line.rho = 1.0;
  line.range = Vec2(0.0, 1.0);
  const auto e = line_endpoints_3d(line, Mat3::Identity(), Vec3::Zero());
  ASSERT_TRUE(e);
  EXPECT_TRUE(e->first.isApprox(Vec3(1, 0, 0), 1e-12));
  EXPECT_TRUE(e->second.isApprox(Vec3(1, 0, 1), 1e-12));
}

TEST(Endpoints, SeparationEqualsRangeLength) {
  StructuralLine line;
  line.axis = LineAxis::Y;
  line.theta = 1.2;
  line.rho = 0.3;
  line.range = Vec2(-0.7, 2.4);
  const auto e = line_endpoints_3d(line, heading_rotation(0.8), Vec3(1, 1, 1));
  ASSERT_TRUE(e);
  EXPECT_NEAR((e->second - e->first).norm(), 3.1, 1e-12);
}

TEST(LineParams, RoundTripThroughPoint) {
  const Mat3 R = heading_rotation(-0.6);
  const Vec3 anchor(0.3, 0.1, -0.2);
  const Vec3 p(3.0, -1.0, 2.0);
  const auto l = line_params_through(p, LineAxis::X, R, anchor);
  ASSERT_TRUE(l);
  const Vec3 q = line_point_world(l->x(), l->y(), LineAxis::X, R, anchor);
  const Vec3 d = line_direction_world(LineAxis::X, R);
  const Vec3 off = (p - q) - (p - q).dot(d) * d;
  EXPECT_LT(off.norm(), 1e-12);
}

TEST(ImageLine, SegmentLineIsNormalized) {
  const LineSegment2D s(Vec2(0, 0), Vec2(3, 4));
  const Vec3 l = s.line();
  EXPECT_NEAR(l.head<2>().norm(), 1.0, 1e-15);
  EXPECT_NEAR(l.dot(s.a), 0.0, 1e-12);
  EXPECT_NEAR(l.dot(s.b), 0.0, 1e-12);
}

}  // namespace
}  // namespace avio
