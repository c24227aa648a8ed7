#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "avio/geom.hpp"

namespace avio {
namespace {

TEST(So3, BoxplusZeroIsIdentity) {
  const Rotation r = so3_boxplus(Rotation(), Vec3::Zero());
  EXPECT_TRUE(r.matrix().isApprox(Mat3::Identity(), 1e-15));
}

TEST(So3, QuarterTurnAboutZMapsXToY) {
  const Rotation r = so3_boxplus(Rotation(), Vec3(0, 0, M_PI / 2));
  EXPECT_TRUE((r * Vec3::UnitX()).isApprox(Vec3::UnitY(), 1e-12));
}

TEST(So3, BoxminusInvertsBoxplus) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const Rotation r = Rotation::exp(3.0 * Vec3(U(rng), U(rng), U(rng)));
    Vec3 d(U(rng), U(rng), U(rng));
    d *= 0.99 * U(rng) / d.norm();
    worst = std::max(worst, (so3_boxminus(so3_boxplus(r, d), r) - d).norm());
  }
  EXPECT_LT(worst, 1e-9);
}

TEST(So3, LogOfExpNearPi) {
  const Vec3 w = Vec3(1, 2, -1).normalized() * (M_PI - 1e-7);
  EXPECT_LT((so3_log(so3_exp(w)) - w).norm(), 1e-6);
}

TEST(Distortion, ZeroOmegaIsIdentity) {
  CameraModel cam;
  cam.omega = 0.0;
  EXPECT_TRUE(cam.distort(Vec2(0.3, 0.4)).isApprox(Vec2(0.3, 0.4)));
  EXPECT_TRUE(cam.undistort(Vec2(0.3, 0.4)).isApprox(Vec2(0.3, 0.4)));
}

TEST(Distortion, CenterIsFixed) {
  CameraModel cam;
  for (double w : {0.0, 0.3, 0.9, 1.5}) {
    cam.omega = w;
    EXPECT_EQ(cam.distort(Vec2::Zero()), Vec2::Zero());
    EXPECT_EQ(cam.undistort(Vec2::Zero()), Vec2::Zero());
  }
}

TEST(Distortion, FovRadiusRoundTrip) {
  CameraModel cam;
  cam.omega = 0.9;
  const double ru = 0.5;
  const double rd = std::atan(2.0 * ru * std::tan(0.45)) / 0.9;
  const Vec2 d = cam.distort(Vec2(ru, 0.0));
  EXPECT_NEAR(d.norm(), rd, 1e-12);
  EXPECT_NEAR(cam.undistort(d).norm(), ru, 1e-9);
}

TEST(ProjectPoint, OpticalAxisHitsPrincipalPoint) {
  CameraModel cam;
  const auto px = project_point(Vec3(0, 0, 1), cam, false);
  ASSERT_TRUE(px);
  EXPECT_TRUE(px->isApprox(Vec2::Zero()));
}

TEST(ProjectPoint, Pinhole) {
  CameraModel cam;
  cam.fx = cam.fy = 100.0;
  cam.cx = 320.0;
  cam.cy = 240.0;
  const auto px = project_point(Vec3(1, 0, 2), cam, false);
  ASSERT_TRUE(px);
  EXPECT_NEAR(px->x(), 370.0, 1e-12);
  EXPECT_NEAR(px->y(), 240.0, 1e-12);
}

TEST(ProjectPoint, BehindCameraIsRejected) {
  EXPECT_FALSE(project_point(Vec3(0, 0, -1), CameraModel{}, false));
  EXPECT_FALSE(project_point(Vec3(0, 0, 0), CameraModel{}, false));
}

TEST(Pose, InverseComposesToIdentity) {
  const Pose T(Rotation::exp(Vec3(0.1, -0.4, 2.0)), Vec3(1, 2, 3));
  const Pose I = T * T.inverse();
  EXPECT_TRUE(I.matrix().isApprox(Mat4::Identity(), 1e-12));
}

TEST(Angles, WrapAndYaw) {
  EXPECT_NEAR(wrap_angle(3 * M_PI), M_PI, 1e-12);
  EXPECT_NEAR(wrap_angle(-M_PI), M_PI, 1e-12);
  EXPECT_NEAR(yaw_of(Rotation::exp(Vec3(0, 0, 0.7))), 0.7, 1e-12);
}

}  // namespace
}  // namespace avio
