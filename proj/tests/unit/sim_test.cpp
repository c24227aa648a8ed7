#include <cmath>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "avio/filter.hpp"
#include "avio/sim.hpp"

namespace avio::sim {
namespace {

SceneConfig single_corridor(std::vector<double> headings) {
  SceneConfig c;
  c.headings = std::move(headings);
  c.corridors = {{Vec2(0, 0), Vec2(20, 0), 0}};
  if (c.headings.size() > 1) c.corridors.push_back({Vec2(20, 0), Vec2(30, 10), 1});
  return c;
}

TEST(Scene, SingleWorldDirectionsAreAxisAligned) {
  const auto scene = generate_scene(single_corridor({0.0}));
  for (const auto& l : scene.lines) {
    const Vec3 d = (l.b - l.a).normalized();
    EXPECT_NEAR(d.cwiseAbs().maxCoeff(), 1.0, 1e-12);
  }
}

TEST(Scene, TwoWorldsGiveFourAzimuths) {
  const auto scene = generate_scene(single_corridor({0.0, M_PI / 4}));
  std::set<long> azimuths;
  for (const auto& l : scene.lines) {
    const Vec3 d = l.b - l.a;
    if (std::abs(d.z()) > 1e-9) continue;
    azimuths.insert(std::lround(std::atan2(d.y(), d.x()) * 180.0 / M_PI + 360.0) % 180);
  }
  EXPECT_EQ(azimuths.size(), 4u);
}

TEST(Scene, SameSeedSameScene) {
  const auto a = generate_scene(single_corridor({0.0, M_PI / 4}));
  const auto b = generate_scene(single_corridor({0.0, M_PI / 4}));
  ASSERT_EQ(a.lines.size(), b.lines.size());
  for (size_t i = 0; i < a.lines.size(); ++i) {
    EXPECT_EQ(a.lines[i].a, b.lines[i].a);
    EXPECT_EQ(a.lines[i].b, b.lines[i].b);
  }
  ASSERT_EQ(a.points.size(), b.points.size());
  for (size_t i = 0; i < a.points.size(); ++i) EXPECT_EQ(a.points[i].p, b.points[i].p);
}

TEST(Scene, RejectsInvalidWorld) {
  SceneConfig c = single_corridor({0.0});
  c.corridors.front().world = 3;
  EXPECT_THROW(generate_scene(c), std::invalid_argument);
}

TEST(Trajectory, StationaryHasNoMotion) {
  TrajectorySpec spec;
  spec.kind = TrajectoryKind::kStationary;
  spec.duration = 3.0;
  spec.stationary_pose = Pose(Rotation::exp(Vec3(0, 0, 0.4)), Vec3(1, 2, 1.5));
  const GroundTruth gt(spec);
  for (double t : {0.0, 1.3, 3.0}) {
    const auto k = gt.at(t);
    EXPECT_EQ(k.velocity.norm(), 0.0);
    EXPECT_EQ(k.acceleration.norm(), 0.0);
    EXPECT_EQ(k.angular_velocity.norm(), 0.0);
  }
}

TEST(Trajectory, CircleCentripetalAcceleration) {
  TrajectorySpec spec;
  spec.kind = TrajectoryKind::kCircle;
  spec.circle_radius = 4.0;
  spec.circle_rate = 0.3;
  spec.height_amplitude = 0.0;
  spec.duration = 10.0;
  const GroundTruth gt(spec);
  const auto k = gt.at(2.7);
  EXPECT_NEAR(k.acceleration.head<2>().norm(), 4.0 * 0.3 * 0.3, 1e-9);
}

TEST(Trajectory, StraightConstantSpeedHasNoAcceleration) {
  TrajectorySpec spec;
  spec.waypoints = {Vec2(0, 0), Vec2(100, 0), Vec2(100, 100)};
  spec.speed_variation = 0.0;
  spec.height_amplitude = 0.0;
  const GroundTruth gt(spec);
  // Early on the first leg, away from the rounded corners.
  double t = -1.0;
  for (double s = 0.0; s < gt.duration(); s += 0.1) {
    const auto k = gt.at(s);
    if (k.pose.translation.x() > 30.0 && k.pose.translation.x() < 60.0 && std::abs(k.pose.translation.y()) < 1e-9) {
      t = s;
      break;
    }
  }
  ASSERT_GE(t, 0.0);
  EXPECT_LT(gt.at(t).acceleration.norm(), 1e-9);
}

TEST(Trajectory, VelocityMatchesFiniteDifference) {
  TrajectorySpec spec;
  spec.waypoints = triangle_loop_waypoints();
  const GroundTruth gt(spec);
  const double h = 1e-5;
  for (double t : {1.0, 17.3, 44.4}) {
    const Vec3 fd = (gt.at(t + h).pose.translation - gt.at(t - h).pose.translation) / (2 * h);
    EXPECT_LT((fd - gt.at(t).velocity).norm(), 1e-6);
    const Vec3 fa = (gt.at(t + h).velocity - gt.at(t - h).velocity) / (2 * h);
    EXPECT_LT((fa - gt.at(t).acceleration).norm(), 1e-5);
  }
}

TEST(Imu, StationaryZeroNoise) {
  TrajectorySpec spec;
  spec.kind = TrajectoryKind::kStationary;
  spec.duration = 1.0;
  spec.stationary_pose = Pose(Rotation::exp(Vec3(0.1, -0.2, 0.3)), Vec3::Zero());
  const auto imu = synthesize_imu(GroundTruth(spec), NoiseSpec::zero());
  const Vec3 expected = spec.stationary_pose.rotation.inverse() * Vec3(0, 0, NoiseSpec::zero().imu.gravity);
  for (const auto& s : imu.samples) {
    EXPECT_LT(s.gyro.norm(), 1e-12);
    EXPECT_LT((s.accel - expected).norm(), 1e-12);
  }
}

TEST(Imu, SameSeedSameStream) {
  TrajectorySpec spec;
  spec.waypoints = triangle_loop_waypoints();
  spec.duration = 2.0;
  NoiseSpec noise;
  noise.seed = 5;
  const auto a = synthesize_imu(GroundTruth(spec), noise);
  const auto b = synthesize_imu(GroundTruth(spec), noise);
  ASSERT_EQ(a.samples.size(), b.samples.size());
  for (size_t i = 0; i < a.samples.size(); ++i) {
    EXPECT_EQ(a.samples[i].gyro, b.samples[i].gyro);
    EXPECT_EQ(a.samples[i].accel, b.samples[i].accel);
  }
}

TEST(Imu, ZeroNoiseIntegratesBackToTruth) {
  TrajectorySpec spec;
  spec.waypoints = triangle_loop_waypoints();
  spec.duration = 10.0;
  const GroundTruth gt(spec);
  const NoiseSpec noise = NoiseSpec::zero();
  const auto imu = synthesize_imu(gt, noise);
  const auto k0 = gt.at(0.0);
  ImuState s0;
  s0.orientation = k0.pose.rotation;
  s0.position = k0.pose.translation;
  s0.velocity = k0.velocity;
  FilterState s = make_filter_state(s0, Pose(), 0.0);
  propagate(s, imu.samples, noise.imu);
  EXPECT_LT((s.x.imu.position - gt.at(s.x.t).pose.translation).norm(), 1e-4);
}

class RenderTest : public ::testing::Test {
 protected:
  void SetUp() override {
    scene = generate_scene(single_corridor({0.0}));
    const Pose body(Rotation(), Vec3(2.0, 0.0, 1.5));
    cam_pose = body * default_extrinsics();
  }
  SyntheticScene scene;
  CameraModel cam = default_camera();
  Pose cam_pose;
};

TEST_F(RenderTest, SegmentsLieOnProjectedLines) {
  std::mt19937_64 rng(1);
  const FrameData f = render_observations(scene, cam_pose, cam, NoiseSpec::zero(), rng);
  ASSERT_FALSE(f.segments.empty());
  for (size_t i = 0; i < f.segments.size(); ++i) {
    const auto& l = scene.lines[f.segment_truth[i]];
    const Vec3 a = cam.K() * (cam_pose.inverse() * l.a), b = cam.K() * (cam_pose.inverse() * l.b);
    const Vec3 line = normalize_image_line(a.cross(b));
    EXPECT_LT(std::abs(line.dot(f.segments[i].a)), 1e-9);
    EXPECT_LT(std::abs(line.dot(f.segments[i].b)), 1e-9);
  }
}

TEST_F(RenderTest, FeaturesBehindCameraAreAbsent) {
  SyntheticScene behind;
  behind.headings = {0.0};
  behind.points = {{0, Vec3(-5.0, 0.0, 1.5)}};
  behind.lines = {{0, -1, LineAxis::Z, Vec3(-5, 0.5, 0.5), Vec3(-5, 0.5, 2.5), {}}};
  std::mt19937_64 rng(1);
  const FrameData f = render_observations(behind, cam_pose, cam, NoiseSpec::zero(), rng);
  EXPECT_TRUE(f.points.empty());
  EXPECT_TRUE(f.segments.empty());
}

TEST_F(RenderTest, EndpointNoiseHasRequestedSpread) {
  NoiseSpec noise = NoiseSpec::zero();
  noise.segment_sigma = 1.0;
  std::mt19937_64 rng(3);
  double sq = 0.0;
  int n = 0;
  while (n < 10000) {
    const FrameData f = render_observations(scene, cam_pose, cam, noise, rng);
    for (size_t i = 0; i < f.segments.size(); ++i) {
      const auto& l = scene.lines[f.segment_truth[i]];
      const Vec3 a = cam.K() * (cam_pose.inverse() * l.a), b = cam.K() * (cam_pose.inverse() * l.b);
      const Vec3 line = normalize_image_line(a.cross(b));
      for (const Vec3& e : {f.segments[i].a, f.segments[i].b}) {
        sq += std::pow(line.dot(e), 2);
        ++n;
      }
    }
  }
  EXPECT_NEAR(std::sqrt(sq / n), 1.0, 0.1);
}

TEST(Oracles, BatchMatchesTruthOnNoiselessTrack) {
  const CameraModel cam = default_camera();
  const Vec3 p(6.0, 1.0, 2.3);
  std::vector<LineView> views;
  for (int k = 0; k < 6; ++k) {
    const Pose cp = Pose(Rotation::exp(Vec3(0, 0, 0.04 * k)), Vec3(0.3 * k, -0.2 * k, 1.5)) * default_extrinsics();
    const Vec3 a = cam.K() * (cp.inverse() * (p - Vec3(0, 1, 0))), b = cam.K() * (cp.inverse() * (p + Vec3(0, 1, 0)));
    views.push_back({cp, LineSegment2D(a.head<2>() / a.z(), b.head<2>() / b.z())});
  }
  const LineFrame frame{Mat3::Identity(), views.front().cam_pose.translation};
  const Vec2 truth = *line_params_through(p, LineAxis::Y, frame.world_from_start, frame.anchor);
  const Vec2 est = batch_oracle(views, LineAxis::Y, frame, cam, truth + Vec2(0.03, 0.05));
  EXPECT_LT((est - truth).norm(), 1e-9);
}

TEST(Defaults, ScenarioMatchesRequestedScene) {
  const Scenario sc = default_scenario(1);
  EXPECT_EQ(sc.scene.headings.size(), 2u);
  EXPECT_EQ(sc.scene.num_lines, 40);
  EXPECT_EQ(sc.scene.num_points, 80);
  EXPECT_GE(GroundTruth(sc.trajectory).length(), 100.0);
}

}  // namespace
}  // namespace avio::sim
