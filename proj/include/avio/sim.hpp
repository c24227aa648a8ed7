#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "avio/atlanta.hpp"
#include "avio/estimator.hpp"
#include "avio/filter.hpp"
#include "avio/frame.hpp"
#include "avio/geom.hpp"
#include "avio/tracker.hpp"

namespace avio::sim {

/// Straight corridor between two floor-plan points, aligned with a world.
struct Corridor {
  Vec2 start = Vec2::Zero();
  Vec2 end = Vec2::Zero();
  int world = 0;              // index into SceneConfig::headings
  double line_weight = 1.0;   // relative line density
  double point_weight = 1.0;  // relative point density
};

struct SceneConfig {
  std::vector<double> headings{0.0};  // radians
  std::vector<Corridor> corridors;
  double half_width = 2.0;  // wall offset from the corridor axis, meters
  double height = 3.0;      // ceiling height, meters
  int num_lines = 40;
  int num_points = 80;
  double vertical_fraction = 0.4;
  uint64_t seed = 1;
};

/// Along-line texture plus edge profile used to synthesize patches.
struct LineTexture {
  std::vector<double> freq;   // cycles per meter
  std::vector<double> phase;  // radians
  std::vector<double> amp;
  double edge = 40.0;  // intensity step across the line (signed)
  double ridge = 30.0;
};

struct SceneLine {
  int id = -1;
  int world = -1;  // heading index; -1 for vertical lines
  LineAxis axis = LineAxis::Z;
  Vec3 a = Vec3::Zero();
  Vec3 b = Vec3::Zero();
  LineTexture texture;
};

struct ScenePoint {
  int id = -1;
  Vec3 p = Vec3::Zero();
};

struct SyntheticScene {
  std::vector<double> headings;
  std::vector<SceneLine> lines;
  std::vector<ScenePoint> points;
};

/// Throws std::invalid_argument for an empty request or an invalid world.
SyntheticScene generate_scene(const SceneConfig& config);

/// Default layout: a closed triangular loop (32 m east, 32 m north, then
/// back along the diagonal) with the diagonal in a world rotated by 45 deg.
SceneConfig triangle_loop_scene(double diagonal_heading = M_PI / 4.0, uint64_t seed = 1);
std::vector<Vec2> triangle_loop_waypoints();

enum class TrajectoryKind { kStationary, kWaypoints, kCircle };

struct TrajectorySpec {
  TrajectoryKind kind = TrajectoryKind::kWaypoints;
  std::vector<Vec2> waypoints;  // closed loop, floor plan
  double height = 1.5;
  double height_amplitude = 0.1;  // gentle vertical motion
  double height_period = 12.0;
  double speed = 1.5;            // mean along-path speed, m/s
  double speed_variation = 0.3;  // relative amplitude of the sinusoidal speed change
  double speed_period = 5.0;     // seconds, rounded to fit a whole loop
  double corner_radius = 3.0;
  double duration = 0.0;  // stationary / circle; waypoints: one loop if 0
  Pose stationary_pose;
  Vec2 circle_center = Vec2::Zero();
  double circle_radius = 5.0;
  double circle_rate = 0.2;  // rad/s
  double imu_rate = 1000.0;
  double camera_rate = 10.0;
};

struct Kinematics {
  Pose pose;                             // world_from_body
  Vec3 velocity = Vec3::Zero();          // world
  Vec3 acceleration = Vec3::Zero();      // world
  Vec3 angular_velocity = Vec3::Zero();  // body
};

/// Smooth ground-truth motion with analytic derivatives. Body axes: x
/// forward, y left, z up; the body stays level and yaws along the path.
class GroundTruth {
 public:
  explicit GroundTruth(const TrajectorySpec& spec);
  Kinematics at(double t) const;
  double duration() const { return duration_; }
  double length() const;
  const TrajectorySpec& spec() const { return spec_; }

 private:
  struct Cubic {
    double u0 = 0.0;
    Vec2 c0, c1, c2, c3;  // p(u) = c0 + c1 du + c2 du^2 + c3 du^3
  };
  void path_parameter(double t, double& u, double& du, double& ddu, double& dddu) const;
  void planar(double t, Vec2& p, Vec2& v, Vec2& a, Vec2& j) const;

  TrajectorySpec spec_;
  std::vector<Cubic> pieces_;
  double loop_length_ = 0.0;
  double speed_omega_ = 1.0;  // rad/s of the speed modulation
  double duration_ = 0.0;
};

struct NoiseSpec {
  ImuNoiseParams imu;
  bool imu_noise = true;
  double pixel_sigma = 1.0;    // point detections
  double segment_sigma = 1.0;  // line endpoints
  double intensity_sigma = 2.0;
  Vec3 gyro_bias = Vec3::Zero();
  Vec3 accel_bias = Vec3::Zero();
  uint64_t seed = 1;

  static NoiseSpec zero();
};

/// IMU readings at imu_rate over [0, duration]; timestamps in integer ns.
struct ImuStream {
  std::vector<int64_t> t_ns;
  std::vector<ImuSample> samples;
};
ImuStream synthesize_imu(const GroundTruth& traj, const NoiseSpec& noise);

struct RenderOptions {
  double max_range = 20.0;
  double min_length_px = 15.0;
  double near = 0.1;
};

/// Intensities of a synthetic frame, rendered on demand.
class SyntheticPatchSource : public PatchSource {
 public:
  SyntheticPatchSource(std::shared_ptr<const SyntheticScene> scene, const Pose& cam_pose, const CameraModel& cam,
                       double intensity_sigma, uint64_t seed);
  std::optional<Patch> patch(const Vec2& center, int side) const override;
  double intensity(const Vec2& px) const;

 private:
  struct Projected {
    Vec2 a, b;       // undistorted pixels
    double za, zb;   // depths
    double s0, s1;   // meters along the 3D line
    const LineTexture* texture;
  };
  std::shared_ptr<const SyntheticScene> scene_;
  std::vector<Projected> lines_;
  CameraModel cam_;
  double sigma_;
  uint64_t seed_;
};

/// Segments (undistorted, clipped, noisy) and point detections (distorted,
/// noisy) seen from `cam_pose` (world_from_camera).
FrameData render_observations(const SyntheticScene& scene, const Pose& cam_pose, const CameraModel& cam,
                              const NoiseSpec& noise, std::mt19937_64& rng, const RenderOptions& opt = {});

/// One-shot Gauss-Newton over a whole line track with a diffuse prior. The
/// image line comes from projecting two points of the 3D line.
Vec2 batch_oracle(const std::vector<LineView>& views, LineAxis axis, const LineFrame& frame, const CameraModel& cam,
                  const Vec2& init, double sigma_px = 1.0, int iterations = 30);

/// Image line through the projections of two points of the structural line.
Vec3 two_point_line(const Vec2& l, LineAxis axis, const LineFrame& frame, const Pose& cam_pose,
                    const CameraModel& cam);

/// Default synthetic camera: 640x480, f = 380 px, no distortion.
CameraModel default_camera();
/// imu_from_camera for a forward-looking camera on an x-forward body.
Pose default_extrinsics();

struct Scenario {
  SceneConfig scene;
  TrajectorySpec trajectory;
  NoiseSpec noise;
  CameraModel camera = default_camera();
  Pose extrinsics = default_extrinsics();
  RenderOptions render;
};

Scenario default_scenario(uint64_t seed = 1);
/// Reads a scenario YAML file (throws std::runtime_error on bad input).
Scenario load_scenario(const std::string& path);

struct SimData {
  SyntheticScene scene;
  ImuStream imu;
  std::vector<FrameData> frames;
  std::vector<Kinematics> truth;  // at every IMU sample
  std::vector<int64_t> truth_t_ns;
  CameraModel camera;
  Pose extrinsics;
  ImuNoiseParams imu_noise;
};

SimData simulate(const Scenario& scenario);

/// Writes the EuRoC-style layout (imu0, cam0 with detections, ground truth).
/// Patches are not exported.
void export_dataset(const SimData& data, const std::string& dir);

}  // namespace avio::sim
