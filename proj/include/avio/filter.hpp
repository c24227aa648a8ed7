#pragma once

#include <optional>
#include <span>
#include <vector>

#include "avio/atlanta.hpp"
#include "avio/geom.hpp"

namespace avio {

struct ImuState {
  Rotation orientation;  // world_from_imu
  Vec3 position = Vec3::Zero();
  Vec3 velocity = Vec3::Zero();
  Vec3 gyro_bias = Vec3::Zero();
  Vec3 accel_bias = Vec3::Zero();

  Pose pose() const { return {orientation, position}; }
};

struct ImuNoiseParams {
  double gyro_noise = 1.7e-4;    // rad/s/sqrt(Hz)
  double accel_noise = 2.0e-3;   // m/s^2/sqrt(Hz)
  double gyro_walk = 1.9393e-5;  // rad/s^2/sqrt(Hz)
  double accel_walk = 3.0e-3;    // m/s^3/sqrt(Hz)
  double gravity = 9.81;         // m/s^2
};

/// Cloned IMU pose at an image time.
struct Clone {
  int id = -1;
  Pose pose;
  double t = 0.0;
};

/// Nominal (non-error) part of the filter state.
struct NominalState {
  ImuState imu;
  Pose extrinsics;                     // imu_from_camera
  std::vector<ManhattanWorld> worlds;  // non-dummy worlds, in insertion order
  std::vector<Clone> clones;           // oldest first
  double t = 0.0;

  const Clone* clone(int id) const;
  const ManhattanWorld* world(int id) const;
  /// Heading of a world id; the dummy world has heading 0.
  double phi(int world_id) const;
  Pose camera_pose(const Pose& imu_pose) const { return imu_pose * extrinsics; }
};

// Error-state layout: [dtheta dp dv dbg dba | ext dtheta dp | headings | clones (dtheta dp) ...]
inline constexpr int kImuDim = 15;
inline constexpr int kExtOffset = 15;
inline constexpr int kHeadingOffset = 21;

struct FilterState {
  NominalState x;
  MatX P;
  int next_clone_id = 0;
  int next_world_id = 1;

  int dim() const;
  int heading_count() const;
  std::optional<int> heading_index(int world_id) const;
  std::optional<int> clone_index(int clone_id) const;
  /// Marginal variance of a world heading; nullopt if the heading is not estimated.
  std::optional<double> heading_variance(int world_id) const;
};

struct InitialUncertainty {
  double roll_pitch = 0.5 * M_PI / 180.0;
  double yaw = 0.0;
  double position = 0.0;
  double velocity = 0.05;
  double gyro_bias = 3e-4;
  double accel_bias = 2e-2;
  double ext_rotation = 0.1 * M_PI / 180.0;
  double ext_translation = 1e-3;
};

FilterState make_filter_state(const ImuState& imu, const Pose& extrinsics, double t,
                              const InitialUncertainty& sigma = {});

/// Applies an error-state correction to the nominal state.
void apply_correction(NominalState& x, const VecX& dx);
/// Applies a single error-state component (used for numerical Jacobians).
void apply_error_component(NominalState& x, int index, double value);

/// IMU samples spanning [t0, t1], with interpolated samples at both ends.
std::vector<ImuSample> imu_between(std::span<const ImuSample> stream, double t0, double t1);

struct PropagationReport {
  int steps = 0;
  bool gap_warning = false;
};

/// RK4 integration of the nominal IMU state (linear interpolation of the
/// readings inside each interval) and first-order error-state covariance
/// propagation. samples.front().t must equal the state time.
/// Throws std::invalid_argument on non-increasing timestamps.
PropagationReport propagate(FilterState& s, std::span<const ImuSample> samples, const ImuNoiseParams& noise);

/// Appends a clone of the current IMU pose. Returns the clone id.
int augment_pose(FilterState& s, double timestamp);

/// Smallest heading difference modulo pi/2.
double heading_distance(double a, double b);

/// Adds a new world with marginal std sigma_phi and zero cross-covariance.
/// Rejects headings within min_separation of an existing world.
std::optional<int> add_manhattan_world(FilterState& s, double phi, double sigma_phi, double min_separation,
                                       bool in_state = true);

/// Removes world `drop`, re-expressing the given lines in world `keep`.
/// Throws std::logic_error when asked to drop the dummy world or when the
/// headings are further apart than max_separation.
void merge_manhattan_worlds(FilterState& s, int keep, int drop, const std::vector<StructuralLine*>& lines,
                            double max_separation);

/// Starting frame of a line under the given nominal state.
std::optional<LineFrame> line_frame(const NominalState& x, const StructuralLine& line);

/// Sets anchor_frame for a line that ignores the structural prior, so that
/// its current world direction is kept fixed relative to the anchor camera.
void attach_to_anchor_camera(const NominalState& x, StructuralLine& line, const Mat3& world_from_start);

struct LineObservation {
  int clone_id = -1;
  LineSegment2D seg;
};

struct PointObservation {
  int clone_id = -1;
  Vec2 px;  // undistorted pixels
};

/// Signed endpoint distances (pixels) to the projected line.
std::optional<Vec2> line_residual(const NominalState& x, const StructuralLine& line, const LineSegment2D& obs,
                                  int clone_id, const CameraModel& cam);

struct MeasurementBlock {
  VecX z;
  MatX H;  // over the full error state
  double sigma = 1.0;
};

enum class MeasurementStatus { kOk, kTooFewViews, kRankDeficient, kDegenerate, kUnknownClone };

struct MeasurementResult {
  std::optional<MeasurementBlock> block;
  MeasurementStatus status = MeasurementStatus::kOk;
  MatX H_feature;  // stacked Jacobian wrt the feature parameters (before projection)
  MatX H_state;    // stacked Jacobian of the residual wrt the error state (before projection)
  VecX residual;   // stacked innovation (before projection)
};

struct JacobianOptions {
  double step = 1e-6;
};

MeasurementResult build_line_measurement(const FilterState& s, const StructuralLine& line,
                                         const std::vector<LineObservation>& obs, const CameraModel& cam,
                                         double sigma_px, const JacobianOptions& opt = {});

MeasurementResult build_point_measurement(const FilterState& s, const Vec3& point,
                                          const std::vector<PointObservation>& obs, const CameraModel& cam,
                                          double sigma_px, const JacobianOptions& opt = {});

enum class GateOutcome { kAccepted, kRejectedGate, kRejectedNumeric };

struct UpdateReport {
  std::vector<GateOutcome> outcomes;
  std::vector<double> mahalanobis;
  int accepted_rows = 0;
};

/// 95% chi-square quantile.
double chi2_95(int dof);

/// Chi-square gated joint EKF update with a Joseph-form covariance update.
UpdateReport gated_update(FilterState& s, const std::vector<MeasurementBlock>& blocks, double confidence = 0.95);

/// Clone ids to remove once the window is full: ceil(M/3) ids evenly spaced
/// from the second oldest clone.
std::vector<int> select_poses_for_removal(const FilterState& s, int max_clones);

void remove_clones(FilterState& s, const std::vector<int>& ids);

/// Forces P symmetric and returns the largest asymmetry seen before.
double symmetrize(MatX& P);

}  // namespace avio
