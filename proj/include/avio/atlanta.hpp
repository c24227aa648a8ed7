#pragma once

#include <optional>
#include <utility>

#include "avio/geom.hpp"

namespace avio {

enum class LineAxis { X, Y, Z };

const char* to_string(LineAxis axis);

/// Heading of the dummy world that holds every vertical line.
inline constexpr int kDummyWorldId = 0;

/// Default clamp on inverse depth (0.2 m minimum distance).
inline constexpr double kRhoMax = 5.0;

struct ManhattanWorld {
  int id = kDummyWorldId;
  double phi = 0.0;       // radians
  bool in_state = false;  // heading estimated by the filter
};

struct LinePrior {
  Vec2 mean = Vec2::Zero();  // (theta, rho)
  Mat2 cov = Mat2::Identity();
};

/// Inverse-depth structural line anchored to the camera position of a
/// cloned pose. The starting frame is oriented with the line's local world;
/// lines that do not use the structural prior instead keep a fixed rotation
/// relative to the anchor camera (anchor_frame = ^C_S R).
struct StructuralLine {
  int world_id = kDummyWorldId;
  LineAxis axis = LineAxis::Z;
  int anchor_id = -1;
  double theta = 0.0;
  double rho = 0.0;
  Vec2 range{0.0, 1.0};  // (r_s, r_e) along the line direction, meters
  LinePrior prior;
  std::optional<Mat3> anchor_frame;

  Vec2 params() const { return {theta, rho}; }
  void set_params(const Vec2& l);
};

/// Starting-frame rotation and origin a line is expressed in.
struct LineFrame {
  Mat3 world_from_start = Mat3::Identity();
  Vec3 anchor = Vec3::Zero();
};

/// Image segment with homogeneous pixel endpoints (third coordinate 1).
struct LineSegment2D {
  Vec3 a = Vec3::UnitZ();
  Vec3 b = Vec3::UnitZ();
  int frame_id = -1;

  LineSegment2D() = default;
  LineSegment2D(const Vec2& pa, const Vec2& pb, int frame = -1)
      : a(pa.x(), pa.y(), 1.0), b(pb.x(), pb.y(), 1.0), frame_id(frame) {}

  Vec2 pa() const { return a.head<2>(); }
  Vec2 pb() const { return b.head<2>(); }
  Vec2 midpoint() const { return 0.5 * (pa() + pb()); }
  double length() const { return (pb() - pa()).norm(); }
  Vec2 direction() const { return (pb() - pa()).normalized(); }
  /// Homogeneous line through both endpoints, scaled so (l1, l2) is unit.
  Vec3 line() const;
};

Mat3 axis_rotation(LineAxis axis);
Mat3 heading_rotation(double phi);

/// World direction of a line with the given axis in a starting frame.
Vec3 line_direction_world(LineAxis axis, const Mat3& world_from_start);

/// Point where the line crosses the XY plane of its parameter space, in world
/// coordinates. Requires rho > 0.
Vec3 line_point_world(double theta, double rho, LineAxis axis, const Mat3& world_from_start,
                      const Vec3& anchor);

/// Parameters of the structural line through `point` (world) for the given
/// axis and starting frame. `along` receives the point's coordinate along the
/// line. Returns nullopt when the anchor lies on the line.
std::optional<Vec2> line_params_through(const Vec3& point, LineAxis axis, const Mat3& world_from_start,
                                        const Vec3& anchor, double* along = nullptr);

/// Flip negative inverse depth onto theta + pi, wrap theta and clamp rho.
Vec2 normalize_line_params(const Vec2& l, double rho_max = kRhoMax);

struct LineProjection {
  Vec3 line;             // K^-T (l_p x v), not normalized
  Vec3 vanishing_point;  // K v, homogeneous pixels
};

/// Image of a structural line seen from `cam_pose` (world_from_camera).
/// Returns nullopt when the projection degenerates.
std::optional<LineProjection> project_line(double theta, double rho, LineAxis axis, const Mat3& world_from_start,
                                           const Vec3& anchor, const Pose& cam_pose, const CameraModel& cam);
std::optional<LineProjection> project_line(const StructuralLine& line, double phi, const Vec3& anchor,
                                           const Pose& cam_pose, const CameraModel& cam);

/// Scales homogeneous image-line coefficients so that l1^2 + l2^2 = 1.
Vec3 normalize_image_line(const Vec3& l);

struct VanishingPoints {
  Vec3 z;
  Vec3 x;
  Vec3 y;
};

VanishingPoints vanishing_points(double phi, const Rotation& cam_orientation, const CameraModel& cam);
Vec3 vanishing_point(LineAxis axis, const Mat3& world_from_start, const Rotation& cam_orientation,
                     const CameraModel& cam);
Vec3 horizon_line(const Rotation& cam_orientation, const CameraModel& cam);

struct InitNoise {
  double sigma_px = 3.0;           // segment detection error
  double var_phi = 0.0;            // heading variance of the line's world
  Mat3 cov_cam_rot = Mat3::Zero();  // camera orientation covariance (world-frame perturbation)
};

/// Back-projects the segment midpoint to get theta; rho starts at rho0.
/// Returns nullopt when the midpoint ray is parallel to the line axis.
std::optional<StructuralLine> init_line_from_segment(const LineSegment2D& seg, LineAxis axis,
                                                     const Mat3& world_from_start, const Pose& cam_pose,
                                                     const CameraModel& cam, double rho0, double sigma_rho0,
                                                     const InitNoise& noise = {});

struct ReanchorResult {
  StructuralLine line;
  Mat2 cov;
  Mat2 jacobian;
};

/// Moves the starting-frame origin of a line while keeping the 3D line fixed.
/// Returns nullopt when the new anchor lies on the line.
std::optional<ReanchorResult> reanchor_line(const StructuralLine& line, const Mat2& cov, const Vec3& old_anchor,
                                            const Vec3& new_anchor, const Mat3& world_from_start);

/// Endpoints of the line's range in world coordinates. nullopt for rho = 0.
std::optional<std::pair<Vec3, Vec3>> line_endpoints_3d(const StructuralLine& line, const Mat3& world_from_start,
                                                       const Vec3& anchor);

/// Re-expresses a line in another world's starting frame. The new line keeps
/// the old range midpoint and takes the horizontal axis of the new world that
/// is closest to the old direction.
std::optional<StructuralLine> retag_line_world(const StructuralLine& line, const Mat3& old_world_from_start,
                                               const Mat3& new_world_from_start, const Vec3& anchor,
                                               int new_world_id);

}  // namespace avio
