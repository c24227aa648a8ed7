#pragma once

#include <optional>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace avio {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using Quat = Eigen::Quaterniond;
using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;

Mat3 skew(const Vec3& v);

/// SO(3) exponential map (Rodrigues), exact for all finite inputs.
Mat3 so3_exp(const Vec3& w);
/// Principal logarithm; returns a vector with norm in [0, pi].
Vec3 so3_log(const Mat3& R);

/// Unit quaternion rotation. Hamilton convention, scalar first. A Rotation
/// named A_from_B maps coordinates expressed in B into A (e.g. the IMU
/// orientation maps body vectors into the world frame).
class Rotation {
 public:
  Rotation() : q_(Quat::Identity()) {}
  explicit Rotation(const Quat& q) : q_(q.normalized()) {}
  Rotation(double w, double x, double y, double z) : q_(Quat(w, x, y, z).normalized()) {}

  static Rotation from_matrix(const Mat3& R);
  static Rotation exp(const Vec3& w) { return from_matrix(so3_exp(w)); }
  static Rotation identity() { return Rotation(); }

  const Quat& quat() const { return q_; }
  Mat3 matrix() const { return q_.toRotationMatrix(); }
  Vec3 log() const;

  Rotation inverse() const { return Rotation(q_.conjugate()); }
  Rotation operator*(const Rotation& o) const { return Rotation(q_ * o.q_); }
  Vec3 operator*(const Vec3& v) const { return q_ * v; }

 private:
  Quat q_;
};

/// rot composed with exp(delta) applied on the left (world-frame perturbation).
Rotation so3_boxplus(const Rotation& rot, const Vec3& delta);
/// Inverse of so3_boxplus: returns d with so3_boxplus(b, d) == a.
Vec3 so3_boxminus(const Rotation& a, const Rotation& b);

/// Rigid transform; maps points from the child frame into the parent frame.
struct Pose {
  Rotation rotation;
  Vec3 translation = Vec3::Zero();

  Pose() = default;
  Pose(const Rotation& r, const Vec3& t) : rotation(r), translation(t) {}

  Pose operator*(const Pose& o) const {
    return {rotation * o.rotation, rotation * o.translation + translation};
  }
  Vec3 operator*(const Vec3& p) const { return rotation * p + translation; }
  Pose inverse() const {
    const Rotation inv = rotation.inverse();
    return {inv, -(inv * translation)};
  }
  Mat4 matrix() const;
};

/// Pinhole intrinsics with the single-parameter FOV (arctangent) distortion.
struct CameraModel {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  double omega = 0.0;  // radians, 0 means no distortion
  int width = 640;
  int height = 480;

  Mat3 K() const;
  Mat3 K_inv() const;

  // Normalized (z = 1) coordinates <-> distorted normalized coordinates.
  Vec2 distort(const Vec2& undistorted) const;
  Vec2 undistort(const Vec2& distorted) const;

  Vec2 normalized_to_pixel(const Vec2& n) const { return {fx * n.x() + cx, fy * n.y() + cy}; }
  Vec2 pixel_to_normalized(const Vec2& px) const { return {(px.x() - cx) / fx, (px.y() - cy) / fy}; }
  Vec2 distort_pixel(const Vec2& px) const { return normalized_to_pixel(distort(pixel_to_normalized(px))); }
  Vec2 undistort_pixel(const Vec2& px) const { return normalized_to_pixel(undistort(pixel_to_normalized(px))); }

  bool in_image(const Vec2& px, double margin = 0.0) const {
    return px.x() >= margin && px.y() >= margin && px.x() <= width - 1 - margin &&
           px.y() <= height - 1 - margin;
  }
};

/// Minimum depth accepted by project_point.
inline constexpr double kMinDepth = 1e-6;

/// Projects a camera-frame point to pixels. Returns nullopt for points at or
/// behind the camera (z <= kMinDepth).
std::optional<Vec2> project_point(const Vec3& p_cam, const CameraModel& cam, bool apply_distortion);

struct ImuSample {
  double t = 0.0;  // seconds
  Vec3 gyro = Vec3::Zero();
  Vec3 accel = Vec3::Zero();
};

/// Wraps an angle to (-pi, pi].
double wrap_angle(double a);

/// Yaw of a body-to-world rotation (rotation about world Z of the body X axis).
double yaw_of(const Rotation& r);

}  // namespace avio
