#include "avio/geom.hpp"

#include <cmath>

namespace avio {

Mat3 skew(const Vec3& v) {
  Mat3 S;
  S << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
      -v.y(), v.x(), 0.0;
  return S;
}

Mat3 so3_exp(const Vec3& w) {
  const double theta = w.norm();
  const Mat3 W = skew(w);
  if (theta < 1e-8) {
    return Mat3::Identity() + W + 0.5 * W * W;
  }
  const double a = std::sin(theta) / theta;
  const double b = (1.0 - std::cos(theta)) / (theta * theta);
  return Mat3::Identity() + a * W + b * W * W;
}

Vec3 so3_log(const Mat3& R) {
  const Eigen::AngleAxisd aa(Quat(R).normalized());
  double angle = aa.angle();
  Vec3 axis = aa.axis();
  if (angle > M_PI) {
    angle = 2.0 * M_PI - angle;
    axis = -axis;
  }
  return angle * axis;
}

Rotation Rotation::from_matrix(const Mat3& R) { return Rotation(Quat(R)); }

Vec3 Rotation::log() const { return so3_log(matrix()); }

Rotation so3_boxplus(const Rotation& rot, const Vec3& delta) {
  return Rotation::exp(delta) * rot;
}

Vec3 so3_boxminus(const Rotation& a, const Rotation& b) { return (a * b.inverse()).log(); }

Mat4 Pose::matrix() const {
  Mat4 T = Mat4::Identity();
  T.topLeftCorner<3, 3>() = rotation.matrix();
  T.topRightCorner<3, 1>() = translation;
  return T;
}

Mat3 CameraModel::K() const {
  Mat3 k;
  k << fx, 0.0, cx,
       0.0, fy, cy,
       0.0, 0.0, 1.0;
  return k;
}

Mat3 CameraModel::K_inv() const {
  Mat3 k;
  k << 1.0 / fx, 0.0, -cx / fx,
       0.0, 1.0 / fy, -cy / fy,
       0.0, 0.0, 1.0;
  return k;
}

namespace {
constexpr double kOmegaEps = 1e-9;
}

// r_d = atan(2 r_u tan(w/2)) / w
Vec2 CameraModel::distort(const Vec2& u) const {
  if (omega < kOmegaEps) return u;
  const double two_tan = 2.0 * std::tan(0.5 * omega);
  const double ru = u.norm();
  if (ru < 1e-12) return u * (two_tan / omega);
  const double rd = std::atan(ru * two_tan) / omega;
  return u * (rd / ru);
}

// r_u = tan(r_d w) / (2 tan(w/2))
Vec2 CameraModel::undistort(const Vec2& d) const {
  if (omega < kOmegaEps) return d;
  const double two_tan = 2.0 * std::tan(0.5 * omega);
  const double rd = d.norm();
  if (rd < 1e-12) return d * (omega / two_tan);
  const double ru = std::tan(rd * omega) / two_tan;
  return d * (ru / rd);
}

std::optional<Vec2> project_point(const Vec3& p_cam, const CameraModel& cam, bool apply_distortion) {
  if (!(p_cam.z() > kMinDepth)) return std::nullopt;
  Vec2 n(p_cam.x() / p_cam.z(), p_cam.y() / p_cam.z());
  if (apply_distortion) n = cam.distort(n);
  return cam.normalized_to_pixel(n);
}

double wrap_angle(double a) {
  a = std::remainder(a, 2.0 * M_PI);
  if (a <= -M_PI) a += 2.0 * M_PI;
  return a;
}

double yaw_of(const Rotation& r) {
  const Vec3 x = r * Vec3::UnitX();
  return std::atan2(x.y(), x.x());
}

}  // namespace avio
