#include "avio/atlanta.hpp"

#include <cmath>

namespace avio {

const char* to_string(LineAxis axis) {
  switch (axis) {
    case LineAxis::X: return "X";
    case LineAxis::Y: return "Y";
    case LineAxis::Z: return "Z";
  }
  return "?";
}

void StructuralLine::set_params(const Vec2& l) {
  theta = l.x();
  rho = l.y();
}

Vec3 LineSegment2D::line() const {
  const Vec3 l = a.cross(b);
  return normalize_image_line(l);
}

Mat3 axis_rotation(LineAxis axis) {
  Mat3 R;
  switch (axis) {
    case LineAxis::X:
      R << 0, 0, 1,
           0, 1, 0,
          -1, 0, 0;
      break;
    case LineAxis::Y:
      R << 1, 0, 0,
           0, 0, 1,
           0, -1, 0;
      break;
    case LineAxis::Z:
      R.setIdentity();
      break;
  }
  return R;
}

Mat3 heading_rotation(double phi) {
  const double c = std::cos(phi);
  const double s = std::sin(phi);
  Mat3 R;
  R << c, s, 0,
      -s, c, 0,
       0, 0, 1;
  return R;
}

Vec3 line_direction_world(LineAxis axis, const Mat3& world_from_start) {
  return world_from_start * axis_rotation(axis).col(2);
}

Vec3 line_point_world(double theta, double rho, LineAxis axis, const Mat3& world_from_start, const Vec3& anchor) {
  const Vec3 lp(std::cos(theta) / rho, std::sin(theta) / rho, 0.0);
  return world_from_start * axis_rotation(axis) * lp + anchor;
}

std::optional<Vec2> line_params_through(const Vec3& point, LineAxis axis, const Mat3& world_from_start,
                                        const Vec3& anchor, double* along) {
  const Vec3 q = axis_rotation(axis).transpose() * world_from_start.transpose() * (point - anchor);
  const double n = std::hypot(q.x(), q.y());
  if (n < 1e-9) return std::nullopt;
  if (along) *along = q.z();
  return Vec2(std::atan2(q.y(), q.x()), 1.0 / n);
}

Vec2 normalize_line_params(const Vec2& l, double rho_max) {
  double theta = l.x();
  double rho = l.y();
  if (rho < 0.0) {
    rho = -rho;
    theta += M_PI;
  }
  rho = std::min(rho, rho_max);
  return {wrap_angle(theta), rho};
}

Vec3 normalize_image_line(const Vec3& l) {
  const double n = std::hypot(l.x(), l.y());
  return n > 0.0 ? Vec3(l / n) : l;
}

std::optional<LineProjection> project_line(double theta, double rho, LineAxis axis, const Mat3& world_from_start,
                                           const Vec3& anchor, const Pose& cam_pose, const CameraModel& cam) {
  const Mat3 R_cw = cam_pose.rotation.inverse().matrix();
  const Vec3 p_cw = -(R_cw * cam_pose.translation);
  const Mat3 R_cl = R_cw * world_from_start * axis_rotation(axis);
  const Vec3 r(std::cos(theta), std::sin(theta), 0.0);
  const Vec3 lp = R_cl * r + (R_cw * anchor + p_cw) * rho;
  const Vec3 v = R_cl.col(2);
  const Vec3 n = lp.cross(v);
  if (n.norm() < 1e-12 * lp.norm()) return std::nullopt;
  return LineProjection{cam.K_inv().transpose() * n, cam.K() * v};
}

std::optional<LineProjection> project_line(const StructuralLine& line, double phi, const Vec3& anchor,
                                           const Pose& cam_pose, const CameraModel& cam) {
  return project_line(line.theta, line.rho, line.axis, heading_rotation(phi), anchor, cam_pose, cam);
}

Vec3 vanishing_point(LineAxis axis, const Mat3& world_from_start, const Rotation& cam_orientation,
                     const CameraModel& cam) {
  return cam.K() * cam_orientation.inverse().matrix() * line_direction_world(axis, world_from_start);
}

VanishingPoints vanishing_points(double phi, const Rotation& cam_orientation, const CameraModel& cam) {
  const Mat3 KR = cam.K() * cam_orientation.inverse().matrix();
  const double c = std::cos(phi);
  const double s = std::sin(phi);
  return {KR * Vec3::UnitZ(), KR * Vec3(c, -s, 0.0), KR * Vec3(s, c, 0.0)};
}

Vec3 horizon_line(const Rotation& cam_orientation, const CameraModel& cam) {
  return cam.K_inv().transpose() * cam_orientation.inverse().matrix() * Vec3::UnitZ();
}

namespace {

double init_theta(const Vec2& mid_px, LineAxis axis, const Mat3& world_from_start, const Mat3& world_from_cam,
                  const CameraModel& cam) {
  const Vec3 ray = cam.K_inv() * Vec3(mid_px.x(), mid_px.y(), 1.0);
  const Vec3 m = axis_rotation(axis).transpose() * world_from_start.transpose() * world_from_cam * ray;
  return std::atan2(m.y(), m.x());
}

}  // namespace

std::optional<StructuralLine> init_line_from_segment(const LineSegment2D& seg, LineAxis axis,
                                                     const Mat3& world_from_start, const Pose& cam_pose,
                                                     const CameraModel& cam, double rho0, double sigma_rho0,
                                                     const InitNoise& noise) {
  const Mat3 R_wc = cam_pose.rotation.matrix();
  const Vec2 mid = seg.midpoint();
  const Vec3 ray = cam.K_inv() * Vec3(mid.x(), mid.y(), 1.0);
  const Vec3 m = axis_rotation(axis).transpose() * world_from_start.transpose() * R_wc * ray;
  if (std::hypot(m.x(), m.y()) < 1e-9 * m.norm()) return std::nullopt;
  const double theta0 = std::atan2(m.y(), m.x());

  // Central differences of theta with respect to each error source.
  constexpr double h = 1e-6;
  auto dtheta = [](double plus, double minus) { return wrap_angle(plus - minus) / (2.0 * h); };
  double var_theta = 0.0;
  for (int i = 0; i < 2; ++i) {
    Vec2 d = Vec2::Zero();
    d[i] = h;
    const double g = dtheta(init_theta(mid + d, axis, world_from_start, R_wc, cam),
                            init_theta(mid - d, axis, world_from_start, R_wc, cam));
    var_theta += g * g * noise.sigma_px * noise.sigma_px;
  }
  if (noise.var_phi > 0.0) {
    const double g = dtheta(init_theta(mid, axis, world_from_start * heading_rotation(h), R_wc, cam),
                            init_theta(mid, axis, world_from_start * heading_rotation(-h), R_wc, cam));
    var_theta += g * g * noise.var_phi;
  }
  Eigen::RowVector3d g_rot;
  for (int i = 0; i < 3; ++i) {
    const Vec3 d = Vec3::Unit(i) * h;
    g_rot[i] = dtheta(init_theta(mid, axis, world_from_start, so3_exp(d) * R_wc, cam),
                      init_theta(mid, axis, world_from_start, so3_exp(-d) * R_wc, cam));
  }
  var_theta += g_rot * noise.cov_cam_rot * g_rot.transpose();

  StructuralLine line;
  line.axis = axis;
  line.theta = theta0;
  line.rho = rho0;
  line.prior.mean = Vec2(theta0, rho0);
  line.prior.cov = Vec2(std::max(var_theta, 1e-12), sigma_rho0 * sigma_rho0).asDiagonal();
  return line;
}

namespace {

struct ShiftedParams {
  Vec2 l;
  Mat2 J;
};

// (theta, rho) of the same line after the anchor moves by `d` expressed in {L}.
std::optional<ShiftedParams> shift_params(const Vec2& l, const Vec2& d) {
  const double theta = l.x();
  const double rho = l.y();
  if (rho < 1e-12) return ShiftedParams{l, Mat2::Identity()};
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  const double a = c / rho + d.x();
  const double b = s / rho + d.y();
  const double n2 = a * a + b * b;
  if (n2 < 1e-18) return std::nullopt;
  const double rho_new = 1.0 / std::sqrt(n2);
  Mat2 dab;  // d(a, b) / d(theta, rho)
  dab << -s / rho, -c / (rho * rho),
          c / rho, -s / (rho * rho);
  Mat2 dnew;  // d(theta', rho') / d(a, b)
  dnew << -b / n2, a / n2,
          -a * rho_new * rho_new * rho_new, -b * rho_new * rho_new * rho_new;
  return ShiftedParams{Vec2(std::atan2(b, a), rho_new), dnew * dab};
}

}  // namespace

std::optional<ReanchorResult> reanchor_line(const StructuralLine& line, const Mat2& cov, const Vec3& old_anchor,
                                            const Vec3& new_anchor, const Mat3& world_from_start) {
  const Vec3 d = axis_rotation(line.axis).transpose() * world_from_start.transpose() * (old_anchor - new_anchor);
  const auto cur = shift_params(line.params(), d.head<2>());
  const auto pri = shift_params(line.prior.mean, d.head<2>());
  if (!cur || !pri) return std::nullopt;

  ReanchorResult out{line, cur->J * cov * cur->J.transpose(), cur->J};
  out.line.set_params(cur->l);
  out.line.range = line.range + Vec2::Constant(d.z());
  out.line.prior.mean = pri->l;
  out.line.prior.cov = pri->J * line.prior.cov * pri->J.transpose();
  return out;
}

std::optional<std::pair<Vec3, Vec3>> line_endpoints_3d(const StructuralLine& line, const Mat3& world_from_start,
                                                       const Vec3& anchor) {
  if (!(line.rho > 0.0)) return std::nullopt;
  const double a = std::cos(line.theta) / line.rho;
  const double b = std::sin(line.theta) / line.rho;
  const Mat3 R = world_from_start * axis_rotation(line.axis);
  return std::make_pair(Vec3(R * Vec3(a, b, line.range.x()) + anchor), Vec3(R * Vec3(a, b, line.range.y()) + anchor));
}

std::optional<StructuralLine> retag_line_world(const StructuralLine& line, const Mat3& old_world_from_start,
                                               const Mat3& new_world_from_start, const Vec3& anchor,
                                               int new_world_id) {
  if (!(line.rho > 0.0) || !(line.prior.mean.y() > 0.0)) return std::nullopt;
  const Vec3 dir = line_direction_world(line.axis, old_world_from_start);
  LineAxis axis = line.axis;
  if (line.axis != LineAxis::Z) {
    const double dx = std::abs(dir.dot(line_direction_world(LineAxis::X, new_world_from_start)));
    const double dy = std::abs(dir.dot(line_direction_world(LineAxis::Y, new_world_from_start)));
    axis = dx >= dy ? LineAxis::X : LineAxis::Y;
  }
  const Mat3 R_old = old_world_from_start * axis_rotation(line.axis);
  const double mid = 0.5 * (line.range.x() + line.range.y());
  const double half = 0.5 * std::abs(line.range.y() - line.range.x());

  auto map_point = [&](const Vec2& l, double* along) -> std::optional<Vec2> {
    const Vec3 p = R_old * Vec3(std::cos(l.x()) / l.y(), std::sin(l.x()) / l.y(), mid) + anchor;
    return line_params_through(p, axis, new_world_from_start, anchor, along);
  };
  double along = 0.0;
  const auto l_new = map_point(line.params(), &along);
  const auto l0_new = map_point(line.prior.mean, nullptr);
  if (!l_new || !l0_new) return std::nullopt;

  StructuralLine out = line;
  out.world_id = new_world_id;
  out.axis = axis;
  out.set_params(*l_new);
  out.range = Vec2(along - half, along + half);
  out.prior.mean = *l0_new;
  return out;
}

}  // namespace avio
