#include "avio/sim.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <yaml-cpp/yaml.h>
#include <Eigen/LU>

#include "avio/dataset.hpp"

namespace avio::sim {

namespace {

Vec2 world_axis(double heading, LineAxis axis) {
  const Vec3 d = line_direction_world(axis, heading_rotation(heading));
  return d.head<2>();
}

double uniform(std::mt19937_64& rng, double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); }

double normal(std::mt19937_64& rng) { return std::normal_distribution<double>(0.0, 1.0)(rng); }

// Largest-remainder split of `total` proportionally to `weights`.
std::vector<int> allocate(int total, const std::vector<double>& weights) {
  std::vector<int> out(weights.size(), 0);
  double sum = 0.0;
  for (double w : weights) sum += w;
  if (sum <= 0.0 || total <= 0) return out;
  std::vector<std::pair<double, size_t>> rem;
  int used = 0;
  for (size_t i = 0; i < weights.size(); ++i) {
    const double exact = total * weights[i] / sum;
    out[i] = static_cast<int>(std::floor(exact));
    used += out[i];
    rem.emplace_back(exact - out[i], i);
  }
  std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (int k = 0; k < total - used; ++k) ++out[rem[k % rem.size()].second];
  return out;
}

LineTexture random_texture(std::mt19937_64& rng) {
  LineTexture t;
  double total = 0.0;
  for (int k = 0; k < 4; ++k) {
    t.freq.push_back(uniform(rng, 2.0, 12.0));
    t.phase.push_back(uniform(rng, 0.0, 2.0 * M_PI));
    t.amp.push_back(uniform(rng, 0.5, 1.0));
    total += t.amp.back();
  }
  for (double& a : t.amp) a /= total;
  t.edge = (uniform(rng, 0.0, 1.0) < 0.5 ? -1.0 : 1.0) * uniform(rng, 25.0, 50.0);
  t.ridge = uniform(rng, -40.0, 40.0);
  return t;
}

double texture_value(const LineTexture& t, double s) {
  double v = 0.0;
  for (size_t k = 0; k < t.freq.size(); ++k) v += t.amp[k] * std::sin(2.0 * M_PI * t.freq[k] * s + t.phase[k]);
  return v;
}

uint64_t splitmix(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

SyntheticScene generate_scene(const SceneConfig& config) {
  if (config.num_lines <= 0 && config.num_points <= 0) throw std::invalid_argument("scene has no lines and no points");
  if (config.headings.empty()) throw std::invalid_argument("scene needs at least one world heading");
  for (size_t i = 0; i < config.headings.size(); ++i) {
    for (size_t j = i + 1; j < config.headings.size(); ++j) {
      if (heading_distance(config.headings[i], config.headings[j]) < 1e-6) {
        throw std::invalid_argument("world headings must differ modulo 90 degrees");
      }
    }
  }
  if (config.corridors.empty()) throw std::invalid_argument("scene needs at least one corridor");

  constexpr double kEndMargin = 5.5;
  std::vector<double> line_w, point_w;
  struct Leg {
    Vec2 start, u, n;
    double len;
    Vec2 along, across;
    LineAxis along_axis, across_axis;
    int world;
  };
  std::vector<Leg> legs;
  for (const auto& c : config.corridors) {
    if (c.world < 0 || c.world >= static_cast<int>(config.headings.size())) {
      throw std::invalid_argument("corridor references an unknown world");
    }
    Leg g;
    g.start = c.start;
    g.len = (c.end - c.start).norm();
    if (g.len <= 2.0 * kEndMargin) throw std::invalid_argument("corridor is too short");
    g.u = (c.end - c.start) / g.len;
    g.n = Vec2(-g.u.y(), g.u.x());
    g.world = c.world;
    const double phi = config.headings[c.world];
    const Vec2 ax = world_axis(phi, LineAxis::X);
    const Vec2 ay = world_axis(phi, LineAxis::Y);
    if (std::abs(std::abs(g.u.dot(ax)) - 1.0) < 1e-6) {
      g.along_axis = LineAxis::X;
      g.across_axis = LineAxis::Y;
      g.along = ax * (g.u.dot(ax) > 0 ? 1.0 : -1.0);
      g.across = ay;
    } else if (std::abs(std::abs(g.u.dot(ay)) - 1.0) < 1e-6) {
      g.along_axis = LineAxis::Y;
      g.across_axis = LineAxis::X;
      g.along = ay * (g.u.dot(ay) > 0 ? 1.0 : -1.0);
      g.across = ax;
    } else {
      throw std::invalid_argument("corridor is not aligned with its world");
    }
    legs.push_back(g);
    line_w.push_back(g.len * c.line_weight);
    point_w.push_back(g.len * c.point_weight);
  }

  std::mt19937_64 rng(config.seed);
  SyntheticScene scene;
  scene.headings = config.headings;
  const auto nl = allocate(std::max(0, config.num_lines), line_w);
  const auto np = allocate(std::max(0, config.num_points), point_w);
  const double hw = config.half_width;
  for (size_t i = 0; i < legs.size(); ++i) {
    const Leg& g = legs[i];
    const double lo = kEndMargin, hi = g.len - kEndMargin;
    for (int k = 0; k < nl[i]; ++k) {
      SceneLine line;
      line.id = static_cast<int>(scene.lines.size());
      const double side = uniform(rng, 0.0, 1.0) < 0.5 ? -1.0 : 1.0;
      const double kind = uniform(rng, 0.0, 1.0);
      const double s = uniform(rng, lo, hi);
      const Vec2 base = g.start + s * g.u + side * hw * g.n;
      if (kind < config.vertical_fraction) {
        line.axis = LineAxis::Z;
        line.world = -1;
        const double z0 = uniform(rng, 0.0, 0.5);
        const double z1 = uniform(rng, config.height - 0.5, config.height);
        line.a = Vec3(base.x(), base.y(), z0);
        line.b = Vec3(base.x(), base.y(), z1);
      } else if (kind < config.vertical_fraction + (1.0 - config.vertical_fraction) * 2.0 / 3.0) {
        line.axis = g.along_axis;
        line.world = g.world;
        const double len = uniform(rng, 2.0, 5.0);
        const double z = uniform(rng, 0.3, config.height - 0.3);
        const Vec2 c = g.start + std::clamp(s, lo + 0.5 * len, hi - 0.5 * len) * g.u + side * hw * g.n;
        const Vec2 p0 = c - 0.5 * len * g.along;
        const Vec2 p1 = c + 0.5 * len * g.along;
        line.a = Vec3(p0.x(), p0.y(), z);
        line.b = Vec3(p1.x(), p1.y(), z);
      } else {
        line.axis = g.across_axis;
        line.world = g.world;
        const double z = uniform(rng, 0.0, 1.0) < 0.5 ? 0.0 : config.height;
        const Vec2 c = g.start + s * g.u;
        const double sgn = g.across.dot(g.n) > 0 ? 1.0 : -1.0;
        const Vec2 p0 = c - sgn * hw * g.across;
        const Vec2 p1 = c + sgn * hw * g.across;
        line.a = Vec3(p0.x(), p0.y(), z);
        line.b = Vec3(p1.x(), p1.y(), z);
      }
      line.texture = random_texture(rng);
      scene.lines.push_back(std::move(line));
    }
    // Points cover the full side walls; a fifth go on the end walls so the
    // camera still sees texture when facing a corner.
    const int caps = np[i] / 5;
    for (int k = 0; k < np[i]; ++k) {
      Vec2 b;
      if (k < caps) {
        const bool at_end = k % 2 == 0;
        const Vec2 cap = at_end ? Vec2(g.start + (g.len + hw) * g.u) : Vec2(g.start - hw * g.u);
        b = cap + uniform(rng, -hw, hw) * g.n;
      } else {
        const double side = uniform(rng, 0.0, 1.0) < 0.5 ? -1.0 : 1.0;
        b = g.start + uniform(rng, 0.0, g.len) * g.u + side * hw * g.n;
      }
      scene.points.push_back({static_cast<int>(scene.points.size()), Vec3(b.x(), b.y(), uniform(rng, 0.2, config.height - 0.2))});
    }
  }
  return scene;
}

std::vector<Vec2> triangle_loop_waypoints() { return {Vec2(0, 0), Vec2(32, 0), Vec2(32, 32)}; }

SceneConfig triangle_loop_scene(double diagonal_heading, uint64_t seed) {
  SceneConfig c;
  c.headings = {0.0, diagonal_heading};
  const auto w = triangle_loop_waypoints();
  c.corridors = {{w[0], w[1], 0}, {w[1], w[2], 0}, {w[2], w[0], 1}};
  c.seed = seed;
  return c;
}

namespace {

// Closed polyline through the waypoints with circular fillets at the corners,
// starting at the middle of the first leg.
std::vector<Vec2> filleted_loop(const std::vector<Vec2>& wp, double radius, double max_deviation) {
  const size_t n = wp.size();
  if (n < 3) throw std::invalid_argument("a closed waypoint loop needs at least 3 points");
  for (size_t i = 0; i < n; ++i) {
    if ((wp[(i + 1) % n] - wp[i]).norm() < 1e-9) throw std::invalid_argument("duplicate consecutive waypoints");
  }
  struct Corner {
    Vec2 in, out, center;
    double r = 0.0, a0 = 0.0, sweep = 0.0;
  };
  std::vector<Corner> corners(n);
  std::vector<double> used(n, 0.0);  // tangent length at each waypoint
  for (size_t i = 0; i < n; ++i) {
    const Vec2 prev = wp[(i + n - 1) % n], cur = wp[i], next = wp[(i + 1) % n];
    const Vec2 din = (cur - prev).normalized();
    const Vec2 dout = (next - cur).normalized();
    const double cross = din.x() * dout.y() - din.y() * dout.x();
    const double turn = std::atan2(std::abs(cross), din.dot(dout));
    Corner& c = corners[i];
    if (turn < 1e-6) {
      c.in = c.out = cur;
      continue;
    }
    double r = radius;
    const double dev = 1.0 / std::cos(0.5 * turn) - 1.0;
    if (dev * r > max_deviation) r = max_deviation / dev;
    const double t = r * std::tan(0.5 * turn);
    used[i] = t;
    c.r = r;
    c.in = cur - t * din;
    c.out = cur + t * dout;
    const double sgn = cross > 0 ? 1.0 : -1.0;
    c.center = c.in + sgn * r * Vec2(-din.y(), din.x());
    c.a0 = std::atan2(c.in.y() - c.center.y(), c.in.x() - c.center.x());
    c.sweep = sgn * turn;
  }
  for (size_t i = 0; i < n; ++i) {
    if (used[i] + used[(i + 1) % n] > (wp[(i + 1) % n] - wp[i]).norm()) {
      throw std::invalid_argument("corner radius too large for the waypoint spacing");
    }
  }
  std::vector<Vec2> pts;
  constexpr double kStep = 0.5;
  auto straight = [&](const Vec2& a, const Vec2& b) {
    const double len = (b - a).norm();
    const int m = std::max(1, static_cast<int>(std::ceil(len / kStep)));
    for (int k = 0; k < m; ++k) pts.push_back(a + (b - a) * (static_cast<double>(k) / m));
  };
  auto arc = [&](const Corner& c) {
    if (c.r == 0.0) return;
    const int m = std::max(2, static_cast<int>(std::ceil(std::abs(c.sweep) / (5.0 * M_PI / 180.0))));
    for (int k = 0; k < m; ++k) {
      const double a = c.a0 + c.sweep * k / m;
      pts.push_back(c.center + c.r * Vec2(std::cos(a), std::sin(a)));
    }
  };
  const Vec2 mid0 = 0.5 * (wp[0] + wp[1]);
  straight(mid0, corners[1].in);
  for (size_t i = 1; i <= n; ++i) {
    const size_t k = i % n;
    arc(corners[k]);
    const size_t next = (k + 1) % n;
    straight(corners[k].out, next == 1 ? mid0 : corners[next].in);
  }
  return pts;
}

}  // namespace

GroundTruth::GroundTruth(const TrajectorySpec& spec) : spec_(spec) {
  if (spec.imu_rate <= 0 || spec.camera_rate <= 0 || spec.camera_rate > spec.imu_rate) {
    throw std::invalid_argument("invalid sensor rates");
  }
  if (spec.kind == TrajectoryKind::kWaypoints) {
    const std::vector<Vec2> q = filleted_loop(spec.waypoints, spec.corner_radius, 1.0);
    const int n = static_cast<int>(q.size());
    std::vector<double> h(n);
    for (int i = 0; i < n; ++i) {
      h[i] = (q[(i + 1) % n] - q[i]).norm();
      if (h[i] < 1e-9) throw std::invalid_argument("degenerate path sample");
    }
    // Periodic cubic spline, chord-length parameterized.
    MatX A = MatX::Zero(n, n);
    MatX rhs(n, 2);
    for (int i = 0; i < n; ++i) {
      const int im = (i + n - 1) % n, ip = (i + 1) % n;
      A(i, im) += h[im];
      A(i, i) += 2.0 * (h[im] + h[i]);
      A(i, ip) += h[i];
      const Vec2 r = 6.0 * ((q[ip] - q[i]) / h[i] - (q[i] - q[im]) / h[im]);
      rhs.row(i) = r.transpose();
    }
    const MatX M = A.partialPivLu().solve(rhs);
    double u = 0.0;
    for (int i = 0; i < n; ++i) {
      const int ip = (i + 1) % n;
      const Vec2 Mi = M.row(i).transpose(), Mp = M.row(ip).transpose();
      Cubic c;
      c.u0 = u;
      c.c0 = q[i];
      c.c1 = (q[ip] - q[i]) / h[i] - h[i] * (2.0 * Mi + Mp) / 6.0;
      c.c2 = 0.5 * Mi;
      c.c3 = (Mp - Mi) / (6.0 * h[i]);
      pieces_.push_back(c);
      u += h[i];
    }
    loop_length_ = u;
    duration_ = spec.duration > 0 ? spec.duration : loop_length_ / spec.speed;
    if (spec.speed_variation < 0.0 || spec.speed_variation >= 1.0 || spec.speed_period <= 0.0) {
      throw std::invalid_argument("speed variation must be in [0, 1) with a positive period");
    }
    // Whole number of speed cycles per loop so that one loop ends where it started.
    const double loop_time = loop_length_ / spec.speed;
    speed_omega_ = 2.0 * M_PI * std::max(1.0, std::round(loop_time / spec.speed_period)) / loop_time;
  } else {
    duration_ = spec.duration > 0 ? spec.duration : 10.0;
  }
}

double GroundTruth::length() const {
  if (spec_.kind == TrajectoryKind::kWaypoints) {
    double u, du, ddu, dddu;
    path_parameter(duration_, u, du, ddu, dddu);
    return u;
  }
  if (spec_.kind == TrajectoryKind::kCircle) return std::abs(spec_.circle_radius * spec_.circle_rate) * duration_;
  return 0.0;
}

void GroundTruth::path_parameter(double t, double& u, double& du, double& ddu, double& dddu) const {
  const double s = spec_.speed;
  const double A = spec_.speed_variation * s / speed_omega_;
  const double w = speed_omega_;
  u = s * t + A * std::sin(w * t);
  du = s + A * w * std::cos(w * t);
  ddu = -A * w * w * std::sin(w * t);
  dddu = -A * w * w * w * std::cos(w * t);
}

void GroundTruth::planar(double t, Vec2& p, Vec2& v, Vec2& a, Vec2& j) const {
  double u0, u1, u2, u3;
  path_parameter(t, u0, u1, u2, u3);
  double u = std::fmod(u0, loop_length_);
  if (u < 0) u += loop_length_;
  auto it = std::upper_bound(pieces_.begin(), pieces_.end(), u, [](double x, const Cubic& c) { return x < c.u0; });
  const Cubic& c = *(it == pieces_.begin() ? it : it - 1);
  const double du = u - c.u0;
  p = c.c0 + du * (c.c1 + du * (c.c2 + du * c.c3));
  const Vec2 d1 = c.c1 + du * (2.0 * c.c2 + 3.0 * du * c.c3);
  const Vec2 d2 = 2.0 * c.c2 + 6.0 * du * c.c3;
  const Vec2 d3 = 6.0 * c.c3;
  v = d1 * u1;
  a = d2 * u1 * u1 + d1 * u2;
  j = d3 * u1 * u1 * u1 + 3.0 * d2 * u1 * u2 + d1 * u3;
}

Kinematics GroundTruth::at(double t) const {
  Kinematics k;
  switch (spec_.kind) {
    case TrajectoryKind::kStationary:
      k.pose = spec_.stationary_pose;
      return k;
    case TrajectoryKind::kCircle: {
      const double w = spec_.circle_rate, R = spec_.circle_radius;
      const double c = std::cos(w * t), s = std::sin(w * t);
      const Vec2 p = spec_.circle_center + R * Vec2(c, s);
      k.velocity = Vec3(-R * w * s, R * w * c, 0.0);
      k.acceleration = Vec3(-R * w * w * c, -R * w * w * s, 0.0);
      const double yaw = std::atan2(k.velocity.y(), k.velocity.x());
      k.pose = Pose(Rotation::exp(Vec3(0, 0, yaw)), Vec3(p.x(), p.y(), spec_.height));
      k.angular_velocity = Vec3(0, 0, w);
      return k;
    }
    case TrajectoryKind::kWaypoints: {
      Vec2 p, v, a, j;
      planar(t, p, v, a, j);
      const double om = 2.0 * M_PI / spec_.height_period;
      const double A = spec_.height_amplitude;
      const double z = spec_.height + A * std::sin(om * t);
      k.velocity = Vec3(v.x(), v.y(), A * om * std::cos(om * t));
      k.acceleration = Vec3(a.x(), a.y(), -A * om * om * std::sin(om * t));
      const double yaw = std::atan2(v.y(), v.x());
      k.pose = Pose(Rotation::exp(Vec3(0, 0, yaw)), Vec3(p.x(), p.y(), z));
      k.angular_velocity = Vec3(0, 0, (v.x() * a.y() - v.y() * a.x()) / v.squaredNorm());
      return k;
    }
  }
  return k;
}

NoiseSpec NoiseSpec::zero() {
  NoiseSpec n;
  n.imu_noise = false;
  n.pixel_sigma = 0.0;
  n.segment_sigma = 0.0;
  n.intensity_sigma = 0.0;
  return n;
}

ImuStream synthesize_imu(const GroundTruth& traj, const NoiseSpec& noise) {
  ImuStream out;
  std::mt19937_64 rng(splitmix(noise.seed ^ 0x1a2b3c4dULL));
  const double rate = traj.spec().imu_rate;
  const double dt = 1.0 / rate;
  const Vec3 g(0.0, 0.0, -noise.imu.gravity);
  Vec3 bg = noise.gyro_bias;
  Vec3 ba = noise.accel_bias;
  const int64_t n = static_cast<int64_t>(std::floor(traj.duration() * rate + 1e-9)) + 1;
  for (int64_t k = 0; k < n; ++k) {
    const int64_t t_ns = static_cast<int64_t>(std::llround(static_cast<double>(k) * 1e9 / rate));
    const double t = static_cast<double>(t_ns) * 1e-9;
    const Kinematics kin = traj.at(t);
    ImuSample s;
    s.t = t;
    s.gyro = kin.angular_velocity + bg;
    s.accel = kin.pose.rotation.inverse() * (kin.acceleration - g) + ba;
    if (noise.imu_noise) {
      const double sd = 1.0 / std::sqrt(dt);
      for (int i = 0; i < 3; ++i) {
        s.gyro[i] += noise.imu.gyro_noise * sd * normal(rng);
        s.accel[i] += noise.imu.accel_noise * sd * normal(rng);
      }
      for (int i = 0; i < 3; ++i) {
        bg[i] += noise.imu.gyro_walk * std::sqrt(dt) * normal(rng);
        ba[i] += noise.imu.accel_walk * std::sqrt(dt) * normal(rng);
      }
    }
    out.t_ns.push_back(t_ns);
    out.samples.push_back(s);
  }
  return out;
}

SyntheticPatchSource::SyntheticPatchSource(std::shared_ptr<const SyntheticScene> scene, const Pose& cam_pose,
                                           const CameraModel& cam, double intensity_sigma, uint64_t seed)
    : scene_(std::move(scene)), cam_(cam), sigma_(intensity_sigma), seed_(seed) {
  const Pose cw = cam_pose.inverse();
  constexpr double kNear = 0.1;
  for (const auto& line : scene_->lines) {
    Vec3 a = cw * line.a;
    Vec3 b = cw * line.b;
    const double len = (line.b - line.a).norm();
    double s0 = 0.0, s1 = len;
    if (a.z() < kNear && b.z() < kNear) continue;
    if (a.z() < kNear) {
      const double f = (kNear - a.z()) / (b.z() - a.z());
      a = a + f * (b - a);
      s0 = f * len;
    } else if (b.z() < kNear) {
      const double f = (kNear - b.z()) / (a.z() - b.z());
      b = b + f * (a - b);
      s1 = len - f * len;
    }
    const auto pa = project_point(a, cam, false);
    const auto pb = project_point(b, cam, false);
    if (!pa || !pb) continue;
    lines_.push_back({*pa, *pb, a.z(), b.z(), s0, s1, &line.texture});
  }
}

double SyntheticPatchSource::intensity(const Vec2& px) const {
  double value = 100.0;
  for (const auto& l : lines_) {
    const Vec2 d = l.b - l.a;
    const double len2 = d.squaredNorm();
    if (len2 < 1e-12) continue;
    const double t = (px - l.a).dot(d) / len2;
    if (t < -0.01 || t > 1.01) continue;
    const double len = std::sqrt(len2);
    const double dist = (d.x() * (px.y() - l.a.y()) - d.y() * (px.x() - l.a.x())) / len;
    if (std::abs(dist) > 5.0) continue;
    const double tc = std::clamp(t, 0.0, 1.0);
    const double wa = (1.0 - tc) / l.za, wb = tc / l.zb;
    const double s = (wa * l.s0 + wb * l.s1) / (wa + wb);
    const double tex = texture_value(*l.texture, s);
    value += (0.5 * l.texture->edge * std::tanh(dist / 0.8) + l.texture->ridge * std::exp(-0.5 * dist * dist)) *
             (1.0 + 0.6 * tex);
  }
  if (sigma_ > 0.0) {
    const int64_t ix = static_cast<int64_t>(std::llround(px.x() * 8.0));
    const int64_t iy = static_cast<int64_t>(std::llround(px.y() * 8.0));
    const uint64_t h = splitmix(seed_ ^ splitmix(static_cast<uint64_t>(ix) * 0x100000001b3ULL ^ static_cast<uint64_t>(iy)));
    const double u = (static_cast<double>(h >> 11) * 0x1.0p-53) - 0.5;
    value += sigma_ * std::sqrt(12.0) * u;
  }
  return value;
}

std::optional<Patch> SyntheticPatchSource::patch(const Vec2& center, int side) const {
  const int h = side / 2;
  if (!cam_.in_image(center, h)) return std::nullopt;
  Patch p;
  p.side = side;
  p.center = center;
  p.values.reserve(side * side);
  for (int r = -h; r <= h; ++r) {
    for (int c = -h; c <= h; ++c) p.values.push_back(intensity(center + Vec2(c, r)));
  }
  return p;
}

FrameData render_observations(const SyntheticScene& scene, const Pose& cam_pose, const CameraModel& cam,
                              const NoiseSpec& noise, std::mt19937_64& rng, const RenderOptions& opt) {
  FrameData f;
  const Pose cw = cam_pose.inverse();
  for (const auto& line : scene.lines) {
    Vec3 a = cw * line.a;
    Vec3 b = cw * line.b;
    // Clip to the depth range [near, max_range].
    for (double bound : {opt.near, -opt.max_range}) {
      const double za = bound > 0 ? a.z() - bound : -bound - a.z();
      const double zb = bound > 0 ? b.z() - bound : -bound - b.z();
      if (za < 0 && zb < 0) {
        a = b = Vec3::Constant(std::nan(""));
        break;
      }
      if (za < 0) a = a + (za / (za - zb)) * (b - a);
      else if (zb < 0) b = b + (zb / (zb - za)) * (a - b);
    }
    if (!a.allFinite()) continue;
    const auto pa = project_point(a, cam, false);
    const auto pb = project_point(b, cam, false);
    if (!pa || !pb) continue;
    const auto clipped = clip_to_image(*pa, *pb, cam);
    if (!clipped || (clipped->second - clipped->first).norm() < opt.min_length_px) continue;
    Vec2 p0 = clipped->first, p1 = clipped->second;
    if (noise.segment_sigma > 0) {
      for (int k = 0; k < 2; ++k) {
        p0[k] += noise.segment_sigma * normal(rng);
        p1[k] += noise.segment_sigma * normal(rng);
      }
    }
    f.segments.emplace_back(p0, p1);
    f.segment_truth.push_back(line.id);
  }
  for (const auto& pt : scene.points) {
    const Vec3 pc = cw * pt.p;
    if (pc.z() < opt.near || pc.z() > opt.max_range) continue;
    const auto px = project_point(pc, cam, true);
    if (!px || !cam.in_image(*px)) continue;
    Vec2 q = *px;
    if (noise.pixel_sigma > 0) q += noise.pixel_sigma * Vec2(normal(rng), normal(rng));
    f.points.push_back({pt.id, q});
  }
  return f;
}

Vec3 two_point_line(const Vec2& l, LineAxis axis, const LineFrame& frame, const Pose& cam_pose,
                    const CameraModel& cam) {
  const Mat3 R = frame.world_from_start * axis_rotation(axis);
  const double rho = std::max(l.y(), 1e-9);
  const Vec3 p0 = R * Vec3(std::cos(l.x()) / rho, std::sin(l.x()) / rho, 0.0) + frame.anchor;
  const Vec3 p1 = p0 + R.col(2);
  const Mat3 KR = cam.K() * cam_pose.rotation.inverse().matrix();
  const Vec3 x0 = KR * (p0 - cam_pose.translation);
  const Vec3 x1 = KR * (p1 - cam_pose.translation);
  const Vec3 line = x0.cross(x1);
  return line / std::hypot(line.x(), line.y());
}

Vec2 batch_oracle(const std::vector<LineView>& views, LineAxis axis, const LineFrame& frame, const CameraModel& cam,
                  const Vec2& init, double sigma_px, int iterations) {
  auto residual = [&](const Vec2& l) {
    VecX r(2 * views.size());
    for (size_t k = 0; k < views.size(); ++k) {
      const Vec3 line = two_point_line(l, axis, frame, views[k].cam_pose, cam);
      r[2 * k] = views[k].seg.a.dot(line) / sigma_px;
      r[2 * k + 1] = views[k].seg.b.dot(line) / sigma_px;
    }
    return r;
  };
  Vec2 x = init;
  VecX r = residual(x);
  for (int it = 0; it < iterations; ++it) {
    Eigen::Matrix<double, Eigen::Dynamic, 2> J(r.size(), 2);
    for (int k = 0; k < 2; ++k) {
      Vec2 d = Vec2::Zero();
      d[k] = 1e-7;
      J.col(k) = (residual(x + d) - residual(x - d)) / 2e-7;
    }
    const Vec2 step = (J.transpose() * J).ldlt().solve(-(J.transpose() * r));
    double alpha = 1.0;
    bool moved = false;
    for (int h = 0; h < 20; ++h, alpha *= 0.5) {
      const Vec2 trial = x + alpha * step;
      const VecX rt = residual(trial);
      if (rt.squaredNorm() <= r.squaredNorm()) {
        x = trial;
        r = rt;
        moved = true;
        break;
      }
    }
    if (!moved || step.norm() < 1e-14) break;
  }
  return x;
}

CameraModel default_camera() {
  CameraModel c;
  c.fx = c.fy = 380.0;
  c.cx = 320.0;
  c.cy = 240.0;
  c.width = 640;
  c.height = 480;
  c.omega = 0.0;
  return c;
}

Pose default_extrinsics() {
  Mat3 R;
  R.col(0) = Vec3(0, -1, 0);
  R.col(1) = Vec3(0, 0, -1);
  R.col(2) = Vec3(1, 0, 0);
  return Pose(Rotation::from_matrix(R), Vec3(0.05, 0.0, 0.02));
}

Scenario default_scenario(uint64_t seed) {
  Scenario s;
  s.scene = triangle_loop_scene(M_PI / 4.0, seed);
  s.trajectory.kind = TrajectoryKind::kWaypoints;
  s.trajectory.waypoints = triangle_loop_waypoints();
  s.noise.seed = seed;
  return s;
}

namespace {

template <typename T>
T get(const YAML::Node& n, const char* key, T fallback) {
  return n && n[key] ? n[key].as<T>() : fallback;
}

Vec2 vec2(const YAML::Node& n) {
  if (!n.IsSequence() || n.size() != 2) throw std::runtime_error("expected a 2-element list");
  return {n[0].as<double>(), n[1].as<double>()};
}

Vec3 vec3(const YAML::Node& n) {
  if (!n.IsSequence() || n.size() != 3) throw std::runtime_error("expected a 3-element list");
  return {n[0].as<double>(), n[1].as<double>(), n[2].as<double>()};
}

}  // namespace

Scenario load_scenario(const std::string& path) {
  YAML::Node root;
  try {
    root = YAML::LoadFile(path);
  } catch (const YAML::Exception& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
  try {
    const uint64_t seed = get<uint64_t>(root, "seed", 1);
    Scenario s = default_scenario(seed);
    const double deg = M_PI / 180.0;
    if (const auto tn = root["trajectory"]) {
      const std::string kind = get<std::string>(tn, "kind", "waypoints");
      if (kind == "waypoints") s.trajectory.kind = TrajectoryKind::kWaypoints;
      else if (kind == "circle") s.trajectory.kind = TrajectoryKind::kCircle;
      else if (kind == "stationary") s.trajectory.kind = TrajectoryKind::kStationary;
      else throw std::runtime_error("unknown trajectory kind '" + kind + "'");
      if (tn["waypoints"]) {
        s.trajectory.waypoints.clear();
        for (const auto& w : tn["waypoints"]) s.trajectory.waypoints.push_back(vec2(w));
      }
      s.trajectory.height = get(tn, "height_m", s.trajectory.height);
      s.trajectory.height_amplitude = get(tn, "height_amplitude_m", s.trajectory.height_amplitude);
      s.trajectory.speed = get(tn, "speed_mps", s.trajectory.speed);
      s.trajectory.speed_variation = get(tn, "speed_variation", s.trajectory.speed_variation);
      s.trajectory.speed_period = get(tn, "speed_period_s", s.trajectory.speed_period);
      s.trajectory.corner_radius = get(tn, "corner_radius_m", s.trajectory.corner_radius);
      s.trajectory.duration = get(tn, "duration_s", s.trajectory.duration);
      s.trajectory.imu_rate = get(tn, "imu_rate_hz", s.trajectory.imu_rate);
      s.trajectory.camera_rate = get(tn, "camera_rate_hz", s.trajectory.camera_rate);
      if (const auto c = tn["circle"]) {
        if (c["center_m"]) s.trajectory.circle_center = vec2(c["center_m"]);
        s.trajectory.circle_radius = get(c, "radius_m", s.trajectory.circle_radius);
        s.trajectory.circle_rate = get(c, "rate_radps", s.trajectory.circle_rate);
      }
      if (tn["position_m"]) s.trajectory.stationary_pose.translation = vec3(tn["position_m"]);
    }
    if (const auto sn = root["scene"]) {
      if (sn["headings_deg"]) {
        s.scene.headings.clear();
        for (const auto& h : sn["headings_deg"]) s.scene.headings.push_back(h.as<double>() * deg);
      }
      if (sn["corridors"]) {
        s.scene.corridors.clear();
        for (const auto& c : sn["corridors"]) {
          Corridor k;
          k.start = vec2(c["start_m"]);
          k.end = vec2(c["end_m"]);
          k.world = get(c, "world", 0);
          k.line_weight = get(c, "line_weight", 1.0);
          k.point_weight = get(c, "point_weight", 1.0);
          s.scene.corridors.push_back(k);
        }
      }
      s.scene.half_width = get(sn, "half_width_m", s.scene.half_width);
      s.scene.height = get(sn, "height_m", s.scene.height);
      s.scene.num_lines = get(sn, "lines", s.scene.num_lines);
      s.scene.num_points = get(sn, "points", s.scene.num_points);
      s.scene.vertical_fraction = get(sn, "vertical_fraction", s.scene.vertical_fraction);
    }
    s.scene.seed = seed;
    if (const auto nn = root["noise"]) {
      s.noise.imu_noise = get(nn, "imu_noise", s.noise.imu_noise);
      s.noise.imu.gyro_noise = get(nn, "gyro_noise", s.noise.imu.gyro_noise);
      s.noise.imu.accel_noise = get(nn, "accel_noise", s.noise.imu.accel_noise);
      s.noise.imu.gyro_walk = get(nn, "gyro_walk", s.noise.imu.gyro_walk);
      s.noise.imu.accel_walk = get(nn, "accel_walk", s.noise.imu.accel_walk);
      s.noise.pixel_sigma = get(nn, "pixel_sigma_px", s.noise.pixel_sigma);
      s.noise.segment_sigma = get(nn, "segment_sigma_px", s.noise.segment_sigma);
      s.noise.intensity_sigma = get(nn, "intensity_sigma", s.noise.intensity_sigma);
      if (nn["gyro_bias"]) s.noise.gyro_bias = vec3(nn["gyro_bias"]);
      if (nn["accel_bias"]) s.noise.accel_bias = vec3(nn["accel_bias"]);
    }
    s.noise.seed = seed;
    if (const auto cn = root["camera"]) {
      s.camera.fx = get(cn, "fx", s.camera.fx);
      s.camera.fy = get(cn, "fy", s.camera.fy);
      s.camera.cx = get(cn, "cx", s.camera.cx);
      s.camera.cy = get(cn, "cy", s.camera.cy);
      s.camera.omega = get(cn, "omega", s.camera.omega);
      s.camera.width = get(cn, "width", s.camera.width);
      s.camera.height = get(cn, "height", s.camera.height);
    }
    if (const auto rn = root["render"]) {
      s.render.max_range = get(rn, "max_range_m", s.render.max_range);
      s.render.min_length_px = get(rn, "min_length_px", s.render.min_length_px);
    }
    return s;
  } catch (const YAML::Exception& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
}

SimData simulate(const Scenario& scenario) {
  SimData d;
  d.scene = generate_scene(scenario.scene);
  const GroundTruth gt(scenario.trajectory);
  d.imu = synthesize_imu(gt, scenario.noise);
  d.camera = scenario.camera;
  d.extrinsics = scenario.extrinsics;
  d.imu_noise = scenario.noise.imu;
  for (size_t k = 0; k < d.imu.t_ns.size(); ++k) {
    d.truth.push_back(gt.at(d.imu.samples[k].t));
    d.truth_t_ns.push_back(d.imu.t_ns[k]);
  }
  std::mt19937_64 rng(splitmix(scenario.noise.seed ^ 0x5eedULL));
  const double rate = scenario.trajectory.camera_rate;
  const int64_t n = static_cast<int64_t>(std::floor(gt.duration() * rate + 1e-9)) + 1;
  auto scene = std::make_shared<const SyntheticScene>(d.scene);
  for (int64_t k = 0; k < n; ++k) {
    const int64_t t_ns = static_cast<int64_t>(std::llround(static_cast<double>(k) * 1e9 / rate));
    const Pose cam_pose = gt.at(static_cast<double>(t_ns) * 1e-9).pose * scenario.extrinsics;
    FrameData f = render_observations(d.scene, cam_pose, scenario.camera, scenario.noise, rng, scenario.render);
    f.t_ns = t_ns;
    f.patches = std::make_shared<SyntheticPatchSource>(scene, cam_pose, scenario.camera,
                                                       scenario.noise.intensity_sigma, splitmix(scenario.noise.seed + k));
    d.frames.push_back(std::move(f));
  }
  return d;
}

void export_dataset(const SimData& data, const std::string& dir) {
  Dataset out;
  out.imu_t_ns = data.imu.t_ns;
  out.imu = data.imu.samples;
  out.frames = data.frames;
  for (auto& f : out.frames) f.patches.reset();
  std::vector<GroundTruthRow> rows;
  for (size_t k = 0; k < data.truth.size(); ++k) {
    GroundTruthRow r;
    r.t_ns = data.truth_t_ns[k];
    r.pose = data.truth[k].pose;
    r.velocity = data.truth[k].velocity;
    rows.push_back(r);
  }
  out.truth = std::move(rows);
  write_euroc(out, dir);
}

}  // namespace avio::sim
