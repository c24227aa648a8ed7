#include "avio/filter.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>

#include <boost/math/distributions/chi_squared.hpp>
#include <Eigen/Eigenvalues>
#include <Eigen/QR>
#include <Eigen/SVD>

namespace avio {

const Clone* NominalState::clone(int id) const {
  for (const auto& c : clones) {
    if (c.id == id) return &c;
  }
  return nullptr;
}

const ManhattanWorld* NominalState::world(int id) const {
  for (const auto& w : worlds) {
    if (w.id == id) return &w;
  }
  return nullptr;
}

double NominalState::phi(int world_id) const {
  if (world_id == kDummyWorldId) return 0.0;
  const auto* w = world(world_id);
  if (!w) throw std::out_of_range("unknown world id " + std::to_string(world_id));
  return w->phi;
}

int FilterState::heading_count() const {
  return static_cast<int>(std::count_if(x.worlds.begin(), x.worlds.end(), [](const auto& w) { return w.in_state; }));
}

int FilterState::dim() const { return kHeadingOffset + heading_count() + 6 * static_cast<int>(x.clones.size()); }

std::optional<int> FilterState::heading_index(int world_id) const {
  int k = 0;
  for (const auto& w : x.worlds) {
    if (!w.in_state) continue;
    if (w.id == world_id) return kHeadingOffset + k;
    ++k;
  }
  return std::nullopt;
}

std::optional<int> FilterState::clone_index(int clone_id) const {
  const int base = kHeadingOffset + heading_count();
  for (size_t k = 0; k < x.clones.size(); ++k) {
    if (x.clones[k].id == clone_id) return base + 6 * static_cast<int>(k);
  }
  return std::nullopt;
}

std::optional<double> FilterState::heading_variance(int world_id) const {
  const auto i = heading_index(world_id);
  if (!i) return std::nullopt;
  return P(*i, *i);
}

FilterState make_filter_state(const ImuState& imu, const Pose& extrinsics, double t, const InitialUncertainty& sigma) {
  FilterState s;
  s.x.imu = imu;
  s.x.extrinsics = extrinsics;
  s.x.t = t;
  VecX d(kHeadingOffset);
  d << sigma.roll_pitch, sigma.roll_pitch, sigma.yaw, Vec3::Constant(sigma.position), Vec3::Constant(sigma.velocity),
      Vec3::Constant(sigma.gyro_bias), Vec3::Constant(sigma.accel_bias), Vec3::Constant(sigma.ext_rotation),
      Vec3::Constant(sigma.ext_translation);
  s.P = d.cwiseAbs2().asDiagonal();
  return s;
}

namespace {

enum class Slot { kImuRot, kImuPos, kImuVel, kGyroBias, kAccelBias, kExtRot, kExtPos, kHeading, kCloneRot, kClonePos };

struct Component {
  Slot slot;
  int which = 0;  // world / clone position in its vector
  int axis = 0;
};

Component locate(const NominalState& x, int index) {
  if (index < kImuDim) return {static_cast<Slot>(index / 3), 0, index % 3};
  if (index < kHeadingOffset) return {index < 18 ? Slot::kExtRot : Slot::kExtPos, 0, (index - kExtOffset) % 3};
  int k = index - kHeadingOffset;
  int h = 0;
  for (size_t w = 0; w < x.worlds.size(); ++w) {
    if (!x.worlds[w].in_state) continue;
    if (h == k) return {Slot::kHeading, static_cast<int>(w), 0};
    ++h;
  }
  k -= h;
  const int c = k / 6;
  if (c >= static_cast<int>(x.clones.size())) throw std::out_of_range("error-state index out of range");
  const int r = k % 6;
  return {r < 3 ? Slot::kCloneRot : Slot::kClonePos, c, r % 3};
}

// Applies `value` along one component and returns a function that undoes it exactly.
std::function<void()> perturb_component(NominalState& x, int index, double value) {
  const Component c = locate(x, index);
  const Vec3 d = Vec3::Unit(c.axis) * value;
  switch (c.slot) {
    case Slot::kImuRot:
    case Slot::kImuPos:
    case Slot::kImuVel:
    case Slot::kGyroBias:
    case Slot::kAccelBias: {
      const ImuState saved = x.imu;
      if (c.slot == Slot::kImuRot) x.imu.orientation = so3_boxplus(x.imu.orientation, d);
      if (c.slot == Slot::kImuPos) x.imu.position += d;
      if (c.slot == Slot::kImuVel) x.imu.velocity += d;
      if (c.slot == Slot::kGyroBias) x.imu.gyro_bias += d;
      if (c.slot == Slot::kAccelBias) x.imu.accel_bias += d;
      return [&x, saved] { x.imu = saved; };
    }
    case Slot::kExtRot:
    case Slot::kExtPos: {
      const Pose saved = x.extrinsics;
      if (c.slot == Slot::kExtRot) x.extrinsics.rotation = so3_boxplus(x.extrinsics.rotation, d);
      else x.extrinsics.translation += d;
      return [&x, saved] { x.extrinsics = saved; };
    }
    case Slot::kHeading: {
      const double saved = x.worlds[c.which].phi;
      x.worlds[c.which].phi += value;
      return [&x, saved, w = c.which] { x.worlds[w].phi = saved; };
    }
    case Slot::kCloneRot:
    case Slot::kClonePos: {
      Pose& p = x.clones[c.which].pose;
      const Pose saved = p;
      if (c.slot == Slot::kCloneRot) p.rotation = so3_boxplus(p.rotation, d);
      else p.translation += d;
      return [&x, saved, w = c.which] { x.clones[w].pose = saved; };
    }
  }
  return [] {};
}

}  // namespace

void apply_error_component(NominalState& x, int index, double value) { perturb_component(x, index, value); }

void apply_correction(NominalState& x, const VecX& dx) {
  x.imu.orientation = so3_boxplus(x.imu.orientation, dx.segment<3>(0));
  x.imu.position += dx.segment<3>(3);
  x.imu.velocity += dx.segment<3>(6);
  x.imu.gyro_bias += dx.segment<3>(9);
  x.imu.accel_bias += dx.segment<3>(12);
  x.extrinsics.rotation = so3_boxplus(x.extrinsics.rotation, dx.segment<3>(15));
  x.extrinsics.translation += dx.segment<3>(18);
  int i = kHeadingOffset;
  for (auto& w : x.worlds) {
    if (w.in_state) w.phi += dx[i++];
  }
  for (auto& c : x.clones) {
    c.pose.rotation = so3_boxplus(c.pose.rotation, dx.segment<3>(i));
    c.pose.translation += dx.segment<3>(i + 3);
    i += 6;
  }
}

double symmetrize(MatX& P) {
  const double asym = (P - P.transpose()).cwiseAbs().maxCoeff();
  P = 0.5 * (P + P.transpose()).eval();
  return asym;
}

std::vector<ImuSample> imu_between(std::span<const ImuSample> stream, double t0, double t1) {
  std::vector<ImuSample> out;
  if (stream.empty() || t1 <= t0) return out;
  auto interp = [&](double t) {
    auto it = std::lower_bound(stream.begin(), stream.end(), t, [](const ImuSample& s, double v) { return s.t < v; });
    if (it == stream.begin()) {
      ImuSample s = *it;
      s.t = t;
      return s;
    }
    if (it == stream.end()) {
      ImuSample s = stream.back();
      s.t = t;
      return s;
    }
    const ImuSample& b = *it;
    const ImuSample& a = *(it - 1);
    const double w = (t - a.t) / (b.t - a.t);
    return ImuSample{t, (1 - w) * a.gyro + w * b.gyro, (1 - w) * a.accel + w * b.accel};
  };
  out.push_back(interp(t0));
  for (const auto& s : stream) {
    if (s.t > t0 + 1e-12 && s.t < t1 - 1e-12) out.push_back(s);
  }
  out.push_back(interp(t1));
  return out;
}

namespace {

struct Derivative {
  Vec4 dq;  // (w, x, y, z)
  Vec3 dp;
  Vec3 dv;
};

Vec4 qvec(const Quat& q) { return {q.w(), q.x(), q.y(), q.z()}; }
Quat vquat(const Vec4& v) { return Quat(v[0], v[1], v[2], v[3]); }

Derivative imu_derivative(const Vec4& q, const Vec3& v, const Vec3& omega, const Vec3& acc, const Vec3& g) {
  const Quat qq = vquat(q);
  const Quat w(0.0, omega.x(), omega.y(), omega.z());
  const Quat dq = qq * w;
  return {0.5 * qvec(dq), v, qq.normalized() * acc + g};
}

}  // namespace

PropagationReport propagate(FilterState& s, std::span<const ImuSample> samples, const ImuNoiseParams& noise) {
  PropagationReport rep;
  if (samples.size() < 2) return rep;
  for (size_t k = 1; k < samples.size(); ++k) {
    if (!(samples[k].t > samples[k - 1].t)) throw std::invalid_argument("imu timestamps are not strictly increasing");
  }

  const Vec3 g(0.0, 0.0, -noise.gravity);
  Eigen::Matrix<double, kImuDim, kImuDim> Phi = Eigen::Matrix<double, kImuDim, kImuDim>::Identity();
  Eigen::Matrix<double, kImuDim, kImuDim> Qd = Eigen::Matrix<double, kImuDim, kImuDim>::Zero();
  ImuState& imu = s.x.imu;

  for (size_t k = 0; k + 1 < samples.size(); ++k) {
    const double dt = samples[k + 1].t - samples[k].t;
    if (dt > 0.5) rep.gap_warning = true;
    const Vec3 w0 = samples[k].gyro - imu.gyro_bias;
    const Vec3 w1 = samples[k + 1].gyro - imu.gyro_bias;
    const Vec3 a0 = samples[k].accel - imu.accel_bias;
    const Vec3 a1 = samples[k + 1].accel - imu.accel_bias;
    const Vec3 wm = 0.5 * (w0 + w1);
    const Vec3 am = 0.5 * (a0 + a1);

    // Error-state transition at the start of the interval.
    const Mat3 R = imu.orientation.matrix();
    Eigen::Matrix<double, kImuDim, kImuDim> A = Eigen::Matrix<double, kImuDim, kImuDim>::Zero();
    A.block<3, 3>(0, 9) = -R;
    A.block<3, 3>(3, 6) = Mat3::Identity();
    A.block<3, 3>(6, 0) = -skew(R * a0);
    A.block<3, 3>(6, 12) = -R;
    const Eigen::Matrix<double, kImuDim, kImuDim> Adt = A * dt;
    const Eigen::Matrix<double, kImuDim, kImuDim> F =
        Eigen::Matrix<double, kImuDim, kImuDim>::Identity() + Adt + 0.5 * Adt * Adt;
    Eigen::Matrix<double, kImuDim, kImuDim> Qc = Eigen::Matrix<double, kImuDim, kImuDim>::Zero();
    Qc.block<3, 3>(0, 0) = Mat3::Identity() * noise.gyro_noise * noise.gyro_noise;
    Qc.block<3, 3>(6, 6) = Mat3::Identity() * noise.accel_noise * noise.accel_noise;
    Qc.block<3, 3>(9, 9) = Mat3::Identity() * noise.gyro_walk * noise.gyro_walk;
    Qc.block<3, 3>(12, 12) = Mat3::Identity() * noise.accel_walk * noise.accel_walk;
    Phi = F * Phi;
    Qd = F * Qd * F.transpose() + Qc * dt;

    // RK4 on (q, p, v).
    const Vec4 q = qvec(imu.orientation.quat());
    const Vec3 p = imu.position;
    const Vec3 v = imu.velocity;
    const Derivative k1 = imu_derivative(q, v, w0, a0, g);
    const Derivative k2 = imu_derivative(q + 0.5 * dt * k1.dq, v + 0.5 * dt * k1.dv, wm, am, g);
    const Derivative k3 = imu_derivative(q + 0.5 * dt * k2.dq, v + 0.5 * dt * k2.dv, wm, am, g);
    const Derivative k4 = imu_derivative(q + dt * k3.dq, v + dt * k3.dv, w1, a1, g);
    imu.orientation = Rotation(vquat(q + dt / 6.0 * (k1.dq + 2 * k2.dq + 2 * k3.dq + k4.dq)));
    imu.position = p + dt / 6.0 * (k1.dp + 2 * k2.dp + 2 * k3.dp + k4.dp);
    imu.velocity = v + dt / 6.0 * (k1.dv + 2 * k2.dv + 2 * k3.dv + k4.dv);
    ++rep.steps;
  }
  s.x.t = samples.back().t;

  const int n = s.dim();
  MatX& P = s.P;
  P.topLeftCorner<kImuDim, kImuDim>() = Phi * P.topLeftCorner<kImuDim, kImuDim>() * Phi.transpose() + Qd;
  if (n > kImuDim) {
    const MatX cross = Phi * P.topRightCorner(kImuDim, n - kImuDim);
    P.topRightCorner(kImuDim, n - kImuDim) = cross;
    P.bottomLeftCorner(n - kImuDim, kImuDim) = cross.transpose();
  }
  symmetrize(P);
  return rep;
}

int augment_pose(FilterState& s, double timestamp) {
  const int n = s.dim();
  MatX P(n + 6, n + 6);
  P.topLeftCorner(n, n) = s.P;
  P.block(n, 0, 6, n) = s.P.topRows(6);
  P.block(0, n, n, 6) = s.P.leftCols(6);
  P.block<6, 6>(n, n) = s.P.topLeftCorner<6, 6>();
  s.P = std::move(P);
  const int id = s.next_clone_id++;
  s.x.clones.push_back({id, s.x.imu.pose(), timestamp});
  return id;
}

namespace {

MatX remove_indices(const MatX& P, const std::vector<int>& drop) {
  std::vector<int> keep;
  keep.reserve(P.rows());
  for (int i = 0; i < P.rows(); ++i) {
    if (std::find(drop.begin(), drop.end(), i) == drop.end()) keep.push_back(i);
  }
  MatX out(keep.size(), keep.size());
  for (size_t r = 0; r < keep.size(); ++r) {
    for (size_t c = 0; c < keep.size(); ++c) out(r, c) = P(keep[r], keep[c]);
  }
  return out;
}

}  // namespace

double heading_distance(double a, double b) {
  const double q = 0.5 * M_PI;
  double d = std::fmod(std::abs(a - b), q);
  return std::min(d, q - d);
}

std::optional<int> add_manhattan_world(FilterState& s, double phi, double sigma_phi, double min_separation,
                                       bool in_state) {
  for (const auto& w : s.x.worlds) {
    if (heading_distance(w.phi, phi) <= min_separation) return std::nullopt;
  }
  const int id = s.next_world_id++;
  if (in_state) {
    const int n = s.dim();
    const int at = kHeadingOffset + s.heading_count();
    MatX P = MatX::Zero(n + 1, n + 1);
    P.topLeftCorner(at, at) = s.P.topLeftCorner(at, at);
    P.bottomRightCorner(n - at, n - at) = s.P.bottomRightCorner(n - at, n - at);
    P.block(0, at + 1, at, n - at) = s.P.block(0, at, at, n - at);
    P.block(at + 1, 0, n - at, at) = s.P.block(at, 0, n - at, at);
    P(at, at) = sigma_phi * sigma_phi;
    s.P = std::move(P);
  }
  s.x.worlds.push_back({id, phi, in_state});
  return id;
}

std::optional<LineFrame> line_frame(const NominalState& x, const StructuralLine& line) {
  const Clone* anchor = x.clone(line.anchor_id);
  if (!anchor) return std::nullopt;
  const Pose cam = x.camera_pose(anchor->pose);
  LineFrame f;
  f.anchor = cam.translation;
  if (line.anchor_frame) {
    f.world_from_start = cam.rotation.matrix() * *line.anchor_frame;
  } else {
    if (line.world_id != kDummyWorldId && !x.world(line.world_id)) return std::nullopt;
    f.world_from_start = heading_rotation(x.phi(line.world_id));
  }
  return f;
}

void attach_to_anchor_camera(const NominalState& x, StructuralLine& line, const Mat3& world_from_start) {
  const Clone* anchor = x.clone(line.anchor_id);
  if (!anchor) throw std::invalid_argument("line anchor is not a clone in the state");
  const Mat3 R_wc = x.camera_pose(anchor->pose).rotation.matrix();
  line.anchor_frame = R_wc.transpose() * world_from_start;
}

void merge_manhattan_worlds(FilterState& s, int keep, int drop, const std::vector<StructuralLine*>& lines,
                            double max_separation) {
  if (drop == kDummyWorldId) throw std::logic_error("the dummy world cannot be merged away");
  const auto* wk = s.x.world(keep);
  const auto* wd = s.x.world(drop);
  if (!wd || (keep != kDummyWorldId && !wk)) throw std::invalid_argument("unknown world id in merge");
  const double phi_keep = s.x.phi(keep);
  const double phi_drop = wd->phi;
  if (heading_distance(phi_keep, phi_drop) > max_separation) {
    throw std::logic_error("worlds are too far apart to merge");
  }
  for (StructuralLine* line : lines) {
    if (line->world_id != drop || line->anchor_frame) continue;
    const auto frame = line_frame(s.x, *line);
    if (!frame) continue;
    if (auto moved = retag_line_world(*line, heading_rotation(phi_drop), heading_rotation(phi_keep), frame->anchor,
                                      keep)) {
      *line = *moved;
    } else {
      line->world_id = keep;
    }
  }
  if (const auto idx = s.heading_index(drop)) s.P = remove_indices(s.P, {*idx});
  s.x.worlds.erase(std::remove_if(s.x.worlds.begin(), s.x.worlds.end(), [&](const auto& w) { return w.id == drop; }),
                   s.x.worlds.end());
}

std::optional<Vec2> line_residual(const NominalState& x, const StructuralLine& line, const LineSegment2D& obs,
                                  int clone_id, const CameraModel& cam) {
  const auto frame = line_frame(x, line);
  const Clone* c = x.clone(clone_id);
  if (!frame || !c) return std::nullopt;
  const auto proj = project_line(line.theta, line.rho, line.axis, frame->world_from_start, frame->anchor,
                                 x.camera_pose(c->pose), cam);
  if (!proj) return std::nullopt;
  const Vec3 n = normalize_image_line(proj->line);
  return Vec2(obs.a.dot(n), obs.b.dot(n));
}

namespace {

// Shared finite-difference/null-space machinery for lines and points.
template <typename ResidualFn, typename FeatureFn>
MeasurementResult build_measurement(const FilterState& s, const std::vector<int>& state_indices, int feature_dim,
                                    const ResidualFn& residual, const FeatureFn& feature_residual, double sigma_px,
                                    double step) {
  MeasurementResult out;
  NominalState x = s.x;
  const std::optional<VecX> r0 = residual(x);
  if (!r0) {
    out.status = MeasurementStatus::kDegenerate;
    return out;
  }
  const int m = static_cast<int>(r0->size());

  MatX Hx(m, state_indices.size());
  for (size_t j = 0; j < state_indices.size(); ++j) {
    auto undo = perturb_component(x, state_indices[j], step);
    const auto rp = residual(x);
    undo();
    undo = perturb_component(x, state_indices[j], -step);
    const auto rm = residual(x);
    undo();
    if (!rp || !rm) {
      out.status = MeasurementStatus::kDegenerate;
      return out;
    }
    Hx.col(j) = (*rp - *rm) / (2.0 * step);
  }
  MatX Hf(m, feature_dim);
  for (int j = 0; j < feature_dim; ++j) {
    const auto rp = feature_residual(j, step);
    const auto rm = feature_residual(j, -step);
    if (!rp || !rm) {
      out.status = MeasurementStatus::kDegenerate;
      return out;
    }
    Hf.col(j) = (*rp - *rm) / (2.0 * step);
  }
  out.H_feature = Hf;
  out.residual = -*r0;
  out.H_state = MatX::Zero(m, s.dim());
  for (size_t j = 0; j < state_indices.size(); ++j) out.H_state.col(state_indices[j]) += Hx.col(j);

  Eigen::JacobiSVD<MatX> svd(Hf);
  const VecX sv = svd.singularValues();
  if (sv.size() < feature_dim || sv[feature_dim - 1] <= 1e-10 * std::max(1.0, sv[0])) {
    out.status = MeasurementStatus::kRankDeficient;
    return out;
  }
  Eigen::HouseholderQR<MatX> qr(Hf);
  const MatX Q = qr.householderQ();
  const MatX N = Q.rightCols(m - feature_dim);

  MeasurementBlock block;
  block.sigma = sigma_px;
  block.z = N.transpose() * out.residual;
  const MatX H0 = N.transpose() * Hx;
  block.H = MatX::Zero(block.z.size(), s.dim());
  for (size_t j = 0; j < state_indices.size(); ++j) block.H.col(state_indices[j]) += H0.col(j);
  out.block = std::move(block);
  return out;
}

void push_pose_indices(std::vector<int>& idx, int base) {
  for (int k = 0; k < 6; ++k) {
    if (std::find(idx.begin(), idx.end(), base + k) == idx.end()) idx.push_back(base + k);
  }
}

}  // namespace

MeasurementResult build_line_measurement(const FilterState& s, const StructuralLine& line,
                                         const std::vector<LineObservation>& obs, const CameraModel& cam,
                                         double sigma_px, const JacobianOptions& opt) {
  MeasurementResult out;
  std::vector<LineObservation> views;
  for (const auto& o : obs) {
    if (s.clone_index(o.clone_id)) views.push_back(o);
  }
  if (views.size() < 2) {
    out.status = MeasurementStatus::kTooFewViews;
    return out;
  }
  const auto anchor_idx = s.clone_index(line.anchor_id);
  if (!anchor_idx) {
    out.status = MeasurementStatus::kUnknownClone;
    return out;
  }

  std::vector<int> idx;
  push_pose_indices(idx, kExtOffset);
  if (!line.anchor_frame) {
    if (const auto h = s.heading_index(line.world_id)) idx.push_back(*h);
  }
  push_pose_indices(idx, *anchor_idx);
  for (const auto& v : views) push_pose_indices(idx, *s.clone_index(v.clone_id));

  auto residual_at = [&](const NominalState& x, const StructuralLine& l) -> std::optional<VecX> {
    VecX r(2 * views.size());
    for (size_t k = 0; k < views.size(); ++k) {
      const auto rk = line_residual(x, l, views[k].seg, views[k].clone_id, cam);
      if (!rk) return std::nullopt;
      r.segment<2>(2 * k) = *rk;
    }
    return r;
  };
  auto residual = [&](const NominalState& x) { return residual_at(x, line); };
  auto feature_residual = [&](int j, double h) {
    StructuralLine l = line;
    if (j == 0) l.theta += h;
    else l.rho += h;
    return residual_at(s.x, l);
  };
  return build_measurement(s, idx, 2, residual, feature_residual, sigma_px, opt.step);
}

MeasurementResult build_point_measurement(const FilterState& s, const Vec3& point,
                                          const std::vector<PointObservation>& obs, const CameraModel& cam,
                                          double sigma_px, const JacobianOptions& opt) {
  MeasurementResult out;
  std::vector<PointObservation> views;
  for (const auto& o : obs) {
    if (s.clone_index(o.clone_id)) views.push_back(o);
  }
  if (views.size() < 2) {
    out.status = MeasurementStatus::kTooFewViews;
    return out;
  }
  std::vector<int> idx;
  push_pose_indices(idx, kExtOffset);
  for (const auto& v : views) push_pose_indices(idx, *s.clone_index(v.clone_id));

  auto residual_at = [&](const NominalState& x, const Vec3& p) -> std::optional<VecX> {
    VecX r(2 * views.size());
    for (size_t k = 0; k < views.size(); ++k) {
      const Pose cam_pose = x.camera_pose(x.clone(views[k].clone_id)->pose);
      const auto px = project_point(cam_pose.inverse() * p, cam, false);
      if (!px) return std::nullopt;
      r.segment<2>(2 * k) = *px - views[k].px;
    }
    return r;
  };
  auto residual = [&](const NominalState& x) { return residual_at(x, point); };
  auto feature_residual = [&](int j, double h) {
    Vec3 p = point;
    p[j] += h;
    return residual_at(s.x, p);
  };
  return build_measurement(s, idx, 3, residual, feature_residual, sigma_px, opt.step);
}

double chi2_95(int dof) {
  if (dof <= 0) return 0.0;
  boost::math::chi_squared_distribution<double> dist(dof);
  return boost::math::quantile(dist, 0.95);
}

UpdateReport gated_update(FilterState& s, const std::vector<MeasurementBlock>& blocks, double confidence) {
  UpdateReport rep;
  const int n = s.dim();
  std::vector<const MeasurementBlock*> accepted;
  for (const auto& b : blocks) {
    const MatX PHt = s.P * b.H.transpose();
    MatX S = b.H * PHt;
    S.diagonal().array() += b.sigma * b.sigma;
    Eigen::SelfAdjointEigenSolver<MatX> es(S);
    const double lo = es.eigenvalues().minCoeff();
    const double hi = es.eigenvalues().maxCoeff();
    if (!(lo > 0.0) || hi / lo > 1e12 || b.z.size() == 0) {
      rep.outcomes.push_back(GateOutcome::kRejectedNumeric);
      rep.mahalanobis.push_back(std::numeric_limits<double>::infinity());
      continue;
    }
    const VecX y = es.eigenvectors().transpose() * b.z;
    const double d2 = (y.array().square() / es.eigenvalues().array()).sum();
    rep.mahalanobis.push_back(d2);
    boost::math::chi_squared_distribution<double> dist(static_cast<double>(b.z.size()));
    if (d2 < boost::math::quantile(dist, confidence)) {
      rep.outcomes.push_back(GateOutcome::kAccepted);
      accepted.push_back(&b);
    } else {
      rep.outcomes.push_back(GateOutcome::kRejectedGate);
    }
  }
  if (accepted.empty()) return rep;

  int m = 0;
  for (const auto* b : accepted) m += static_cast<int>(b->z.size());
  MatX H(m, n);
  VecX z(m);
  int row = 0;
  for (const auto* b : accepted) {
    const int r = static_cast<int>(b->z.size());
    H.middleRows(row, r) = b->H / b->sigma;
    z.segment(row, r) = b->z / b->sigma;
    row += r;
  }
  rep.accepted_rows = m;

  // Whitened rows: compress tall systems with a thin QR first.
  if (m > n) {
    Eigen::HouseholderQR<MatX> qr(H);
    const VecX qtz = qr.householderQ().transpose() * z;
    MatX R = qr.matrixQR().topRows(n).triangularView<Eigen::Upper>();
    H = std::move(R);
    z = qtz.head(n);
  }

  const MatX PHt = s.P * H.transpose();
  MatX S = H * PHt;
  S.diagonal().array() += 1.0;
  const Eigen::LLT<MatX> llt(S);
  const MatX K = llt.solve(PHt.transpose()).transpose();
  const VecX dx = K * z;
  const MatX KS = K * S;
  s.P = s.P - K * PHt.transpose() - PHt * K.transpose() + KS * K.transpose();
  symmetrize(s.P);
  apply_correction(s.x, dx);
  return rep;
}

std::vector<int> select_poses_for_removal(const FilterState& s, int max_clones) {
  std::vector<int> ids;
  const int m = static_cast<int>(s.x.clones.size());
  if (m < max_clones || m < 2) return ids;
  const int count = (m + 2) / 3;
  for (int j = 0; j < count; ++j) {
    const int k = 1 + 3 * j;
    if (k >= m) break;
    ids.push_back(s.x.clones[k].id);
  }
  return ids;
}

void remove_clones(FilterState& s, const std::vector<int>& ids) {
  std::vector<int> drop;
  for (int id : ids) {
    if (const auto i = s.clone_index(id)) {
      for (int k = 0; k < 6; ++k) drop.push_back(*i + k);
    }
  }
  s.P = remove_indices(s.P, drop);
  s.x.clones.erase(std::remove_if(s.x.clones.begin(), s.x.clones.end(),
                                  [&](const Clone& c) { return std::find(ids.begin(), ids.end(), c.id) != ids.end(); }),
                   s.x.clones.end());
}

}  // namespace avio
