#include "avio/tracker.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include <boost/math/tools/minima.hpp>

namespace avio {

std::optional<double> zncc(const Patch& a, const Patch& b) {
  if (a.values.size() != b.values.size() || a.side != b.side) {
    throw std::invalid_argument("zncc: patch sizes differ");
  }
  const size_t n = a.values.size();
  if (n == 0) return std::nullopt;
  const double ma = std::accumulate(a.values.begin(), a.values.end(), 0.0) / n;
  const double mb = std::accumulate(b.values.begin(), b.values.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double da = a.values[i] - ma;
    const double db = b.values[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa <= 1e-12 * n || sbb <= 1e-12 * n) return std::nullopt;
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

std::optional<double> vanishing_consistency(const LineSegment2D& seg, const Vec3& vp, const TrackerParams& params) {
  const Vec3 m(seg.midpoint().x(), seg.midpoint().y(), 1.0);
  const Vec3 ray = vp.cross(m);
  if (std::hypot(ray.x(), ray.y()) < 1e-12 * ray.norm() || ray.norm() == 0.0) return std::nullopt;
  const Vec3 l = normalize_image_line(ray);
  const double d = std::max(std::abs(seg.a.dot(l)), std::abs(seg.b.dot(l)));
  const Vec2 ray_dir(-l.y(), l.x());
  const double c = std::min(1.0, std::abs(ray_dir.dot(seg.direction())));
  const double angle = std::acos(c);
  if (d >= params.classify_distance_px || angle >= params.classify_angle_rad) return std::nullopt;
  return d / params.classify_distance_px + angle / params.classify_angle_rad;
}

bool heading_ambiguous(const LineSegment2D& seg, double phi, LineAxis axis, const Rotation& cam_orientation,
                       const CameraModel& cam, const TrackerParams& params) {
  for (double d : {-params.heading_margin_rad, params.heading_margin_rad}) {
    const Vec3 vp = vanishing_point(axis, heading_rotation(phi + d), cam_orientation, cam);
    if (vanishing_consistency(seg, vp, params)) return true;
  }
  return false;
}

std::vector<ClassifiedSegment> classify_segments(const std::vector<LineSegment2D>& segments,
                                                 const std::vector<ManhattanWorld>& worlds,
                                                 const Rotation& cam_orientation, const CameraModel& cam,
                                                 const TrackerParams& params) {
  struct Candidate {
    SegmentLabel label;
    Vec3 vp;
    double phi;
  };
  std::vector<Candidate> vps;
  vps.push_back({{kDummyWorldId, LineAxis::Z}, vanishing_point(LineAxis::Z, Mat3::Identity(), cam_orientation, cam), 0.0});
  for (const auto& w : worlds) {
    if (w.id == kDummyWorldId) continue;
    const VanishingPoints v = vanishing_points(w.phi, cam_orientation, cam);
    vps.push_back({{w.id, LineAxis::X}, v.x, w.phi});
    vps.push_back({{w.id, LineAxis::Y}, v.y, w.phi});
  }

  std::vector<ClassifiedSegment> out;
  out.reserve(segments.size());
  for (const auto& seg : segments) {
    ClassifiedSegment cs;
    cs.seg = seg;
    double best = std::numeric_limits<double>::infinity();
    const Candidate* pick = nullptr;
    for (const auto& c : vps) {
      const auto score = vanishing_consistency(seg, c.vp, params);
      if (score && *score < best) {
        best = *score;
        pick = &c;
      }
    }
    if (pick && (pick->label.axis == LineAxis::Z ||
                 !heading_ambiguous(seg, pick->phi, pick->label.axis, cam_orientation, cam, params))) {
      cs.label = pick->label;
      cs.inconsistency = best;
    }
    out.push_back(cs);
  }
  return out;
}

// Liang-Barsky.
std::optional<std::pair<Vec2, Vec2>> clip_to_image(const Vec2& p, const Vec2& q, const CameraModel& cam) {
  double t0 = 0.0, t1 = 1.0;
  const Vec2 d = q - p;
  const double lo[2] = {0.0, 0.0};
  const double hi[2] = {cam.width - 1.0, cam.height - 1.0};
  for (int k = 0; k < 2; ++k) {
    for (int side = 0; side < 2; ++side) {
      const double num = side == 0 ? p[k] - lo[k] : hi[k] - p[k];
      const double den = side == 0 ? -d[k] : d[k];
      if (std::abs(den) < 1e-15) {
        if (num < 0.0) return std::nullopt;
        continue;
      }
      const double t = num / den;
      if (den < 0.0) t0 = std::max(t0, t);
      else t1 = std::min(t1, t);
    }
  }
  if (t0 > t1) return std::nullopt;
  return std::make_pair(Vec2(p + t0 * d), Vec2(p + t1 * d));
}

std::optional<LineSegment2D> predict_segment(const std::pair<Vec3, Vec3>& extent, const Pose& cam_pose,
                                             const CameraModel& cam) {
  const Pose cw = cam_pose.inverse();
  Vec3 a = cw * extent.first;
  Vec3 b = cw * extent.second;
  constexpr double kNear = 0.05;
  if (a.z() < kNear && b.z() < kNear) return std::nullopt;
  if (a.z() < kNear) a = b + (a - b) * ((b.z() - kNear) / (b.z() - a.z()));
  if (b.z() < kNear) b = a + (b - a) * ((a.z() - kNear) / (a.z() - b.z()));
  const auto pa = project_point(a, cam, false);
  const auto pb = project_point(b, cam, false);
  if (!pa || !pb) return std::nullopt;
  const auto clipped = clip_to_image(*pa, *pb, cam);
  if (!clipped || (clipped->second - clipped->first).norm() < 1.0) return std::nullopt;
  return LineSegment2D(clipped->first, clipped->second);
}

std::vector<CandidateScore> score_candidates(const LineTrack& track, const std::pair<Vec3, Vec3>& extent,
                                             const Pose& cam_pose, const CameraModel& cam,
                                             const std::vector<LineSegment2D>& candidates, const PatchSource* source,
                                             const TrackerParams& params) {
  std::vector<CandidateScore> out;
  const auto pred = predict_segment(extent, cam_pose, cam);
  if (!pred) return out;
  const Vec2 pdir = pred->direction();
  const double plen = pred->length();
  const bool use_patches = source && !track.patches.empty();
  const Pose cw = cam_pose.inverse();

  // Sample projections are shared by all candidates.
  std::vector<std::pair<const SamplePatch*, Vec2>> samples;
  if (use_patches) {
    for (const auto& sp : track.patches) {
      if (const auto q = project_point(cw * sp.point_world, cam, false); q && cam.in_image(*q)) {
        samples.emplace_back(&sp, *q);
      }
    }
  }

  for (size_t i = 0; i < candidates.size(); ++i) {
    const LineSegment2D& c = candidates[i];
    if (c.length() < 1e-9) continue;
    const Vec3 lc = c.line();
    const double d1 = std::abs(pred->a.dot(lc));
    const double d2 = std::abs(pred->b.dot(lc));
    if (std::max(d1, d2) >= params.gate_distance_px) continue;
    const double angle = std::acos(std::min(1.0, std::abs(c.direction().dot(pdir))));
    if (angle >= params.gate_angle_rad) continue;
    const double ta = (c.pa() - pred->pa()).dot(pdir);
    const double tb = (c.pb() - pred->pa()).dot(pdir);
    if (std::max(ta, tb) < -params.gate_distance_px || std::min(ta, tb) > plen + params.gate_distance_px) continue;

    CandidateScore s;
    s.index = static_cast<int>(i);
    s.mean_distance = 0.5 * (d1 + d2);
    const Vec2 n = lc.head<2>();
    const Vec2 dir = c.direction();
    const int steps = static_cast<int>(std::floor(params.search_px / params.search_step_px + 1e-9));
    for (const auto& [sp, q] : samples) {
      const Vec2 foot = q - (lc.x() * q.x() + lc.y() * q.y() + lc.z()) * n;
      double best = -2.0;
      for (int k = -steps; k <= steps; ++k) {
        const auto p = source->patch(foot + k * params.search_step_px * dir, sp->patch.side);
        if (!p) continue;
        if (const auto z = zncc(sp->patch, *p)) best = std::max(best, *z);
      }
      if (best > params.zncc_threshold) ++s.votes;
    }
    if (use_patches && s.votes == 0) continue;
    out.push_back(s);
  }
  std::sort(out.begin(), out.end(), [](const CandidateScore& a, const CandidateScore& b) {
    if (a.votes != b.votes) return a.votes > b.votes;
    return a.mean_distance < b.mean_distance;
  });
  return out;
}

std::vector<SamplePatch> sample_patches(const std::pair<Vec3, Vec3>& extent, const LineSegment2D& seg,
                                        const Pose& cam_pose, const CameraModel& cam, const PatchSource& source,
                                        const TrackerParams& params) {
  std::vector<SamplePatch> out;
  const Pose cw = cam_pose.inverse();
  const Vec3 l = seg.line();
  const Vec2 n = l.head<2>();
  const Vec2 dir = seg.direction();
  const double len = seg.length();
  for (int k = 0; k < params.samples; ++k) {
    const double s = (k + 0.5) / params.samples;
    const Vec3 P = (1.0 - s) * extent.first + s * extent.second;
    const auto q = project_point(cw * P, cam, false);
    if (!q) continue;
    const Vec2 foot = *q - (l.x() * q->x() + l.y() * q->y() + l.z()) * n;
    const double t = (foot - seg.pa()).dot(dir);
    if (t < -2.0 || t > len + 2.0) continue;
    if (auto p = source.patch(foot, params.patch_side)) out.push_back({P, std::move(*p)});
  }
  return out;
}

void record_match(LineTrack& track, int clone_id, const LineSegment2D& seg, const std::pair<Vec3, Vec3>& extent,
                  const Pose& cam_pose, const CameraModel& cam, const PatchSource* source,
                  const TrackerParams& params) {
  track.observations.push_back({clone_id, seg});
  if (source) track.patches = sample_patches(extent, seg, cam_pose, cam, *source, params);
  track.missed = 0;
  track.status = TrackStatus::kActive;
}

void record_miss(LineTrack& track, const TrackerParams& params) {
  ++track.missed;
  track.status = track.missed > params.delayed_drop ? TrackStatus::kDropped : TrackStatus::kPendingDrop;
}

TrackResult track_line(LineTrack& track, const std::pair<Vec3, Vec3>& extent, const Pose& cam_pose,
                       const CameraModel& cam, const std::vector<LineSegment2D>& candidates,
                       const PatchSource* source, int clone_id, const TrackerParams& params) {
  TrackResult res;
  const auto scores = score_candidates(track, extent, cam_pose, cam, candidates, source, params);
  if (scores.empty()) {
    record_miss(track, params);
    return res;
  }
  res.matched = scores.front().index;
  res.votes = scores.front().votes;
  record_match(track, clone_id, candidates[*res.matched], extent, cam_pose, cam, source, params);
  return res;
}

std::vector<std::optional<int>> assign_candidates(const std::vector<std::vector<CandidateScore>>& scores,
                                                  bool require_votes) {
  struct Pair {
    size_t track;
    CandidateScore score;
  };
  std::vector<Pair> pairs;
  for (size_t t = 0; t < scores.size(); ++t) {
    for (const auto& s : scores[t]) {
      if (!require_votes || s.votes > 0) pairs.push_back({t, s});
    }
  }
  std::stable_sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
    if (a.score.votes != b.score.votes) return a.score.votes > b.score.votes;
    return a.score.mean_distance < b.score.mean_distance;
  });
  std::vector<std::optional<int>> out(scores.size());
  std::vector<int> taken;
  for (const auto& p : pairs) {
    if (out[p.track]) continue;
    if (std::find(taken.begin(), taken.end(), p.score.index) != taken.end()) continue;
    out[p.track] = p.score.index;
    taken.push_back(p.score.index);
  }
  return out;
}

bool segments_close(const LineSegment2D& a, const LineSegment2D& b, double distance_px, double angle_rad) {
  const double angle = std::acos(std::min(1.0, std::abs(a.direction().dot(b.direction()))));
  if (angle >= angle_rad) return false;
  const Vec3 lb = b.line();
  const Vec3 la = a.line();
  const double d = std::min(std::max(std::abs(a.a.dot(lb)), std::abs(a.b.dot(lb))),
                            std::max(std::abs(b.a.dot(la)), std::abs(b.b.dot(la))));
  return d < distance_px;
}

std::vector<int> select_segments_for_init(const std::vector<ClassifiedSegment>& segments,
                                          const std::vector<LineSegment2D>& existing, int max_lines, int active_count,
                                          const TrackerParams& params) {
  std::vector<int> out;
  const int budget = max_lines - active_count;
  if (budget <= 0) return out;
  std::vector<int> queue;
  for (size_t i = 0; i < segments.size(); ++i) {
    const auto& s = segments[i];
    if (!s.label || s.seg.length() < params.init_min_length_px) continue;
    const bool near_existing = std::any_of(existing.begin(), existing.end(), [&](const LineSegment2D& e) {
      return segments_close(s.seg, e, params.init_close_distance_px, params.init_close_angle_rad);
    });
    if (!near_existing) queue.push_back(static_cast<int>(i));
  }
  std::stable_sort(queue.begin(), queue.end(),
                   [&](int a, int b) { return segments[a].seg.length() > segments[b].seg.length(); });
  while (!queue.empty() && static_cast<int>(out.size()) < budget) {
    const int pick = queue.front();
    out.push_back(pick);
    std::vector<int> rest;
    for (size_t k = 1; k < queue.size(); ++k) {
      if (!segments_close(segments[queue[k]].seg, segments[pick].seg, params.init_close_distance_px,
                          params.init_close_angle_rad)) {
        rest.push_back(queue[k]);
      }
    }
    queue = std::move(rest);
  }
  return out;
}

std::optional<double> heading_from_segment(const LineSegment2D& seg, const Rotation& cam_orientation,
                                           const CameraModel& cam) {
  const Vec3 v = seg.line().cross(horizon_line(cam_orientation, cam));
  const Vec3 d = cam_orientation.matrix() * (cam.K_inv() * v);
  if (std::hypot(d.x(), d.y()) < 1e-12 * d.norm() || d.norm() == 0.0) return std::nullopt;
  double phi = std::fmod(std::atan2(-d.y(), d.x()), 0.5 * M_PI);
  if (phi < 0.0) phi += 0.5 * M_PI;
  if (phi >= 0.5 * M_PI) phi -= 0.5 * M_PI;
  return phi;
}

namespace {

// Squared endpoint distances of the segments to the closer horizontal
// vanishing ray of heading phi.
double heading_fit_cost(const std::vector<LineSegment2D>& segments, const std::vector<int>& subset, double phi,
                        const Rotation& cam_orientation, const CameraModel& cam) {
  const VanishingPoints v = vanishing_points(phi, cam_orientation, cam);
  double cost = 0.0;
  for (int i : subset) {
    const auto& seg = segments[i];
    const Vec3 m(seg.midpoint().x(), seg.midpoint().y(), 1.0);
    double best = std::numeric_limits<double>::infinity();
    for (const Vec3& vp : {v.x, v.y}) {
      const Vec3 ray = vp.cross(m);
      if (ray.head<2>().norm() == 0.0) continue;
      const Vec3 l = normalize_image_line(ray);
      best = std::min(best, std::pow(seg.a.dot(l), 2) + std::pow(seg.b.dot(l), 2));
    }
    if (std::isfinite(best)) cost += best;
  }
  return cost;
}

std::vector<int> heading_support(const std::vector<LineSegment2D>& segments, double phi,
                                 const Rotation& cam_orientation, const CameraModel& cam,
                                 const TrackerParams& params) {
  const VanishingPoints v = vanishing_points(phi, cam_orientation, cam);
  std::vector<int> inliers;
  for (size_t i = 0; i < segments.size(); ++i) {
    const auto& seg = segments[i];
    if (vanishing_consistency(seg, v.x, params) || vanishing_consistency(seg, v.y, params)) {
      inliers.push_back(static_cast<int>(i));
    }
  }
  return inliers;
}

}  // namespace

std::optional<RansacResult> detect_manhattan_ransac(const std::vector<LineSegment2D>& segments,
                                                    const Rotation& cam_orientation, const CameraModel& cam,
                                                    const std::vector<ManhattanWorld>& worlds,
                                                    int horizontal_structural_count, std::mt19937_64& rng,
                                                    const TrackerParams& params) {
  if (static_cast<int>(segments.size()) <= params.ransac_min_support) return std::nullopt;
  std::vector<int> order(segments.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const int iterations = std::min<int>(params.ransac_max_iterations, static_cast<int>(segments.size()));

  std::vector<int> best_inliers;
  double best_phi = 0.0, best_cost = 0.0;
  for (int it = 0; it < iterations; ++it) {
    const auto phi = heading_from_segment(segments[order[it]], cam_orientation, cam);
    if (!phi) continue;
    auto inliers = heading_support(segments, *phi, cam_orientation, cam, params);
    const double cost = heading_fit_cost(segments, inliers, *phi, cam_orientation, cam);
    if (inliers.size() > best_inliers.size() || (inliers.size() == best_inliers.size() && cost < best_cost)) {
      best_inliers = std::move(inliers);
      best_phi = *phi;
      best_cost = cost;
    }
  }
  if (static_cast<int>(best_inliers.size()) <= params.ransac_min_support) return std::nullopt;

  // Refine over the inliers. Segments close to the horizon barely constrain
  // the heading, so this beats averaging per-segment hypotheses.
  const double window = params.classify_angle_rad;
  double phi = boost::math::tools::brent_find_minima(
                   [&](double p) { return heading_fit_cost(segments, best_inliers, p, cam_orientation, cam); },
                   best_phi - window, best_phi + window, 40)
                   .first;
  phi = std::fmod(phi, 0.5 * M_PI);
  if (phi < 0.0) phi += 0.5 * M_PI;
  if (phi >= 0.5 * M_PI) phi -= 0.5 * M_PI;
  const int support = static_cast<int>(heading_support(segments, phi, cam_orientation, cam, params).size());

  if (support <= params.ransac_min_support || support <= horizontal_structural_count) return std::nullopt;
  for (const auto& w : worlds) {
    if (w.id == kDummyWorldId) continue;
    const double q = 0.5 * M_PI;
    double d = std::fmod(std::abs(w.phi - phi), q);
    d = std::min(d, q - d);
    if (d <= params.world_separation_rad) return std::nullopt;
  }
  return RansacResult{phi, support};
}

}  // namespace avio
