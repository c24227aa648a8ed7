#include "avio/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "avio/dataset.hpp"

namespace avio {

VioPipeline::VioPipeline(const RunConfig& config, std::span<const ImuSample> imu)
    : config_(config), imu_(imu), rng_(config.seed) {}

void VioPipeline::initialize(double t, const ImuState& imu) {
  state_ = make_filter_state(imu, config_.extrinsics, t, config_.initial);
  lines_.clear();
  points_.clear();
  history_.clear();
  initialized_ = true;
}

void VioPipeline::initialize_static(double t) {
  auto mean_accel = [&](double t0, double t1, int& n) {
    Vec3 sum = Vec3::Zero();
    n = 0;
    for (const auto& s : imu_) {
      if (s.t >= t0 && s.t <= t1) {
        sum += s.accel;
        ++n;
      }
    }
    return n > 0 ? Vec3(sum / n) : Vec3(Vec3::Zero());
  };
  int n = 0;
  Vec3 a = mean_accel(t - config_.init_window_s, t, n);
  if (n < 10) a = mean_accel(t, t + config_.init_window_s, n);
  ImuState imu;
  if (n > 0 && a.norm() > 1e-6) {
    // The accelerometer measures the reaction to gravity: body up = a / |a|.
    const Mat3 R = Quat::FromTwoVectors(a.normalized(), Vec3::UnitZ()).toRotationMatrix();
    const double yaw = std::atan2(R(1, 0), R(0, 0));
    imu.orientation = Rotation::from_matrix(so3_exp(Vec3(0.0, 0.0, -yaw)) * R);
  } else {
    warnings_.push_back("no accelerometer data for initialization; starting level");
  }
  initialize(t, imu);
}

std::optional<std::pair<Vec3, Vec3>> VioPipeline::line_extent(const StructuralLine& line) const {
  const auto frame = line_frame(state_.x, line);
  if (!frame) return std::nullopt;
  return line_endpoints_3d(line, frame->world_from_start, frame->anchor);
}

std::vector<LineView> VioPipeline::line_views(const LineFeature& f) const {
  std::vector<LineView> views;
  for (const auto& o : f.track.observations) {
    if (const Clone* c = state_.x.clone(o.clone_id)) views.push_back({state_.x.camera_pose(c->pose), o.seg});
  }
  return views;
}

std::vector<LineObservation> VioPipeline::line_observations(const LineFeature& f) const {
  std::vector<LineObservation> obs;
  for (const auto& o : f.track.observations) {
    if (state_.x.clone(o.clone_id)) obs.push_back({o.clone_id, o.seg});
  }
  return obs;
}

std::vector<PointView> VioPipeline::point_views(const PointFeature& f) const {
  std::vector<PointView> views;
  for (const auto& o : f.obs) {
    if (const Clone* c = state_.x.clone(o.clone_id)) views.push_back({state_.x.camera_pose(c->pose), o.px});
  }
  return views;
}

bool VioPipeline::triangulate(LineFeature& f) const {
  const auto frame = line_frame(state_.x, f.line);
  if (!frame) return false;
  const auto views = line_views(f);
  if (views.size() < 2) return false;
  const auto rep = triangulate_line(f.line, f.line.prior, views, *frame, config_.camera, config_.sigma_line_px);
  if (!rep.converged) return false;
  f.line.set_params(normalize_line_params(rep.params));
  f.line.range = update_range(f.line, views.back(), *frame, config_.camera);
  return true;
}

bool VioPipeline::triangulate(PointFeature& f) const {
  const auto views = point_views(f);
  if (views.size() < 2) return false;
  const auto rep =
      triangulate_point(views, config_.camera, config_.sigma_point_px, f.prior, config_.min_point_parallax);
  if (!rep.point) return false;
  f.estimate = rep.point;
  return true;
}

void VioPipeline::track_points(const FrameData& frame, int clone_id) {
  for (auto& [id, f] : points_) f.seen = false;
  int active = static_cast<int>(points_.size());
  for (const auto& det : frame.points) {
    auto it = points_.find(det.id);
    if (it == points_.end()) {
      if (active >= config_.max_points) continue;
      it = points_.emplace(det.id, PointFeature{}).first;
      ++active;
    }
    if (it->second.seen) continue;  // duplicate id within a frame
    it->second.obs.push_back({clone_id, config_.camera.undistort_pixel(det.px)});
    it->second.seen = true;
  }
}

void VioPipeline::track_lines(const FrameData& frame, int clone_id, const Pose& cam_pose, FrameDiagnostics& diag) {
  const CameraModel& cam = config_.camera;
  const TrackerParams& tp = config_.tracker;
  const PatchSource* source = frame.patches.get();

  std::vector<int> ids;
  std::vector<std::optional<std::pair<Vec3, Vec3>>> extents;
  std::vector<std::vector<CandidateScore>> scores;
  std::vector<LineSegment2D> existing;
  for (const auto& [id, f] : lines_) {
    ids.push_back(id);
    extents.push_back(line_extent(f.line));
    if (!extents.back()) {
      scores.emplace_back();
      continue;
    }
    scores.push_back(score_candidates(f.track, *extents.back(), cam_pose, cam, frame.segments, source, tp));
    if (const auto pred = predict_segment(*extents.back(), cam_pose, cam)) existing.push_back(*pred);
  }
  const auto assigned = assign_candidates(scores, false);

  std::vector<bool> taken(frame.segments.size(), false);
  bool vertical_seen = false;
  int horizontal_count = 0;
  for (size_t k = 0; k < ids.size(); ++k) {
    LineFeature& f = lines_.at(ids[k]);
    if (!assigned[k]) {
      record_miss(f.track, tp);
      continue;
    }
    const int idx = *assigned[k];
    taken[idx] = true;
    const LineSegment2D& seg = frame.segments[idx];
    record_match(f.track, clone_id, seg, *extents[k], cam_pose, cam, source, tp);
    ++diag.matched_lines;
    if (f.line.axis == LineAxis::Z) {
      vertical_seen = true;
    } else {
      ++horizontal_count;
    }
    const int truth = idx < static_cast<int>(frame.segment_truth.size()) ? frame.segment_truth[idx] : -1;
    if (truth >= 0 && f.track.truth_id >= 0 && truth != f.track.truth_id) ++diag.association_errors;
    existing.push_back(seg);
  }

  std::vector<LineSegment2D> unmatched;
  std::vector<int> unmatched_index;
  for (size_t i = 0; i < frame.segments.size(); ++i) {
    if (!taken[i]) {
      unmatched.push_back(frame.segments[i]);
      unmatched_index.push_back(static_cast<int>(i));
    }
  }
  auto classified = classify_segments(unmatched, state_.x.worlds, cam_pose.rotation, cam, tp);
  for (const auto& c : classified) {
    if (!c.label) continue;
    if (c.label->axis == LineAxis::Z) {
      vertical_seen = true;
    } else {
      ++horizontal_count;
    }
  }

  if (vertical_seen) {
    const size_t before = state_.x.worlds.size();
    detect_worlds(classified, horizontal_count, cam_pose);
    if (state_.x.worlds.size() != before) {
      classified = classify_segments(unmatched, state_.x.worlds, cam_pose.rotation, cam, tp);
    }
  }

  const auto picks = select_segments_for_init(classified, existing, config_.max_lines,
                                              static_cast<int>(lines_.size()), tp);
  const auto cidx = state_.clone_index(clone_id);
  Mat3 cov_rot = Mat3::Zero();
  if (cidx) cov_rot = state_.P.block<3, 3>(*cidx, *cidx);
  for (int pick : picks) {
    const ClassifiedSegment& c = classified[pick];
    const SegmentLabel label = *c.label;
    const Mat3 R_ws = heading_rotation(label.axis == LineAxis::Z ? 0.0 : state_.x.phi(label.world_id));
    InitNoise noise;
    noise.sigma_px = config_.segment_sigma_px;
    noise.cov_cam_rot = cov_rot;
    if (structural()) noise.var_phi = state_.heading_variance(label.world_id).value_or(0.0);
    auto line = init_line_from_segment(c.seg, label.axis, R_ws, cam_pose, cam, config_.rho0, config_.sigma_rho0, noise);
    if (!line) continue;
    line->world_id = label.axis == LineAxis::Z ? kDummyWorldId : label.world_id;
    line->anchor_id = clone_id;
    if (!structural()) attach_to_anchor_camera(state_.x, *line, R_ws);
    const auto frame_l = line_frame(state_.x, *line);
    if (!frame_l) continue;
    line->range = update_range(*line, LineView{cam_pose, c.seg}, *frame_l, cam);

    LineFeature f;
    f.line = *line;
    f.track.line_id = next_line_id_++;
    f.track.observations.push_back({clone_id, c.seg});
    const int seg_index = unmatched_index[pick];
    if (seg_index < static_cast<int>(frame.segment_truth.size())) f.track.truth_id = frame.segment_truth[seg_index];
    if (source) {
      if (const auto ext = line_endpoints_3d(f.line, frame_l->world_from_start, frame_l->anchor)) {
        f.track.patches = sample_patches(*ext, c.seg, cam_pose, cam, *source, tp);
      }
    }
    lines_.emplace(f.track.line_id, std::move(f));
    ++diag.new_lines;
  }
}

void VioPipeline::detect_worlds(const std::vector<ClassifiedSegment>& unmatched, int horizontal_count,
                                const Pose& cam_pose) {
  if (!config_.multi_world && !state_.x.worlds.empty()) return;
  std::vector<LineSegment2D> free_segments;
  for (const auto& c : unmatched) {
    if (!c.label) free_segments.push_back(c.seg);
  }
  if (free_segments.empty()) return;
  const auto found = detect_manhattan_ransac(free_segments, cam_pose.rotation, config_.camera, state_.x.worlds,
                                             horizontal_count, rng_, config_.tracker);
  if (!found) return;
  add_manhattan_world(state_, found->phi, config_.sigma_phi, config_.tracker.world_separation_rad, structural());
}

void VioPipeline::update(int clone_id, FrameDiagnostics& diag) {
  const CameraModel& cam = config_.camera;
  std::vector<int> removal;
  if (static_cast<int>(state_.x.clones.size()) >= config_.max_clones) {
    removal = select_poses_for_removal(state_, config_.max_clones);
  }
  auto removed = [&](int cid) { return std::find(removal.begin(), removal.end(), cid) != removal.end(); };

  std::vector<int> lost_lines, window_lines, lost_points, window_points;
  for (const auto& [id, f] : lines_) {
    if (f.track.status == TrackStatus::kDropped) {
      lost_lines.push_back(id);
    } else if (std::any_of(f.track.observations.begin(), f.track.observations.end(),
                           [&](const TrackedSegment& o) { return removed(o.clone_id); })) {
      window_lines.push_back(id);
    }
  }
  for (const auto& [id, f] : points_) {
    if (!f.seen) {
      lost_points.push_back(id);
    } else if (std::any_of(f.obs.begin(), f.obs.end(), [&](const PointObservation& o) { return removed(o.clone_id); })) {
      window_points.push_back(id);
    }
  }

  std::vector<MeasurementBlock> blocks;
  auto add_line = [&](int id) {
    LineFeature& f = lines_.at(id);
    if (!triangulate(f)) return;
    auto m = build_line_measurement(state_, f.line, line_observations(f), cam, config_.sigma_line_px);
    if (!m.block) return;
    blocks.push_back(std::move(*m.block));
    ++diag.line_blocks;
  };
  auto add_point = [&](int id, size_t min_views) {
    PointFeature& f = points_.at(id);
    if (point_views(f).size() < min_views || !triangulate(f)) return;
    auto m = build_point_measurement(state_, *f.estimate, f.obs, cam, config_.sigma_point_px);
    if (!m.block) return;
    blocks.push_back(std::move(*m.block));
    ++diag.point_blocks;
  };
  for (int id : lost_lines) add_line(id);
  for (int id : window_lines) add_line(id);
  for (int id : lost_points) add_point(id, static_cast<size_t>(std::max(2, config_.min_point_views)));
  for (int id : window_points) add_point(id, 2);

  if (!blocks.empty()) {
    const auto rep = gated_update(state_, blocks, config_.gate_confidence);
    for (const auto o : rep.outcomes) {
      if (o != GateOutcome::kAccepted) ++diag.gate_rejected;
    }
  }

  for (int id : lost_lines) lines_.erase(id);
  for (int id : lost_points) points_.erase(id);

  // Refresh every line against the updated state and drop inconsistent ones.
  for (auto it = lines_.begin(); it != lines_.end();) {
    LineFeature& f = it->second;
    bool keep = true;
    if (triangulate(f) && !blocks.empty()) {
      const auto frame = line_frame(state_.x, f.line);
      keep = frame && reprojection_outlier_check(f.line, line_views(f), *frame, cam, config_.reprojection_threshold_px);
      if (!keep) ++diag.reprojection_rejected;
    }
    it = keep ? std::next(it) : lines_.erase(it);
  }

  if (removal.empty()) return;

  // Observations of features seen in a removed pose are used up: fold them
  // into the feature prior and start collecting afresh.
  for (int id : window_lines) {
    auto it = lines_.find(id);
    if (it == lines_.end()) continue;
    LineFeature& f = it->second;
    if (config_.accumulate) {
      const auto frame = line_frame(state_.x, f.line);
      const auto views = line_views(f);
      if (frame && !views.empty()) {
        const auto acc = accumulate_information(f.line, f.line.prior, views, *frame, cam, config_.sigma_line_px);
        if (acc.accumulated) f.line.prior = acc.prior;
      }
    }
    f.track.observations.clear();
  }
  for (int id : window_points) {
    PointFeature& f = points_.at(id);
    if (config_.accumulate && f.estimate) {
      const auto views = point_views(f);
      const auto acc = accumulate_point_information(*f.estimate, f.prior, views, cam, config_.sigma_point_px);
      if (acc.accumulated) f.prior = acc.prior;
    }
    f.obs.clear();
  }

  const Clone* newest = state_.x.clone(clone_id);
  const Vec3 new_anchor = state_.x.camera_pose(newest->pose).translation;
  const Mat3 R_wc_new = state_.x.camera_pose(newest->pose).rotation.matrix();
  for (auto it = lines_.begin(); it != lines_.end();) {
    StructuralLine& line = it->second.line;
    if (!removed(line.anchor_id)) {
      ++it;
      continue;
    }
    const auto frame = line_frame(state_.x, line);
    std::optional<ReanchorResult> moved;
    if (frame) moved = reanchor_line(line, line.prior.cov, frame->anchor, new_anchor, frame->world_from_start);
    if (!moved) {
      it = lines_.erase(it);
      continue;
    }
    line = moved->line;
    line.anchor_id = clone_id;
    if (line.anchor_frame) line.anchor_frame = R_wc_new.transpose() * frame->world_from_start;
    ++it;
  }
  remove_clones(state_, removal);
}

void VioPipeline::merge_worlds() {
  bool merged = true;
  while (merged) {
    merged = false;
    const auto& worlds = state_.x.worlds;
    for (size_t i = 0; i < worlds.size() && !merged; ++i) {
      for (size_t j = i + 1; j < worlds.size() && !merged; ++j) {
        if (heading_distance(worlds[i].phi, worlds[j].phi) >= config_.merge_threshold) continue;
        const int keep = worlds[i].id;
        const int drop = worlds[j].id;
        std::vector<StructuralLine*> ptrs;
        for (auto& [id, f] : lines_) ptrs.push_back(&f.line);
        merge_manhattan_worlds(state_, keep, drop, ptrs, config_.merge_threshold);
        merged = true;
      }
    }
  }
}

void VioPipeline::check_divergence(const FrameDiagnostics& diag) const {
  const auto& x = state_.x;
  const bool finite = x.imu.position.allFinite() && x.imu.velocity.allFinite() &&
                      x.imu.orientation.quat().coeffs().allFinite() && x.imu.gyro_bias.allFinite() &&
                      x.imu.accel_bias.allFinite() && state_.P.allFinite();
  if (!finite) throw DivergenceError("non-finite filter state at t = " + std::to_string(diag.t), history_);
  if (x.imu.position.norm() > config_.divergence_position_m) {
    throw DivergenceError("position norm exceeds " + std::to_string(config_.divergence_position_m) +
                              " m at t = " + std::to_string(diag.t),
                          history_);
  }
}

FrameDiagnostics VioPipeline::process(const FrameData& frame) {
  if (!initialized_) throw std::logic_error("pipeline not initialized");
  const double t = frame.t();
  if (t < state_.x.t - 1e-9) throw std::invalid_argument("frame timestamps must not decrease");
  FrameDiagnostics diag;
  diag.t = t;

  if (t > state_.x.t) {
    const auto samples = imu_between(imu_, state_.x.t, t);
    const auto rep = propagate(state_, samples, config_.imu);
    if (rep.gap_warning) warnings_.push_back("IMU gap before frame at t = " + std::to_string(t));
  }
  const int clone_id = augment_pose(state_, t);
  const Pose cam_pose = state_.x.camera_pose(state_.x.imu.pose());

  track_points(frame, clone_id);
  if (uses_lines()) track_lines(frame, clone_id, cam_pose, diag);
  update(clone_id, diag);
  if (structural()) merge_worlds();

  diag.clones = static_cast<int>(state_.x.clones.size());
  diag.worlds = static_cast<int>(state_.x.worlds.size());
  diag.lines = static_cast<int>(lines_.size());
  diag.vertical_lines = static_cast<int>(std::count_if(
      lines_.begin(), lines_.end(), [](const auto& kv) { return kv.second.line.axis == LineAxis::Z; }));
  diag.points = static_cast<int>(points_.size());
  for (const auto& w : state_.x.worlds) diag.headings.emplace_back(w.id, w.phi);
  diag.position = state_.x.imu.position;
  history_.push_back(diag);
  check_divergence(diag);
  return diag;
}

RunResult run_vio(const RunConfig& config, std::span<const ImuSample> imu, const std::vector<FrameData>& frames,
                  const std::optional<ImuState>& initial) {
  RunResult result;
  if (frames.empty()) {
    result.warnings.push_back("no frames");
    return result;
  }
  VioPipeline pipeline(config, imu);
  if (initial) {
    pipeline.initialize(frames.front().t(), *initial);
  } else {
    pipeline.initialize_static(frames.front().t());
  }
  const bool any_points = std::any_of(frames.begin(), frames.end(), [](const FrameData& f) { return !f.points.empty(); });
  const bool any_segments =
      std::any_of(frames.begin(), frames.end(), [](const FrameData& f) { return !f.segments.empty(); });
  if (!any_points && (config.mode == Mode::kPointOnly || !any_segments)) {
    result.warnings.push_back("no usable detections; the trajectory is IMU propagation only");
  }

  for (const auto& frame : frames) {
    try {
      result.diagnostics.push_back(pipeline.process(frame));
    } catch (const DivergenceError& e) {
      result.aborted = true;
      result.abort_reason = e.what();
      break;
    }
    result.trajectory.push_back({frame.t(), pipeline.state().x.imu.pose()});
  }
  result.warnings.insert(result.warnings.end(), pipeline.warnings().begin(), pipeline.warnings().end());
  result.worlds = pipeline.state().x.worlds;
  return result;
}

namespace {

std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.precision(10);
  return out;
}

}  // namespace

void emit_outputs(const RunResult& result, const std::optional<ErrorMetrics>& metrics, const std::string& out_dir,
                  const std::map<std::string, double>& extra) {
  namespace fs = std::filesystem;
  const fs::path dir(out_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create " + out_dir + ": " + ec.message());

  write_tum(result.trajectory, (dir / "trajectory.tum").string());

  {
    auto out = open_output(dir / "diagnostics.csv");
    out << "t,clones,worlds,lines,vertical_lines,points,matched_lines,new_lines,association_errors,line_blocks,"
           "point_blocks,gate_rejected,reprojection_rejected,px,py,pz\n";
    for (const auto& d : result.diagnostics) {
      out << d.t << ',' << d.clones << ',' << d.worlds << ',' << d.lines << ',' << d.vertical_lines << ','
          << d.points << ',' << d.matched_lines << ',' << d.new_lines << ',' << d.association_errors << ','
          << d.line_blocks << ',' << d.point_blocks << ',' << d.gate_rejected << ',' << d.reprojection_rejected
          << ',' << d.position.x() << ',' << d.position.y() << ',' << d.position.z() << '\n';
    }
  }
  {
    auto out = open_output(dir / "headings.csv");
    out << "t,world_id,phi_deg\n";
    for (const auto& d : result.diagnostics) {
      for (const auto& [id, phi] : d.headings) out << d.t << ',' << id << ',' << phi * 180.0 / M_PI << '\n';
    }
  }

  nlohmann::json j;
  j["frames"] = result.diagnostics.size();
  j["aborted"] = result.aborted;
  if (result.aborted) j["abort_reason"] = result.abort_reason;
  j["warnings"] = result.warnings;
  auto worlds = nlohmann::json::array();
  for (const auto& w : result.worlds) worlds.push_back({{"id", w.id}, {"phi_deg", w.phi * 180.0 / M_PI}});
  j["worlds"] = worlds;
  for (const auto& [k, v] : extra) j[k] = v;
  if (metrics) {
    j["rmse_m"] = metrics->rmse;
    j["max_m"] = metrics->max;
    j["matched"] = metrics->count;
    j["length_m"] = metrics->length;
    j["drift_percent"] = metrics->drift_percent;
    auto rel = nlohmann::json::array();
    for (const auto& r : metrics->relative) {
      rel.push_back({{"length_m", r.length}, {"rmse_m", r.rmse}, {"mean_m", r.mean}, {"count", r.count}});
    }
    j["relative"] = rel;
    auto out = open_output(dir / "errors.csv");
    out << "t,position_error_m\n";
    for (const auto& [t, e] : metrics->errors) out << t << ',' << e << '\n';
  }
  auto out = open_output(dir / "metrics.json");
  out << j.dump(2) << '\n';
}

}  // namespace avio
