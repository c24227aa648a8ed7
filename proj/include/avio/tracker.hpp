#pragma once

#include <optional>
#include <random>
#include <utility>
#include <vector>

#include "avio/atlanta.hpp"
#include "avio/geom.hpp"

namespace avio {

/// Square intensity window, row-major.
struct Patch {
  int side = 11;
  Vec2 center = Vec2::Zero();
  std::vector<double> values;
};

/// Zero-mean normalized cross-correlation. nullopt when either patch has
/// zero variance. Throws std::invalid_argument on size mismatch.
std::optional<double> zncc(const Patch& a, const Patch& b);

/// Image intensities for one frame.
class PatchSource {
 public:
  virtual ~PatchSource() = default;
  /// nullopt when the window is not available (off image or no image data).
  virtual std::optional<Patch> patch(const Vec2& center, int side) const = 0;
};

struct TrackerParams {
  double gate_distance_px = 15.0;
  double gate_angle_rad = 10.0 * M_PI / 180.0;
  int samples = 5;
  int patch_side = 11;
  double search_px = 4.0;
  double search_step_px = 2.0;
  double zncc_threshold = 0.6;
  int delayed_drop = 3;
  double classify_distance_px = 3.0;
  double classify_angle_rad = 4.0 * M_PI / 180.0;
  // Horizontal labels also need the segment to reject headings this far off.
  double heading_margin_rad = 15.0 * M_PI / 180.0;
  double init_close_distance_px = 10.0;
  double init_close_angle_rad = 5.0 * M_PI / 180.0;
  double init_min_length_px = 20.0;
  int ransac_min_support = 4;
  int ransac_max_iterations = 50;
  double world_separation_rad = 5.0 * M_PI / 180.0;
};

struct SegmentLabel {
  int world_id = kDummyWorldId;
  LineAxis axis = LineAxis::Z;
};

struct ClassifiedSegment {
  LineSegment2D seg;
  std::optional<SegmentLabel> label;  // nullopt: non-structural
  double inconsistency = 0.0;         // normalized distance + angle to the chosen ray, lower is better
};

/// Labels segments with the vanishing point whose ray through the midpoint
/// fits best. `worlds` holds the non-dummy worlds; vertical lines always go
/// to the dummy world. Heading-ambiguous horizontal fits are left unlabeled.
std::vector<ClassifiedSegment> classify_segments(const std::vector<LineSegment2D>& segments,
                                                 const std::vector<ManhattanWorld>& worlds,
                                                 const Rotation& cam_orientation, const CameraModel& cam,
                                                 const TrackerParams& params = {});

/// True when a segment fits the horizontal axis of heading phi and of
/// phi +/- heading_margin_rad alike (e.g. near the horizon), so it cannot
/// tell headings apart.
bool heading_ambiguous(const LineSegment2D& seg, double phi, LineAxis axis, const Rotation& cam_orientation,
                       const CameraModel& cam, const TrackerParams& params = {});

/// Inconsistency of a segment with a vanishing point, or nullopt if it fails
/// the distance/angle thresholds.
std::optional<double> vanishing_consistency(const LineSegment2D& seg, const Vec3& vp, const TrackerParams& params);

enum class TrackStatus { kActive, kPendingDrop, kDropped };

struct SamplePatch {
  Vec3 point_world;  // sample position on the 3D line when the patch was taken
  Patch patch;
};

struct TrackedSegment {
  int clone_id = -1;
  LineSegment2D seg;
};

struct LineTrack {
  int line_id = -1;
  std::vector<TrackedSegment> observations;
  std::vector<SamplePatch> patches;
  int missed = 0;
  TrackStatus status = TrackStatus::kActive;
  int truth_id = -1;  // simulator bookkeeping only
};

struct CandidateScore {
  int index = -1;
  int votes = 0;
  double mean_distance = 0.0;  // perpendicular pixels, predicted endpoints to candidate line
};

/// Phase 1 gating and phase 2 patch voting of every candidate against one
/// track. `extent` is the 3D range of the line; `cam_pose` the predicted
/// world_from_camera pose. Candidates that pass are returned best first.
/// When the track has no patches or the source is null, votes stay 0 and
/// candidates are ordered by distance.
std::vector<CandidateScore> score_candidates(const LineTrack& track, const std::pair<Vec3, Vec3>& extent,
                                             const Pose& cam_pose, const CameraModel& cam,
                                             const std::vector<LineSegment2D>& candidates, const PatchSource* source,
                                             const TrackerParams& params = {});

/// Clips a pixel segment to the image rectangle.
std::optional<std::pair<Vec2, Vec2>> clip_to_image(const Vec2& p, const Vec2& q, const CameraModel& cam);

/// Predicted image segment of a 3D extent, clipped to the image. nullopt when
/// nothing of it is visible.
std::optional<LineSegment2D> predict_segment(const std::pair<Vec3, Vec3>& extent, const Pose& cam_pose,
                                             const CameraModel& cam);

struct TrackResult {
  std::optional<int> matched;  // candidate index
  int votes = 0;
};

/// Picks the best candidate for a single track and updates its bookkeeping
/// (observations, patches, missed counter, status).
TrackResult track_line(LineTrack& track, const std::pair<Vec3, Vec3>& extent, const Pose& cam_pose,
                       const CameraModel& cam, const std::vector<LineSegment2D>& candidates,
                       const PatchSource* source, int clone_id, const TrackerParams& params = {});

/// Greedy one-to-one assignment: highest vote count first, ties by distance.
/// Returns, per track, the assigned candidate index.
std::vector<std::optional<int>> assign_candidates(const std::vector<std::vector<CandidateScore>>& scores,
                                                  bool require_votes);

/// Bookkeeping after association.
void record_match(LineTrack& track, int clone_id, const LineSegment2D& seg, const std::pair<Vec3, Vec3>& extent,
                  const Pose& cam_pose, const CameraModel& cam, const PatchSource* source,
                  const TrackerParams& params = {});
void record_miss(LineTrack& track, const TrackerParams& params = {});

/// Patches around the projections of K evenly spaced samples on the extent,
/// snapped onto the observed segment's line.
std::vector<SamplePatch> sample_patches(const std::pair<Vec3, Vec3>& extent, const LineSegment2D& seg,
                                        const Pose& cam_pose, const CameraModel& cam, const PatchSource& source,
                                        const TrackerParams& params = {});

/// Indices of segments worth initializing, longest first.
std::vector<int> select_segments_for_init(const std::vector<ClassifiedSegment>& segments,
                                          const std::vector<LineSegment2D>& existing, int max_lines, int active_count,
                                          const TrackerParams& params = {});

/// True if the two segments are nearly collinear.
bool segments_close(const LineSegment2D& a, const LineSegment2D& b, double distance_px, double angle_rad);

struct RansacResult {
  double phi = 0.0;  // [0, pi/2)
  int support = 0;
};

/// 1-line RANSAC for a new local world among non-structural segments.
std::optional<RansacResult> detect_manhattan_ransac(const std::vector<LineSegment2D>& segments,
                                                    const Rotation& cam_orientation, const CameraModel& cam,
                                                    const std::vector<ManhattanWorld>& worlds,
                                                    int horizontal_structural_count, std::mt19937_64& rng,
                                                    const TrackerParams& params = {});

/// Heading (mod pi/2) of the horizontal direction whose vanishing point lies
/// where the segment's line meets the horizon.
std::optional<double> heading_from_segment(const LineSegment2D& seg, const Rotation& cam_orientation,
                                           const CameraModel& cam);

}  // namespace avio
