#pragma once

#include <map>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "avio/config.hpp"
#include "avio/estimator.hpp"
#include "avio/evaluation.hpp"
#include "avio/filter.hpp"
#include "avio/frame.hpp"
#include "avio/tracker.hpp"

namespace avio {

struct FrameDiagnostics {
  double t = 0.0;
  int clones = 0;
  int worlds = 0;  // non-dummy
  int lines = 0;
  int vertical_lines = 0;
  int points = 0;
  int matched_lines = 0;
  int new_lines = 0;
  int association_errors = 0;  // matches whose generating line differs (synthetic data)
  int line_blocks = 0;
  int point_blocks = 0;
  int gate_rejected = 0;
  int reprojection_rejected = 0;
  std::vector<std::pair<int, double>> headings;  // (world id, phi)
  Vec3 position = Vec3::Zero();
};

/// Thrown when the state leaves the sane region; carries the last diagnostics.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, std::vector<FrameDiagnostics> diag)
      : std::runtime_error(what), diagnostics(std::move(diag)) {}
  std::vector<FrameDiagnostics> diagnostics;
};

struct RunResult {
  Trajectory trajectory;  // IMU poses at frame times
  std::vector<FrameDiagnostics> diagnostics;
  std::vector<std::string> warnings;
  std::vector<ManhattanWorld> worlds;  // at the end of the run
  bool aborted = false;
  std::string abort_reason;
};

/// Per-frame estimator driving tracking, world detection, feature
/// management and filter updates.
class VioPipeline {
 public:
  VioPipeline(const RunConfig& config, std::span<const ImuSample> imu);

  /// Starts the filter at time t with the given IMU state.
  void initialize(double t, const ImuState& imu);
  /// Starts at time t with roll and pitch from the mean accelerometer reading
  /// over the preceding window (or the following one at the stream start).
  void initialize_static(double t);
  bool initialized() const { return initialized_; }

  /// Throws DivergenceError when the state diverges.
  FrameDiagnostics process(const FrameData& frame);

  const FilterState& state() const { return state_; }
  const std::vector<std::string>& warnings() const { return warnings_; }

 private:
  struct LineFeature {
    StructuralLine line;
    LineTrack track;
  };
  struct PointFeature {
    std::vector<PointObservation> obs;
    std::optional<PointPrior> prior;
    std::optional<Vec3> estimate;
    bool seen = false;
  };

  bool structural() const { return config_.mode == Mode::kStructVio; }
  bool uses_lines() const { return config_.mode != Mode::kPointOnly; }

  std::optional<std::pair<Vec3, Vec3>> line_extent(const StructuralLine& line) const;
  std::vector<LineView> line_views(const LineFeature& f) const;
  std::vector<LineObservation> line_observations(const LineFeature& f) const;
  std::vector<PointView> point_views(const PointFeature& f) const;
  bool triangulate(LineFeature& f) const;
  bool triangulate(PointFeature& f) const;

  void track_points(const FrameData& frame, int clone_id);
  void track_lines(const FrameData& frame, int clone_id, const Pose& cam_pose, FrameDiagnostics& diag);
  void detect_worlds(const std::vector<ClassifiedSegment>& unmatched, int horizontal_count, const Pose& cam_pose);
  void init_lines(const std::vector<ClassifiedSegment>& unmatched, int clone_id, const Pose& cam_pose,
                  const FrameData& frame, FrameDiagnostics& diag);
  void update(int clone_id, FrameDiagnostics& diag);
  void merge_worlds();
  void check_divergence(const FrameDiagnostics& diag) const;

  RunConfig config_;
  std::span<const ImuSample> imu_;
  FilterState state_;
  bool initialized_ = false;
  std::map<int, LineFeature> lines_;
  std::map<int, PointFeature> points_;
  int next_line_id_ = 0;
  std::mt19937_64 rng_;
  std::vector<std::string> warnings_;
  std::vector<FrameDiagnostics> history_;
};

/// Runs the estimator over all frames. With `initial` the filter starts at
/// the first frame from that state; otherwise roll/pitch come from the
/// accelerometer and the remaining state is zero. A divergence aborts the
/// run and is reported in the result.
RunResult run_vio(const RunConfig& config, std::span<const ImuSample> imu, const std::vector<FrameData>& frames,
                  const std::optional<ImuState>& initial = std::nullopt);

/// Writes trajectory.tum, diagnostics.csv, headings.csv and, when metrics
/// are given, metrics.json and errors.csv. Throws std::runtime_error when the
/// directory cannot be written.
void emit_outputs(const RunResult& result, const std::optional<ErrorMetrics>& metrics, const std::string& out_dir,
                  const std::map<std::string, double>& extra = {});

}  // namespace avio
