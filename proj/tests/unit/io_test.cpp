#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>

#include <gtest/gtest.h>

#include "avio/config.hpp"
#include "avio/dataset.hpp"
#include "avio/evaluation.hpp"
#include "avio/experiment.hpp"
#include "avio/pipeline.hpp"
#include "avio/sim.hpp"

namespace avio {
namespace {

namespace fs = std::filesystem;

class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = fs::temp_directory_path() / ("avio_test_" + std::to_string(rd()) + std::to_string(rd()));
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

void write_file(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream(p) << text;
}

Trajectory random_trajectory(int n, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  Trajectory t;
  for (int k = 0; k < n; ++k) {
    t.push_back({10.0 + 0.1 * k, Pose(Rotation::exp(Vec3(U(rng), U(rng), U(rng))), 5.0 * Vec3(U(rng), U(rng), U(rng)))});
  }
  return t;
}

TEST(Alignment, IdenticalTrajectoriesGiveIdentity) {
  const Trajectory t = random_trajectory(50, 1);
  const auto a = align_trajectories(t, t, t.front().t, t.back().t);
  EXPECT_TRUE(a.transform.matrix().isApprox(Mat4::Identity(), 1e-12));
}

TEST(Alignment, RecoversKnownTransform) {
  const Trajectory est = random_trajectory(50, 2);
  const Pose T(Rotation::exp(Vec3(0.2, 0.5, -2.0)), Vec3(3, -1, 7));
  const auto a = align_trajectories(est, transform_trajectory(T, est), est.front().t, est.back().t);
  EXPECT_LT((a.transform.matrix() - T.matrix()).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Alignment, CollinearWindowFallsBackToYaw) {
  Trajectory est;
  for (int k = 0; k < 20; ++k) est.push_back({0.1 * k, Pose(Rotation(), Vec3(0.5 * k, 0, 0))});
  const Pose T(Rotation::exp(Vec3(0, 0, 0.8)), Vec3(1, 2, 0));
  const auto a = align_trajectories(est, transform_trajectory(T, est), 0.0, 2.0);
  EXPECT_TRUE(a.rank_warning);
  EXPECT_TRUE(a.yaw_only);
  EXPECT_NEAR(yaw_of(a.transform.rotation), 0.8, 1e-9);
}

TEST(Alignment, TooFewMatchesThrows) {
  const Trajectory t = random_trajectory(2, 3);
  EXPECT_THROW(align_trajectories(t, t, t.front().t, t.back().t), MetricError);
}

TEST(Metrics, IdenticalIsZero) {
  const Trajectory t = random_trajectory(30, 4);
  const auto m = compute_errors(t, t, t.front().t, t.back().t);
  EXPECT_EQ(m.rmse, 0.0);
  EXPECT_EQ(m.max, 0.0);
}

TEST(Metrics, ConstantOffset) {
  const Trajectory ref = random_trajectory(30, 5);
  Trajectory est = ref;
  for (auto& s : est) s.pose.translation += Vec3(0, 0.6, 0.8);
  const auto m = compute_errors(est, ref, ref[10].t, ref.back().t);
  EXPECT_NEAR(m.rmse, 1.0, 1e-12);
  EXPECT_NEAR(m.max, 1.0, 1e-12);
  EXPECT_EQ(m.count, 20);
}

TEST(Tum, IdentityLine) { EXPECT_EQ(format_tum_line(1.0, Pose()), "1.000000000 0 0 0 0 0 0 1"); }

TEST(Tum, RoundTrip) {
  TempDir dir;
  const Trajectory t = random_trajectory(20, 6);
  const auto path = (dir.path() / "traj.tum").string();
  write_tum(t, path);
  const Trajectory back = read_tum(path);
  ASSERT_EQ(back.size(), t.size());
  for (size_t k = 0; k < t.size(); ++k) {
    EXPECT_NEAR(back[k].t, t[k].t, 1e-9);
    EXPECT_LT((back[k].pose.matrix() - t[k].pose.matrix()).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(Euroc, MinimalDataset) {
  TempDir dir;
  write_file(dir.path() / "imu0/data.csv",
             "#timestamp [ns],w_x,w_y,w_z,a_x,a_y,a_z\n"
             "1000000000,0,0,0,0,0,9.81\n1005000000,0.1,0,0,0,0,9.81\n1010000000,0,0.2,0,0,0,9.81\n");
  write_file(dir.path() / "cam0/data.csv", "#timestamp [ns],filename\n1005000000,1005000000.png\n");
  const Dataset d = load_euroc(dir.path().string());
  EXPECT_EQ(d.imu.size(), 3u);
  EXPECT_EQ(d.frames.size(), 1u);
  EXPECT_DOUBLE_EQ(d.imu[1].gyro.x(), 0.1);
  EXPECT_FALSE(d.truth);
}

TEST(Euroc, MalformedRowCitesLine) {
  TempDir dir;
  write_file(dir.path() / "imu0/data.csv",
             "#timestamp [ns],w_x,w_y,w_z,a_x,a_y,a_z\n1000000000,0,0,0,0,0,9.81\n1005000000,0,0,0,0,9.81\n");
  write_file(dir.path() / "cam0/data.csv", "#timestamp [ns],filename\n");
  try {
    load_euroc(dir.path().string());
    FAIL() << "expected LoadError";
  } catch (const LoadError& e) {
    EXPECT_NE(std::string(e.what()).find(":3:"), std::string::npos) << e.what();
  }
}

TEST(Euroc, SyntheticExportRoundTrip) {
  TempDir dir;
  auto sc = sim::default_scenario(3);
  sc.trajectory.duration = 2.0;
  const auto data = sim::simulate(sc);
  sim::export_dataset(data, dir.path().string());
  const Dataset d = load_euroc(dir.path().string());
  ASSERT_EQ(d.imu.size(), data.imu.samples.size());
  for (size_t i = 0; i < d.imu.size(); ++i) {
    ASSERT_EQ(d.imu_t_ns[i], data.imu.t_ns[i]);
    ASSERT_EQ(d.imu[i].gyro, data.imu.samples[i].gyro);
    ASSERT_EQ(d.imu[i].accel, data.imu.samples[i].accel);
  }
  ASSERT_EQ(d.frames.size(), data.frames.size());
  for (size_t f = 0; f < d.frames.size(); ++f) {
    ASSERT_EQ(d.frames[f].t_ns, data.frames[f].t_ns);
    ASSERT_EQ(d.frames[f].segments.size(), data.frames[f].segments.size());
    for (size_t s = 0; s < d.frames[f].segments.size(); ++s) {
      ASSERT_EQ(d.frames[f].segments[s].a, data.frames[f].segments[s].a);
      ASSERT_EQ(d.frames[f].segments[s].b, data.frames[f].segments[s].b);
    }
    ASSERT_EQ(d.frames[f].points.size(), data.frames[f].points.size());
    for (size_t p = 0; p < d.frames[f].points.size(); ++p) {
      ASSERT_EQ(d.frames[f].points[p].id, data.frames[f].points[p].id);
      ASSERT_EQ(d.frames[f].points[p].px, data.frames[f].points[p].px);
    }
  }
  ASSERT_TRUE(d.truth);
  EXPECT_EQ(d.truth->size(), data.truth.size());
}

TEST(Config, SaveLoadRoundTrip) {
  TempDir dir;
  RunConfig cfg;
  cfg.mode = Mode::kPointLine;
  cfg.max_clones = 17;
  cfg.camera.fx = 412.5;
  cfg.camera.omega = 0.91;
  cfg.sigma_phi = 0.07;
  cfg.multi_world = false;
  cfg.extrinsics = Pose(Rotation::exp(Vec3(0.1, 0.2, 0.3)), Vec3(0.01, 0.02, 0.03));
  const auto path = (dir.path() / "cfg.yaml").string();
  save_run_config(cfg, path);
  const RunConfig back = load_run_config(path);
  EXPECT_EQ(back.mode, Mode::kPointLine);
  EXPECT_EQ(back.max_clones, 17);
  EXPECT_DOUBLE_EQ(back.camera.fx, 412.5);
  EXPECT_NEAR(back.camera.omega, 0.91, 1e-12);
  EXPECT_NEAR(back.sigma_phi, 0.07, 1e-12);
  EXPECT_FALSE(back.multi_world);
  EXPECT_LT((back.extrinsics.matrix() - cfg.extrinsics.matrix()).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Config, ModeNames) {
  EXPECT_EQ(parse_mode("point-only"), Mode::kPointOnly);
  EXPECT_EQ(parse_mode("point+line"), Mode::kPointLine);
  EXPECT_EQ(parse_mode("structvio"), Mode::kStructVio);
  EXPECT_THROW(parse_mode("orb"), std::exception);
}

TEST(Pipeline, PointOnlyWithoutPointsPropagates) {
  auto sc = sim::default_scenario(2);
  sc.trajectory.duration = 3.0;
  sc.scene.num_points = 0;
  const auto data = sim::simulate(sc);
  const RunConfig cfg = config_for(data, Mode::kPointOnly);
  const auto run = run_vio(cfg, data.imu.samples, data.frames, truth_state_at(data, data.frames.front().t()));
  EXPECT_FALSE(run.aborted);
  EXPECT_EQ(run.trajectory.size(), data.frames.size());
  EXPECT_FALSE(run.warnings.empty());
}

TEST(Pipeline, OutputsHaveOneDiagnosticsRowPerFrame) {
  TempDir dir;
  auto sc = sim::default_scenario(2);
  sc.trajectory.duration = 3.0;
  const auto data = sim::simulate(sc);
  const auto run = run_synthetic(data, config_for(data, Mode::kStructVio));
  ASSERT_FALSE(run.result.aborted);
  emit_outputs(run.result, std::nullopt, dir.path().string());
  std::ifstream in(dir.path() / "diagnostics.csv");
  std::string line;
  int rows = -1;  // header
  while (std::getline(in, line)) rows += !line.empty();
  EXPECT_EQ(rows, static_cast<int>(data.frames.size()));
  EXPECT_EQ(read_tum((dir.path() / "trajectory.tum").string()).size(), data.frames.size());
}

}  // namespace
}  // namespace avio
