#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "acceptance/criteria.hpp"
#include "avio/config.hpp"
#include "avio/dataset.hpp"
#include "avio/evaluation.hpp"
#include "avio/experiment.hpp"
#include "avio/pipeline.hpp"
#include "avio/sim.hpp"

namespace {

using namespace avio;

struct RunArgs {
  std::string dataset;
  std::string scenario;
  std::string config;
  std::string out = "out";
  std::string mode;
  std::optional<uint64_t> seed;
  double window = -1.0;
  bool init_from_truth = false;
};

ErrorMetrics evaluate(const Trajectory& est, const Trajectory& ref, double window, bool* yaw_only = nullptr) {
  if (est.empty()) throw MetricError("empty estimate");
  const double t0 = est.front().t;
  const double t1 = est.back().t;
  const auto align = align_trajectories(est, ref, t0, t0 + window);
  if (align.rank_warning) std::cerr << "warning: degenerate alignment window, using yaw-only alignment\n";
  if (yaw_only) *yaw_only = align.yaw_only;
  const auto aligned = transform_trajectory(align.transform, est);
  return compute_errors(aligned, ref, t1 - window, t1, {1.0, 5.0, 10.0, 20.0});
}

void print_metrics(const ErrorMetrics& m) {
  std::printf("rmse %.4f m  max %.4f m  matched %d  length %.2f m  drift %.3f %%\n", m.rmse, m.max, m.count,
              m.length, m.drift_percent);
}

int run_command(const RunArgs& args) {
  RunConfig cfg = args.config.empty() ? RunConfig{} : load_run_config(args.config);
  if (!args.mode.empty()) cfg.mode = parse_mode(args.mode);
  if (args.seed) cfg.seed = *args.seed;
  if (args.window > 0.0) cfg.align_window_s = args.window;

  RunResult result;
  Trajectory reference;
  std::map<std::string, double> extra;
  if (!args.scenario.empty() || args.dataset.empty()) {
    sim::Scenario scenario =
        args.scenario.empty() ? sim::default_scenario(args.seed.value_or(1)) : sim::load_scenario(args.scenario);
    if (args.seed) scenario.noise.seed = scenario.scene.seed = *args.seed;
    const auto data = sim::simulate(scenario);
    RunConfig sim_cfg = cfg;
    sim_cfg.camera = data.camera;
    sim_cfg.extrinsics = data.extrinsics;
    sim_cfg.imu = data.imu_noise;
    const auto run = run_synthetic(data, sim_cfg);
    result = run.result;
    reference = truth_trajectory(data);
    extra["final_position_error_m"] = run.final_position_error;
    extra["final_heading_error_deg"] = run.final_heading_error * 180.0 / M_PI;
    extra["full_rmse_m"] = run.rmse;
    extra["runtime_s"] = run.seconds;
    std::printf("final position error %.4f m  heading error %.3f deg  rmse %.4f m  (%.1f s)\n",
                run.final_position_error, run.final_heading_error * 180.0 / M_PI, run.rmse, run.seconds);
  } else {
    const Dataset data = load_euroc(args.dataset);
    std::optional<ImuState> initial;
    if (data.truth) reference = truth_trajectory(*data.truth);
    if (args.init_from_truth) {
      if (!data.truth || data.frames.empty()) throw std::runtime_error("--init-from-truth needs ground truth");
      const double t0 = data.frames.front().t();
      const auto& rows = *data.truth;
      const auto it = std::min_element(rows.begin(), rows.end(), [&](const auto& a, const auto& b) {
        return std::abs(a.t_ns * 1e-9 - t0) < std::abs(b.t_ns * 1e-9 - t0);
      });
      ImuState s;
      s.orientation = it->pose.rotation;
      s.position = it->pose.translation;
      s.velocity = it->velocity;
      s.gyro_bias = it->gyro_bias;
      s.accel_bias = it->accel_bias;
      initial = s;
    }
    result = run_vio(cfg, data.imu, data.frames, initial);
  }
  for (const auto& w : result.warnings) std::cerr << "warning: " << w << '\n';
  if (result.aborted) std::cerr << "run aborted: " << result.abort_reason << '\n';

  std::optional<ErrorMetrics> metrics;
  if (!reference.empty() && !result.trajectory.empty()) {
    bool yaw_only = false;
    metrics = evaluate(result.trajectory, reference, cfg.align_window_s, &yaw_only);
    extra["yaw_only_alignment"] = yaw_only ? 1.0 : 0.0;
    print_metrics(*metrics);
  }
  emit_outputs(result, metrics, args.out, extra);
  std::printf("wrote %s\n", args.out.c_str());
  return result.aborted ? 2 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Structural-line visual-inertial odometry"};
  app.require_subcommand(1);

  RunArgs run_args;
  auto* run = app.add_subcommand("run", "Run the estimator on a dataset directory or a synthetic scenario");
  run->add_option("-d,--dataset", run_args.dataset, "ASL-layout dataset directory");
  run->add_option("-s,--scenario", run_args.scenario, "Scenario YAML simulated in memory (with patches)");
  run->add_option("-c,--config", run_args.config, "Run configuration YAML");
  run->add_option("-o,--out", run_args.out, "Output directory");
  run->add_option("-m,--mode", run_args.mode, "point-only | point-line | structvio");
  run->add_option("--seed", run_args.seed, "Random seed (also reseeds the synthetic scenario)");
  run->add_option("--window", run_args.window, "Alignment / evaluation window in seconds");
  run->add_flag("--init-from-truth", run_args.init_from_truth, "Start from the ground-truth state");

  std::string sim_scenario, sim_out = "sim_data";
  std::optional<uint64_t> sim_seed;
  auto* simulate = app.add_subcommand("simulate", "Write a synthetic dataset in the ASL layout");
  simulate->add_option("-s,--scenario", sim_scenario, "Scenario YAML (default: triangle loop)");
  simulate->add_option("-o,--out", sim_out, "Output directory");
  simulate->add_option("--seed", sim_seed, "Random seed");

  std::string est_path, ref_path, eval_out;
  double eval_window = 5.0;
  auto* evaluate_cmd = app.add_subcommand("evaluate", "Compare a TUM trajectory with a reference");
  evaluate_cmd->add_option("-e,--estimate", est_path, "Estimated trajectory (TUM)")->required();
  evaluate_cmd->add_option("-r,--reference", ref_path, "Reference: TUM file or ASL dataset directory")->required();
  evaluate_cmd->add_option("--window", eval_window, "Alignment / evaluation window in seconds");
  evaluate_cmd->add_option("-o,--out", eval_out, "Directory for metrics.json and errors.csv");

  std::vector<int> only;
  auto* selftest = app.add_subcommand("selftest", "Run the acceptance suite");
  selftest->add_option("--only", only, "Criterion numbers to run");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return run_command(run_args);
    if (*simulate) {
      sim::Scenario scenario =
          sim_scenario.empty() ? sim::default_scenario(sim_seed.value_or(1)) : sim::load_scenario(sim_scenario);
      if (sim_seed) scenario.noise.seed = scenario.scene.seed = *sim_seed;
      const auto data = sim::simulate(scenario);
      sim::export_dataset(data, sim_out);
      // Rig description for `run --dataset ... --config <out>/rig.yaml`.
      RunConfig rig;
      rig.camera = data.camera;
      rig.extrinsics = data.extrinsics;
      rig.imu = data.imu_noise;
      save_run_config(rig, (std::filesystem::path(sim_out) / "rig.yaml").string());
      std::printf("wrote %s\n", sim_out.c_str());
      return 0;
    }
    if (*evaluate_cmd) {
      const Trajectory est = read_tum(est_path);
      Trajectory ref;
      if (std::filesystem::is_directory(ref_path)) {
        const Dataset d = load_euroc(ref_path);
        if (!d.truth) throw std::runtime_error(ref_path + " has no ground truth");
        ref = truth_trajectory(*d.truth);
      } else {
        ref = read_tum(ref_path);
      }
      const auto m = evaluate(est, ref, eval_window);
      print_metrics(m);
      if (!eval_out.empty()) {
        RunResult r;
        r.trajectory = est;
        emit_outputs(r, m, eval_out);
      }
      return 0;
    }
    if (*selftest) {
      const auto results = acceptance::run_all(only, std::cout);
      return acceptance::all_passed(results) ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
