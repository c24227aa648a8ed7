#include "avio/dataset.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

namespace avio {

namespace fs = std::filesystem;

namespace {

[[noreturn]] void fail(const std::string& path, int line, const std::string& what) {
  throw LoadError(path + ":" + std::to_string(line) + ": " + what);
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    const auto b = cell.find_first_not_of(" \t\r");
    const auto e = cell.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? std::string() : cell.substr(b, e - b + 1));
  }
  return out;
}

int64_t parse_ns(const std::string& s, const std::string& path, int line) {
  try {
    size_t pos = 0;
    const long long v = std::stoll(s, &pos);
    if (pos != s.size()) fail(path, line, "bad timestamp '" + s + "'");
    return v;
  } catch (const std::logic_error&) {
    fail(path, line, "bad timestamp '" + s + "'");
  }
}

double parse_double(const std::string& s, const std::string& path, int line) {
  try {
    size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) fail(path, line, "bad number '" + s + "'");
    return v;
  } catch (const std::logic_error&) {
    fail(path, line, "bad number '" + s + "'");
  }
}

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw LoadError(path + ": cannot open");
  return in;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw LoadError(path + ": cannot write");
  return out;
}

// Calls fn(cells, line_number) for every non-comment, non-empty row.
template <typename Fn>
void for_each_row(const std::string& path, Fn fn) {
  std::ifstream in = open_in(path);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty() || line[0] == '#' || line.find_first_not_of(" \t\r") == std::string::npos) continue;
    fn(split_csv(line), n);
  }
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

std::vector<FrameData> read_detections(const std::string& path) {
  std::ifstream in = open_in(path);
  std::vector<FrameData> frames;
  std::string line;
  int n = 0;
  int seg_left = 0;
  int pt_left = 0;
  while (std::getline(in, line)) {
    ++n;
    std::istringstream ss(line);
    std::string tag;
    if (!(ss >> tag) || tag[0] == '#') continue;
    if (tag == "F") {
      if (seg_left || pt_left) fail(path, n, "previous frame is incomplete");
      std::string ts;
      FrameData f;
      if (!(ss >> ts >> seg_left >> pt_left) || seg_left < 0 || pt_left < 0) fail(path, n, "malformed frame header");
      f.t_ns = parse_ns(ts, path, n);
      if (!frames.empty() && f.t_ns <= frames.back().t_ns) fail(path, n, "timestamps not increasing");
      frames.push_back(std::move(f));
    } else if (tag == "S") {
      if (frames.empty() || seg_left == 0) fail(path, n, "unexpected segment record");
      double x1, y1, x2, y2;
      if (!(ss >> x1 >> y1 >> x2 >> y2)) fail(path, n, "malformed segment record");
      int truth = -1;
      if (!(ss >> truth)) truth = -1;
      frames.back().segments.emplace_back(Vec2(x1, y1), Vec2(x2, y2));
      frames.back().segment_truth.push_back(truth);
      --seg_left;
    } else if (tag == "P") {
      if (frames.empty() || pt_left == 0) fail(path, n, "unexpected point record");
      PointDetection p;
      double u, v;
      if (!(ss >> p.id >> u >> v)) fail(path, n, "malformed point record");
      p.px = {u, v};
      frames.back().points.push_back(p);
      --pt_left;
    } else {
      fail(path, n, "unknown record '" + tag + "'");
    }
  }
  if (seg_left || pt_left) fail(path, n, "last frame is incomplete");
  return frames;
}

void write_detections(const std::vector<FrameData>& frames, const std::string& path) {
  std::ofstream out = open_out(path);
  out << "# F <timestamp_ns> <num_segments> <num_points>\n"
      << "# S <x1> <y1> <x2> <y2> [<truth_id>]  (undistorted pixels)\n"
      << "# P <id> <u> <v>  (raw pixels)\n";
  for (const auto& f : frames) {
    out << "F " << f.t_ns << ' ' << f.segments.size() << ' ' << f.points.size() << '\n';
    for (size_t i = 0; i < f.segments.size(); ++i) {
      const auto& s = f.segments[i];
      out << "S " << fmt(s.a.x()) << ' ' << fmt(s.a.y()) << ' ' << fmt(s.b.x()) << ' ' << fmt(s.b.y());
      if (i < f.segment_truth.size() && f.segment_truth[i] >= 0) out << ' ' << f.segment_truth[i];
      out << '\n';
    }
    for (const auto& p : f.points) out << "P " << p.id << ' ' << fmt(p.px.x()) << ' ' << fmt(p.px.y()) << '\n';
  }
}

Dataset load_euroc(const std::string& dir) {
  Dataset d;
  const std::string imu_path = (fs::path(dir) / "imu0" / "data.csv").string();
  const std::string cam_path = (fs::path(dir) / "cam0" / "data.csv").string();
  for_each_row(imu_path, [&](const std::vector<std::string>& c, int n) {
    if (c.size() != 7) fail(imu_path, n, "expected 7 columns, got " + std::to_string(c.size()));
    const int64_t t = parse_ns(c[0], imu_path, n);
    if (!d.imu_t_ns.empty() && t <= d.imu_t_ns.back()) fail(imu_path, n, "timestamps not increasing");
    ImuSample s;
    s.t = static_cast<double>(t) * 1e-9;
    for (int k = 0; k < 3; ++k) {
      s.gyro[k] = parse_double(c[1 + k], imu_path, n);
      s.accel[k] = parse_double(c[4 + k], imu_path, n);
    }
    d.imu_t_ns.push_back(t);
    d.imu.push_back(s);
  });
  for_each_row(cam_path, [&](const std::vector<std::string>& c, int n) {
    if (c.size() != 2) fail(cam_path, n, "expected 2 columns, got " + std::to_string(c.size()));
    FrameData f;
    f.t_ns = parse_ns(c[0], cam_path, n);
    if (!d.frames.empty() && f.t_ns <= d.frames.back().t_ns) fail(cam_path, n, "timestamps not increasing");
    f.image = c[1];
    d.frames.push_back(std::move(f));
  });

  const fs::path det = fs::path(dir) / "cam0" / "detections.txt";
  if (fs::exists(det)) {
    std::map<int64_t, FrameData*> by_time;
    for (auto& f : d.frames) by_time[f.t_ns] = &f;
    for (auto& rec : read_detections(det.string())) {
      const auto it = by_time.find(rec.t_ns);
      if (it == by_time.end()) {
        throw LoadError(det.string() + ": frame " + std::to_string(rec.t_ns) + " is not listed in cam0/data.csv");
      }
      it->second->segments = std::move(rec.segments);
      it->second->segment_truth = std::move(rec.segment_truth);
      it->second->points = std::move(rec.points);
    }
  }

  const fs::path gt = fs::path(dir) / "state_groundtruth_estimate0" / "data.csv";
  if (fs::exists(gt)) {
    const std::string gt_path = gt.string();
    std::vector<GroundTruthRow> rows;
    for_each_row(gt_path, [&](const std::vector<std::string>& c, int n) {
      if (c.size() < 8) fail(gt_path, n, "expected at least 8 columns, got " + std::to_string(c.size()));
      std::vector<double> v;
      for (size_t k = 1; k < c.size(); ++k) v.push_back(parse_double(c[k], gt_path, n));
      GroundTruthRow r;
      r.t_ns = parse_ns(c[0], gt_path, n);
      if (!rows.empty() && r.t_ns <= rows.back().t_ns) fail(gt_path, n, "timestamps not increasing");
      r.pose.translation = Vec3(v[0], v[1], v[2]);
      r.pose.rotation = Rotation(Quat(v[3], v[4], v[5], v[6]));
      if (v.size() >= 16) {
        r.velocity = Vec3(v[7], v[8], v[9]);
        r.gyro_bias = Vec3(v[10], v[11], v[12]);
        r.accel_bias = Vec3(v[13], v[14], v[15]);
      }
      rows.push_back(r);
    });
    d.truth = std::move(rows);
  }
  return d;
}

void write_euroc(const Dataset& data, const std::string& dir) {
  const fs::path root(dir);
  std::error_code ec;
  fs::create_directories(root / "imu0", ec);
  fs::create_directories(root / "cam0", ec);
  if (ec) throw LoadError(dir + ": cannot create directories: " + ec.message());

  {
    std::ofstream out = open_out((root / "imu0" / "data.csv").string());
    out << "#timestamp [ns],w_RS_S_x [rad s^-1],w_RS_S_y [rad s^-1],w_RS_S_z [rad s^-1],"
           "a_RS_S_x [m s^-2],a_RS_S_y [m s^-2],a_RS_S_z [m s^-2]\n";
    for (size_t i = 0; i < data.imu.size(); ++i) {
      const auto& s = data.imu[i];
      out << data.imu_t_ns[i];
      for (int k = 0; k < 3; ++k) out << ',' << fmt(s.gyro[k]);
      for (int k = 0; k < 3; ++k) out << ',' << fmt(s.accel[k]);
      out << '\n';
    }
  }
  {
    std::ofstream out = open_out((root / "cam0" / "data.csv").string());
    out << "#timestamp [ns],filename\n";
    for (const auto& f : data.frames) {
      out << f.t_ns << ',' << (f.image.empty() ? std::to_string(f.t_ns) + ".png" : f.image) << '\n';
    }
  }
  write_detections(data.frames, (root / "cam0" / "detections.txt").string());
  if (data.truth) {
    fs::create_directories(root / "state_groundtruth_estimate0", ec);
    std::ofstream out = open_out((root / "state_groundtruth_estimate0" / "data.csv").string());
    out << "#timestamp,p_RS_R_x [m],p_RS_R_y [m],p_RS_R_z [m],q_RS_w [],q_RS_x [],q_RS_y [],q_RS_z [],"
           "v_RS_R_x [m s^-1],v_RS_R_y [m s^-1],v_RS_R_z [m s^-1],b_w_RS_S_x [rad s^-1],b_w_RS_S_y [rad s^-1],"
           "b_w_RS_S_z [rad s^-1],b_a_RS_S_x [m s^-2],b_a_RS_S_y [m s^-2],b_a_RS_S_z [m s^-2]\n";
    for (const auto& r : *data.truth) {
      const Quat q = r.pose.rotation.quat();
      out << r.t_ns;
      for (double v : {r.pose.translation.x(), r.pose.translation.y(), r.pose.translation.z(), q.w(), q.x(), q.y(),
                       q.z(), r.velocity.x(), r.velocity.y(), r.velocity.z(), r.gyro_bias.x(), r.gyro_bias.y(),
                       r.gyro_bias.z(), r.accel_bias.x(), r.accel_bias.y(), r.accel_bias.z()}) {
        out << ',' << fmt(v);
      }
      out << '\n';
    }
  }
}

Trajectory truth_trajectory(const std::vector<GroundTruthRow>& rows) {
  Trajectory t;
  t.reserve(rows.size());
  for (const auto& r : rows) t.push_back({static_cast<double>(r.t_ns) * 1e-9, r.pose});
  return t;
}

std::string format_tum_line(double t, const Pose& pose) {
  auto num = [](double v) {
    if (v == 0.0) return std::string("0");
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.15g", v);
    return std::string(buf);
  };
  const Quat q = pose.rotation.quat();
  char ts[40];
  std::snprintf(ts, sizeof(ts), "%.9f", t);
  std::string out = ts;
  for (double v : {pose.translation.x(), pose.translation.y(), pose.translation.z(), q.x(), q.y(), q.z(), q.w()}) {
    out += ' ';
    out += num(v);
  }
  return out;
}

void write_tum(const Trajectory& traj, const std::string& path) {
  std::ofstream out = open_out(path);
  out << "# timestamp tx ty tz qx qy qz qw\n";
  for (const auto& s : traj) out << format_tum_line(s.t, s.pose) << '\n';
}

Trajectory read_tum(const std::string& path) {
  std::ifstream in = open_in(path);
  Trajectory traj;
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    double t, x, y, z, qx, qy, qz, qw;
    if (!(ss >> t >> x >> y >> z >> qx >> qy >> qz >> qw)) fail(path, n, "expected 8 columns");
    if (!traj.empty() && t <= traj.back().t) fail(path, n, "timestamps not increasing");
    traj.push_back({t, Pose{Rotation(Quat(qw, qx, qy, qz)), Vec3(x, y, z)}});
  }
  return traj;
}

}  // namespace avio
