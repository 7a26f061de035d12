#include "lidarfield/simlidar.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace lidarfield::simlidar {

namespace {
constexpr double kDegToRad = M_PI / 180.0;
}

void validate_pattern(const BeamPattern& pattern) {
  if (pattern.n_beams < 1) throw ConfigError("beam pattern: n_beams must be >= 1");
  if (pattern.horizontal_step_deg <= 0) {
    throw ConfigError("beam pattern: horizontal step must be positive");
  }
  const double ratio = 360.0 / pattern.horizontal_step_deg;
  if (std::abs(ratio - std::round(ratio)) > 1e-9) {
    throw ConfigError("beam pattern: horizontal step must divide 360 degrees");
  }
  if (pattern.vertical_fov_min_deg > pattern.vertical_fov_max_deg) {
    throw ConfigError("beam pattern: vertical FOV inverted");
  }
  if (pattern.max_range <= 0) throw ConfigError("beam pattern: max range must be positive");
}

std::optional<Hit> cast_ray_labeled(const AnalyticScene& scene, const Vec3& origin,
                                    const Vec3& direction, double max_range) {
  std::optional<Hit> best;
  const double denom = scene.ground_plane.normal.dot(direction);
  if (denom != 0.0) {
    const double t = scene.ground_plane.normal.dot(scene.ground_plane.point - origin) / denom;
    if (t > 1e-12 && t <= max_range) best = Hit{t, kGroundLabel};
  }
  for (std::size_t i = 0; i < scene.boxes.size(); ++i) {
    const auto hit = geom::ray_aabb_intersect(origin, direction, scene.boxes[i]);
    if (!hit || hit->t_enter <= 1e-12 || hit->t_enter > max_range) continue;
    if (!best || hit->t_enter < best->depth) {
      best = Hit{hit->t_enter, kFirstBoxLabel + static_cast<int>(i)};
    }
  }
  return best;
}

std::optional<double> cast_ray_exact(const AnalyticScene& scene, const Vec3& origin,
                                     const Vec3& direction, double max_range) {
  const auto hit = cast_ray_labeled(scene, origin, direction, max_range);
  if (!hit) return std::nullopt;
  return hit->depth;
}

LidarScan simulate_scan(const AnalyticScene& scene, const Mat34& pose,
                        const BeamPattern& pattern, std::vector<int>* labels) {
  validate_pattern(pattern);
  cloud::validate_pose(pose);
  LidarScan scan;
  scan.pose = pose;
  if (labels) labels->clear();

  const Vec3 origin = pose.col(3);
  const Eigen::Matrix3d rot = pose.leftCols<3>();
  const int n_azimuths =
      static_cast<int>(std::llround(360.0 / pattern.horizontal_step_deg));

  for (int b = 0; b < pattern.n_beams; ++b) {
    const double frac = pattern.n_beams == 1 ? 0.0
                                             : static_cast<double>(b) / (pattern.n_beams - 1);
    const double elev = kDegToRad * (pattern.vertical_fov_min_deg +
                                     frac * (pattern.vertical_fov_max_deg -
                                             pattern.vertical_fov_min_deg));
    const double ce = std::cos(elev), se = std::sin(elev);
    for (int a = 0; a < n_azimuths; ++a) {
      const double az = kDegToRad * pattern.horizontal_step_deg * a;
      const Vec3 dir_sensor(ce * std::cos(az), ce * std::sin(az), se);
      const auto hit = cast_ray_labeled(scene, origin, rot * dir_sensor, pattern.max_range);
      if (!hit) continue;
      scan.points.push_back(hit->depth * dir_sensor);
      if (labels) labels->push_back(hit->label);
    }
  }
  return scan;
}

std::optional<RayInterval> marching_oracle(const Vec3& origin, const Vec3& direction,
                                           const Aabb& box, double step) {
  if (step <= 0) throw ConfigError("marching_oracle: step must be positive");
  // March far enough to pass the farthest corner.
  double t_far = 0.0;
  for (int c = 0; c < 8; ++c) {
    const Vec3 corner((c & 1) ? box.max_corner.x() : box.min_corner.x(),
                      (c & 2) ? box.max_corner.y() : box.min_corner.y(),
                      (c & 4) ? box.max_corner.z() : box.min_corner.z());
    t_far = std::max(t_far, (corner - origin).dot(direction));
  }
  if (t_far <= 0) return std::nullopt;
  const long n_steps = static_cast<long>(std::ceil(t_far / step)) + 1;
  double first = -1.0, last = -1.0;
  for (long k = 0; k <= n_steps; ++k) {
    const double t = static_cast<double>(k) * step;
    if (box.contains(origin + t * direction)) {
      if (first < 0) first = t;
      last = t;
    }
  }
  if (first < 0) return std::nullopt;
  return RayInterval{first, last};
}

void save_scene(const AnalyticScene& scene, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write scene file: " + path);
  char buf[160];
  if (!scene.scene_id.empty()) out << "scene_id = " << scene.scene_id << "\n";
  std::snprintf(buf, sizeof(buf), "ground_z = %.12g\n",
                scene.ground_plane.point.z());
  out << buf;
  for (const Aabb& box : scene.boxes) {
    std::snprintf(buf, sizeof(buf), "box = %.12g %.12g %.12g %.12g %.12g %.12g\n",
                  box.min_corner.x(), box.min_corner.y(), box.min_corner.z(),
                  box.max_corner.x(), box.max_corner.y(), box.max_corner.z());
    out << buf;
  }
}

AnalyticScene load_scene(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open scene file: " + path);
  AnalyticScene scene;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw DataError("scene file line " + std::to_string(line_no) + ": expected key = value");
    }
    std::istringstream key_s(line.substr(0, eq));
    std::string key;
    key_s >> key;
    std::istringstream val(line.substr(eq + 1));
    if (key == "scene_id") {
      val >> scene.scene_id;
    } else if (key == "ground_z") {
      double z;
      if (!(val >> z)) throw DataError("scene file: bad ground_z");
      scene.ground_plane = Plane{Vec3(0, 0, z), Vec3::UnitZ()};
    } else if (key == "box") {
      Aabb box;
      if (!(val >> box.min_corner.x() >> box.min_corner.y() >> box.min_corner.z() >>
            box.max_corner.x() >> box.max_corner.y() >> box.max_corner.z())) {
        throw DataError("scene file: bad box line " + std::to_string(line_no));
      }
      if ((box.min_corner.array() > box.max_corner.array()).any()) {
        throw DataError("scene file: inverted box corners, line " + std::to_string(line_no));
      }
      scene.boxes.push_back(box);
    } else {
      throw DataError("scene file: unknown key '" + key + "'");
    }
  }
  return scene;
}

AnalyticScene make_boxworld(const BoxworldParams& params) {
  AnalyticScene scene;
  scene.scene_id = "boxworld";
  scene.ground_plane = Plane{Vec3::Zero(), Vec3::UnitZ()};
  Rng rng(params.seed);
  int attempts = 0;
  while (static_cast<int>(scene.boxes.size()) < params.n_boxes) {
    if (++attempts > 20000) {
      throw ConfigError("make_boxworld: could not place boxes with the given parameters");
    }
    const double sx = rng.uniform(params.box_side_min, params.box_side_max);
    const double sy = rng.uniform(params.box_side_min, params.box_side_max);
    const double sz = rng.uniform(params.box_side_min, params.box_side_max);
    const double cx = rng.uniform(2.0, params.trajectory_length - 2.0);
    const double side = rng.uniform01() < 0.5 ? -1.0 : 1.0;
    const double cy = side * rng.uniform(params.lateral_min, params.lateral_max);
    Aabb box;
    box.min_corner = Vec3(cx - 0.5 * sx, cy - 0.5 * sy, params.box_clearance);
    box.max_corner = Vec3(cx + 0.5 * sx, cy + 0.5 * sy, params.box_clearance + sz);
    // Keep the driving corridor clear.
    if (box.min_corner.y() < 1.5 && box.max_corner.y() > -1.5) continue;
    bool ok = true;
    for (const Aabb& other : scene.boxes) {
      const Aabb grown = geom::inflate(other, params.min_box_gap);
      if ((box.min_corner.array() <= grown.max_corner.array()).all() &&
          (box.max_corner.array() >= grown.min_corner.array()).all()) {
        ok = false;
        break;
      }
    }
    if (ok) scene.boxes.push_back(box);
  }
  return scene;
}

std::vector<Mat34> boxworld_trajectory(const BoxworldParams& params, int n_scans) {
  std::vector<Mat34> poses;
  poses.reserve(static_cast<std::size_t>(n_scans));
  for (int i = 0; i < n_scans; ++i) {
    const double frac = n_scans == 1 ? 0.0 : static_cast<double>(i) / (n_scans - 1);
    Mat34 pose = cloud::identity_pose();
    pose.col(3) = Vec3(frac * params.trajectory_length, 0.0, params.sensor_height);
    poses.push_back(pose);
  }
  return poses;
}

}  // namespace lidarfield::simlidar
