#pragma once

#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "lidarfield/cloud.hpp"
#include "lidarfield/geom.hpp"

namespace lidarfield::simlidar {

using cloud::LidarScan;
using geom::Aabb;
using geom::Ray;
using geom::RayInterval;

// Primitive labels: kGroundLabel for the plane, kFirstBoxLabel + i for box i.
constexpr int kGroundLabel = 0;
constexpr int kFirstBoxLabel = 1;

struct Plane {
  Vec3 point = Vec3::Zero();
  Vec3 normal = Vec3::UnitZ();  // unit length
};

struct AnalyticScene {
  Plane ground_plane;
  std::vector<Aabb> boxes;
  std::string scene_id;
};

struct BeamPattern {
  int n_beams = 32;
  double vertical_fov_min_deg = -25.0;
  double vertical_fov_max_deg = 3.0;
  double horizontal_step_deg = 1.0;
  double max_range = 50.0;
};

void validate_pattern(const BeamPattern& pattern);

struct Hit {
  double depth = 0.0;
  int label = kGroundLabel;
};

// Closest surface along the ray (plane or box faces), t > 0.
std::optional<Hit> cast_ray_labeled(const AnalyticScene& scene, const Vec3& origin,
                                    const Vec3& direction,
                                    double max_range = std::numeric_limits<double>::infinity());
std::optional<double> cast_ray_exact(const AnalyticScene& scene, const Vec3& origin,
                                     const Vec3& direction,
                                     double max_range = std::numeric_limits<double>::infinity());

// One ray per (beam, azimuth) cell; misses omitted; points in sensor frame.
// If labels is non-null it receives the source primitive of each point.
LidarScan simulate_scan(const AnalyticScene& scene, const Mat34& pose,
                        const BeamPattern& pattern, std::vector<int>* labels = nullptr);

// Brute-force ray/box interval: first and last sampled t inside the box.
// Independent oracle for the slab test; step > 0.
std::optional<RayInterval> marching_oracle(const Vec3& origin, const Vec3& direction,
                                           const Aabb& box, double step);

// Scene description text: "ground_z = <m>" plus one "box = x0 y0 z0 x1 y1 z1"
// line per box.
void save_scene(const AnalyticScene& scene, const std::string& path);
AnalyticScene load_scene(const std::string& path);

struct BoxworldParams {
  int n_boxes = 6;
  double trajectory_length = 30.0;
  double sensor_height = 1.7;
  double box_side_min = 1.0;
  double box_side_max = 4.0;
  double box_clearance = 0.3;   // gap between box bottoms and the ground
  double lateral_min = 3.0;     // box center offset from the trajectory line
  double lateral_max = 8.0;
  double min_box_gap = 2.0;     // min distance between box surfaces
  std::uint64_t seed = 7;
};

// Ground plane z=0 with boxes scattered left and right of a straight
// trajectory along +x. Deterministic for a fixed seed.
AnalyticScene make_boxworld(const BoxworldParams& params);

// Straight constant-height trajectory along +x matching make_boxworld.
std::vector<Mat34> boxworld_trajectory(const BoxworldParams& params, int n_scans);

}  // namespace lidarfield::simlidar
