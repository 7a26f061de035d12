#include "lidarfield/partition.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <fstream>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace lidarfield::partition {

int SceneGraph::parent_of_scan(int scan_index) const {
  for (std::size_t i = 0; i < parents.size(); ++i) {
    if (scan_index >= parents[i].scan_begin && scan_index < parents[i].scan_end) {
      return static_cast<int>(i);
    }
  }
  return -1;
}

namespace {

double yaw_of_pose(const Mat34& pose) { return std::atan2(pose(1, 0), pose(0, 0)); }

double wrap_angle(double a) {
  while (a > M_PI) a -= 2.0 * M_PI;
  while (a < -M_PI) a += 2.0 * M_PI;
  return a;
}

// 21-bit signed per-axis voxel key.
std::uint64_t cell_key(long ix, long iy, long iz) {
  constexpr long kOffset = 1L << 20;
  constexpr std::uint64_t kMask = (1ULL << 21) - 1;
  return ((static_cast<std::uint64_t>(ix + kOffset) & kMask) << 42) |
         ((static_cast<std::uint64_t>(iy + kOffset) & kMask) << 21) |
         (static_cast<std::uint64_t>(iz + kOffset) & kMask);
}

long cell_of(double v, double cell) { return static_cast<long>(std::floor(v / cell)); }

}  // namespace

std::vector<std::pair<int, int>> split_trajectory(const std::vector<Mat34>& poses,
                                                  double yaw_threshold_deg, int max_scans) {
  if (poses.empty()) throw DataError("split_trajectory: no poses");
  if (max_scans < 1) throw ConfigError("split_trajectory: max_scans must be >= 1");
  const double threshold = yaw_threshold_deg * M_PI / 180.0;
  std::vector<std::pair<int, int>> ranges;
  int begin = 0;
  double accumulated = 0.0;
  double prev_yaw = yaw_of_pose(poses[0]);
  for (int i = 1; i < static_cast<int>(poses.size()); ++i) {
    const double yaw = yaw_of_pose(poses[i]);
    const double step = std::abs(wrap_angle(yaw - prev_yaw));
    prev_yaw = yaw;
    if (accumulated + step > threshold || i - begin >= max_scans) {
      ranges.emplace_back(begin, i);
      begin = i;
      accumulated = 0.0;
    } else {
      accumulated += step;
    }
  }
  ranges.emplace_back(begin, static_cast<int>(poses.size()));
  return ranges;
}

GroundSplit filter_ground(const std::vector<Vec3>& points, const PartitionParams& params) {
  if (points.size() < 3) throw DataError("filter_ground: need at least 3 points");
  Rng rng(params.seed);
  const std::size_t n = points.size();

  Vec3 best_point = Vec3::Zero(), best_normal = Vec3::UnitZ();
  std::size_t best_count = 0;
  for (int trial = 0; trial < params.ground_trials; ++trial) {
    const std::size_t a = rng.uniform_index(n);
    const std::size_t b = rng.uniform_index(n);
    const std::size_t c = rng.uniform_index(n);
    if (a == b || b == c || a == c) continue;
    Vec3 normal = (points[b] - points[a]).cross(points[c] - points[a]);
    const double len = normal.norm();
    if (len < 1e-12) continue;
    normal /= len;
    if (std::abs(normal.z()) < params.ground_normal_z_min) continue;
    std::size_t count = 0;
    for (const Vec3& p : points) {
      if (std::abs(normal.dot(p - points[a])) <= params.ground_inlier_dist) ++count;
    }
    if (count > best_count) {
      best_count = count;
      best_point = points[a];
      best_normal = normal;
    }
  }

  GroundSplit split;
  const double min_inliers = params.ground_min_inlier_frac * static_cast<double>(n);
  if (static_cast<double>(best_count) < min_inliers) {
    split.plane_found = false;
    split.non_ground.resize(n);
    for (std::size_t i = 0; i < n; ++i) split.non_ground[i] = static_cast<int>(i);
    return split;
  }
  split.plane_found = true;
  split.plane_point = best_point;
  split.plane_normal = best_normal;
  for (std::size_t i = 0; i < n; ++i) {
    if (std::abs(best_normal.dot(points[i] - best_point)) <= params.ground_inlier_dist) {
      split.ground.push_back(static_cast<int>(i));
    } else {
      split.non_ground.push_back(static_cast<int>(i));
    }
  }
  return split;
}

std::vector<std::vector<int>> cluster_regions(const std::vector<Vec3>& points, double radius,
                                              int min_size) {
  if (radius <= 0) throw ConfigError("cluster_regions: radius must be positive");
  const std::size_t n = points.size();
  std::unordered_map<std::uint64_t, std::vector<int>> grid;
  grid.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    grid[cell_key(cell_of(points[i].x(), radius), cell_of(points[i].y(), radius),
                  cell_of(points[i].z(), radius))]
        .push_back(static_cast<int>(i));
  }

  const double radius_sq = radius * radius;
  std::vector<int> component(n, -1);
  std::vector<std::vector<int>> clusters;
  std::deque<int> frontier;
  for (std::size_t seed = 0; seed < n; ++seed) {
    if (component[seed] >= 0) continue;
    std::vector<int> members;
    frontier.clear();
    frontier.push_back(static_cast<int>(seed));
    component[seed] = static_cast<int>(clusters.size());
    while (!frontier.empty()) {
      const int i = frontier.front();
      frontier.pop_front();
      members.push_back(i);
      const Vec3& p = points[static_cast<std::size_t>(i)];
      const long cx = cell_of(p.x(), radius), cy = cell_of(p.y(), radius),
                 cz = cell_of(p.z(), radius);
      for (long dx = -1; dx <= 1; ++dx) {
        for (long dy = -1; dy <= 1; ++dy) {
          for (long dz = -1; dz <= 1; ++dz) {
            const auto it = grid.find(cell_key(cx + dx, cy + dy, cz + dz));
            if (it == grid.end()) continue;
            for (int j : it->second) {
              if (component[static_cast<std::size_t>(j)] >= 0) continue;
              if ((points[static_cast<std::size_t>(j)] - p).squaredNorm() <= radius_sq) {
                component[static_cast<std::size_t>(j)] = component[seed];
                frontier.push_back(j);
              }
            }
          }
        }
      }
    }
    if (static_cast<int>(members.size()) >= min_size) {
      std::sort(members.begin(), members.end());
      clusters.push_back(std::move(members));
    }
  }
  // Normalize ordering by the smallest contained point index.
  std::sort(clusters.begin(), clusters.end(),
            [](const std::vector<int>& a, const std::vector<int>& b) { return a[0] < b[0]; });
  return clusters;
}

std::vector<ChildSegment> build_children(const std::vector<Vec3>& ground_points,
                                         const std::vector<std::vector<Vec3>>& cluster_points) {
  std::vector<ChildSegment> children;
  int next_id = 0;
  if (!ground_points.empty()) {
    ChildSegment ground;
    ground.kind = ChildSegment::Kind::kGround;
    ground.aabb = geom::aabb_of_points(ground_points);
    ground.point_count = static_cast<int>(ground_points.size());
    ground.child_id = next_id++;
    children.push_back(ground);
  }
  for (const std::vector<Vec3>& pts : cluster_points) {
    if (pts.empty()) continue;
    ChildSegment child;
    child.kind = ChildSegment::Kind::kCluster;
    child.aabb = geom::aabb_of_points(pts);
    child.point_count = static_cast<int>(pts.size());
    child.child_id = next_id++;
    children.push_back(child);
  }
  return children;
}

void assign_ray_children(std::vector<Ray>& rays, const std::vector<ChildSegment>& children) {
  for (Ray& ray : rays) {
    int best = geom::kNoChild;
    double best_volume = 0.0;
    for (const ChildSegment& child : children) {
      if (!child.aabb.contains(ray.endpoint)) continue;
      const double volume = child.aabb.volume();
      if (best == geom::kNoChild || volume < best_volume ||
          (volume == best_volume && child.child_id < best)) {
        best = child.child_id;
        best_volume = volume;
      }
    }
    ray.child_index = best;
  }
}

SceneGraph build_scene_graph(const std::vector<LidarScan>& scans,
                             const std::vector<int>& train_scan_ids,
                             const PartitionParams& params) {
  if (scans.empty()) throw DataError("build_scene_graph: no scans");
  std::vector<Mat34> poses;
  poses.reserve(scans.size());
  for (const LidarScan& scan : scans) poses.push_back(scan.pose);
  const auto ranges = split_trajectory(poses, params.yaw_threshold_deg, params.max_scans);
  const std::unordered_set<int> train_set(train_scan_ids.begin(), train_scan_ids.end());

  SceneGraph graph;
  for (const auto& [begin, end] : ranges) {
    std::vector<LidarScan> block_scans;
    for (int s = begin; s < end; ++s) {
      if (train_set.count(scans[static_cast<std::size_t>(s)].scan_index) > 0) {
        block_scans.push_back(scans[static_cast<std::size_t>(s)]);
      }
    }
    if (block_scans.empty()) {
      throw DataError("parent block [" + std::to_string(begin) + "," + std::to_string(end) +
                      ") has no training scans");
    }
    const FusedCloud fused = cloud::fuse_scans(block_scans, params.fuse_max_range);
    if (fused.rays.empty()) {
      throw DataError("parent block [" + std::to_string(begin) + "," + std::to_string(end) +
                      ") has no points within range");
    }
    std::vector<Vec3> points;
    points.reserve(fused.rays.size());
    for (const Ray& ray : fused.rays) points.push_back(ray.endpoint);

    const GroundSplit ground = filter_ground(points, params);
    std::vector<Vec3> ground_points;
    ground_points.reserve(ground.ground.size());
    for (int i : ground.ground) ground_points.push_back(points[static_cast<std::size_t>(i)]);
    std::vector<Vec3> non_ground;
    non_ground.reserve(ground.non_ground.size());
    for (int i : ground.non_ground) non_ground.push_back(points[static_cast<std::size_t>(i)]);

    const auto clusters =
        cluster_regions(non_ground, params.cluster_radius, params.cluster_min_size);
    std::vector<std::vector<Vec3>> cluster_points;
    cluster_points.reserve(clusters.size());
    for (const auto& idx : clusters) {
      std::vector<Vec3>& pts = cluster_points.emplace_back();
      pts.reserve(idx.size());
      for (int i : idx) pts.push_back(non_ground[static_cast<std::size_t>(i)]);
    }

    ParentBlock block;
    block.scan_begin = scans[static_cast<std::size_t>(begin)].scan_index;
    block.scan_end = scans[static_cast<std::size_t>(end - 1)].scan_index + 1;
    block.aabb = geom::inflate(geom::aabb_of_points(points), params.parent_inflate);
    block.children = build_children(ground_points, cluster_points);
    if (block.children.empty()) {
      throw DataError("parent block [" + std::to_string(begin) + "," + std::to_string(end) +
                      ") produced no ground and no clusters");
    }
    graph.parents.push_back(std::move(block));
  }
  return graph;
}

void save_scene_graph(const SceneGraph& graph, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write scene graph: " + path);
  out << "scene_graph v1\n";
  out << "parents " << graph.parents.size() << "\n";
  char buf[256];
  for (const ParentBlock& block : graph.parents) {
    std::snprintf(buf, sizeof(buf),
                  "parent scans %d %d aabb %.12g %.12g %.12g %.12g %.12g %.12g children %zu\n",
                  block.scan_begin, block.scan_end, block.aabb.min_corner.x(),
                  block.aabb.min_corner.y(), block.aabb.min_corner.z(),
                  block.aabb.max_corner.x(), block.aabb.max_corner.y(),
                  block.aabb.max_corner.z(), block.children.size());
    out << buf;
    for (const ChildSegment& child : block.children) {
      std::snprintf(buf, sizeof(buf),
                    "child %d %s points %d aabb %.12g %.12g %.12g %.12g %.12g %.12g\n",
                    child.child_id,
                    child.kind == ChildSegment::Kind::kGround ? "ground" : "cluster",
                    child.point_count, child.aabb.min_corner.x(), child.aabb.min_corner.y(),
                    child.aabb.min_corner.z(), child.aabb.max_corner.x(),
                    child.aabb.max_corner.y(), child.aabb.max_corner.z());
      out << buf;
    }
  }
}

SceneGraph load_scene_graph(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open scene graph: " + path);
  std::string header;
  std::getline(in, header);
  if (header != "scene_graph v1") throw DataError("scene graph: unknown format: " + header);
  std::string word;
  std::size_t n_parents = 0;
  if (!(in >> word >> n_parents) || word != "parents") {
    throw DataError("scene graph: missing parent count");
  }
  SceneGraph graph;
  for (std::size_t p = 0; p < n_parents; ++p) {
    ParentBlock block;
    std::size_t n_children = 0;
    std::string kw_parent, kw_scans, kw_aabb, kw_children;
    if (!(in >> kw_parent >> kw_scans >> block.scan_begin >> block.scan_end >> kw_aabb >>
          block.aabb.min_corner.x() >> block.aabb.min_corner.y() >> block.aabb.min_corner.z() >>
          block.aabb.max_corner.x() >> block.aabb.max_corner.y() >> block.aabb.max_corner.z() >>
          kw_children >> n_children) ||
        kw_parent != "parent") {
      throw DataError("scene graph: malformed parent record");
    }
    for (std::size_t c = 0; c < n_children; ++c) {
      ChildSegment child;
      std::string kw_child, kind, kw_points, kw_box;
      if (!(in >> kw_child >> child.child_id >> kind >> kw_points >> child.point_count >>
            kw_box >> child.aabb.min_corner.x() >> child.aabb.min_corner.y() >>
            child.aabb.min_corner.z() >> child.aabb.max_corner.x() >>
            child.aabb.max_corner.y() >> child.aabb.max_corner.z()) ||
          kw_child != "child") {
        throw DataError("scene graph: malformed child record");
      }
      child.kind =
          kind == "ground" ? ChildSegment::Kind::kGround : ChildSegment::Kind::kCluster;
      block.children.push_back(child);
    }
    graph.parents.push_back(std::move(block));
  }
  return graph;
}

}  // namespace lidarfield::partition
