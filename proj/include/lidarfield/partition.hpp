#pragma once

#include <string>
#include <utility>
#include <vector>

#include "lidarfield/cloud.hpp"
#include "lidarfield/geom.hpp"

namespace lidarfield::partition {

using cloud::FusedCloud;
using cloud::LidarScan;
using geom::Aabb;
using geom::Ray;

struct PartitionParams {
  double yaw_threshold_deg = 30.0;
  int max_scans = 50;
  int ground_trials = 512;
  double ground_inlier_dist = 0.15;
  double ground_normal_z_min = 0.8;
  double ground_min_inlier_frac = 0.2;
  double cluster_radius = 0.5;
  int cluster_min_size = 10;
  double parent_inflate = 1.0;
  double fuse_max_range = 50.0;
  std::uint64_t seed = 0;
};

struct ChildSegment {
  enum class Kind { kGround, kCluster };
  Aabb aabb;
  Kind kind = Kind::kCluster;
  int point_count = 0;
  int child_id = 0;
};

struct ParentBlock {
  Aabb aabb;       // tight AABB of the block's fused points, inflated
  int scan_begin = 0;  // [scan_begin, scan_end)
  int scan_end = 0;
  std::vector<ChildSegment> children;
};

struct SceneGraph {
  std::vector<ParentBlock> parents;

  // Index of the block owning a scan, -1 if none.
  int parent_of_scan(int scan_index) const;
};

// Consecutive covering scan ranges [begin, end): a range closes when the
// accumulated |yaw change| exceeds the threshold or it reaches max_scans.
std::vector<std::pair<int, int>> split_trajectory(const std::vector<Mat34>& poses,
                                                  double yaw_threshold_deg, int max_scans);

struct GroundSplit {
  std::vector<int> ground;
  std::vector<int> non_ground;
  bool plane_found = false;
  Vec3 plane_point = Vec3::Zero();
  Vec3 plane_normal = Vec3::UnitZ();
};

// Dominant near-horizontal plane by seeded randomized fitting. When no
// candidate reaches the inlier fraction, ground stays empty (plane_found
// false) and everything is returned as non-ground.
GroundSplit filter_ground(const std::vector<Vec3>& points, const PartitionParams& params);

// Connected components of the radius-neighborhood graph over a voxel hash
// grid (cell size = radius); components smaller than min_size are dropped.
// Components are ordered by their smallest contained point index.
std::vector<std::vector<int>> cluster_regions(const std::vector<Vec3>& points, double radius,
                                              int min_size);

// One child per cluster plus a ground child (id 0) when ground is nonempty.
std::vector<ChildSegment> build_children(const std::vector<Vec3>& ground_points,
                                         const std::vector<std::vector<Vec3>>& cluster_points);

// Sets each ray's child_index to the id of the smallest-volume child whose
// AABB contains the endpoint; rays contained by none stay unassigned.
void assign_ray_children(std::vector<Ray>& rays, const std::vector<ChildSegment>& children);

// Full construction: blocks over all poses, ground/cluster/children from the
// training scans of each block. Scans whose index is not in train_scan_ids
// contribute poses only.
SceneGraph build_scene_graph(const std::vector<LidarScan>& scans,
                             const std::vector<int>& train_scan_ids,
                             const PartitionParams& params);

void save_scene_graph(const SceneGraph& graph, const std::string& path);
SceneGraph load_scene_graph(const std::string& path);

}  // namespace lidarfield::partition
