#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lidarfield/geom.hpp"

namespace lidarfield::cloud {

using geom::Ray;

// One sensor revolution: points in sensor frame plus a rigid sensor->world pose.
struct LidarScan {
  std::vector<Vec3> points;  // sensor frame
  Mat34 pose = Mat34::Zero();
  int scan_index = 0;

  Vec3 origin_world() const { return pose.col(3); }
  Vec3 to_world(const Vec3& p_sensor) const {
    return pose.leftCols<3>() * p_sensor + pose.col(3);
  }
};

struct FusedCloud {
  std::vector<Ray> rays;  // world frame
  std::vector<int> source_scan_of_ray;
};

Mat34 identity_pose();

// Rotation part must be orthonormal within tol.
void validate_pose(const Mat34& pose, double tol = 1e-6);

// KITTI odometry layout: 16 bytes per point (x, y, z, reflectance as
// little-endian float32); reflectance is discarded.
LidarScan load_kitti_scan(const std::string& path, const Mat34& pose, int scan_index);
void write_kitti_scan(const std::string& path, const std::vector<Vec3>& points);

// Poses text file: 12 whitespace-separated numbers per line, row-major 3x4.
std::vector<Mat34> load_kitti_poses(const std::string& path);
void write_kitti_poses(const std::string& path, const std::vector<Mat34>& poses);

// World-frame rays from a scan; points closer than 1e-6 m to the origin are dropped.
std::vector<Ray> make_rays(const LidarScan& scan);

// Concatenates rays of all scans, keeping depths <= max_range. An optional
// per-scan keep mask (same layout as scan points, nonzero = keep) stands in
// for dataset-level movable-object filtering.
FusedCloud fuse_scans(const std::vector<LidarScan>& scans, double max_range,
                      const std::vector<std::vector<std::uint8_t>>* keep_masks = nullptr);

void export_ply(const std::vector<Vec3>& points, const std::string& path);
void export_xyz(const std::vector<Vec3>& points, const std::string& path);
std::vector<Vec3> load_ply(const std::string& path);
std::vector<Vec3> load_xyz(const std::string& path);

}  // namespace lidarfield::cloud
