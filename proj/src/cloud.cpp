#include "lidarfield/cloud.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace lidarfield::cloud {

Mat34 identity_pose() {
  Mat34 pose = Mat34::Zero();
  pose.leftCols<3>().setIdentity();
  return pose;
}

void validate_pose(const Mat34& pose, double tol) {
  const Eigen::Matrix3d r = pose.leftCols<3>();
  const double err = (r.transpose() * r - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  if (!(err <= tol) || !pose.allFinite()) {
    throw DataError("pose rotation not orthonormal (error " + std::to_string(err) + ")");
  }
}

LidarScan load_kitti_scan(const std::string& path, const Mat34& pose, int scan_index) {
  validate_pose(pose);
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw DataError("cannot open scan file: " + path);
  const std::streamsize bytes = in.tellg();
  if (bytes % 16 != 0) {
    throw DataError("truncated scan file (size " + std::to_string(bytes) +
                    " not a multiple of 16): " + path);
  }
  in.seekg(0);
  const std::size_t n = static_cast<std::size_t>(bytes) / 16;
  std::vector<float> raw(n * 4);
  in.read(reinterpret_cast<char*>(raw.data()), bytes);
  if (!in) throw DataError("short read on scan file: " + path);

  LidarScan scan;
  scan.pose = pose;
  scan.scan_index = scan_index;
  scan.points.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    scan.points.emplace_back(raw[4 * i + 0], raw[4 * i + 1], raw[4 * i + 2]);
  }
  return scan;
}

void write_kitti_scan(const std::string& path, const std::vector<Vec3>& points) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write scan file: " + path);
  std::vector<float> raw;
  raw.reserve(points.size() * 4);
  for (const Vec3& p : points) {
    raw.push_back(static_cast<float>(p.x()));
    raw.push_back(static_cast<float>(p.y()));
    raw.push_back(static_cast<float>(p.z()));
    raw.push_back(0.0f);  // reflectance placeholder
  }
  out.write(reinterpret_cast<const char*>(raw.data()),
            static_cast<std::streamsize>(raw.size() * sizeof(float)));
  if (!out) throw DataError("write failed: " + path);
}

std::vector<Mat34> load_kitti_poses(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open poses file: " + path);
  std::vector<Mat34> poses;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    Mat34 pose;
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 4; ++c) {
        if (!(ls >> pose(r, c))) {
          throw DataError("poses line " + std::to_string(poses.size()) +
                          ": expected 12 numbers");
        }
      }
    }
    validate_pose(pose);
    poses.push_back(pose);
  }
  return poses;
}

void write_kitti_poses(const std::string& path, const std::vector<Mat34>& poses) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write poses file: " + path);
  char buf[64];
  for (const Mat34& pose : poses) {
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 4; ++c) {
        std::snprintf(buf, sizeof(buf), "%.12g", pose(r, c));
        out << buf << (r == 2 && c == 3 ? "\n" : " ");
      }
    }
  }
}

std::vector<Ray> make_rays(const LidarScan& scan) {
  std::vector<Ray> rays;
  rays.reserve(scan.points.size());
  const Vec3 origin = scan.origin_world();
  for (const Vec3& p : scan.points) {
    const Vec3 endpoint = scan.to_world(p);
    const double depth = (endpoint - origin).norm();
    if (depth < 1e-6) continue;
    Ray ray;
    ray.origin = origin;
    ray.direction = (endpoint - origin) / depth;
    ray.depth = depth;
    ray.endpoint = endpoint;
    rays.push_back(ray);
  }
  return rays;
}

FusedCloud fuse_scans(const std::vector<LidarScan>& scans, double max_range,
                      const std::vector<std::vector<std::uint8_t>>* keep_masks) {
  if (scans.empty()) throw DataError("fuse_scans: no scans");
  if (keep_masks && keep_masks->size() != scans.size()) {
    throw DataError("fuse_scans: mask count does not match scan count");
  }
  FusedCloud fused;
  for (std::size_t s = 0; s < scans.size(); ++s) {
    const LidarScan& scan = scans[s];
    const std::vector<std::uint8_t>* mask = keep_masks ? &(*keep_masks)[s] : nullptr;
    if (mask && mask->size() != scan.points.size()) {
      throw DataError("fuse_scans: mask size mismatch on scan " +
                      std::to_string(scan.scan_index));
    }
    const Vec3 origin = scan.origin_world();
    for (std::size_t i = 0; i < scan.points.size(); ++i) {
      if (mask && (*mask)[i] == 0) continue;
      const Vec3 endpoint = scan.to_world(scan.points[i]);
      const double depth = (endpoint - origin).norm();
      if (depth < 1e-6 || depth > max_range) continue;
      Ray ray;
      ray.origin = origin;
      ray.direction = (endpoint - origin) / depth;
      ray.depth = depth;
      ray.endpoint = endpoint;
      fused.rays.push_back(ray);
      fused.source_scan_of_ray.push_back(scan.scan_index);
    }
  }
  return fused;
}

namespace {
void write_point_line(std::ofstream& out, const Vec3& p) {
  char buf[96];
  std::snprintf(buf, sizeof(buf), "%.9g %.9g %.9g\n", p.x(), p.y(), p.z());
  out << buf;
}
}  // namespace

void export_ply(const std::vector<Vec3>& points, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write ply: " + path);
  out << "ply\nformat ascii 1.0\nelement vertex " << points.size()
      << "\nproperty float x\nproperty float y\nproperty float z\nend_header\n";
  for (const Vec3& p : points) write_point_line(out, p);
  if (!out) throw DataError("write failed: " + path);
}

void export_xyz(const std::vector<Vec3>& points, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write xyz: " + path);
  for (const Vec3& p : points) write_point_line(out, p);
  if (!out) throw DataError("write failed: " + path);
}

std::vector<Vec3> load_ply(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open ply: " + path);
  std::string line;
  std::size_t n_vertices = 0;
  bool ascii = false;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string tok;
    ls >> tok;
    if (tok == "format") {
      std::string fmt;
      ls >> fmt;
      ascii = (fmt == "ascii");
    } else if (tok == "element") {
      std::string what;
      ls >> what >> n_vertices;
      if (what != "vertex") throw DataError("ply: unsupported element " + what);
    } else if (tok == "end_header") {
      break;
    }
  }
  if (!ascii) throw DataError("ply: only ascii format supported: " + path);
  std::vector<Vec3> points;
  points.reserve(n_vertices);
  for (std::size_t i = 0; i < n_vertices; ++i) {
    Vec3 p;
    if (!(in >> p.x() >> p.y() >> p.z())) throw DataError("ply: truncated vertex data");
    points.push_back(p);
  }
  return points;
}

std::vector<Vec3> load_xyz(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open xyz: " + path);
  std::vector<Vec3> points;
  Vec3 p;
  while (in >> p.x() >> p.y() >> p.z()) points.push_back(p);
  return points;
}

}  // namespace lidarfield::cloud
