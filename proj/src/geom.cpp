#include "lidarfield/geom.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace lidarfield::geom {

std::optional<RayInterval> ray_aabb_intersect(const Vec3& origin, const Vec3& direction,
                                              const Aabb& box) {
  double t_lo = 0.0;
  double t_hi = std::numeric_limits<double>::infinity();
  for (int axis = 0; axis < 3; ++axis) {
    double o = origin[axis];
    double d = direction[axis];
    if (d == 0.0) {
      // Parallel to this slab: hit only if the origin lies between the faces.
      if (o < box.min_corner[axis] || o > box.max_corner[axis]) return std::nullopt;
      continue;
    }
    double inv = 1.0 / d;
    double t0 = (box.min_corner[axis] - o) * inv;
    double t1 = (box.max_corner[axis] - o) * inv;
    if (t0 > t1) std::swap(t0, t1);
    t_lo = std::max(t_lo, t0);
    t_hi = std::min(t_hi, t1);
    if (t_lo > t_hi) return std::nullopt;
  }
  return RayInterval{t_lo, t_hi};
}

bool sphere_prefilter(const Vec3& origin, const Vec3& direction, const Aabb& box) {
  const Vec3 to_center = box.center() - origin;
  const double along = to_center.dot(direction);
  const double dist_sq = to_center.squaredNorm() - along * along;
  const double radius = box.sphere_radius();
  // Small slack so boundary-grazing slab hits never get filtered out.
  return dist_sq <= radius * radius + 1e-12;
}

Aabb inflate(const Aabb& box, double margin) {
  return Aabb{box.min_corner.array() - margin, box.max_corner.array() + margin};
}

Aabb aabb_of_points(std::span<const Vec3> points) {
  if (points.empty()) throw DataError("aabb_of_points: empty point set");
  Aabb box{points[0], points[0]};
  for (const Vec3& p : points) {
    box.min_corner = box.min_corner.cwiseMin(p);
    box.max_corner = box.max_corner.cwiseMax(p);
  }
  return box;
}

}  // namespace lidarfield::geom
