#pragma once

#include <optional>
#include <span>
#include <vector>

#include "lidarfield/common.hpp"

namespace lidarfield::geom {

constexpr int kNoChild = -1;

struct Aabb {
  Vec3 min_corner = Vec3::Zero();
  Vec3 max_corner = Vec3::Zero();

  Vec3 center() const { return 0.5 * (min_corner + max_corner); }
  Vec3 extent() const { return max_corner - min_corner; }
  double diagonal() const { return extent().norm(); }
  double volume() const { return extent().prod(); }
  // Radius of the circumscribed sphere.
  double sphere_radius() const { return 0.5 * diagonal(); }

  bool contains(const Vec3& p) const {
    return (p.array() >= min_corner.array()).all() &&
           (p.array() <= max_corner.array()).all();
  }
  bool contains(const Aabb& other) const {
    return contains(other.min_corner) && contains(other.max_corner);
  }
};

// One LiDAR return: a forward ray from the sensor origin to the measured
// endpoint, plus the segment it was assigned to (kNoChild if unassigned).
struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 direction = Vec3::UnitX();  // unit length
  double depth = 0.0;
  Vec3 endpoint = Vec3::Zero();
  int child_index = kNoChild;

  bool has_child() const { return child_index != kNoChild; }
};

// Parametric interval of a ray, 0 <= t_enter <= t_exit.
struct RayInterval {
  double t_enter = 0.0;
  double t_exit = 0.0;
  double length() const { return t_exit - t_enter; }
};

// Slab intersection test, clipped to t >= 0. Ties at box faces count as
// hits; zero direction components are handled through IEEE infinities.
std::optional<RayInterval> ray_aabb_intersect(const Vec3& origin, const Vec3& direction,
                                              const Aabb& box);
inline std::optional<RayInterval> ray_aabb_intersect(const Ray& ray, const Aabb& box) {
  return ray_aabb_intersect(ray.origin, ray.direction, box);
}

// True iff the box's circumscribed sphere intersects the ray line. Cheap
// superset filter for the slab test: never false when the slab test hits.
bool sphere_prefilter(const Vec3& origin, const Vec3& direction, const Aabb& box);
inline bool sphere_prefilter(const Ray& ray, const Aabb& box) {
  return sphere_prefilter(ray.origin, ray.direction, box);
}

Aabb inflate(const Aabb& box, double margin);

Aabb aabb_of_points(std::span<const Vec3> points);

}  // namespace lidarfield::geom
