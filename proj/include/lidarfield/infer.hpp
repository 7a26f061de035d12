#pragma once

#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include "lidarfield/field.hpp"
#include "lidarfield/partition.hpp"

namespace lidarfield::infer {

using field::FieldModel;
using field::RenderResult;
using field::SamplingConfig;
using geom::Aabb;
using geom::RayInterval;
using partition::ChildSegment;

enum class SelectionRule { kSingle, kPeak, kMaxIntegral, kNone };
const char* rule_name(SelectionRule rule);

struct InferenceParams {
  double w_min = 1e-3;
  double inflate_step = 0.1;
  int max_inflate_steps = 5;
  double t0 = 0.0;
  double epsilon = 0.2;  // near/far bound inflation, same as training
};

// Child interval candidate along a query ray.
struct Candidate {
  int child_id = geom::kNoChild;
  RayInterval interval;  // within [t0, f_parent]
  double weight_integral = 0.0;
  bool contains_peak = false;
};

struct InferenceOutcome {
  std::optional<double> depth;
  int child_id = geom::kNoChild;
  SelectionRule rule = SelectionRule::kNone;
  int inflation_steps_used = 0;
};

// Hierarchically sampled render over the parent interval [t0, f_parent];
// valid is false when the ray misses the parent AABB.
struct RayRender {
  RenderResult render;
  double t_lo = 0.0;
  double f_parent = 0.0;
  bool valid = false;
};

RayRender render_parent_interval(const FieldModel& model, const Vec3& origin, const Vec3& dir,
                                 const Aabb& parent_aabb, const SamplingConfig& sampling,
                                 double t0, Rng& rng);

// Unnormalized expected depth over the full parent interval.
std::optional<double> infer_one_step(const RayRender& ray_render);

// Children whose (retry-inflated) AABB passes the sphere prefilter and the
// slab test; intervals carry the epsilon bound inflation and are clipped to
// the parent interval. When no child intersects, every AABB is inflated by
// inflate_step and the search repeats, up to max_inflate_steps.
std::vector<Candidate> candidate_children(const Vec3& origin, const Vec3& dir,
                                          const std::vector<ChildSegment>& children,
                                          const RayRender& ray_render,
                                          const InferenceParams& params, int* steps_used);

struct Selection {
  int index = -1;  // into the candidate list
  SelectionRule rule = SelectionRule::kNone;
};

// Single candidate -> that one; otherwise the candidate holding the global
// weight peak; otherwise the largest weight integral (ties: smaller
// t_enter). A selected candidate below w_min yields none.
Selection select_child(const std::vector<Candidate>& candidates, double w_min);

// Normalized mean depth over the interval, clamped into it.
double interval_mean_depth(const RenderResult& render, const RayInterval& interval);

InferenceOutcome infer_two_step(const Vec3& origin, const Vec3& dir,
                                const std::vector<ChildSegment>& children,
                                const RayRender& ray_render, const InferenceParams& params);

// MapRayCasting baseline: voxelized map + integer grid traversal; depth is
// the distance to the entry point of the first occupied voxel.
class VoxelMap {
 public:
  VoxelMap(const std::vector<Vec3>& points, double voxel_size);

  std::optional<double> raycast(const Vec3& origin, const Vec3& dir, double max_range) const;

  double voxel_size() const { return voxel_; }
  std::size_t occupied_count() const { return occupied_.size(); }

 private:
  double voxel_;
  std::unordered_set<std::uint64_t> occupied_;
};

}  // namespace lidarfield::infer
