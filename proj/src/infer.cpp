#include "lidarfield/infer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace lidarfield::infer {

const char* rule_name(SelectionRule rule) {
  switch (rule) {
    case SelectionRule::kSingle: return "single";
    case SelectionRule::kPeak: return "peak";
    case SelectionRule::kMaxIntegral: return "max_integral";
    case SelectionRule::kNone: return "none";
  }
  return "none";
}

RayRender render_parent_interval(const FieldModel& model, const Vec3& origin, const Vec3& dir,
                                 const Aabb& parent_aabb, const SamplingConfig& sampling,
                                 double t0, Rng& rng) {
  RayRender out;
  const auto parent = geom::ray_aabb_intersect(origin, dir, parent_aabb);
  if (!parent) return out;
  out.t_lo = std::max(t0, parent->t_enter);
  out.f_parent = parent->t_exit;
  if (out.f_parent <= out.t_lo) return out;

  const RayInterval interval{out.t_lo, out.f_parent};
  std::vector<double> coarse = field::sample_coarse_uniform(interval, sampling.n_coarse, &rng);
  Eigen::Matrix<double, Eigen::Dynamic, 3> pts(coarse.size(), 3);
  for (std::size_t i = 0; i < coarse.size(); ++i) {
    pts.row(static_cast<Eigen::Index>(i)) = (origin + coarse[i] * dir).transpose();
  }
  Eigen::VectorXd sigma = field::forward_sigma(model, pts);
  const RenderResult coarse_render =
      field::render_weights(coarse, {sigma.data(), sigma.data() + sigma.size()});

  std::vector<double> fine = field::sample_fine(coarse_render, sampling.n_fine, rng);
  std::vector<double> merged(coarse.size() + fine.size());
  std::merge(coarse.begin(), coarse.end(), fine.begin(), fine.end(), merged.begin());
  merged.erase(std::unique(merged.begin(), merged.end()), merged.end());

  Eigen::Matrix<double, Eigen::Dynamic, 3> union_pts(merged.size(), 3);
  for (std::size_t i = 0; i < merged.size(); ++i) {
    union_pts.row(static_cast<Eigen::Index>(i)) = (origin + merged[i] * dir).transpose();
  }
  Eigen::VectorXd union_sigma = field::forward_sigma(model, union_pts);
  out.render = field::render_weights(
      merged, {union_sigma.data(), union_sigma.data() + union_sigma.size()});
  out.valid = true;
  return out;
}

std::optional<double> infer_one_step(const RayRender& ray_render) {
  if (!ray_render.valid) return std::nullopt;
  return field::render_depth(ray_render.render, ray_render.t_lo, ray_render.f_parent);
}

std::vector<Candidate> candidate_children(const Vec3& origin, const Vec3& dir,
                                          const std::vector<ChildSegment>& children,
                                          const RayRender& ray_render,
                                          const InferenceParams& params, int* steps_used) {
  std::vector<Candidate> candidates;
  int step = 0;
  for (; step <= params.max_inflate_steps; ++step) {
    const double margin = step * params.inflate_step;
    for (const ChildSegment& child : children) {
      const Aabb box = margin > 0 ? geom::inflate(child.aabb, margin) : child.aabb;
      if (!geom::sphere_prefilter(origin, dir, box)) continue;
      const auto hit = geom::ray_aabb_intersect(origin, dir, box);
      if (!hit) continue;
      Candidate cand;
      cand.child_id = child.child_id;
      cand.interval.t_enter = std::max(hit->t_enter - params.epsilon, ray_render.t_lo);
      cand.interval.t_exit = std::min(hit->t_exit + params.epsilon, ray_render.f_parent);
      if (cand.interval.t_enter > cand.interval.t_exit) continue;
      cand.weight_integral =
          field::weight_mass(ray_render.render, cand.interval.t_enter, cand.interval.t_exit);
      const int peak = ray_render.render.peak_index();
      cand.contains_peak = peak >= 0 &&
                           ray_render.render.t[static_cast<std::size_t>(peak)] >=
                               cand.interval.t_enter &&
                           ray_render.render.t[static_cast<std::size_t>(peak)] <=
                               cand.interval.t_exit;
      candidates.push_back(cand);
    }
    if (!candidates.empty()) break;
  }
  if (steps_used) *steps_used = std::min(step, params.max_inflate_steps);
  return candidates;
}

Selection select_child(const std::vector<Candidate>& candidates, double w_min) {
  Selection sel;
  if (candidates.empty()) return sel;
  if (candidates.size() == 1) {
    sel.index = 0;
    sel.rule = SelectionRule::kSingle;
  } else {
    // Prefer the candidate holding the global weight peak.
    int best = -1;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      if (!candidates[i].contains_peak) continue;
      if (best < 0 ||
          candidates[i].interval.t_enter < candidates[static_cast<std::size_t>(best)].interval.t_enter ||
          (candidates[i].interval.t_enter ==
               candidates[static_cast<std::size_t>(best)].interval.t_enter &&
           candidates[i].child_id < candidates[static_cast<std::size_t>(best)].child_id)) {
        best = static_cast<int>(i);
      }
    }
    if (best >= 0) {
      sel.index = best;
      sel.rule = SelectionRule::kPeak;
    } else {
      for (std::size_t i = 0; i < candidates.size(); ++i) {
        if (best < 0) {
          best = static_cast<int>(i);
          continue;
        }
        const Candidate& a = candidates[i];
        const Candidate& b = candidates[static_cast<std::size_t>(best)];
        if (a.weight_integral > b.weight_integral ||
            (a.weight_integral == b.weight_integral &&
             (a.interval.t_enter < b.interval.t_enter ||
              (a.interval.t_enter == b.interval.t_enter && a.child_id < b.child_id)))) {
          best = static_cast<int>(i);
        }
      }
      sel.index = best;
      sel.rule = SelectionRule::kMaxIntegral;
    }
  }
  if (candidates[static_cast<std::size_t>(sel.index)].weight_integral < w_min) {
    return Selection{};
  }
  return sel;
}

double interval_mean_depth(const RenderResult& render, const RayInterval& interval) {
  double mass = 0.0, moment = 0.0;
  for (std::size_t k = 0; k < render.t.size(); ++k) {
    const double t = render.t[k];
    if (t < interval.t_enter || t > interval.t_exit) continue;
    mass += render.weight[k];
    moment += render.weight[k] * t;
  }
  if (mass <= 0.0) return interval.t_enter;
  return std::clamp(moment / mass, interval.t_enter, interval.t_exit);
}

InferenceOutcome infer_two_step(const Vec3& origin, const Vec3& dir,
                                const std::vector<ChildSegment>& children,
                                const RayRender& ray_render, const InferenceParams& params) {
  InferenceOutcome outcome;
  if (!ray_render.valid) return outcome;
  int steps = 0;
  const auto candidates = candidate_children(origin, dir, children, ray_render, params, &steps);
  outcome.inflation_steps_used = steps;
  const Selection sel = select_child(candidates, params.w_min);
  outcome.rule = sel.rule;
  if (sel.rule == SelectionRule::kNone) return outcome;
  const Candidate& chosen = candidates[static_cast<std::size_t>(sel.index)];
  outcome.child_id = chosen.child_id;
  outcome.depth = interval_mean_depth(ray_render.render, chosen.interval);
  return outcome;
}

namespace {
std::uint64_t voxel_key(long ix, long iy, long iz) {
  constexpr long kOffset = 1L << 20;
  constexpr std::uint64_t kMask = (1ULL << 21) - 1;
  return ((static_cast<std::uint64_t>(ix + kOffset) & kMask) << 42) |
         ((static_cast<std::uint64_t>(iy + kOffset) & kMask) << 21) |
         (static_cast<std::uint64_t>(iz + kOffset) & kMask);
}
}  // namespace

VoxelMap::VoxelMap(const std::vector<Vec3>& points, double voxel_size) : voxel_(voxel_size) {
  if (voxel_size <= 0) throw ConfigError("VoxelMap: voxel size must be positive");
  occupied_.reserve(points.size());
  for (const Vec3& p : points) {
    occupied_.insert(voxel_key(static_cast<long>(std::floor(p.x() / voxel_)),
                               static_cast<long>(std::floor(p.y() / voxel_)),
                               static_cast<long>(std::floor(p.z() / voxel_))));
  }
}

std::optional<double> VoxelMap::raycast(const Vec3& origin, const Vec3& dir,
                                        double max_range) const {
  long cell[3];
  long step[3];
  double t_max[3];
  double t_delta[3];
  for (int a = 0; a < 3; ++a) {
    cell[a] = static_cast<long>(std::floor(origin[a] / voxel_));
    if (dir[a] > 0) {
      step[a] = 1;
      t_max[a] = ((cell[a] + 1) * voxel_ - origin[a]) / dir[a];
      t_delta[a] = voxel_ / dir[a];
    } else if (dir[a] < 0) {
      step[a] = -1;
      t_max[a] = (cell[a] * voxel_ - origin[a]) / dir[a];
      t_delta[a] = -voxel_ / dir[a];
    } else {
      step[a] = 0;
      t_max[a] = std::numeric_limits<double>::infinity();
      t_delta[a] = std::numeric_limits<double>::infinity();
    }
  }
  double t_entry = 0.0;
  while (t_entry <= max_range) {
    if (occupied_.count(voxel_key(cell[0], cell[1], cell[2])) > 0) return t_entry;
    int axis = 0;
    if (t_max[1] < t_max[axis]) axis = 1;
    if (t_max[2] < t_max[axis]) axis = 2;
    t_entry = t_max[axis];
    cell[axis] += step[axis];
    t_max[axis] += t_delta[axis];
  }
  return std::nullopt;
}

}  // namespace lidarfield::infer
