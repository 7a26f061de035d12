#include "lidarfield/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "json.hpp"
#include "lidarfield/cloud.hpp"

namespace lidarfield::eval {

void validate_split(const SplitSpec& spec) {
  if (spec.mode == SplitSpec::Mode::kEveryKth) {
    if (spec.k < 2) throw ConfigError("split: k must be >= 2");
  } else {
    if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0)) {
      throw ConfigError("split: train_fraction must be in (0,1)");
    }
  }
}

Split split_scans(const std::vector<int>& scan_indices, const SplitSpec& spec) {
  if (scan_indices.empty()) throw DataError("split_scans: no scans");
  validate_split(spec);
  Split split;
  if (spec.mode == SplitSpec::Mode::kEveryKth) {
    const int offset = 2 % spec.k;  // matches the 1-in-5 sampling pattern
    for (int idx : scan_indices) {
      (idx % spec.k == offset ? split.test : split.train).push_back(idx);
    }
  } else {
    const std::size_t n = scan_indices.size();
    const std::size_t keep = static_cast<std::size_t>(
        std::ceil(spec.train_fraction * static_cast<double>(n)));
    std::vector<std::size_t> keep_positions;
    keep_positions.reserve(keep);
    if (spec.random_keep) {
      std::vector<std::size_t> all(n);
      for (std::size_t i = 0; i < n; ++i) all[i] = i;
      Rng rng(spec.seed);
      rng.shuffle(all);
      keep_positions.assign(all.begin(), all.begin() + static_cast<long>(keep));
      std::sort(keep_positions.begin(), keep_positions.end());
    } else {
      for (std::size_t j = 0; j < keep; ++j) keep_positions.push_back(j * n / keep);
    }
    std::size_t cursor = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (cursor < keep_positions.size() && keep_positions[cursor] == i) {
        split.train.push_back(scan_indices[i]);
        ++cursor;
      } else {
        split.test.push_back(scan_indices[i]);
      }
    }
  }
  if (split.train.empty() || split.test.empty()) {
    throw DataError("split_scans: one side of the split is empty");
  }
  return split;
}

DepthMetrics depth_metrics(const std::vector<std::optional<double>>& predictions,
                           const std::vector<double>& truths,
                           const std::vector<double>& thresholds) {
  if (predictions.size() != truths.size()) {
    throw DataError("depth_metrics: prediction/truth size mismatch");
  }
  DepthMetrics metrics;
  metrics.acc.assign(thresholds.size(), 0.0);
  double error_sum = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (!predictions[i]) {
      ++metrics.n_unresolved;
      continue;
    }
    ++metrics.n_resolved;
    const double err = std::abs(*predictions[i] - truths[i]);
    error_sum += err;
    for (std::size_t t = 0; t < thresholds.size(); ++t) {
      if (err <= thresholds[t]) metrics.acc[t] += 1.0;
    }
  }
  if (metrics.n_resolved == 0) throw DataError("depth_metrics: zero resolved rays");
  metrics.avg_error = error_sum / metrics.n_resolved;
  for (double& a : metrics.acc) a /= metrics.n_resolved;
  return metrics;
}

namespace {
std::uint64_t grid_key(long ix, long iy, long iz) {
  constexpr long kOffset = 1L << 20;
  constexpr std::uint64_t kMask = (1ULL << 21) - 1;
  return ((static_cast<std::uint64_t>(ix + kOffset) & kMask) << 42) |
         ((static_cast<std::uint64_t>(iy + kOffset) & kMask) << 21) |
         (static_cast<std::uint64_t>(iz + kOffset) & kMask);
}
}  // namespace

PointGrid::PointGrid(const std::vector<Vec3>& points, double cell)
    : cell_(cell), points_(points) {
  if (points.empty()) throw DataError("PointGrid: empty cloud");
  if (cell_ <= 0) throw ConfigError("PointGrid: cell size must be positive");
  for (std::size_t i = 0; i < points_.size(); ++i) {
    long c[3];
    for (int a = 0; a < 3; ++a) c[a] = static_cast<long>(std::floor(points_[i][a] / cell_));
    if (i == 0) {
      for (int a = 0; a < 3; ++a) lo_[a] = hi_[a] = c[a];
    } else {
      for (int a = 0; a < 3; ++a) {
        lo_[a] = std::min(lo_[a], c[a]);
        hi_[a] = std::max(hi_[a], c[a]);
      }
    }
    cells_[grid_key(c[0], c[1], c[2])].push_back(static_cast<int>(i));
  }
}

double PointGrid::nearest_distance_bounded(const Vec3& query, double cutoff) const {
  long qc[3];
  for (int a = 0; a < 3; ++a) qc[a] = static_cast<long>(std::floor(query[a] / cell_));
  long max_ring = 0;
  for (int a = 0; a < 3; ++a) {
    max_ring = std::max(max_ring, std::abs(qc[a] - lo_[a]));
    max_ring = std::max(max_ring, std::abs(hi_[a] - qc[a]));
  }
  double best_sq = std::numeric_limits<double>::infinity();
  for (long r = 0; r <= max_ring; ++r) {
    // Every point in ring r or beyond lies at least (r-1)*cell away, so the
    // search stays exact when it stops here.
    if (r > 0) {
      const double bound = (r - 1) * cell_;
      if (best_sq <= bound * bound) break;
      if (bound > cutoff) break;
    }
    for (long dx = -r; dx <= r; ++dx) {
      for (long dy = -r; dy <= r; ++dy) {
        for (long dz = -r; dz <= r; ++dz) {
          if (std::max({std::abs(dx), std::abs(dy), std::abs(dz)}) != r) continue;
          const auto it = cells_.find(grid_key(qc[0] + dx, qc[1] + dy, qc[2] + dz));
          if (it == cells_.end()) continue;
          for (int idx : it->second) {
            best_sq = std::min(best_sq,
                               (points_[static_cast<std::size_t>(idx)] - query).squaredNorm());
          }
        }
      }
    }
  }
  return std::sqrt(best_sq);
}

double PointGrid::nearest_distance(const Vec3& query) const {
  return nearest_distance_bounded(query, std::numeric_limits<double>::infinity());
}

bool PointGrid::within(const Vec3& query, double tau) const {
  return nearest_distance_bounded(query, tau) <= tau;
}

namespace {
double grid_cell_heuristic(const std::vector<Vec3>& cloud) {
  Vec3 lo = cloud[0], hi = cloud[0];
  for (const Vec3& p : cloud) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  const double diag = (hi - lo).norm();
  const double cell = diag / std::cbrt(static_cast<double>(cloud.size()) + 1.0);
  return std::max(cell, 1e-6);
}
}  // namespace

double chamfer_distance(const std::vector<Vec3>& cloud_a, const std::vector<Vec3>& cloud_b) {
  if (cloud_a.empty() || cloud_b.empty()) throw DataError("chamfer_distance: empty cloud");
  const PointGrid grid_a(cloud_a, grid_cell_heuristic(cloud_a));
  const PointGrid grid_b(cloud_b, grid_cell_heuristic(cloud_b));
  double sum_ab = 0.0, sum_ba = 0.0;
  for (const Vec3& p : cloud_a) sum_ab += grid_b.nearest_distance(p);
  for (const Vec3& p : cloud_b) sum_ba += grid_a.nearest_distance(p);
  return 0.5 * (sum_ab / cloud_a.size() + sum_ba / cloud_b.size());
}

double f_score(const std::vector<Vec3>& cloud_a, const std::vector<Vec3>& cloud_b, double tau) {
  if (cloud_a.empty() || cloud_b.empty()) throw DataError("f_score: empty cloud");
  const PointGrid grid_a(cloud_a, grid_cell_heuristic(cloud_a));
  const PointGrid grid_b(cloud_b, grid_cell_heuristic(cloud_b));
  double precision = 0.0, recall = 0.0;
  for (const Vec3& p : cloud_a) {
    if (grid_b.within(p, tau)) precision += 1.0;
  }
  for (const Vec3& p : cloud_b) {
    if (grid_a.within(p, tau)) recall += 1.0;
  }
  precision /= cloud_a.size();
  recall /= cloud_b.size();
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

MetricsReport evaluate_run(const std::vector<TestRay>& rays, const InferFn& infer_fn,
                           int threads, const std::string& json_path,
                           const std::string& csv_path, const std::string& ply_path) {
  if (rays.empty()) throw DataError("evaluate_run: no test rays");
  std::vector<RayOutcome> outcomes(rays.size());
  parallel_for(rays.size(), threads, [&](std::size_t begin, std::size_t end, int) {
    for (std::size_t i = begin; i < end; ++i) {
      auto [depth, rule] = infer_fn(rays[i], i);
      outcomes[i].ray_id = static_cast<int>(i);
      outcomes[i].rule = std::move(rule);
      outcomes[i].depth = depth;
      outcomes[i].truth = rays[i].truth;
    }
  });

  std::vector<std::optional<double>> predictions(rays.size());
  std::vector<double> truths(rays.size());
  std::vector<Vec3> predicted_cloud;
  std::vector<Vec3> truth_cloud;
  truth_cloud.reserve(rays.size());
  for (std::size_t i = 0; i < rays.size(); ++i) {
    predictions[i] = outcomes[i].depth;
    truths[i] = rays[i].truth;
    truth_cloud.push_back(rays[i].origin + rays[i].truth * rays[i].direction);
    if (outcomes[i].depth) {
      predicted_cloud.push_back(rays[i].origin + *outcomes[i].depth * rays[i].direction);
    }
  }

  const DepthMetrics dm = depth_metrics(predictions, truths, {0.2, 1.0});
  MetricsReport report;
  report.avg_error_m = dm.avg_error;
  report.acc_0p2 = dm.acc[0];
  report.acc_1p0 = dm.acc[1];
  report.n_resolved = dm.n_resolved;
  report.n_unresolved = dm.n_unresolved;
  report.cd_m = chamfer_distance(predicted_cloud, truth_cloud);
  report.f_0p2 = f_score(predicted_cloud, truth_cloud, 0.2);
  report.f_1p0 = f_score(predicted_cloud, truth_cloud, 1.0);

  if (!json_path.empty()) write_report_json(report, json_path);
  if (!csv_path.empty()) write_outcome_csv(outcomes, csv_path);
  if (!ply_path.empty()) cloud::export_ply(predicted_cloud, ply_path);
  return report;
}

void write_report_json(const MetricsReport& report, const std::string& path) {
  nlohmann::json j;
  j["avg_error_m"] = report.avg_error_m;
  j["acc_0p2"] = report.acc_0p2;
  j["acc_1p0"] = report.acc_1p0;
  j["cd_m"] = report.cd_m;
  j["f_0p2"] = report.f_0p2;
  j["f_1p0"] = report.f_1p0;
  j["n_resolved"] = report.n_resolved;
  j["n_unresolved"] = report.n_unresolved;
  std::ofstream out(path);
  if (!out) throw DataError("cannot write report: " + path);
  out << j.dump(2) << "\n";
}

void write_outcome_csv(const std::vector<RayOutcome>& outcomes, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write outcome csv: " + path);
  out << "ray_id,rule,depth,truth,error\n";
  char buf[160];
  for (const RayOutcome& o : outcomes) {
    if (o.depth) {
      std::snprintf(buf, sizeof(buf), "%d,%s,%.10g,%.10g,%.10g\n", o.ray_id, o.rule.c_str(),
                    *o.depth, o.truth, std::abs(*o.depth - o.truth));
    } else {
      std::snprintf(buf, sizeof(buf), "%d,%s,,%.10g,\n", o.ray_id, o.rule.c_str(), o.truth);
    }
    out << buf;
  }
}

}  // namespace lidarfield::eval
