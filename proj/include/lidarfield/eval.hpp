#pragma once

#include <functional>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "lidarfield/common.hpp"

namespace lidarfield::eval {

struct SplitSpec {
  enum class Mode { kEveryKth, kLossRate };
  Mode mode = Mode::kEveryKth;
  int k = 5;
  double train_fraction = 0.8;
  bool random_keep = false;  // loss-rate keep-set drawn at random instead of evenly spaced
  std::uint64_t seed = 0;
};

void validate_split(const SplitSpec& spec);

struct Split {
  std::vector<int> train;
  std::vector<int> test;
};

// every_kth: indices congruent to 2 (mod k) become test scans; loss_rate:
// an evenly spaced (or seeded random) keep-set of ceil(fraction*N) trains.
Split split_scans(const std::vector<int>& scan_indices, const SplitSpec& spec);

struct DepthMetrics {
  double avg_error = 0.0;
  std::vector<double> acc;  // one fraction per threshold
  int n_resolved = 0;
  int n_unresolved = 0;
};

DepthMetrics depth_metrics(const std::vector<std::optional<double>>& predictions,
                           const std::vector<double>& truths,
                           const std::vector<double>& thresholds);

// Exact nearest-neighbor queries over a uniform hash grid with expanding
// ring search.
class PointGrid {
 public:
  PointGrid(const std::vector<Vec3>& points, double cell);

  double nearest_distance(const Vec3& query) const;
  bool within(const Vec3& query, double tau) const;

 private:
  double nearest_distance_bounded(const Vec3& query, double cutoff) const;

  double cell_;
  long lo_[3] = {0, 0, 0};
  long hi_[3] = {0, 0, 0};
  std::vector<Vec3> points_;
  std::unordered_map<std::uint64_t, std::vector<int>> cells_;
};

// Symmetric mean nearest-neighbor distance.
double chamfer_distance(const std::vector<Vec3>& cloud_a, const std::vector<Vec3>& cloud_b);

// F = 2PR/(P+R) with precision/recall at threshold tau; 0 when P+R = 0.
double f_score(const std::vector<Vec3>& cloud_a, const std::vector<Vec3>& cloud_b, double tau);

struct MetricsReport {
  double avg_error_m = 0.0;
  double acc_0p2 = 0.0;
  double acc_1p0 = 0.0;
  double cd_m = 0.0;
  double f_0p2 = 0.0;
  double f_1p0 = 0.0;
  int n_resolved = 0;
  int n_unresolved = 0;
};

struct TestRay {
  Vec3 origin = Vec3::Zero();
  Vec3 direction = Vec3::UnitX();
  double truth = 0.0;
  int scan = 0;
  int parent = 0;
};

struct RayOutcome {
  int ray_id = 0;
  std::string rule;
  std::optional<double> depth;
  double truth = 0.0;
};

// Per-ray inference hook: returns (depth, rule name). The index is the ray's
// position in the test set, usable for per-ray seeding.
using InferFn = std::function<std::pair<std::optional<double>, std::string>(const TestRay&,
                                                                            std::size_t)>;

// Runs inference over all test rays, assembles the predicted cloud from the
// resolved depths, and computes all metrics against the true endpoints.
// Throws DataError when no ray resolves. Output paths may be empty to skip
// the corresponding file.
MetricsReport evaluate_run(const std::vector<TestRay>& rays, const InferFn& infer_fn,
                           int threads, const std::string& json_path,
                           const std::string& csv_path, const std::string& ply_path);

void write_report_json(const MetricsReport& report, const std::string& path);
void write_outcome_csv(const std::vector<RayOutcome>& outcomes, const std::string& path);

}  // namespace lidarfield::eval
