#pragma once

#include <string>
#include <vector>

#include "lidarfield/config.hpp"

namespace lidarfield::pipeline {

using config::RunConfig;

struct Dataset {
  std::vector<cloud::LidarScan> scans;     // sorted by scan index
  std::vector<std::vector<int>> labels;    // per-point primitive labels, empty when absent
  bool has_labels = false;
};

// File layout inside dataset_dir / output_dir.
std::string scan_path(const std::string& dataset_dir, int index);
std::string label_path(const std::string& dataset_dir, int index);
std::string poses_path(const std::string& dataset_dir);
std::string scene_path(const std::string& dataset_dir);
std::string scene_graph_path(const RunConfig& config);
std::string checkpoint_path(const RunConfig& config, int parent, int epoch = -1);
std::string loss_log_path(const RunConfig& config);
std::string report_path(const RunConfig& config, config::InferMode mode);
std::string outcomes_path(const RunConfig& config, config::InferMode mode);
std::string predictions_path(const RunConfig& config, config::InferMode mode);

// Writes the toy dataset in the KITTI-compatible layout (velodyne/*.bin,
// poses.txt) plus per-point primitive labels and the analytic scene file.
void run_simulate(const RunConfig& config, bool force);

Dataset load_dataset(const RunConfig& config);

// Scan split for the configured SplitSpec over the dataset's scan indices.
eval::Split dataset_split(const Dataset& dataset, const RunConfig& config);

void run_partition(const RunConfig& config);

void run_train(const RunConfig& config);

// Test rays from held-out scans: true directions and depths, range-limited
// the same way as training data, tagged with the owning parent block.
std::vector<eval::TestRay> make_test_rays(const Dataset& dataset,
                                          const std::vector<int>& test_ids,
                                          const partition::SceneGraph& graph,
                                          double max_range);

// Inference over the test split with the configured mode; writes the outcome
// table and predicted cloud (and the JSON report for run_eval).
eval::MetricsReport run_eval(const RunConfig& config);
void run_infer(const RunConfig& config);

// simulate (when missing) -> partition -> train -> eval.
eval::MetricsReport run_full(const RunConfig& config, bool force);

}  // namespace lidarfield::pipeline
