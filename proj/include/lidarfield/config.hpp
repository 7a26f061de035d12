#pragma once

#include <string>

#include "lidarfield/eval.hpp"
#include "lidarfield/field.hpp"
#include "lidarfield/infer.hpp"
#include "lidarfield/partition.hpp"
#include "lidarfield/simlidar.hpp"
#include "lidarfield/train.hpp"

namespace lidarfield::config {

enum class InferMode { kOneStep, kTwoStep, kRaycast };
const char* infer_mode_name(InferMode mode);

struct DataPaths {
  std::string dataset_dir = "runs/boxworld/dataset";
  std::string output_dir = "runs/boxworld/out";
  std::string mask_dir;  // optional per-scan keep masks
};

struct SimSection {
  simlidar::BeamPattern pattern;
  simlidar::BoxworldParams boxworld;
  int n_scans = 20;
};

// Whole-pipeline configuration: flat key = value text with [section]
// headers; unknown sections or keys are rejected.
struct RunConfig {
  DataPaths data;
  SimSection sim;
  eval::SplitSpec split;
  partition::PartitionParams partition;
  field::FieldConfig field;
  field::SamplingConfig sampling;
  train::LossConfig loss;
  train::TrainConfig train;
  infer::InferenceParams infer;
  InferMode infer_mode = InferMode::kTwoStep;
  double raycast_voxel = 0.5;
  int threads = 0;  // 0 = hardware concurrency

  void validate() const;
};

// Presets: "desk" is sized for a single workstation core, "paper" follows
// the published training setup.
RunConfig profile_config(const std::string& profile);

RunConfig parse_config_text(const std::string& text, const RunConfig& base);
RunConfig load_config_file(const std::string& path, const RunConfig& base);
std::string dump_config(const RunConfig& config);

}  // namespace lidarfield::config
