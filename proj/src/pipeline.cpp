#include "lidarfield/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>

namespace lidarfield::pipeline {

namespace fs = std::filesystem;

namespace {

std::string indexed(const std::string& dir, const char* stem, int index, const char* ext) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%06d%s", index, ext);
  return dir + "/" + stem + "/" + buf;
}

int resolve_threads(const RunConfig& config) {
  return config.threads > 0 ? config.threads : default_thread_count();
}

std::vector<std::vector<std::uint8_t>> load_masks(const RunConfig& config, std::size_t n_scans) {
  std::vector<std::vector<std::uint8_t>> masks;
  if (config.data.mask_dir.empty()) return masks;
  masks.resize(n_scans);
  for (std::size_t i = 0; i < n_scans; ++i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%06zu.mask", i);
    const std::string path = config.data.mask_dir + "/" + buf;
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw DataError("cannot open keep mask: " + path);
    const std::streamsize bytes = in.tellg();
    in.seekg(0);
    masks[i].resize(static_cast<std::size_t>(bytes));
    in.read(reinterpret_cast<char*>(masks[i].data()), bytes);
  }
  return masks;
}

}  // namespace

std::string scan_path(const std::string& dataset_dir, int index) {
  return indexed(dataset_dir, "velodyne", index, ".bin");
}
std::string label_path(const std::string& dataset_dir, int index) {
  return indexed(dataset_dir, "labels", index, ".label");
}
std::string poses_path(const std::string& dataset_dir) { return dataset_dir + "/poses.txt"; }
std::string scene_path(const std::string& dataset_dir) { return dataset_dir + "/scene.txt"; }
std::string scene_graph_path(const RunConfig& config) {
  return config.data.output_dir + "/scene_graph.txt";
}
std::string checkpoint_path(const RunConfig& config, int parent, int epoch) {
  char buf[64];
  if (epoch < 0) {
    std::snprintf(buf, sizeof(buf), "/checkpoints/parent%03d.ckpt", parent);
  } else {
    std::snprintf(buf, sizeof(buf), "/checkpoints/parent%03d_epoch%03d.ckpt", parent, epoch);
  }
  return config.data.output_dir + buf;
}
std::string loss_log_path(const RunConfig& config) {
  return config.data.output_dir + "/loss_log.csv";
}
std::string report_path(const RunConfig& config, config::InferMode mode) {
  return config.data.output_dir + "/report_" + config::infer_mode_name(mode) + ".json";
}
std::string outcomes_path(const RunConfig& config, config::InferMode mode) {
  return config.data.output_dir + "/outcomes_" + config::infer_mode_name(mode) + ".csv";
}
std::string predictions_path(const RunConfig& config, config::InferMode mode) {
  return config.data.output_dir + "/predictions_" + config::infer_mode_name(mode) + ".ply";
}

void run_simulate(const RunConfig& config, bool force) {
  config.validate();
  const std::string& dir = config.data.dataset_dir;
  if (fs::exists(poses_path(dir)) && !force) {
    throw DataError("dataset already exists (use --force to overwrite): " + dir);
  }
  fs::create_directories(dir + "/velodyne");
  fs::create_directories(dir + "/labels");

  const simlidar::AnalyticScene scene = simlidar::make_boxworld(config.sim.boxworld);
  simlidar::save_scene(scene, scene_path(dir));
  const std::vector<Mat34> poses =
      simlidar::boxworld_trajectory(config.sim.boxworld, config.sim.n_scans);
  cloud::write_kitti_poses(poses_path(dir), poses);

  std::size_t total_points = 0;
  for (int s = 0; s < config.sim.n_scans; ++s) {
    std::vector<int> labels;
    const cloud::LidarScan scan =
        simlidar::simulate_scan(scene, poses[static_cast<std::size_t>(s)], config.sim.pattern,
                                &labels);
    cloud::write_kitti_scan(scan_path(dir, s), scan.points);
    std::vector<std::uint32_t> raw(labels.begin(), labels.end());
    std::ofstream out(label_path(dir, s), std::ios::binary);
    if (!out) throw DataError("cannot write labels: " + label_path(dir, s));
    out.write(reinterpret_cast<const char*>(raw.data()),
              static_cast<std::streamsize>(raw.size() * sizeof(std::uint32_t)));
    total_points += scan.points.size();
  }
  std::cout << "simulate: " << config.sim.n_scans << " scans, " << total_points
            << " points, " << scene.boxes.size() << " boxes -> " << dir << "\n";
}

Dataset load_dataset(const RunConfig& config) {
  const std::string& dir = config.data.dataset_dir;
  const std::vector<Mat34> poses = cloud::load_kitti_poses(poses_path(dir));
  if (poses.empty()) throw DataError("dataset has no poses: " + dir);
  const auto masks = load_masks(config, poses.size());

  Dataset dataset;
  dataset.has_labels = fs::exists(label_path(dir, 0));
  for (std::size_t s = 0; s < poses.size(); ++s) {
    cloud::LidarScan scan =
        cloud::load_kitti_scan(scan_path(dir, static_cast<int>(s)), poses[s],
                               static_cast<int>(s));
    std::vector<int> labels;
    if (dataset.has_labels) {
      const std::string lp = label_path(dir, static_cast<int>(s));
      std::ifstream in(lp, std::ios::binary | std::ios::ate);
      if (!in) throw DataError("cannot open labels: " + lp);
      const std::streamsize bytes = in.tellg();
      in.seekg(0);
      std::vector<std::uint32_t> raw(static_cast<std::size_t>(bytes) / 4);
      in.read(reinterpret_cast<char*>(raw.data()), bytes);
      labels.assign(raw.begin(), raw.end());
      if (labels.size() != scan.points.size()) {
        throw DataError("label/point count mismatch on scan " + std::to_string(s));
      }
    }
    if (!masks.empty()) {
      if (masks[s].size() != scan.points.size()) {
        throw DataError("keep mask size mismatch on scan " + std::to_string(s));
      }
      std::vector<Vec3> kept;
      std::vector<int> kept_labels;
      for (std::size_t i = 0; i < scan.points.size(); ++i) {
        if (masks[s][i] == 0) continue;
        kept.push_back(scan.points[i]);
        if (dataset.has_labels) kept_labels.push_back(labels[i]);
      }
      scan.points = std::move(kept);
      labels = std::move(kept_labels);
    }
    dataset.scans.push_back(std::move(scan));
    dataset.labels.push_back(std::move(labels));
  }
  return dataset;
}

eval::Split dataset_split(const Dataset& dataset, const RunConfig& config) {
  std::vector<int> indices;
  indices.reserve(dataset.scans.size());
  for (const auto& scan : dataset.scans) indices.push_back(scan.scan_index);
  return eval::split_scans(indices, config.split);
}

void run_partition(const RunConfig& config) {
  config.validate();
  const Dataset dataset = load_dataset(config);
  const eval::Split split = dataset_split(dataset, config);
  const partition::SceneGraph graph =
      partition::build_scene_graph(dataset.scans, split.train, config.partition);
  fs::create_directories(config.data.output_dir);
  partition::save_scene_graph(graph, scene_graph_path(config));
  std::size_t n_children = 0;
  for (const auto& p : graph.parents) n_children += p.children.size();
  std::cout << "partition: " << graph.parents.size() << " parent blocks, " << n_children
            << " children -> " << scene_graph_path(config) << "\n";
}

namespace {

struct BlockTrainData {
  std::vector<train::TrainRay> rays;
  train::RayBuildStats stats;
};

BlockTrainData block_train_rays(const Dataset& dataset, const eval::Split& split,
                                const partition::ParentBlock& block, const RunConfig& config) {
  std::vector<cloud::LidarScan> block_scans;
  for (const auto& scan : dataset.scans) {
    if (scan.scan_index < block.scan_begin || scan.scan_index >= block.scan_end) continue;
    if (std::find(split.train.begin(), split.train.end(), scan.scan_index) ==
        split.train.end()) {
      continue;
    }
    block_scans.push_back(scan);
  }
  if (block_scans.empty()) throw DataError("no training scans in parent block");
  cloud::FusedCloud fused = cloud::fuse_scans(block_scans, config.partition.fuse_max_range);
  partition::assign_ray_children(fused.rays, block.children);
  std::vector<geom::Aabb> child_aabbs;
  child_aabbs.reserve(block.children.size());
  for (const auto& child : block.children) child_aabbs.push_back(child.aabb);

  BlockTrainData data;
  data.rays = train::make_train_rays(fused.rays, block.aabb, child_aabbs, config.loss,
                                     &data.stats);
  return data;
}

}  // namespace

void run_train(const RunConfig& config) {
  config.validate();
  const Dataset dataset = load_dataset(config);
  const eval::Split split = dataset_split(dataset, config);
  const partition::SceneGraph graph = partition::load_scene_graph(scene_graph_path(config));
  fs::create_directories(config.data.output_dir + "/checkpoints");
  const int threads = resolve_threads(config);

  std::vector<train::LossLogRow> all_rows;
  Rng seed_stream(config.train.seed);
  for (std::size_t p = 0; p < graph.parents.size(); ++p) {
    const partition::ParentBlock& block = graph.parents[p];
    BlockTrainData data = block_train_rays(dataset, split, block, config);
    std::cout << "train: parent " << p << ", " << data.rays.size() << " rays ("
              << data.stats.dropped_no_parent << " outside block, "
              << data.stats.child_interval_missing << " without child interval)\n";

    Rng init_rng = seed_stream.fork(p);
    field::FieldModel model = field::make_model(config.field, block.aabb, init_rng);
    train::TrainConfig tc = config.train;
    tc.seed = config.train.seed + 1315423911ULL * (p + 1);
    const auto checkpoint_cb = [&](int epoch, const field::FieldModel& m) {
      field::save_checkpoint(checkpoint_path(config, static_cast<int>(p), epoch), m);
    };
    train::TrainResult result = train::train_model(std::move(model), data.rays, config.loss,
                                                   config.sampling, tc, threads, checkpoint_cb);
    field::save_checkpoint(checkpoint_path(config, static_cast<int>(p)), result.model);
    for (const auto& row : result.log) all_rows.push_back(row);
  }
  train::write_loss_log(all_rows, loss_log_path(config));
  std::cout << "train: wrote " << all_rows.size() << " loss rows -> "
            << loss_log_path(config) << "\n";
}

std::vector<eval::TestRay> make_test_rays(const Dataset& dataset,
                                          const std::vector<int>& test_ids,
                                          const partition::SceneGraph& graph,
                                          double max_range) {
  std::vector<eval::TestRay> rays;
  for (int id : test_ids) {
    const cloud::LidarScan* scan = nullptr;
    for (const auto& s : dataset.scans) {
      if (s.scan_index == id) {
        scan = &s;
        break;
      }
    }
    if (!scan) throw DataError("test scan missing from dataset: " + std::to_string(id));
    const int parent = graph.parent_of_scan(id);
    if (parent < 0) continue;
    for (const geom::Ray& ray : cloud::make_rays(*scan)) {
      if (ray.depth > max_range) continue;
      eval::TestRay tr;
      tr.origin = ray.origin;
      tr.direction = ray.direction;
      tr.truth = ray.depth;
      tr.scan = id;
      tr.parent = parent;
      rays.push_back(tr);
    }
  }
  return rays;
}

namespace {

eval::MetricsReport evaluate_mode(const RunConfig& config, bool with_report) {
  const Dataset dataset = load_dataset(config);
  const eval::Split split = dataset_split(dataset, config);
  const partition::SceneGraph graph = partition::load_scene_graph(scene_graph_path(config));
  const std::vector<eval::TestRay> rays =
      make_test_rays(dataset, split.test, graph, config.partition.fuse_max_range);
  const int threads = resolve_threads(config);
  const config::InferMode mode = config.infer_mode;
  const std::uint64_t eval_seed = config.train.seed ^ 0xace1ace1ace1aceULL;

  eval::InferFn infer_fn;
  std::vector<field::FieldModel> models;
  std::unique_ptr<infer::VoxelMap> voxel_map;

  if (mode == config::InferMode::kRaycast) {
    std::vector<cloud::LidarScan> train_scans;
    for (const auto& scan : dataset.scans) {
      if (std::find(split.train.begin(), split.train.end(), scan.scan_index) !=
          split.train.end()) {
        train_scans.push_back(scan);
      }
    }
    const cloud::FusedCloud fused =
        cloud::fuse_scans(train_scans, config.partition.fuse_max_range);
    std::vector<Vec3> map_points;
    map_points.reserve(fused.rays.size());
    for (const auto& ray : fused.rays) map_points.push_back(ray.endpoint);
    voxel_map = std::make_unique<infer::VoxelMap>(map_points, config.raycast_voxel);
    const double max_range = config.partition.fuse_max_range;
    infer_fn = [&voxel_map, max_range](const eval::TestRay& ray, std::size_t)
        -> std::pair<std::optional<double>, std::string> {
      const auto depth = voxel_map->raycast(ray.origin, ray.direction, max_range);
      return {depth, depth ? "raycast" : "none"};
    };
  } else {
    models.reserve(graph.parents.size());
    for (std::size_t p = 0; p < graph.parents.size(); ++p) {
      models.push_back(field::load_checkpoint(checkpoint_path(config, static_cast<int>(p))));
    }
    infer_fn = [&models, &graph, &config, mode, eval_seed](const eval::TestRay& ray,
                                                           std::size_t index)
        -> std::pair<std::optional<double>, std::string> {
      const field::FieldModel& model = models[static_cast<std::size_t>(ray.parent)];
      const partition::ParentBlock& block =
          graph.parents[static_cast<std::size_t>(ray.parent)];
      Rng rng(eval_seed ^ (0x9e3779b97f4a7c15ULL * (index + 1)));
      const infer::RayRender render = infer::render_parent_interval(
          model, ray.origin, ray.direction, block.aabb, config.sampling, config.loss.t0, rng);
      if (mode == config::InferMode::kOneStep) {
        const auto depth = infer::infer_one_step(render);
        return {depth, depth ? "one_step" : "none"};
      }
      const infer::InferenceOutcome outcome = infer::infer_two_step(
          ray.origin, ray.direction, block.children, render, config.infer);
      return {outcome.depth, infer::rule_name(outcome.rule)};
    };
  }

  fs::create_directories(config.data.output_dir);
  return eval::evaluate_run(rays, infer_fn, threads,
                            with_report ? report_path(config, mode) : std::string{},
                            outcomes_path(config, mode), predictions_path(config, mode));
}

}  // namespace

eval::MetricsReport run_eval(const RunConfig& config) {
  config.validate();
  const eval::MetricsReport report = evaluate_mode(config, true);
  std::cout << "eval[" << config::infer_mode_name(config.infer_mode)
            << "]: avg_error " << report.avg_error_m << " m, acc@0.2 " << report.acc_0p2
            << ", acc@1.0 " << report.acc_1p0 << ", cd " << report.cd_m << " m, resolved "
            << report.n_resolved << "/" << (report.n_resolved + report.n_unresolved) << "\n";
  return report;
}

void run_infer(const RunConfig& config) {
  config.validate();
  evaluate_mode(config, false);
  std::cout << "infer[" << config::infer_mode_name(config.infer_mode) << "] -> "
            << outcomes_path(config, config.infer_mode) << "\n";
}

eval::MetricsReport run_full(const RunConfig& config, bool force) {
  config.validate();
  if (force || !fs::exists(poses_path(config.data.dataset_dir))) {
    run_simulate(config, force);
  }
  run_partition(config);
  run_train(config);
  return run_eval(config);
}

}  // namespace lidarfield::pipeline
