#include "lidarfield/config.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

namespace lidarfield::config {

const char* infer_mode_name(InferMode mode) {
  switch (mode) {
    case InferMode::kOneStep: return "one_step";
    case InferMode::kTwoStep: return "two_step";
    case InferMode::kRaycast: return "raycast";
  }
  return "two_step";
}

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string::npos) return {};
  const auto end = s.find_last_not_of(" \t\r\n");
  return s.substr(begin, end - begin + 1);
}

double to_double(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(value, &pos);
    if (pos != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config: bad number for " + key + ": '" + value + "'");
  }
}

int to_int(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const long v = std::stol(value, &pos);
    if (pos != value.size()) throw std::invalid_argument(value);
    return static_cast<int>(v);
  } catch (const std::exception&) {
    throw ConfigError("config: bad integer for " + key + ": '" + value + "'");
  }
}

std::uint64_t to_u64(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const unsigned long long v = std::stoull(value, &pos);
    if (pos != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config: bad seed for " + key + ": '" + value + "'");
  }
}

bool to_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError("config: bad bool for " + key + ": '" + value + "'");
}

std::string fmt(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

struct Binding {
  std::string name;  // "section.key"
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

std::vector<Binding> make_bindings() {
  std::vector<Binding> b;
  auto add = [&b](const char* name, std::function<void(RunConfig&, const std::string&)> set,
                  std::function<std::string(const RunConfig&)> get) {
    b.push_back({name, std::move(set), std::move(get)});
  };

#define BIND_DOUBLE(NAME, FIELD)                                                        \
  add(NAME, [](RunConfig& c, const std::string& v) { c.FIELD = to_double(NAME, v); },   \
      [](const RunConfig& c) { return fmt(c.FIELD); })
#define BIND_INT(NAME, FIELD)                                                           \
  add(NAME, [](RunConfig& c, const std::string& v) { c.FIELD = to_int(NAME, v); },      \
      [](const RunConfig& c) { return std::to_string(c.FIELD); })
#define BIND_U64(NAME, FIELD)                                                           \
  add(NAME, [](RunConfig& c, const std::string& v) { c.FIELD = to_u64(NAME, v); },      \
      [](const RunConfig& c) { return std::to_string(c.FIELD); })
#define BIND_BOOL(NAME, FIELD)                                                          \
  add(NAME, [](RunConfig& c, const std::string& v) { c.FIELD = to_bool(NAME, v); },     \
      [](const RunConfig& c) { return c.FIELD ? "true" : "false"; })
#define BIND_STRING(NAME, FIELD)                                            \
  add(NAME, [](RunConfig& c, const std::string& v) { c.FIELD = v; },        \
      [](const RunConfig& c) { return c.FIELD; })

  BIND_STRING("data.dataset_dir", data.dataset_dir);
  BIND_STRING("data.output_dir", data.output_dir);
  BIND_STRING("data.mask_dir", data.mask_dir);

  BIND_INT("sim.n_scans", sim.n_scans);
  BIND_INT("sim.n_beams", sim.pattern.n_beams);
  BIND_DOUBLE("sim.vfov_min_deg", sim.pattern.vertical_fov_min_deg);
  BIND_DOUBLE("sim.vfov_max_deg", sim.pattern.vertical_fov_max_deg);
  BIND_DOUBLE("sim.h_step_deg", sim.pattern.horizontal_step_deg);
  BIND_DOUBLE("sim.max_range", sim.pattern.max_range);
  BIND_INT("sim.n_boxes", sim.boxworld.n_boxes);
  BIND_DOUBLE("sim.trajectory_length", sim.boxworld.trajectory_length);
  BIND_DOUBLE("sim.sensor_height", sim.boxworld.sensor_height);
  BIND_DOUBLE("sim.box_clearance", sim.boxworld.box_clearance);
  BIND_U64("sim.scene_seed", sim.boxworld.seed);

  add("split.mode",
      [](RunConfig& c, const std::string& v) {
        if (v == "every_kth") {
          c.split.mode = eval::SplitSpec::Mode::kEveryKth;
        } else if (v == "loss_rate") {
          c.split.mode = eval::SplitSpec::Mode::kLossRate;
        } else {
          throw ConfigError("config: split.mode must be every_kth or loss_rate, got '" + v + "'");
        }
      },
      [](const RunConfig& c) {
        return c.split.mode == eval::SplitSpec::Mode::kEveryKth ? "every_kth" : "loss_rate";
      });
  BIND_INT("split.k", split.k);
  BIND_DOUBLE("split.train_fraction", split.train_fraction);
  BIND_BOOL("split.random_keep", split.random_keep);
  BIND_U64("split.seed", split.seed);

  BIND_DOUBLE("partition.yaw_threshold_deg", partition.yaw_threshold_deg);
  BIND_INT("partition.max_scans", partition.max_scans);
  BIND_INT("partition.ground_trials", partition.ground_trials);
  BIND_DOUBLE("partition.ground_inlier_dist", partition.ground_inlier_dist);
  BIND_DOUBLE("partition.ground_normal_z_min", partition.ground_normal_z_min);
  BIND_DOUBLE("partition.ground_min_inlier_frac", partition.ground_min_inlier_frac);
  BIND_DOUBLE("partition.cluster_radius", partition.cluster_radius);
  BIND_INT("partition.cluster_min_size", partition.cluster_min_size);
  BIND_DOUBLE("partition.parent_inflate", partition.parent_inflate);
  BIND_DOUBLE("partition.fuse_max_range", partition.fuse_max_range);
  BIND_U64("partition.seed", partition.seed);

  BIND_INT("field.encoding_levels", field.encoding_levels);
  BIND_INT("field.hidden_layers", field.hidden_layers);
  BIND_INT("field.hidden_width", field.hidden_width);
  BIND_INT("field.skip_layer", field.skip_layer);

  BIND_INT("sampling.n_coarse", sampling.n_coarse);
  BIND_INT("sampling.n_fine", sampling.n_fine);

  BIND_DOUBLE("loss.lambda_pd", loss.lambda_pd);
  BIND_DOUBLE("loss.lambda_cf", loss.lambda_cf);
  BIND_DOUBLE("loss.lambda_cd", loss.lambda_cd);
  BIND_DOUBLE("loss.lambda_in", loss.lambda_in);
  BIND_DOUBLE("loss.gamma", loss.gamma);
  BIND_DOUBLE("loss.epsilon", loss.epsilon);
  BIND_DOUBLE("loss.t0", loss.t0);

  BIND_DOUBLE("train.lr", train.lr);
  add("train.milestones",
      [](RunConfig& c, const std::string& v) {
        c.train.milestones.clear();
        std::stringstream ss(v);
        std::string item;
        while (std::getline(ss, item, ',')) {
          item = trim(item);
          if (!item.empty()) c.train.milestones.push_back(to_int("train.milestones", item));
        }
      },
      [](const RunConfig& c) {
        std::string out;
        for (std::size_t i = 0; i < c.train.milestones.size(); ++i) {
          if (i) out += ",";
          out += std::to_string(c.train.milestones[i]);
        }
        return out;
      });
  BIND_DOUBLE("train.decay", train.decay);
  BIND_INT("train.batch_rays", train.batch_rays);
  BIND_INT("train.epochs", train.epochs);
  BIND_U64("train.seed", train.seed);

  add("infer.mode",
      [](RunConfig& c, const std::string& v) {
        if (v == "one_step") {
          c.infer_mode = InferMode::kOneStep;
        } else if (v == "two_step") {
          c.infer_mode = InferMode::kTwoStep;
        } else if (v == "raycast") {
          c.infer_mode = InferMode::kRaycast;
        } else {
          throw ConfigError("config: infer.mode must be one_step, two_step or raycast");
        }
      },
      [](const RunConfig& c) { return infer_mode_name(c.infer_mode); });
  BIND_DOUBLE("infer.w_min", infer.w_min);
  BIND_DOUBLE("infer.inflate_step", infer.inflate_step);
  BIND_INT("infer.max_inflate_steps", infer.max_inflate_steps);
  BIND_DOUBLE("infer.raycast_voxel", raycast_voxel);

  BIND_INT("runtime.threads", threads);

#undef BIND_DOUBLE
#undef BIND_INT
#undef BIND_U64
#undef BIND_BOOL
#undef BIND_STRING
  return b;
}

const std::vector<Binding>& bindings() {
  static const std::vector<Binding> b = make_bindings();
  return b;
}

// Single sources of truth shared across modules.
void sync_derived(RunConfig& c) {
  c.sampling.lambda_in = c.loss.lambda_in;
  c.infer.epsilon = c.loss.epsilon;
  c.infer.t0 = c.loss.t0;
}

}  // namespace

void RunConfig::validate() const {
  simlidar::validate_pattern(sim.pattern);
  eval::validate_split(split);
  field::validate_sampling(sampling);
  train::validate_loss(loss);
  train::validate_train(train);
  if (field.encoding_levels < 0) throw ConfigError("config: encoding_levels must be >= 0");
  if (field.hidden_layers < 1) throw ConfigError("config: hidden_layers must be >= 1");
  if (field.hidden_width < 1) throw ConfigError("config: hidden_width must be >= 1");
  if (raycast_voxel <= 0) throw ConfigError("config: raycast_voxel must be positive");
  if (infer.w_min < 0) throw ConfigError("config: w_min must be >= 0");
  if (infer.inflate_step < 0) throw ConfigError("config: inflate_step must be >= 0");
  if (infer.max_inflate_steps < 0) throw ConfigError("config: max_inflate_steps must be >= 0");
  if (threads < 0) throw ConfigError("config: threads must be >= 0");
  if (sim.n_scans < 1) throw ConfigError("config: sim.n_scans must be >= 1");
}

RunConfig profile_config(const std::string& profile) {
  RunConfig c;
  if (profile.empty() || profile == "paper") {
    // Published setup: 8x256 network, L=10, 768/1536 samples, lr 4e-5.
    sync_derived(c);
    return c;
  }
  if (profile == "desk") {
    // Sized so one epoch on the toy scenes fits a single workstation core.
    c.field.encoding_levels = 6;
    c.field.hidden_layers = 4;
    c.field.hidden_width = 64;
    c.field.skip_layer = 2;
    c.sampling.n_coarse = 32;
    c.sampling.n_fine = 64;
    c.train.lr = 2e-3;
    c.train.batch_rays = 128;
    c.sim.pattern.n_beams = 24;
    c.sim.pattern.horizontal_step_deg = 2.0;
    sync_derived(c);
    return c;
  }
  throw ConfigError("unknown profile '" + profile + "' (expected desk or paper)");
}

RunConfig parse_config_text(const std::string& text, const RunConfig& base) {
  RunConfig c = base;
  std::istringstream in(text);
  std::string line;
  std::string section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    if (t.front() == '[') {
      if (t.back() != ']') {
        throw ConfigError("config line " + std::to_string(line_no) + ": malformed section");
      }
      section = trim(t.substr(1, t.size() - 2));
      bool known = false;
      for (const Binding& b : bindings()) {
        if (b.name.rfind(section + ".", 0) == 0) {
          known = true;
          break;
        }
      }
      if (!known) {
        throw ConfigError("config line " + std::to_string(line_no) + ": unknown section [" +
                          section + "]");
      }
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    if (section.empty()) {
      throw ConfigError("config line " + std::to_string(line_no) + ": key outside any section");
    }
    const std::string full = section + "." + key;
    bool found = false;
    for (const Binding& b : bindings()) {
      if (b.name == full) {
        b.set(c, value);
        found = true;
        break;
      }
    }
    if (!found) {
      throw ConfigError("config line " + std::to_string(line_no) + ": unknown key '" + full +
                        "'");
    }
  }
  sync_derived(c);
  c.validate();
  return c;
}

RunConfig load_config_file(const std::string& path, const RunConfig& base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), base);
}

std::string dump_config(const RunConfig& config) {
  std::string out;
  std::string section;
  for (const Binding& b : bindings()) {
    const auto dot = b.name.find('.');
    const std::string sec = b.name.substr(0, dot);
    if (sec != section) {
      if (!section.empty()) out += "\n";
      out += "[" + sec + "]\n";
      section = sec;
    }
    out += b.name.substr(dot + 1) + " = " + b.get(config) + "\n";
  }
  return out;
}

}  // namespace lidarfield::config
