#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "lidarfield/pipeline.hpp"

namespace {

// Exit codes: 0 ok, 2 config error, 3 data error, 4 numeric failure.
constexpr int kConfigExit = 2;
constexpr int kDataExit = 3;
constexpr int kNumericExit = 4;

struct CommonFlags {
  std::string config_path;
  std::string profile;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  bool force = false;
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
  cmd->add_option("--config", flags.config_path, "Config file (key = value sections)");
  cmd->add_option("--profile", flags.profile, "Preset: desk or paper")
      ->check(CLI::IsMember({"desk", "paper"}));
  cmd->add_option("--seed", flags.seed, "Override train/scene seeds");
  cmd->add_option("--threads", flags.threads, "Worker cap (0 = hardware)");
  cmd->add_flag("--force", flags.force, "Overwrite existing outputs");
}

lidarfield::config::RunConfig resolve_config(const CommonFlags& flags) {
  using lidarfield::config::RunConfig;
  RunConfig base = lidarfield::config::profile_config(flags.profile);
  RunConfig cfg = flags.config_path.empty()
                      ? base
                      : lidarfield::config::load_config_file(flags.config_path, base);
  if (flags.seed) {
    cfg.train.seed = *flags.seed;
    cfg.sim.boxworld.seed = *flags.seed;
    cfg.split.seed = *flags.seed;
    cfg.partition.seed = *flags.seed;
  }
  if (flags.threads) cfg.threads = *flags.threads;
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LiDAR depth-field reconstruction pipeline"};
  app.require_subcommand(1);

  CommonFlags flags;
  bool dump = false;

  CLI::App* cmd_config = app.add_subcommand("config", "Print the effective configuration");
  add_common(cmd_config, flags);
  cmd_config->add_flag("--dump", dump, "Dump all keys with their values");

  CLI::App* cmd_simulate = app.add_subcommand("simulate", "Write the toy LiDAR dataset");
  CLI::App* cmd_partition = app.add_subcommand("partition", "Build the parent/child scene graph");
  CLI::App* cmd_train = app.add_subcommand("train", "Train the density field");
  CLI::App* cmd_infer = app.add_subcommand("infer", "Predict depths on the test split");
  CLI::App* cmd_eval = app.add_subcommand("eval", "Predict and score the test split");
  CLI::App* cmd_full = app.add_subcommand("full", "simulate + partition + train + eval");
  for (CLI::App* cmd : {cmd_simulate, cmd_partition, cmd_train, cmd_infer, cmd_eval, cmd_full}) {
    add_common(cmd, flags);
  }

  CLI11_PARSE(app, argc, argv);

  try {
    const lidarfield::config::RunConfig cfg = resolve_config(flags);
    if (cmd_config->parsed()) {
      std::cout << lidarfield::config::dump_config(cfg);
      return 0;
    }
    if (cmd_simulate->parsed()) {
      lidarfield::pipeline::run_simulate(cfg, flags.force);
    } else if (cmd_partition->parsed()) {
      lidarfield::pipeline::run_partition(cfg);
    } else if (cmd_train->parsed()) {
      lidarfield::pipeline::run_train(cfg);
    } else if (cmd_infer->parsed()) {
      lidarfield::pipeline::run_infer(cfg);
    } else if (cmd_eval->parsed()) {
      lidarfield::pipeline::run_eval(cfg);
    } else if (cmd_full->parsed()) {
      lidarfield::pipeline::run_full(cfg, flags.force);
    }
    return 0;
  } catch (const lidarfield::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigExit;
  } catch (const lidarfield::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kDataExit;
  } catch (const lidarfield::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kNumericExit;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
