// simctl: run, replay and serve therapy-architecture scenarios.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "therasim/metrics.hpp"
#include "therasim/scenario.hpp"
#include "therasim/server.hpp"
#include "therasim/simulation.hpp"

namespace {

void configure_logging() {
  const char* env = std::getenv("SIMCTL_LOG_LEVEL");
  const std::string level = env ? env : "info";
  if (level == "error") {
    spdlog::set_level(spdlog::level::err);
  } else if (level == "debug") {
    spdlog::set_level(spdlog::level::debug);
  } else {
    if (level != "info") spdlog::warn("SIMCTL_LOG_LEVEL='{}' is not error, info or debug; using info", level);
    spdlog::set_level(spdlog::level::info);
  }
  spdlog::set_pattern("[%l] %v");
}

}  // namespace

int main(int argc, char** argv) {
  configure_logging();
  CLI::App app{"Edge-cloud robot-assisted therapy simulator"};
  app.require_subcommand(1);

  std::string config_path;
  therasim::RunOptions run_opts;
  std::string out_dir = "runs/latest";
  std::string inputs_path;
  auto* run = app.add_subcommand("run", "Run a scenario headless");
  run->add_option("--config", config_path, "Scenario JSON")->required()->check(CLI::ExistingFile);
  run->add_option("--seed", run_opts.seed, "Override the scenario seed");
  run->add_option("--duration", run_opts.duration_ms, "Override duration (virtual ms)");
  run->add_option("--out", out_dir, "Run directory")->capture_default_str();
  run->add_option("--inputs", inputs_path, "Recorded live inputs to replay")->check(CLI::ExistingFile);
  run->add_flag("--live", run_opts.live, "Expert in live mode (acks only)");

  std::string replay_dir;
  bool replay_check = false;
  auto* replay = app.add_subcommand("replay", "Recompute metrics from a run's trace");
  replay->add_option("dir", replay_dir, "Run directory")->required()->check(CLI::ExistingDirectory);
  replay->add_flag("--check", replay_check, "Compare with the run's metrics.json");

  therasim::ServeOptions serve_opts;
  std::string serve_out = "runs/live";
  auto* serve = app.add_subcommand("serve", "Run a scenario live with the steering API");
  serve->add_option("--config", config_path, "Scenario JSON")->required()->check(CLI::ExistingFile);
  serve->add_option("--port", serve_opts.port, "HTTP port")->required();
  serve->add_option("--host", serve_opts.host, "Bind address")->capture_default_str();
  serve->add_option("--pace", serve_opts.pace, "Virtual ms per wall ms")->capture_default_str();
  serve->add_option("--out", serve_out, "Run directory")->capture_default_str();
  serve->add_flag("--exit-when-done", serve_opts.exit_when_done, "Stop once the run reaches its horizon");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      run_opts.out_dir = out_dir;
      if (!inputs_path.empty()) run_opts.inputs = inputs_path;
      const auto summary = therasim::cli_run(config_path, run_opts);
      spdlog::info("{} events, trace hash {:016x}, written to {}", summary.events, summary.trace_hash,
                   summary.out_dir.string());
      return 0;
    }
    if (*replay) {
      const std::string text = therasim::metrics_text(therasim::cli_replay(replay_dir));
      if (replay_check) {
        std::ifstream in(std::filesystem::path(replay_dir) / "metrics.json", std::ios::binary);
        const std::string stored((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        if (stored != text) {
          spdlog::error("replayed metrics differ from {}/metrics.json", replay_dir);
          return 1;
        }
        spdlog::info("replayed metrics match {}/metrics.json", replay_dir);
        return 0;
      }
      std::cout << text;
      return 0;
    }
    if (*serve) {
      serve_opts.out_dir = serve_out;
      return therasim::serve(therasim::load_config(config_path), serve_opts);
    }
  } catch (const therasim::ConfigError& e) {
    spdlog::error("config: {}", e.what());
    return 2;
  } catch (const therasim::CorruptTrace& e) {
    spdlog::error("corrupt trace: {}", e.what());
    return 3;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}
