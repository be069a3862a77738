#pragma once

// Wires a scenario into a kernel (sensors, robots, cloud servers, expert and
// the gateway sink) and runs it headless or in slices for the live server.

#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "therasim/cloud_services.hpp"
#include "therasim/edge_robot.hpp"
#include "therasim/iot_sensors.hpp"
#include "therasim/metrics.hpp"
#include "therasim/patient_models.hpp"
#include "therasim/scenario.hpp"
#include "therasim/sim_kernel.hpp"

namespace therasim {

struct PatientView {
  std::string patient_id;
  Stage stage = Stage::Entry;
  std::string tree_id;
  RiskLevel risk = RiskLevel::Low;
  std::uint64_t sessions = 0;
  double last_positive_fraction = 0;
};

struct FeedItem {
  std::uint64_t id = 0;
  std::int64_t t = 0;
  std::string kind;
  Json data;
};

// What the gateway has been told, rebuilt purely from events it received.
struct GatewayState {
  std::int64_t now = 0;
  bool finished = false;
  std::map<std::string, PatientView> patients;
  std::map<std::string, std::deque<FusedRecord>> telemetry;
  std::map<std::string, EmergencyAlert> alerts;
};

class GatewayNode : public Node {
 public:
  using FeedSink = std::function<void(const FeedItem&)>;

  explicit GatewayNode(std::size_t telemetry_depth = 360) : depth_(telemetry_depth) {}

  void handle(Kernel& kernel, const SimEvent& event) override;
  void set_feed_sink(FeedSink sink) { sink_ = std::move(sink); }
  const GatewayState& state() const { return state_; }

 private:
  void push(std::int64_t t, const std::string& kind, Json data);

  std::size_t depth_;
  GatewayState state_;
  FeedSink sink_;
  std::uint64_t next_id_ = 0;
};

class Simulation {
 public:
  // live: the scripted expert stops steering stages and acks after the live
  // timeout instead of ack_delay_ms.
  Simulation(ScenarioConfig config, bool live);
  ~Simulation();

  Simulation(const Simulation&) = delete;
  Simulation& operator=(const Simulation&) = delete;

  Kernel& kernel() { return *kernel_; }
  const ScenarioConfig& config() const { return config_; }
  GatewayNode& gateway() { return gateway_; }
  const MetricsAccumulator& metrics() const { return metrics_; }
  const PatientModel& patient(const std::string& id) const { return patients_.at(id); }

  // Optional copy of every trace line, newline included.
  void set_trace_writer(std::function<void(const std::string&)> writer) { trace_writer_ = std::move(writer); }

  // Schedules run_start and the nodes' first events. Call once.
  void start();
  // Processes events up to `t` (capped at the horizon).
  void advance_to(SimTime t);
  // Runs to the horizon and processes run_end.
  void finish();
  bool finished() const { return finished_; }
  SimTime horizon() const { return SimTime{config_.duration_ms}; }

 private:
  ScenarioConfig config_;
  bool live_;
  std::unique_ptr<Kernel> kernel_;
  TreeCatalog catalog_;
  std::map<std::string, PatientModel> patients_;
  std::vector<std::unique_ptr<SensorNode>> sensors_;
  std::vector<std::unique_ptr<RobotNode>> robots_;
  std::unique_ptr<CdsNode> cds_;
  std::unique_ptr<RtmsNode> rtms_;
  std::unique_ptr<ExpertNode> expert_;
  GatewayNode gateway_;
  MetricsAccumulator metrics_;
  std::function<void(const std::string&)> trace_writer_;
  bool started_ = false;
  bool finished_ = false;
};

struct RunOptions {
  std::filesystem::path out_dir = "runs/latest";
  std::optional<std::uint64_t> seed;
  std::optional<std::int64_t> duration_ms;
  std::optional<std::filesystem::path> inputs;
  bool live = false;
};

struct RunSummary {
  std::filesystem::path out_dir;
  std::uint64_t events = 0;
  std::uint64_t trace_hash = 0;
};

// Headless run; writes trace.jsonl, metrics.json and config.resolved.json.
RunSummary cli_run(const std::filesystem::path& config_path, const RunOptions& options);
// Same, for an already parsed config.
RunSummary run_scenario(ScenarioConfig config, const RunOptions& options);
// Metrics recomputed from <dir>/trace.jsonl. Reads only.
Json cli_replay(const std::filesystem::path& run_dir);

// Writes through a temporary file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);

std::vector<InputRecord> read_inputs(const std::filesystem::path& path);

}  // namespace therasim
