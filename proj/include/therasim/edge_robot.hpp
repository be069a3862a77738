#pragma once

// The edge intelligent robot: window fusion of sensor frames and interaction
// events, emergency monitoring on every frame, behavior-tree therapy sessions
// and a buffered uplink to the Cognitive Data Server.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "therasim/behavior_tree.hpp"
#include "therasim/cloud_services.hpp"
#include "therasim/patient_models.hpp"
#include "therasim/protocol.hpp"
#include "therasim/sim_kernel.hpp"

namespace therasim {

class OutOfWindowFrame : public Error {
 public:
  using Error::Error;
};

class NoActiveSession : public Error {
 public:
  using Error::Error;
};

class StageTreeMismatch : public Error {
 public:
  using Error::Error;
};

// Violations are strict: value < lower or value > upper.
struct EmergencyRule {
  SensorKind kind = SensorKind::SpO2;
  std::optional<double> lower;
  std::optional<double> upper;
  bool operator==(const EmergencyRule&) const = default;
};

using EmergencyRuleSet = std::vector<EmergencyRule>;

EmergencyRuleSet default_emergency_rules();
// Bounds inside the kind's physical range, SpO2 and Heartbeat covered.
// Throws std::invalid_argument.
void check_rules(const EmergencyRuleSet& rules, const PhysicalBounds& bounds = default_physical_bounds());

void to_json(Json& j, const EmergencyRule& r);
void from_json(const Json& j, EmergencyRule& r);

// First violated rule for the frame's kind. The alert id is left empty.
std::optional<EmergencyAlert> monitor(const SensorFrame& frame, const EmergencyRuleSet& rules);

// Summaries over [t0, t1). Throws OutOfWindowFrame for frames or
// interactions outside the window or for another patient.
FusedRecord fuse(const std::string& patient_id, const std::vector<SensorFrame>& frames,
                 const std::vector<InteractionEvent>& interactions, const NetworkInfo& net,
                 SimTime t0, SimTime t1);

using TreeCatalog = std::map<std::string, bt::TreeDef>;

struct OpenSession {
  std::string session_id;
  std::string tree_id;
  Stage stage = Stage::Entry;
  bt::Blackboard bb;
  SimTime started_at;
  std::uint64_t steps = 0;
  std::uint64_t events = 0;
  std::uint64_t positives = 0;
};

struct UplinkItem {
  std::string kind;
  Json msg;
};

struct RobotState {
  std::string robot_id;
  std::string patient_id;
  std::optional<TherapyCommand> active_command;
  // Arrived while a session was open; applied at the next boundary.
  std::optional<TherapyCommand> pending_command;
  std::optional<OpenSession> open_session;
  std::int64_t fusion_window_ms = 10'000;
  std::int64_t beat_ms = 3'000;
  std::vector<UplinkItem> uplink_buffer;
  std::uint64_t sessions_opened = 0;
};

struct StepResult {
  bt::Status status = bt::Status::Running;
  std::vector<InteractionEvent> events;
  std::optional<SessionRecord> record;
};

// One beat of the open session. Closes it on Success or Failure; the record's
// duration is steps * beat_ms.
StepResult run_session_step(RobotState& state, const bt::TreeDef& tree, bt::Responder& responder, SimTime now);

// Replaces the active command now, or at the next session boundary if a
// session is open. Throws StageTreeMismatch.
void apply_update(RobotState& state, const TherapyCommand& cmd, const TreeCatalog& catalog);

// Opens a session with the active command's tree.
OpenSession& open_session(RobotState& state, SimTime now);

// Sends the buffer in order over the robot's link to `cds_id` and empties it.
std::vector<Delivery> uplink_flush(RobotState& state, Kernel& kernel, const std::string& cds_id);

// Patient responses for therapy actions, one performed action per beat.
// Actions later in the same beat report Running without acting.
class TherapyResponder : public bt::Responder {
 public:
  TherapyResponder(PatientModel& patient, Rng& rng, ResponseModel model)
      : patient_(patient), rng_(rng), model_(model) {}

  void begin_beat(Stage tree_stage) {
    stage_ = tree_stage;
    acted_ = false;
  }

  bt::LeafResult act(const bt::NodeDef& leaf, bt::Blackboard& bb) override;
  bt::Status check(const bt::NodeDef& leaf, const bt::Blackboard& bb) override;

 private:
  PatientModel& patient_;
  Rng& rng_;
  ResponseModel model_;
  Stage stage_ = Stage::Entry;
  bool acted_ = false;
};

struct EdgeComputeConfig {
  std::int64_t edge_capacity = 50;    // cycles per ms
  std::int64_t cloud_capacity = 500;  // cycles per ms
  std::int64_t base_cycles = 20'000;
  std::int64_t cycles_per_event = 5'000;
  std::int64_t bytes_per_event = 2'000;
  bool operator==(const EdgeComputeConfig&) const = default;
};

struct EdgeConfig {
  std::int64_t fusion_window_ms = 10'000;
  std::int64_t beat_ms = 3'000;
  std::int64_t review_timeout_ms = 60'000;
  std::int64_t latency_ref_ms = 200;
  std::string network_type = "5G";
  EmergencyRuleSet emergency_rules = default_emergency_rules();
  EdgeComputeConfig compute;
};

class RobotNode : public Node {
 public:
  RobotNode(std::string patient_id, EdgeConfig config, TherapyCommand initial,
            const TreeCatalog& catalog, PatientModel& patient, Rng patient_rng,
            ResponseModel response, ProgressionRule progression, std::string cds_id);

  // Schedules the first beat at t = 0 and the first window close.
  void start(Kernel& kernel);
  void handle(Kernel& kernel, const SimEvent& event) override;

  const std::string& id() const { return state_.robot_id; }
  const RobotState& state() const { return state_; }
  bool awaiting_review() const { return review_deadline_.has_value(); }

 private:
  void on_frame(Kernel& kernel, const SensorFrame& frame);
  void on_beat(Kernel& kernel);
  void on_window_close(Kernel& kernel);
  void on_command(Kernel& kernel, const TherapyCommand& cmd);
  void close_session(Kernel& kernel, SessionRecord record);
  void apply_pending(Kernel& kernel, const std::string& cause);
  void send(Kernel& kernel, const std::string& kind, Json msg);

  RobotState state_;
  EdgeConfig config_;
  const TreeCatalog& catalog_;
  PatientModel& patient_;
  Rng patient_rng_;
  TherapyResponder responder_;
  ProgressionRule progression_;
  std::string cds_id_;

  std::vector<SensorFrame> frames_;
  std::vector<InteractionEvent> interactions_;
  SimTime window_start_;
  // Traffic since the previous fused record.
  std::uint64_t window_bytes_ = 0;
  std::int64_t window_delay_sum_ = 0;
  std::uint64_t window_deliveries_ = 0;

  std::optional<SimTime> review_deadline_;
  // Rules currently in violation; one alert per transition into violation.
  std::map<std::pair<SensorKind, BoundSide>, bool> latched_;
  std::uint64_t alerts_raised_ = 0;
};

}  // namespace therasim
