#pragma once

// Simulated patients (humor stage, engagement, Bernoulli responses to robot
// actions) and the scripted expert policy that stands in for the human
// console in headless runs.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "therasim/protocol.hpp"
#include "therasim/sim_kernel.hpp"

namespace therasim {

struct SessionHistoryEntry {
  std::string tree_id;
  Stage stage = Stage::Entry;
  SessionOutcome outcome = SessionOutcome::Success;
  double positive_fraction = 0;
};

struct PatientModel {
  std::string patient_id;
  Stage stage = Stage::Entry;
  double engagement = 0.5;
  double cooperation_bias = 0.5;
  std::vector<SessionHistoryEntry> history;
  // Index into history where the current stage began.
  std::size_t stage_start = 0;

  void record_session(SessionHistoryEntry entry) { history.push_back(std::move(entry)); }
  // Only called when an expert-driven TherapyCommand takes effect.
  void set_stage(Stage s);
};

// Constants of the two-factor response model. All are scenario-overridable.
struct ResponseModel {
  double match_same = 1.0;
  double match_one_above = 0.5;  // action one stage above the patient
  double match_one_below = 0.8;  // action one stage below the patient
  double match_other = 0.2;
  double laugh_given_positive = 0.6;
  double no_response_given_negative = 0.8;
  double engagement_gain = 0.02;
  double engagement_loss = 0.05;

  bool operator==(const ResponseModel&) const = default;
};

double stage_match(Stage action_stage, Stage patient_stage, const ResponseModel& model = {});

// p = engagement * cooperation_bias * match(action stage, patient stage)
double positive_probability(const PatientModel& patient, Stage action_stage,
                            const ResponseModel& model = {});

// Draws one response and applies the engagement update. Consumes exactly two
// uniforms from `rng`.
PatientResponse respond(PatientModel& patient, Stage action_stage, Rng& rng,
                        const ResponseModel& model = {});

struct ProgressionRule {
  int k = 3;
  double theta = 0.6;
  bool operator==(const ProgressionRule&) const = default;
};

// Next stage iff the last K sessions at the current stage all succeeded with a
// positive-response fraction >= theta. Never skips or regresses.
std::optional<Stage> maybe_advance(const PatientModel& patient, const ProgressionRule& rule);

enum class ExpertMode : std::uint8_t { AutoAdvance, Conservative };
std::string_view to_string(ExpertMode m);
ExpertMode parse_expert_mode(std::string_view text);

struct ExpertPolicy {
  ExpertMode mode = ExpertMode::AutoAdvance;
  std::int64_t ack_delay_ms = 5'000;
  // Disabled in live mode: the human steers stage changes.
  bool stage_changes_enabled = true;
};

struct PendingAck {
  std::string patient_id;
  SimTime due;
};

// What the expert knows: latest risk per patient and alerts awaiting ack.
struct ExpertView {
  SimTime now;
  std::map<std::string, RiskLevel> risk;
  std::map<std::string, PendingAck> alerts;
};

// pending_signals: patient -> target stage. Signals turned into a
// TherapyStageChange are removed; suppressed ones stay for the next step.
// Alerts whose ack is due are removed from view.alerts.
std::vector<ExpertRecommendation> expert_step(const ExpertPolicy& policy, ExpertView& view,
                                              std::map<std::string, Stage>& pending_signals,
                                              const std::string& expert_id);

// Kernel node wrapping expert_step. Talks to the Cognitive Data Server over
// the cloud-expert link.
class ExpertNode : public Node {
 public:
  ExpertNode(std::string expert_id, std::string cds_id, ExpertPolicy policy);

  void handle(Kernel& kernel, const SimEvent& event) override;

  const std::string& id() const { return expert_id_; }
  const ExpertView& view() const { return view_; }

 private:
  void step(Kernel& kernel);

  std::string expert_id_;
  std::string cds_id_;
  ExpertPolicy policy_;
  ExpertView view_;
  std::map<std::string, Stage> pending_signals_;
};

}  // namespace therasim
