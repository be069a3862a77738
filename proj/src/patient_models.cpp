#include "therasim/patient_models.hpp"

#include <algorithm>
#include <stdexcept>

#include <fmt/format.h>

namespace therasim {

void PatientModel::set_stage(Stage s) {
  if (s == stage) return;
  stage = s;
  stage_start = history.size();
}

double stage_match(Stage action_stage, Stage patient_stage, const ResponseModel& model) {
  const int diff = static_cast<int>(action_stage) - static_cast<int>(patient_stage);
  if (diff == 0) return model.match_same;
  if (diff == 1) return model.match_one_above;
  if (diff == -1) return model.match_one_below;
  return model.match_other;
}

double positive_probability(const PatientModel& patient, Stage action_stage,
                            const ResponseModel& model) {
  const double p = patient.engagement * patient.cooperation_bias *
                   stage_match(action_stage, patient.stage, model);
  return std::clamp(p, 0.0, 1.0);
}

PatientResponse respond(PatientModel& patient, Stage action_stage, Rng& rng,
                        const ResponseModel& model) {
  const double p = positive_probability(patient, action_stage, model);
  const double u_positive = rng.uniform();
  const double u_flavor = rng.uniform();

  PatientResponse r;
  if (u_positive < p) {
    r = u_flavor < model.laugh_given_positive ? PatientResponse::Laugh : PatientResponse::VerbalReply;
    patient.engagement += model.engagement_gain;
  } else {
    r = u_flavor < model.no_response_given_negative ? PatientResponse::NoResponse
                                                    : PatientResponse::Withdrawal;
    if (r == PatientResponse::Withdrawal) patient.engagement -= model.engagement_loss;
  }
  patient.engagement = std::clamp(patient.engagement, 0.0, 1.0);
  return r;
}

std::optional<Stage> maybe_advance(const PatientModel& patient, const ProgressionRule& rule) {
  const auto next = next_stage(patient.stage);
  if (!next || rule.k <= 0) return std::nullopt;
  const std::size_t k = static_cast<std::size_t>(rule.k);
  const std::size_t at_stage = patient.history.size() - std::min(patient.stage_start, patient.history.size());
  if (at_stage < k) return std::nullopt;
  for (std::size_t i = patient.history.size() - k; i < patient.history.size(); ++i) {
    const auto& h = patient.history[i];
    if (h.outcome != SessionOutcome::Success || h.positive_fraction < rule.theta) return std::nullopt;
  }
  return next;
}

std::string_view to_string(ExpertMode m) {
  return m == ExpertMode::AutoAdvance ? "AutoAdvance" : "Conservative";
}

ExpertMode parse_expert_mode(std::string_view text) {
  if (text == "AutoAdvance") return ExpertMode::AutoAdvance;
  if (text == "Conservative") return ExpertMode::Conservative;
  throw std::invalid_argument(fmt::format("'{}' is not AutoAdvance or Conservative", text));
}

std::vector<ExpertRecommendation> expert_step(const ExpertPolicy& policy, ExpertView& view,
                                              std::map<std::string, Stage>& pending_signals,
                                              const std::string& expert_id) {
  std::vector<ExpertRecommendation> out;

  for (auto it = view.alerts.begin(); it != view.alerts.end();) {
    if (it->second.due <= view.now) {
      ExpertRecommendation ack;
      ack.expert_id = expert_id;
      ack.patient_id = it->second.patient_id;
      ack.kind = RecommendationKind::EmergencyAck;
      ack.alert_id = it->first;
      ack.issued_at = view.now;
      out.push_back(std::move(ack));
      it = view.alerts.erase(it);
    } else {
      ++it;
    }
  }

  if (!policy.stage_changes_enabled) return out;
  for (auto it = pending_signals.begin(); it != pending_signals.end();) {
    const auto risk = view.risk.find(it->first);
    const RiskLevel level = risk == view.risk.end() ? RiskLevel::Low : risk->second;
    if (policy.mode == ExpertMode::Conservative && level > RiskLevel::Low) {
      ++it;
      continue;
    }
    ExpertRecommendation change;
    change.expert_id = expert_id;
    change.patient_id = it->first;
    change.kind = RecommendationKind::TherapyStageChange;
    change.target_stage = it->second;
    change.issued_at = view.now;
    out.push_back(std::move(change));
    it = pending_signals.erase(it);
  }
  return out;
}

ExpertNode::ExpertNode(std::string expert_id, std::string cds_id, ExpertPolicy policy)
    : expert_id_(std::move(expert_id)), cds_id_(std::move(cds_id)), policy_(policy) {}

void ExpertNode::handle(Kernel& kernel, const SimEvent& event) {
  view_.now = kernel.now();
  const Json& msg = event.payload.contains("msg") ? event.payload["msg"] : event.payload;

  if (event.kind == "progress_signal") {
    const auto signal = from_wire<ProgressSignal>(msg);
    pending_signals_[signal.patient_id] = signal.to_stage;
  } else if (event.kind == "risk_change") {
    const auto change = from_wire<RiskChange>(msg);
    view_.risk[change.patient_id] = change.assessment.level;
  } else if (event.kind == "alert") {
    const auto alert = from_wire<EmergencyAlert>(msg);
    const SimTime due = kernel.now() + policy_.ack_delay_ms;
    view_.alerts[alert.alert_id] = PendingAck{alert.patient_id, due};
    kernel.schedule(due, expert_id_, "ack_due", Json{{"alert_id", alert.alert_id}});
  } else if (event.kind == "alert_cleared") {
    view_.alerts.erase(from_wire<AlertCleared>(msg).alert_id);
  } else if (event.kind != "ack_due") {
    throw Error(fmt::format("expert got unexpected '{}'", event.kind));
  }
  step(kernel);
}

void ExpertNode::step(Kernel& kernel) {
  for (const auto& rec : expert_step(policy_, view_, pending_signals_, expert_id_)) {
    kernel.deliver(expert_id_, cds_id_, "recommendation", to_wire(rec));
  }
}

}  // namespace therasim
