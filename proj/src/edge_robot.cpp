#include "therasim/edge_robot.hpp"

#include <algorithm>
#include <stdexcept>

#include <fmt/format.h>

namespace therasim {

EmergencyRuleSet default_emergency_rules() {
  return {
      {SensorKind::SpO2, 90.0, std::nullopt},
      {SensorKind::Heartbeat, 50.0, 120.0},
      {SensorKind::SystolicPressure, 80.0, 180.0},
      {SensorKind::BodyTemp, 35.0, 39.5},
  };
}

void check_rules(const EmergencyRuleSet& rules, const PhysicalBounds& bounds) {
  bool spo2 = false;
  bool heart = false;
  for (const auto& r : rules) {
    const Range& range = bounds.at(r.kind);
    if (!r.lower && !r.upper) {
      throw std::invalid_argument(fmt::format("{} rule has no bound", to_string(r.kind)));
    }
    for (const auto& b : {r.lower, r.upper}) {
      if (b && !(*b >= range.lo && *b <= range.hi)) {
        throw std::invalid_argument(fmt::format("{} rule bound {} outside physical range {}",
                                                to_string(r.kind), *b, range.describe()));
      }
    }
    if (r.lower && r.upper && *r.lower > *r.upper) {
      throw std::invalid_argument(fmt::format("{} rule has lower > upper", to_string(r.kind)));
    }
    spo2 |= r.kind == SensorKind::SpO2;
    heart |= r.kind == SensorKind::Heartbeat;
  }
  if (!spo2 || !heart) throw std::invalid_argument("emergency rules must cover SpO2 and Heartbeat");
}

void to_json(Json& j, const EmergencyRule& r) {
  j = Json{{"kind", r.kind}};
  j["lower"] = r.lower ? Json(*r.lower) : Json(nullptr);
  j["upper"] = r.upper ? Json(*r.upper) : Json(nullptr);
}

void from_json(const Json& j, EmergencyRule& r) {
  for (const auto& [key, _] : j.items()) {
    if (key != "kind" && key != "lower" && key != "upper") {
      throw std::invalid_argument(fmt::format("unknown key '{}'", key));
    }
  }
  r.kind = j.at("kind").get<SensorKind>();
  r.lower.reset();
  r.upper.reset();
  if (j.contains("lower") && !j["lower"].is_null()) r.lower = j["lower"].get<double>();
  if (j.contains("upper") && !j["upper"].is_null()) r.upper = j["upper"].get<double>();
}

std::optional<EmergencyAlert> monitor(const SensorFrame& frame, const EmergencyRuleSet& rules) {
  for (const auto& r : rules) {
    if (r.kind != frame.kind) continue;
    if (r.lower && frame.value < *r.lower) {
      return EmergencyAlert{"", frame.patient_id, {frame.kind, frame.value, *r.lower, BoundSide::Lower}, frame.t};
    }
    if (r.upper && frame.value > *r.upper) {
      return EmergencyAlert{"", frame.patient_id, {frame.kind, frame.value, *r.upper, BoundSide::Upper}, frame.t};
    }
  }
  return std::nullopt;
}

FusedRecord fuse(const std::string& patient_id, const std::vector<SensorFrame>& frames,
                 const std::vector<InteractionEvent>& interactions, const NetworkInfo& net,
                 SimTime t0, SimTime t1) {
  if (!(t0 < t1)) throw std::invalid_argument(fmt::format("window [{}, {}) is empty", t0.ms, t1.ms));

  struct Acc {
    double sum = 0;
    double min = 0;
    double max = 0;
    std::uint64_t count = 0;
  };
  std::map<SensorKind, Acc> acc;
  for (const auto& f : frames) {
    if (f.patient_id != patient_id) {
      throw OutOfWindowFrame(fmt::format("frame {} #{} belongs to '{}', not '{}'", f.sensor_id, f.seq,
                                         f.patient_id, patient_id));
    }
    if (f.t < t0 || f.t >= t1) {
      throw OutOfWindowFrame(fmt::format("frame {} #{} at t={} outside [{}, {})", f.sensor_id, f.seq,
                                         f.t.ms, t0.ms, t1.ms));
    }
    Acc& a = acc[f.kind];
    if (a.count == 0) {
      a.min = a.max = f.value;
    } else {
      a.min = std::min(a.min, f.value);
      a.max = std::max(a.max, f.value);
    }
    a.sum += f.value;
    ++a.count;
  }

  FusedRecord rec;
  rec.patient_id = patient_id;
  rec.t0 = t0;
  rec.t1 = t1;
  rec.network_info = net;
  for (const auto& [kind, a] : acc) {
    KindSummary s{a.sum / static_cast<double>(a.count), a.min, a.max, a.count};
    (is_medical(kind) ? rec.vitals : rec.ambient)[kind] = s;
  }
  for (const auto& ev : interactions) {
    if (ev.t < t0 || ev.t >= t1) {
      throw OutOfWindowFrame(fmt::format("interaction '{}' at t={} outside [{}, {})", ev.action, ev.t.ms,
                                         t0.ms, t1.ms));
    }
  }
  rec.interactions = interactions;
  std::stable_sort(rec.interactions.begin(), rec.interactions.end(),
                   [](const InteractionEvent& a, const InteractionEvent& b) { return a.t < b.t; });
  return rec;
}

StepResult run_session_step(RobotState& state, const bt::TreeDef& tree, bt::Responder& responder, SimTime now) {
  if (!state.open_session) throw NoActiveSession(fmt::format("{} has no open session", state.robot_id));
  OpenSession& s = *state.open_session;
  if (tree.tree_id != s.tree_id) {
    throw InvariantViolation(fmt::format("session runs '{}' but was given '{}'", s.tree_id, tree.tree_id));
  }
  if (s.steps == 0) s.started_at = now;
  s.bb.now = now;

  bt::TickResult tick = bt::tick(tree, s.bb, responder);
  ++s.steps;
  for (const auto& ev : tick.events) {
    if (const auto v = validate(ev, s.stage); !v.ok()) {
      throw InvariantViolation(fmt::format("interaction: {}", v.to_json().dump()));
    }
    ++s.events;
    if (is_positive(ev.patient_response)) ++s.positives;
  }

  StepResult out;
  out.status = tick.status;
  out.events = std::move(tick.events);
  if (tick.status == bt::Status::Running) return out;

  SessionRecord rec;
  rec.session_id = s.session_id;
  rec.patient_id = state.patient_id;
  rec.tree_id = s.tree_id;
  rec.stage = s.stage;
  rec.outcome = tick.status == bt::Status::Success ? SessionOutcome::Success : SessionOutcome::Failure;
  rec.event_count = s.events;
  rec.steps = s.steps;
  rec.duration_ms = static_cast<std::int64_t>(s.steps) * state.beat_ms;
  rec.started_at = s.started_at;
  rec.closed_at = s.started_at + rec.duration_ms;
  rec.positive_fraction = s.events == 0 ? 0.0 : static_cast<double>(s.positives) / static_cast<double>(s.events);
  rec.cause = state.active_command && state.active_command->session_params.contains("rec_id")
                  ? state.active_command->session_params.at("rec_id")
                  : "scenario";
  out.record = std::move(rec);
  state.open_session.reset();
  return out;
}

void apply_update(RobotState& state, const TherapyCommand& cmd, const TreeCatalog& catalog) {
  auto it = catalog.find(cmd.tree_id);
  if (!stage_has_tree(cmd.stage, cmd.tree_id) || it == catalog.end() || it->second.stage != cmd.stage) {
    throw StageTreeMismatch(fmt::format("tree '{}' is not a {} tree", cmd.tree_id, to_string(cmd.stage)));
  }
  if (state.open_session) {
    state.pending_command = cmd;
  } else {
    state.active_command = cmd;
    state.pending_command.reset();
  }
}

OpenSession& open_session(RobotState& state, SimTime now) {
  if (state.open_session) throw InvariantViolation(fmt::format("{} already has an open session", state.robot_id));
  if (!state.active_command) throw InvariantViolation(fmt::format("{} has no therapy command", state.robot_id));
  OpenSession s;
  s.session_id = fmt::format("{}/s{}", state.patient_id, ++state.sessions_opened);
  s.tree_id = state.active_command->tree_id;
  s.stage = state.active_command->stage;
  s.bb.session_id = s.session_id;
  s.bb.now = now;
  s.started_at = now;
  state.open_session = std::move(s);
  return *state.open_session;
}

std::vector<Delivery> uplink_flush(RobotState& state, Kernel& kernel, const std::string& cds_id) {
  std::vector<Delivery> out;
  out.reserve(state.uplink_buffer.size());
  for (auto& item : state.uplink_buffer) {
    out.push_back(kernel.deliver(state.robot_id, cds_id, item.kind, std::move(item.msg)));
  }
  state.uplink_buffer.clear();
  return out;
}

// ---------------------------------------------------------------------------
// Responder

bt::LeafResult TherapyResponder::act(const bt::NodeDef& leaf, bt::Blackboard& bb) {
  if (acted_) return {bt::Status::Running, std::nullopt};
  acted_ = true;
  const bt::ActionSpec& spec = *leaf.action_spec;
  const PatientResponse r = respond(patient_, stage_, rng_, model_);
  const int attempts = ++bb.counters[leaf.name];
  if (spec.accepts(r)) {
    bb.counters.erase(leaf.name);
    return {bt::Status::Success, r};
  }
  if (attempts < spec.max_attempts) return {bt::Status::Running, r};
  bb.counters.erase(leaf.name);
  return {bt::Status::Failure, r};
}

bt::Status TherapyResponder::check(const bt::NodeDef& leaf, const bt::Blackboard& bb) {
  if (!bb.last_response) return bt::Status::Failure;
  return leaf.action_spec->accepts(*bb.last_response) ? bt::Status::Success : bt::Status::Failure;
}

// ---------------------------------------------------------------------------
// Robot node

RobotNode::RobotNode(std::string patient_id, EdgeConfig config, TherapyCommand initial,
                     const TreeCatalog& catalog, PatientModel& patient, Rng patient_rng,
                     ResponseModel response, ProgressionRule progression, std::string cds_id)
    : config_(std::move(config)),
      catalog_(catalog),
      patient_(patient),
      patient_rng_(patient_rng),
      responder_(patient_, patient_rng_, response),
      progression_(progression),
      cds_id_(std::move(cds_id)) {
  state_.robot_id = robot_id_for(patient_id);
  state_.patient_id = std::move(patient_id);
  state_.fusion_window_ms = config_.fusion_window_ms;
  state_.beat_ms = config_.beat_ms;
  apply_update(state_, initial, catalog_);
}

void RobotNode::start(Kernel& kernel) {
  kernel.schedule(SimTime{0}, state_.robot_id, "beat", Json::object());
  kernel.schedule(SimTime{config_.fusion_window_ms}, state_.robot_id, "window_close", Json::object());
}

void RobotNode::handle(Kernel& kernel, const SimEvent& event) {
  const SimTime now = kernel.now();
  if (event.kind == "frame") {
    on_frame(kernel, from_wire<SensorFrame>(event.payload));
  } else if (event.kind == "beat") {
    on_beat(kernel);
    kernel.schedule(now + config_.beat_ms, state_.robot_id, "beat", Json::object());
  } else if (event.kind == "window_close") {
    on_window_close(kernel);
    kernel.schedule(now + config_.fusion_window_ms, state_.robot_id, "window_close", Json::object());
  } else if (event.kind == "command") {
    on_command(kernel, from_wire<TherapyCommand>(event.payload.at("msg")));
  } else if (event.kind == "review_timeout") {
    if (review_deadline_ && *review_deadline_ == now) review_deadline_.reset();
  } else {
    throw Error(fmt::format("robot got unexpected '{}'", event.kind));
  }
}

void RobotNode::send(Kernel& kernel, const std::string& kind, Json msg) {
  const Delivery d = kernel.deliver(state_.robot_id, cds_id_, kind, std::move(msg));
  window_bytes_ += static_cast<std::uint64_t>(d.size_bytes);
  window_delay_sum_ += d.arrival - kernel.now();
  ++window_deliveries_;
}

void RobotNode::on_frame(Kernel& kernel, const SensorFrame& frame) {
  if (frame.patient_id != state_.patient_id) {
    throw OutOfWindowFrame(fmt::format("{} received a frame for '{}'", state_.robot_id, frame.patient_id));
  }
  if (const auto v = validate(frame); !v.ok()) {
    throw InvariantViolation(fmt::format("frame: {}", v.to_json().dump()));
  }

  for (const auto& r : config_.emergency_rules) {
    if (r.kind != frame.kind) continue;
    if (!(r.lower && frame.value < *r.lower)) latched_.erase({r.kind, BoundSide::Lower});
    if (!(r.upper && frame.value > *r.upper)) latched_.erase({r.kind, BoundSide::Upper});
  }
  if (auto alert = monitor(frame, config_.emergency_rules)) {
    const auto key = std::make_pair(alert->cause.kind, alert->cause.side);
    if (!latched_.contains(key)) {
      latched_[key] = true;
      alert->alert_id = fmt::format("{}/alert{}", state_.patient_id, ++alerts_raised_);
      send(kernel, "alert", to_wire(*alert));
    }
  }
  frames_.push_back(frame);
}

void RobotNode::on_beat(Kernel& kernel) {
  const SimTime now = kernel.now();
  if (!state_.open_session) {
    if (review_deadline_ || !state_.active_command) return;
    const OpenSession& s = open_session(state_, now);
    const bt::TreeDef& tree = catalog_.at(s.tree_id);
    if (tree.asset_bytes > 0) {
      send(kernel, "asset_request", to_wire(AssetRequest{state_.patient_id, tree.tree_id, tree.asset_bytes, now}));
    }
  }

  const bt::TreeDef& tree = catalog_.at(state_.open_session->tree_id);
  responder_.begin_beat(tree.stage);
  StepResult step = run_session_step(state_, tree, responder_, now);
  interactions_.insert(interactions_.end(), step.events.begin(), step.events.end());
  if (step.record) close_session(kernel, std::move(*step.record));
}

void RobotNode::close_session(Kernel& kernel, SessionRecord record) {
  const auto& c = config_.compute;
  const auto events = static_cast<std::int64_t>(record.event_count);
  const OffloadTask task{record.session_id, c.base_cycles + c.cycles_per_event * events,
                         c.bytes_per_event * events, state_.robot_id};
  const OffloadDecision d =
      offload_decision(task, c.edge_capacity, c.cloud_capacity, kernel.link_between(state_.robot_id, cds_id_));
  record.analysis_placement = d.placement;
  record.analysis_cycles = task.cycles;
  if (const auto v = validate(record); !v.ok()) {
    throw InvariantViolation(fmt::format("session record: {}", v.to_json().dump()));
  }

  patient_.record_session({record.tree_id, record.stage, record.outcome, record.positive_fraction});
  state_.uplink_buffer.push_back({"session_record", to_wire(record)});

  if (state_.pending_command) {
    const TherapyCommand cmd = *state_.pending_command;
    state_.pending_command.reset();
    state_.active_command = cmd;
    apply_pending(kernel, "session boundary");
    return;
  }
  if (const auto next = maybe_advance(patient_, progression_)) {
    send(kernel, "progress_signal", to_wire(ProgressSignal{state_.patient_id, patient_.stage, *next, kernel.now()}));
    review_deadline_ = kernel.now() + config_.review_timeout_ms;
    kernel.schedule(*review_deadline_, state_.robot_id, "review_timeout", Json::object());
  }
}

void RobotNode::apply_pending(Kernel& kernel, const std::string& cause) {
  const TherapyCommand& cmd = *state_.active_command;
  const Stage previous = patient_.stage;
  patient_.set_stage(cmd.stage);
  review_deadline_.reset();
  const auto rec = cmd.session_params.find("rec_id");
  StageApplied applied{state_.patient_id, previous, cmd.stage, cmd.tree_id,
                       rec == cmd.session_params.end() ? cause : rec->second, kernel.now()};
  send(kernel, "stage_applied", to_wire(applied));
}

void RobotNode::on_command(Kernel& kernel, const TherapyCommand& cmd) {
  if (cmd.patient_id != state_.patient_id) {
    throw InvariantViolation(fmt::format("{} got a command for '{}'", state_.robot_id, cmd.patient_id));
  }
  apply_update(state_, cmd, catalog_);
  if (!state_.open_session) apply_pending(kernel, "immediate");
}

void RobotNode::on_window_close(Kernel& kernel) {
  const SimTime t1 = kernel.now();
  const SimTime t0 = window_start_;

  std::vector<SensorFrame> in_window;
  std::vector<SensorFrame> later;
  for (auto& f : frames_) (f.t < t1 ? in_window : later).push_back(std::move(f));
  frames_ = std::move(later);

  std::vector<InteractionEvent> events;
  std::vector<InteractionEvent> later_events;
  for (auto& e : interactions_) (e.t < t1 ? events : later_events).push_back(std::move(e));
  interactions_ = std::move(later_events);

  const double ref = static_cast<double>(std::max<std::int64_t>(1, config_.latency_ref_ms));
  const double mean_delay =
      window_deliveries_ > 0
          ? static_cast<double>(window_delay_sum_) / static_cast<double>(window_deliveries_)
          : static_cast<double>(kernel.link_between(state_.robot_id, cds_id_).latency_ms);
  NetworkInfo net{config_.network_type, window_bytes_, std::clamp(1.0 - mean_delay / ref, 0.0, 1.0)};
  window_bytes_ = 0;
  window_delay_sum_ = 0;
  window_deliveries_ = 0;

  FusedRecord record = fuse(state_.patient_id, in_window, events, net, t0, t1);
  if (const auto v = validate(record); !v.ok()) {
    throw InvariantViolation(fmt::format("fused record: {}", v.to_json().dump()));
  }
  window_start_ = t1;

  state_.uplink_buffer.push_back({"fused_record", to_wire(record)});
  for (const Delivery& d : uplink_flush(state_, kernel, cds_id_)) {
    window_bytes_ += static_cast<std::uint64_t>(d.size_bytes);
    window_delay_sum_ += d.arrival - t1;
    ++window_deliveries_;
  }
}

}  // namespace therasim
