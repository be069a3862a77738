#include <doctest.h>

#include <random>
#include <set>
#include <tuple>

#include "../common/oracles.hpp"
#include "therasim/edge_robot.hpp"
#include "therasim/iot_sensors.hpp"

using namespace therasim;

namespace {

struct Envelope {
  std::uint64_t seq;
  std::int64_t arrived;
  std::string kind;
  Json payload;
};

struct CloudSink : Node {
  std::vector<Envelope> got;
  void handle(Kernel& k, const SimEvent& e) override { got.push_back({e.seq, k.now().ms, e.kind, e.payload}); }
  std::vector<Envelope> of(const std::string& kind) const {
    std::vector<Envelope> out;
    for (const auto& e : got) {
      if (e.kind == kind) out.push_back(e);
    }
    return out;
  }
};

// One robot wired to a recording cloud node, optionally with real sensors.
struct Harness {
  Kernel kernel;
  CloudSink cds;
  TreeCatalog catalog;
  PatientModel patient;
  std::unique_ptr<RobotNode> robot;
  std::vector<std::unique_ptr<SensorNode>> sensors;

  Harness(std::uint64_t seed, Stage stage, double engagement, double coop, EdgeConfig cfg = {},
          bool with_sensors = false, std::vector<AnomalyScript> anomalies = {})
      : kernel(seed), catalog(bt::builtin_trees().begin(), bt::builtin_trees().end()) {
    patient.patient_id = "p1";
    patient.stage = stage;
    patient.engagement = engagement;
    patient.cooperation_bias = coop;
    const TherapyCommand initial{"p1", stage, std::string(stage_info(stage).default_tree), {}};
    robot = std::make_unique<RobotNode>("p1", cfg, initial, catalog, patient, kernel.make_rng("patient/p1"),
                                        ResponseModel{}, ProgressionRule{}, "cds");
    kernel.add_node("robot/p1", *robot);
    kernel.add_node("cds", cds);
    kernel.add_link("robot/p1", "cds", LinkModel{"edge-cloud", 20, 1000});
    if (with_sensors) {
      for (const auto& [kind, profile] : default_profiles()) {
        std::vector<AnomalyScript> mine;
        for (const auto& a : anomalies) {
          if (a.kind == kind) mine.push_back(a);
        }
        const std::string id = "sensor/p1/" + std::string(to_string(kind));
        sensors.push_back(std::make_unique<SensorNode>(id, "p1", "robot/p1", profile, mine, kernel.make_rng(id),
                                                       default_physical_bounds()));
        kernel.add_node(id, *sensors.back());
      }
    }
  }

  void start() {
    for (auto& s : sensors) s->start(kernel);
    robot->start(kernel);
  }
};

SensorFrame frame(SensorKind kind, double value, std::int64_t t, std::uint64_t seq = 0) {
  return SensorFrame{"sensor/p1/" + std::string(to_string(kind)), "p1", kind, SimTime{t}, value, seq};
}

}  // namespace

// ---------------------------------------------------------------------------
// fuse

TEST_CASE("empty window fuses to zero counts") {
  const auto r = fuse("p1", {}, {}, NetworkInfo{"5G", 0, 1.0}, SimTime{0}, SimTime{10000});
  CHECK(r.vitals.empty());
  CHECK(r.ambient.empty());
  CHECK(r.interactions.empty());
  CHECK(validate(r).ok());
}

TEST_CASE("SpO2 97, 95, 96 fuse to mean 96, min 95, max 97, count 3") {
  const auto r = fuse("p1", {frame(SensorKind::SpO2, 97, 0), frame(SensorKind::SpO2, 95, 1000), frame(SensorKind::SpO2, 96, 2000)},
                      {}, NetworkInfo{"5G", 0, 1.0}, SimTime{0}, SimTime{10000});
  const auto& s = r.vitals.at(SensorKind::SpO2);
  CHECK(s.mean == 96.0);
  CHECK(s.min == 95.0);
  CHECK(s.max == 97.0);
  CHECK(s.count == 3);
}

TEST_CASE("fusion matches a single-pass recomputation on random windows") {
  std::mt19937_64 g(17);
  std::uniform_int_distribution<int> nframes(0, 60), kind_ix(0, 10);
  for (int w = 0; w < 200; ++w) {
    const std::int64_t t0 = w * 10000;
    const std::int64_t t1 = t0 + 10000;
    std::uniform_int_distribution<std::int64_t> tdist(t0, t1 - 1);
    std::vector<SensorFrame> frames;
    for (int n = nframes(g); n > 0; --n) {
      const SensorKind k = kAllSensorKinds[static_cast<std::size_t>(kind_ix(g))];
      const Range& r = default_physical_bounds().at(k);
      std::uniform_real_distribution<double> v(r.lo + 1e-6, r.hi - 1e-6);
      frames.push_back(frame(k, v(g), tdist(g)));
    }
    std::vector<InteractionEvent> events;
    for (int n = static_cast<int>(g() % 5); n > 0; --n) {
      events.push_back(InteractionEvent{SimTime{tdist(g)}, "p1/s1", "wave", PatientResponse::Laugh, Modality::Image});
    }
    const auto rec = fuse("p1", frames, events, NetworkInfo{"5G", 0, 1.0}, SimTime{t0}, SimTime{t1});
    CHECK(validate(rec).ok());

    struct Acc {
      double sum = 0, lo = 0, hi = 0;
      std::uint64_t n = 0;
    };
    std::map<SensorKind, Acc> acc;
    for (const auto& f : frames) {
      Acc& a = acc[f.kind];
      if (a.n == 0) a.lo = a.hi = f.value;
      a.sum += f.value;
      a.lo = std::min(a.lo, f.value);
      a.hi = std::max(a.hi, f.value);
      ++a.n;
    }
    std::size_t seen = 0;
    for (const auto& [k, a] : acc) {
      const auto& table = is_medical(k) ? rec.vitals : rec.ambient;
      REQUIRE(table.contains(k));
      const KindSummary& s = table.at(k);
      CHECK(s.count == a.n);
      CHECK(s.min == a.lo);
      CHECK(s.max == a.hi);
      CHECK(s.mean == doctest::Approx(a.sum / static_cast<double>(a.n)).epsilon(1e-12));
      ++seen;
    }
    CHECK(seen == rec.vitals.size() + rec.ambient.size());
    REQUIRE(rec.interactions.size() == events.size());
    for (std::size_t i = 1; i < rec.interactions.size(); ++i) CHECK(rec.interactions[i - 1].t <= rec.interactions[i].t);
  }
}

TEST_CASE("frames outside the window are rejected") {
  CHECK_THROWS_AS(fuse("p1", {frame(SensorKind::SpO2, 97, 10000)}, {}, NetworkInfo{"5G", 0, 1}, SimTime{0}, SimTime{10000}),
                  OutOfWindowFrame);
  auto other = frame(SensorKind::SpO2, 97, 0);
  other.patient_id = "p2";
  CHECK_THROWS_AS(fuse("p1", {other}, {}, NetworkInfo{"5G", 0, 1}, SimTime{0}, SimTime{10000}), OutOfWindowFrame);
}

// ---------------------------------------------------------------------------
// monitor

TEST_CASE("monitor: SpO2 85 under the default rules alerts with cause (SpO2, 85, 90)") {
  const auto a = monitor(frame(SensorKind::SpO2, 85, 0), default_emergency_rules());
  REQUIRE(a.has_value());
  CHECK(a->cause.kind == SensorKind::SpO2);
  CHECK(a->cause.value == 85);
  CHECK(a->cause.threshold == 90);
  CHECK(a->cause.side == BoundSide::Lower);
}

TEST_CASE("monitor: boundary and unruled kinds do not alert") {
  CHECK_FALSE(monitor(frame(SensorKind::SpO2, 90, 0), default_emergency_rules()).has_value());
  CHECK_FALSE(monitor(frame(SensorKind::AmbientTemp, 55, 0), default_emergency_rules()).has_value());
  CHECK(monitor(frame(SensorKind::Heartbeat, 121, 0), default_emergency_rules())->cause.side == BoundSide::Upper);
  CHECK(monitor(frame(SensorKind::Heartbeat, 49, 0), default_emergency_rules())->cause.threshold == 50);
  CHECK_FALSE(monitor(frame(SensorKind::BodyTemp, 39.5, 0), default_emergency_rules()).has_value());
}

TEST_CASE("default rules are valid and rule checks reject bad sets") {
  CHECK_NOTHROW(check_rules(default_emergency_rules()));
  CHECK_THROWS_AS(check_rules({EmergencyRule{SensorKind::SpO2, 90.0, std::nullopt}}), std::invalid_argument);
  CHECK_THROWS_AS(check_rules({EmergencyRule{SensorKind::SpO2, 120.0, std::nullopt},
                               EmergencyRule{SensorKind::Heartbeat, 50.0, 120.0}}),
                  std::invalid_argument);
}

// ---------------------------------------------------------------------------
// sessions

TEST_CASE("a tree that succeeds on the first tick closes after one step") {
  bt::TreeDef t;
  t.tree_id = "entry_playball";
  t.stage = Stage::Entry;
  t.root.kind = bt::NodeKind::Action;
  t.root.name = "L0";
  t.root.action_spec = bt::ActionSpec{"wave", Modality::Image, std::nullopt, {}, 1};
  RobotState st;
  st.robot_id = "robot/p1";
  st.patient_id = "p1";
  st.active_command = TherapyCommand{"p1", Stage::Entry, "entry_playball", {}};
  open_session(st, SimTime{3000});
  oracle::ScriptedResponder r;
  r.outcome = {bt::Status::Success};
  const auto step = run_session_step(st, t, r, SimTime{3000});
  REQUIRE(step.record.has_value());
  CHECK(step.record->outcome == SessionOutcome::Success);
  CHECK(step.record->steps == 1);
  CHECK(step.record->duration_ms == st.beat_ms);
  CHECK(step.record->event_count == 1);
  CHECK_FALSE(st.open_session.has_value());
  CHECK_THROWS_AS(run_session_step(st, t, r, SimTime{6000}), NoActiveSession);
}

TEST_CASE("knock-knock with a patient who never answers fails after the re-prompt budget") {
  // Beat 1: "Knock knock", the who's-there check fails, the joke branch
  // fails and the fallback's re-prompt has to wait for the next beat.
  // Beats 2-4: three re-prompts, none answered; the third spends the budget.
  const bt::TreeDef& tree = bt::builtin_tree("middle_knockknock");
  PatientModel patient;
  patient.patient_id = "p1";
  patient.stage = Stage::Middle;
  patient.engagement = 0;
  Rng rng(5);
  TherapyResponder responder(patient, rng, ResponseModel{});
  RobotState st;
  st.robot_id = "robot/p1";
  st.patient_id = "p1";
  st.active_command = TherapyCommand{"p1", Stage::Middle, "middle_knockknock", {}};
  open_session(st, SimTime{0});
  std::optional<SessionRecord> rec;
  std::vector<std::string> actions;
  int beats = 0;
  for (; beats < 20 && !rec; ++beats) {
    responder.begin_beat(Stage::Middle);
    auto step = run_session_step(st, tree, responder, SimTime{beats * 3000});
    for (const auto& e : step.events) actions.push_back(e.action);
    rec = step.record;
  }
  REQUIRE(rec.has_value());
  CHECK(rec->outcome == SessionOutcome::Failure);
  CHECK(rec->steps == 4);
  CHECK(rec->event_count == 4);
  CHECK(rec->duration_ms == 4 * 3000);
  CHECK(actions == std::vector<std::string>{"say_knock_knock", "reprompt_knock_knock", "reprompt_knock_knock",
                                            "reprompt_knock_knock"});
  CHECK(rec->positive_fraction == 0.0);
}

TEST_CASE("apply_update: idle applies now, open session defers, wrong tree throws") {
  RobotState st;
  st.robot_id = "robot/p1";
  st.patient_id = "p1";
  const TreeCatalog catalog(bt::builtin_trees().begin(), bt::builtin_trees().end());
  apply_update(st, TherapyCommand{"p1", Stage::Entry, "entry_spinning", {}}, catalog);
  CHECK(st.active_command->tree_id == "entry_spinning");
  CHECK(open_session(st, SimTime{0}).tree_id == "entry_spinning");
  apply_update(st, TherapyCommand{"p1", Stage::Basic, "basic_aladdin", {}}, catalog);
  CHECK(st.active_command->tree_id == "entry_spinning");
  CHECK(st.pending_command->tree_id == "basic_aladdin");
  CHECK_THROWS_AS(apply_update(st, TherapyCommand{"p1", Stage::Entry, "middle_knockknock", {}}, catalog),
                  StageTreeMismatch);
}

TEST_CASE("mid-session update takes effect exactly one boundary later") {
  Harness h(3, Stage::Entry, 0.5, 0.5);
  h.start();
  // First session opens at t=0; the command lands while it is still running.
  h.kernel.run_until(SimTime{1000});
  REQUIRE(h.robot->state().open_session.has_value());
  const std::string first_session = h.robot->state().open_session->session_id;
  const TherapyCommand cmd{"p1", Stage::Entry, "entry_chasing", {{"rec_id", "expert@1000:TherapyStageChange"}}};
  h.kernel.schedule(SimTime{1000}, "robot/p1", "command", Json{{"msg", to_wire(cmd)}});
  h.kernel.run_until(SimTime{200000});

  std::vector<SessionRecord> sessions;
  for (const auto& e : h.cds.of("session_record")) sessions.push_back(from_wire<SessionRecord>(e.payload.at("msg")));
  REQUIRE(sessions.size() >= 3);
  CHECK(sessions[0].session_id == first_session);
  CHECK(sessions[0].tree_id == "entry_playball");
  CHECK(sessions[1].tree_id == "entry_chasing");
  CHECK(sessions[1].cause == "expert@1000:TherapyStageChange");
  const auto applied = h.cds.of("stage_applied");
  REQUIRE(applied.size() == 1);
  const auto sa = from_wire<StageApplied>(applied[0].payload.at("msg"));
  CHECK(sa.tree_id == "entry_chasing");
  CHECK(sa.applied_at == sessions[0].started_at + (sessions[0].duration_ms - 3000));
}

TEST_CASE("session accounting: one record per closed session, no shared interaction events") {
  Harness h(8, Stage::Basic, 0.7, 0.7, {}, true);
  h.start();
  h.kernel.run_until(SimTime{300000});
  const auto records = h.cds.of("session_record");
  const auto fused = h.cds.of("fused_record");
  std::set<std::string> ids;
  std::uint64_t events_in_sessions = 0;
  for (const auto& e : records) {
    const auto s = from_wire<SessionRecord>(e.payload.at("msg"));
    CHECK(ids.insert(s.session_id).second);
    CHECK(s.duration_ms == static_cast<std::int64_t>(s.steps) * 3000);
    events_in_sessions += s.event_count;
  }
  CHECK(h.robot->state().sessions_opened - (h.robot->state().open_session ? 1 : 0) >= records.size());
  // Fused windows tile time and carry each interaction once.
  std::int64_t expect_t0 = 0;
  std::set<std::tuple<std::int64_t, std::string, std::string>> seen;
  std::uint64_t events_in_windows = 0;
  for (const auto& e : fused) {
    const auto r = from_wire<FusedRecord>(e.payload.at("msg"));
    CHECK(r.t0.ms == expect_t0);
    CHECK(r.t1.ms == expect_t0 + 10000);
    expect_t0 = r.t1.ms;
    for (const auto& ev : r.interactions) {
      CHECK(seen.insert({ev.t.ms, ev.session_id, ev.action}).second);
      ++events_in_windows;
    }
  }
  CHECK(events_in_windows >= events_in_sessions);
}

// ---------------------------------------------------------------------------
// uplink and alerts

TEST_CASE("uplink flush sends the buffer in order and empties it") {
  Kernel k(1);
  CloudSink cds;
  CloudSink robot_sink;
  k.add_node("cds", cds);
  k.add_node("robot/p1", robot_sink);
  k.add_link("robot/p1", "cds", LinkModel{"edge-cloud", 20, 1000});
  RobotState st;
  st.robot_id = "robot/p1";
  st.patient_id = "p1";
  CHECK(uplink_flush(st, k, "cds").empty());
  st.uplink_buffer.push_back({"a", Json{{"pad", std::string(380, 'x')}}});
  st.uplink_buffer.push_back({"b", Json{{"pad", std::string(580, 'y')}}});
  const auto ds = uplink_flush(st, k, "cds");
  CHECK(st.uplink_buffer.empty());
  REQUIRE(ds.size() == 2);
  CHECK(ds[0].size_bytes == 390);
  CHECK(ds[1].size_bytes == 590);
  CHECK(ds[0].arrival.ms == 20 + (390 * 8 + 999) / 1000);
  CHECK(ds[1].arrival.ms == 20 + (590 * 8 + 999) / 1000);
  k.run_until(SimTime{100});
  REQUIRE(cds.got.size() == 2);
  CHECK(cds.got[0].kind == "a");
  CHECK(cds.got[0].seq < cds.got[1].seq);
}

TEST_CASE("service_data_flow_bytes equals the robot's traffic since the previous fused record") {
  Harness h(11, Stage::Entry, 0.8, 0.8, {}, true, {AnomalyScript{SensorKind::Heartbeat, SimTime{30000}, 20000, 60}});
  h.start();
  h.kernel.run_until(SimTime{250000});
  auto got = h.cds.got;
  std::sort(got.begin(), got.end(), [](const auto& a, const auto& b) { return a.seq < b.seq; });
  std::uint64_t current = 0;
  std::uint64_t flush = 0;
  int checked = 0;
  for (const auto& e : got) {
    const auto size = e.payload.at("size").get<std::uint64_t>();
    if (e.kind == "session_record") {
      flush += size;
    } else if (e.kind == "fused_record") {
      const auto r = from_wire<FusedRecord>(e.payload.at("msg"));
      CHECK(r.network_info.service_data_flow_bytes == current);
      current = flush + size;
      flush = 0;
      ++checked;
    } else {
      current += size;
    }
  }
  CHECK(checked == 24);
  CHECK(h.cds.of("alert").size() == 1);
}

TEST_CASE("communication quality is one minus the mean observed delay over the reference") {
  Harness h(12, Stage::Entry, 0.8, 0.8, {}, true);
  h.start();
  h.kernel.run_until(SimTime{100000});
  auto got = h.cds.got;
  std::sort(got.begin(), got.end(), [](const auto& a, const auto& b) { return a.seq < b.seq; });
  std::int64_t delay_sum = 0;
  std::int64_t n = 0;
  std::int64_t flush_sum = 0;
  std::int64_t flush_n = 0;
  bool first = true;
  for (const auto& e : got) {
    const std::int64_t delay = e.arrived - e.payload.at("sent_at").get<std::int64_t>();
    if (e.kind == "session_record") {
      flush_sum += delay;
      ++flush_n;
    } else if (e.kind == "fused_record") {
      const auto r = from_wire<FusedRecord>(e.payload.at("msg"));
      const double mean = n > 0 ? static_cast<double>(delay_sum) / static_cast<double>(n) : 20.0;
      if (!first || n > 0) CHECK(r.network_info.communication_quality == doctest::Approx(1.0 - mean / 200.0));
      first = false;
      delay_sum = flush_sum + delay;
      n = flush_n + 1;
      flush_sum = flush_n = 0;
    } else {
      delay_sum += delay;
      ++n;
    }
  }
}

TEST_CASE("alerts leave in the same tick as the violating frame and latch until recovery") {
  Harness h(4, Stage::Entry, 0.5, 0.5);
  h.start();
  auto feed = [&](double v, std::int64_t t, std::uint64_t seq) {
    h.kernel.schedule(SimTime{t}, "robot/p1", "frame", to_wire(frame(SensorKind::SpO2, v, t, seq)));
  };
  feed(85, 1000, 0);
  feed(84, 2000, 1);
  feed(95, 3000, 2);
  feed(80, 4000, 3);
  h.kernel.run_until(SimTime{6000});
  const auto alerts = h.cds.of("alert");
  REQUIRE(alerts.size() == 2);
  const auto a0 = from_wire<EmergencyAlert>(alerts[0].payload.at("msg"));
  CHECK(a0.alert_id == "p1/alert1");
  CHECK(alerts[0].payload.at("sent_at") == 1000);
  const auto size = alerts[0].payload.at("size").get<std::int64_t>();
  CHECK(alerts[0].arrived == 1000 + 20 + (size * 8 + 999) / 1000);
  CHECK(from_wire<EmergencyAlert>(alerts[1].payload.at("msg")).cause.value == 80);
}

TEST_CASE("robot offloads session analysis by the cost rule") {
  Harness h(5, Stage::Entry, 0.9, 0.9);
  h.start();
  h.kernel.run_until(SimTime{60000});
  const auto records = h.cds.of("session_record");
  REQUIRE_FALSE(records.empty());
  const EdgeComputeConfig c;
  for (const auto& e : records) {
    const auto s = from_wire<SessionRecord>(e.payload.at("msg"));
    const auto events = static_cast<std::int64_t>(s.event_count);
    const std::int64_t cycles = c.base_cycles + c.cycles_per_event * events;
    CHECK(s.analysis_cycles == cycles);
    CHECK(s.analysis_placement ==
          oracle::offload_oracle(cycles, c.bytes_per_event * events, c.edge_capacity, c.cloud_capacity, 20, 1000));
  }
}
