#include "therasim/simulation.hpp"

#include <fstream>
#include <sstream>

#include <fmt/format.h>

namespace therasim {

// ---------------------------------------------------------------------------
// Gateway sink

void GatewayNode::push(std::int64_t t, const std::string& kind, Json data) {
  FeedItem item{++next_id_, t, kind, std::move(data)};
  if (sink_) sink_(item);
}

void GatewayNode::handle(Kernel& kernel, const SimEvent& event) {
  const std::int64_t t = kernel.now().ms;
  state_.now = t;
  const Json& msg = event.payload;

  if (event.kind == "run_start") {
    for (const auto& p : msg.at("config").at("patients")) {
      PatientView v;
      v.patient_id = p.at("id").get<std::string>();
      v.stage = p.at("stage").get<Stage>();
      v.tree_id = std::string(stage_info(v.stage).default_tree);
      state_.patients[v.patient_id] = v;
      state_.telemetry[v.patient_id];
    }
  } else if (event.kind == "risk_change") {
    const auto rc = from_wire<RiskChange>(msg);
    state_.patients.at(rc.patient_id).risk = rc.assessment.level;
  } else if (event.kind == "alert") {
    const auto alert = from_wire<EmergencyAlert>(msg);
    state_.alerts[alert.alert_id] = alert;
  } else if (event.kind == "alert_cleared") {
    state_.alerts.erase(from_wire<AlertCleared>(msg).alert_id);
  } else if (event.kind == "session_closed") {
    const auto rec = from_wire<SessionRecord>(msg);
    PatientView& v = state_.patients.at(rec.patient_id);
    ++v.sessions;
    v.last_positive_fraction = rec.positive_fraction;
  } else if (event.kind == "stage_change") {
    const auto applied = from_wire<StageApplied>(msg);
    PatientView& v = state_.patients.at(applied.patient_id);
    v.stage = applied.stage;
    v.tree_id = applied.tree_id;
  } else if (event.kind == "telemetry") {
    auto record = from_wire<FusedRecord>(msg);
    auto& series = state_.telemetry[record.patient_id];
    series.push_back(std::move(record));
    while (series.size() > depth_) series.pop_front();
  } else if (event.kind == "run_end") {
    state_.finished = true;
  } else if (event.kind != "recommendation_result" && event.kind != "feedback" && event.kind != "handover") {
    throw Error(fmt::format("gateway got unexpected '{}'", event.kind));
  }
  push(t, event.kind, event.kind == "run_start" ? Json{{"patients", msg.at("config").at("patients")}} : msg);
}

// ---------------------------------------------------------------------------
// Simulation

Simulation::Simulation(ScenarioConfig config, bool live)
    : config_(std::move(config)),
      live_(live),
      kernel_(std::make_unique<Kernel>(config_.seed)),
      catalog_(load_catalog(config_)) {
  Kernel& k = *kernel_;
  const CdsWiring wiring;

  std::vector<std::string> robot_ids;
  for (const auto& p : config_.patients) {
    PatientModel model;
    model.patient_id = p.id;
    model.stage = p.stage;
    model.engagement = p.engagement;
    model.cooperation_bias = p.cooperation_bias;
    patients_.emplace(p.id, std::move(model));
  }

  for (const auto& p : config_.patients) {
    const std::string robot = robot_id_for(p.id);
    robot_ids.push_back(robot);
    for (const auto& [kind, profile] : config_.sensors.profiles) {
      std::vector<AnomalyScript> scripts;
      for (const auto& a : config_.sensors.anomalies) {
        if (a.patient_id == p.id && a.script.kind == kind) scripts.push_back(a.script);
      }
      const std::string id = fmt::format("sensor/{}/{}", p.id, to_string(kind));
      sensors_.push_back(std::make_unique<SensorNode>(id, p.id, robot, profile, std::move(scripts),
                                                      k.make_rng(id), config_.sensors.bounds));
      k.add_node(id, *sensors_.back());
    }
    const TherapyCommand initial{p.id, p.stage, std::string(stage_info(p.stage).default_tree), {}};
    robots_.push_back(std::make_unique<RobotNode>(p.id, config_.edge, initial, catalog_, patients_.at(p.id),
                                                  k.make_rng("patient/" + p.id), p.response,
                                                  config_.expert.progression, wiring.cds_id));
    k.add_node(robot, *robots_.back());
    k.add_link(robot, wiring.cds_id, config_.links.edge_cloud);
  }

  cds_ = std::make_unique<CdsNode>(config_.cloud, wiring, horizon());
  for (const auto& p : config_.patients) cds_->register_patient(p.id, p.stage);
  rtms_ = std::make_unique<RtmsNode>(config_.cloud, wiring, robot_ids);

  ExpertPolicy policy;
  policy.mode = config_.expert.mode;
  policy.ack_delay_ms = live_ ? config_.expert.live_ack_timeout_ms : config_.expert.ack_delay_ms;
  policy.stage_changes_enabled = !live_;
  expert_ = std::make_unique<ExpertNode>(wiring.expert_id, wiring.cds_id, policy);

  k.add_node(wiring.cds_id, *cds_);
  k.add_node(wiring.rtms_id, *rtms_);
  k.add_node(wiring.expert_id, *expert_);
  k.add_node(wiring.gateway_id, gateway_);
  k.add_link(wiring.cds_id, wiring.expert_id, config_.links.cloud_expert);
  k.add_link(wiring.cds_id, wiring.rtms_id, config_.links.cloud_internal);

  k.set_trace_sink([this](const Json&, const std::string& text) {
    metrics_.add_line(text);
    if (trace_writer_) trace_writer_(text + "\n");
  });
}

Simulation::~Simulation() = default;

void Simulation::start() {
  if (started_) throw Error("simulation already started");
  started_ = true;
  Kernel& k = *kernel_;
  k.schedule(SimTime{0}, "gateway", "run_start", Json{{"config", resolved_json(config_)}, {"live", live_}});
  for (auto& s : sensors_) s->start(k);
  for (auto& r : robots_) r->start(k);
  cds_->start(k);
  rtms_->start(k);
}

void Simulation::advance_to(SimTime t) {
  if (!started_) throw Error("simulation not started");
  if (finished_) return;
  kernel_->run_until(std::min(t, horizon()));
}

void Simulation::finish() {
  if (finished_) return;
  advance_to(horizon());
  kernel_->schedule(horizon(), "gateway", "run_end", Json::object());
  kernel_->run_until(horizon());
  finished_ = true;
}

// ---------------------------------------------------------------------------
// CLI operations

void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(fmt::format("cannot write {}", tmp.string()));
    out << content;
    if (!out.flush()) throw Error(fmt::format("cannot write {}", tmp.string()));
  }
  std::filesystem::rename(tmp, path);
}

std::vector<InputRecord> read_inputs(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(fmt::format("cannot read {}", path.string()));
  std::vector<InputRecord> out;
  std::string line;
  std::uint64_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      out.push_back(Json::parse(line).get<InputRecord>());
    } catch (const Json::exception& e) {
      throw Error(fmt::format("{}:{}: {}", path.string(), n, e.what()));
    }
  }
  return out;
}

RunSummary run_scenario(ScenarioConfig config, const RunOptions& options) {
  if (options.seed) config.seed = *options.seed;
  if (options.duration_ms) {
    if (*options.duration_ms <= 0) throw ConfigError("duration_ms", "must be > 0");
    config.duration_ms = *options.duration_ms;
  }
  std::filesystem::create_directories(options.out_dir);
  const auto trace_path = options.out_dir / "trace.jsonl";
  auto trace_tmp = trace_path;
  trace_tmp += ".tmp";

  std::ofstream trace(trace_tmp, std::ios::binary | std::ios::trunc);
  if (!trace) throw Error(fmt::format("cannot write {}", trace_tmp.string()));

  Simulation sim(config, options.live);
  if (options.inputs) sim.kernel().set_scripted_inputs(read_inputs(*options.inputs));
  sim.set_trace_writer([&trace](const std::string& line) { trace << line; });
  try {
    sim.start();
    sim.finish();
  } catch (...) {
    trace.close();
    std::filesystem::remove(trace_tmp);
    throw;
  }
  trace.close();
  if (!trace) throw Error(fmt::format("cannot write {}", trace_tmp.string()));
  std::filesystem::rename(trace_tmp, trace_path);

  write_file_atomic(options.out_dir / "metrics.json", metrics_text(sim.metrics().result()));
  write_file_atomic(options.out_dir / "config.resolved.json", resolved_json(config).dump(2) + "\n");
  return RunSummary{options.out_dir, sim.kernel().processed(), sim.kernel().trace_hash()};
}

RunSummary cli_run(const std::filesystem::path& config_path, const RunOptions& options) {
  return run_scenario(load_config(config_path), options);
}

Json cli_replay(const std::filesystem::path& run_dir) {
  const auto path = run_dir / "trace.jsonl";
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorruptTrace(fmt::format("cannot read {}", path.string()), 0);
  return metrics_from_trace(in);
}

}  // namespace therasim
