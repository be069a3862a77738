#include "therasim/cloud_services.hpp"

#include <algorithm>
#include <array>
#include <numeric>
#include <stdexcept>

#include <fmt/format.h>

namespace therasim {

// ---------------------------------------------------------------------------
// Risk

std::string_view to_string(SummaryStat s) {
  switch (s) {
    case SummaryStat::Min:
      return "min";
    case SummaryStat::Max:
      return "max";
    case SummaryStat::Mean:
      return "mean";
  }
  return "";
}

SummaryStat parse_summary_stat(std::string_view text) {
  for (SummaryStat s : {SummaryStat::Min, SummaryStat::Max, SummaryStat::Mean}) {
    if (to_string(s) == text) return s;
  }
  throw std::invalid_argument(fmt::format("'{}' is not min, max or mean", text));
}

RiskPolicy default_risk_policy() {
  using K = SensorKind;
  using S = SummaryStat;
  constexpr BoundSide lo = BoundSide::Lower;
  constexpr BoundSide hi = BoundSide::Upper;
  RiskPolicy p;
  p.rules = {
      {K::SpO2, S::Min, lo, 90, 4},
      {K::Heartbeat, S::Max, hi, 120, 2},
      {K::Heartbeat, S::Min, lo, 50, 2},
      {K::SystolicPressure, S::Max, hi, 180, 3},
      {K::SystolicPressure, S::Min, lo, 80, 2},
      {K::BodyTemp, S::Max, hi, 39.5, 2},
      {K::BodyTemp, S::Min, lo, 35.0, 2},
      {K::Respiration, S::Max, hi, 30, 1},
      {K::Respiration, S::Min, lo, 8, 1},
      {K::AirQuality, S::Max, hi, 150, 1},
  };
  return p;
}

void check_policy(const RiskPolicy& policy) {
  for (const auto& r : policy.rules) {
    if (r.points < 0) throw std::invalid_argument("risk rule points must be >= 0");
    if (r.stat == SummaryStat::Min && r.side != BoundSide::Lower) {
      throw std::invalid_argument(fmt::format("{} min rule must bound from below", to_string(r.kind)));
    }
    if (r.stat == SummaryStat::Max && r.side != BoundSide::Upper) {
      throw std::invalid_argument(fmt::format("{} max rule must bound from above", to_string(r.kind)));
    }
  }
  const auto& t = policy.thresholds;
  if (!(0 < t.moderate && t.moderate <= t.high && t.high <= t.critical)) {
    throw std::invalid_argument("thresholds need 0 < moderate <= high <= critical");
  }
}

void to_json(Json& j, const RiskRule& r) {
  j = Json{{"kind", r.kind}, {"stat", to_string(r.stat)}, {"side", r.side}, {"bound", r.bound},
           {"points", r.points}};
}

namespace {

void reject_unknown(const Json& j, std::initializer_list<std::string_view> known) {
  for (const auto& [key, _] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw std::invalid_argument(fmt::format("unknown key '{}'", key));
    }
  }
}

}  // namespace

void from_json(const Json& j, RiskRule& r) {
  reject_unknown(j, {"kind", "stat", "side", "bound", "points"});
  r.kind = j.at("kind").get<SensorKind>();
  r.stat = parse_summary_stat(j.at("stat").get<std::string>());
  r.side = j.at("side").get<BoundSide>();
  r.bound = j.at("bound").get<double>();
  r.points = j.at("points").get<std::int64_t>();
}

RiskAssessment evaluate_risk(const std::string& patient_id, const FusedRecord* record,
                             const RiskPolicy& policy, bool unacked_alert, SimTime t) {
  RiskAssessment a;
  a.patient_id = patient_id;
  a.t = t;
  if (record) {
    for (const auto& rule : policy.rules) {
      const auto& summaries = is_medical(rule.kind) ? record->vitals : record->ambient;
      const auto it = summaries.find(rule.kind);
      if (it == summaries.end() || it->second.count == 0) continue;
      const KindSummary& s = it->second;
      const double observed = rule.stat == SummaryStat::Min   ? s.min
                              : rule.stat == SummaryStat::Max ? s.max
                                                              : s.mean;
      if (!rule.violated_by(observed)) continue;
      a.score += rule.points;
      a.factors.push_back(RiskFactor{rule.kind, std::string(to_string(rule.stat)), observed, rule.bound});
    }
  }
  a.alert_override = unacked_alert;
  a.level = unacked_alert ? RiskLevel::Critical : bucketize(a.score, policy.thresholds);
  return a;
}

// ---------------------------------------------------------------------------
// Cognitive Data Server

CognitiveDataServer::CognitiveDataServer(RiskPolicy policy, std::size_t dossier_depth)
    : policy_(std::move(policy)), depth_(std::max<std::size_t>(1, dossier_depth)) {}

void CognitiveDataServer::register_patient(const std::string& patient_id, Stage stage) {
  PatientDossier d;
  d.patient_id = patient_id;
  d.stage = stage;
  d.risk.patient_id = patient_id;
  dossiers_[patient_id] = std::move(d);
}

const PatientDossier& CognitiveDataServer::dossier(const std::string& patient_id) const {
  auto it = dossiers_.find(patient_id);
  if (it == dossiers_.end()) throw UnknownPatient(fmt::format("unknown patient '{}'", patient_id));
  return it->second;
}

PatientDossier& CognitiveDataServer::find(const std::string& patient_id) {
  auto it = dossiers_.find(patient_id);
  if (it == dossiers_.end()) throw UnknownPatient(fmt::format("unknown patient '{}'", patient_id));
  return it->second;
}

std::optional<RiskChange> CognitiveDataServer::reassess(PatientDossier& d, SimTime now) {
  const FusedRecord* latest = d.recent.empty() ? nullptr : &d.recent.back();
  RiskAssessment next = evaluate_risk(d.patient_id, latest, policy_, !d.outstanding_alerts.empty(), now);
  const RiskLevel previous = d.risk.level;
  d.risk = next;
  if (next.level == previous) return std::nullopt;
  return RiskChange{d.patient_id, previous, std::move(next)};
}

IngestResult CognitiveDataServer::ingest(const FusedRecord& record, SimTime now) {
  PatientDossier& d = find(record.patient_id);
  if (const auto v = validate(record); !v.ok()) {
    throw InvariantViolation(fmt::format("ingest: {}", v.to_json().dump()));
  }
  d.recent.push_back(record);
  while (d.recent.size() > depth_) d.recent.pop_front();
  auto change = reassess(d, now);
  return IngestResult{d.risk, std::move(change)};
}

std::optional<RiskChange> CognitiveDataServer::raise_alert(const EmergencyAlert& alert, SimTime now) {
  PatientDossier& d = find(alert.patient_id);
  d.outstanding_alerts[alert.alert_id] = alert;
  return reassess(d, now);
}

void CognitiveDataServer::set_stage(const std::string& patient_id, Stage stage) {
  find(patient_id).stage = stage;
}

RouteResult CognitiveDataServer::route_recommendation(const ExpertRecommendation& rec, SimTime now) {
  PatientDossier& d = find(rec.patient_id);
  if (const auto v = validate(rec); !v.ok()) throw InvalidRecommendation(v.to_json().dump());

  RouteResult out;
  out.result = RecommendationResult{rec.rec_id(), rec.patient_id, rec.kind, true, "", now};
  switch (rec.kind) {
    case RecommendationKind::TherapyStageChange: {
      const Stage stage = *rec.target_stage;
      out.command = TherapyCommand{rec.patient_id, stage, std::string(stage_info(stage).default_tree),
                                   {{"rec_id", rec.rec_id()}}};
      break;
    }
    case RecommendationKind::EmergencyAck: {
      auto it = d.outstanding_alerts.find(*rec.alert_id);
      if (it == d.outstanding_alerts.end()) {
        throw StaleAck(fmt::format("alert '{}' is not outstanding", *rec.alert_id));
      }
      d.outstanding_alerts.erase(it);
      out.cleared = AlertCleared{*rec.alert_id, rec.patient_id, rec.expert_id, now};
      out.change = reassess(d, now);
      break;
    }
    case RecommendationKind::PrescriptionUpdate:
    case RecommendationKind::Instruction:
      break;
  }
  d.recommendations.push_back(rec);
  return out;
}

// ---------------------------------------------------------------------------
// Allocation

std::vector<double> allocate_tiered(const std::vector<double>& demands,
                                    const std::vector<RiskLevel>& tiers, double capacity) {
  if (demands.size() != tiers.size()) throw std::invalid_argument("demands and tiers differ in length");
  std::vector<double> out(demands.size(), 0.0);
  double remaining = std::max(0.0, capacity);
  for (RiskLevel tier : {RiskLevel::Critical, RiskLevel::High, RiskLevel::Moderate, RiskLevel::Low}) {
    double total = 0;
    for (std::size_t i = 0; i < demands.size(); ++i) {
      if (demands[i] < 0) throw std::invalid_argument("demands must be >= 0");
      if (tiers[i] == tier) total += demands[i];
    }
    if (total <= 0) continue;
    if (total <= remaining) {
      for (std::size_t i = 0; i < demands.size(); ++i) {
        if (tiers[i] == tier) out[i] = demands[i];
      }
      remaining -= total;
    } else {
      for (std::size_t i = 0; i < demands.size(); ++i) {
        if (tiers[i] == tier) out[i] = demands[i] * remaining / total;
      }
      remaining = 0;
    }
  }
  return out;
}

ResourcePlan allocate(SimTime epoch, const std::map<std::string, PatientEpochDemand>& demands,
                      const Allocation& capacities) {
  std::vector<std::string> ids;
  std::vector<RiskLevel> tiers;
  std::array<std::vector<double>, 3> want;
  for (const auto& [id, d] : demands) {
    ids.push_back(id);
    tiers.push_back(d.risk);
    want[0].push_back(d.demand.bandwidth_kbps);
    want[1].push_back(d.demand.compute_units);
    want[2].push_back(d.demand.cache_quota_bytes);
  }
  const auto bw = allocate_tiered(want[0], tiers, capacities.bandwidth_kbps);
  const auto cpu = allocate_tiered(want[1], tiers, capacities.compute_units);
  const auto cache = allocate_tiered(want[2], tiers, capacities.cache_quota_bytes);

  ResourcePlan plan;
  plan.epoch = epoch;
  plan.capacities = capacities;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    plan.allocations[ids[i]] = Allocation{bw[i], cpu[i], cache[i]};
    plan.used.bandwidth_kbps += bw[i];
    plan.used.compute_units += cpu[i];
    plan.used.cache_quota_bytes += cache[i];
  }
  return plan;
}

// ---------------------------------------------------------------------------
// Offload and handover

OffloadDecision offload_decision(const OffloadTask& task, std::int64_t edge_capacity,
                                 std::int64_t cloud_capacity, const LinkModel& link) {
  if (edge_capacity <= 0 || cloud_capacity <= 0) throw std::invalid_argument("capacities must be > 0");
  const std::int64_t transfer = link.delivery_delay(task.input_bytes);

  OffloadDecision d;
  d.cost_local_ms = static_cast<double>(task.cycles) / static_cast<double>(edge_capacity);
  d.cost_cloud_ms = static_cast<double>(task.cycles) / static_cast<double>(cloud_capacity) +
                    static_cast<double>(transfer);
  // Compared exactly: cycles/E vs cycles/C + transfer, scaled by E*C.
  using i128 = __int128;
  const i128 local = static_cast<i128>(task.cycles) * cloud_capacity;
  const i128 cloud = static_cast<i128>(task.cycles) * edge_capacity +
                     static_cast<i128>(transfer) * edge_capacity * cloud_capacity;
  d.placement = cloud < local ? Placement::Cloud : Placement::Local;
  return d;
}

void to_json(Json& j, const EdgeCandidate& c) {
  j = Json{{"id", c.id}, {"latency_ms", c.latency_ms}, {"queue_length", c.queue_length}};
}

void from_json(const Json& j, EdgeCandidate& c) {
  reject_unknown(j, {"id", "latency_ms", "queue_length"});
  c.id = j.at("id").get<std::string>();
  c.latency_ms = j.at("latency_ms").get<std::int64_t>();
  c.queue_length = j.at("queue_length").get<std::int64_t>();
}

const EdgeCandidate& handover(const std::vector<EdgeCandidate>& candidates, std::int64_t load_penalty_ms) {
  if (candidates.empty()) throw NoCandidates("handover needs at least one candidate");
  const EdgeCandidate* best = nullptr;
  std::int64_t best_score = 0;
  for (const auto& c : candidates) {
    const std::int64_t score = c.latency_ms + load_penalty_ms * c.queue_length;
    if (!best || score < best_score || (score == best_score && c.id < best->id)) {
      best = &c;
      best_score = score;
    }
  }
  return *best;
}

// ---------------------------------------------------------------------------
// LRU cache

LruCache::LruCache(std::int64_t capacity_bytes) : capacity_(capacity_bytes) {
  if (capacity_ < 0) throw std::invalid_argument("cache capacity must be >= 0");
}

CacheAccess LruCache::access(const std::string& asset_id, std::int64_t size_bytes) {
  if (size_bytes > capacity_) {
    throw AssetTooLarge(fmt::format("asset '{}' ({} B) exceeds cache capacity {} B", asset_id,
                                    size_bytes, capacity_));
  }
  CacheAccess out;
  if (auto it = index_.find(asset_id); it != index_.end()) {
    order_.splice(order_.begin(), order_, it->second);
    out.hit = true;
    return out;
  }
  while (used_ + size_bytes > capacity_) {
    const Entry& victim = order_.back();
    out.evicted.push_back(victim.id);
    used_ -= victim.size;
    index_.erase(victim.id);
    order_.pop_back();
  }
  order_.push_front(Entry{asset_id, size_bytes});
  index_[asset_id] = order_.begin();
  used_ += size_bytes;
  out.delivery_cost_bytes = size_bytes;
  return out;
}

std::vector<std::string> LruCache::ids() const {
  std::vector<std::string> out;
  for (const auto& e : order_) out.push_back(e.id);
  return out;
}

// ---------------------------------------------------------------------------
// Cognitive Data Server node

namespace {

const Json& message_of(const SimEvent& event) {
  return event.payload.contains("msg") ? event.payload["msg"] : event.payload;
}

std::string patient_of_robot(const std::string& robot_id) {
  constexpr std::string_view prefix = "robot/";
  if (robot_id.rfind(prefix, 0) != 0) return {};
  return robot_id.substr(prefix.size());
}

}  // namespace

CdsNode::CdsNode(CloudConfig config, CdsWiring wiring, SimTime horizon)
    : config_(std::move(config)),
      wiring_(std::move(wiring)),
      horizon_(horizon),
      server_(config_.risk, config_.dossier_depth) {}

void CdsNode::register_patient(const std::string& patient_id, Stage stage) {
  server_.register_patient(patient_id, stage);
  epoch_demand_[patient_id] = Allocation{0, 0, 0};
}

void CdsNode::start(Kernel& kernel) { schedule_epoch(kernel, SimTime{config_.epoch_ms}); }

void CdsNode::schedule_epoch(Kernel& kernel, SimTime at) {
  if (config_.epoch_ms <= 0) return;
  if (at.ms > horizon_.ms - config_.epoch_guard_ms) return;
  kernel.schedule(at, wiring_.cds_id, "epoch", Json::object());
}

void CdsNode::to_gateway(Kernel& kernel, const std::string& kind, Json msg) {
  kernel.schedule(kernel.now(), wiring_.gateway_id, kind, std::move(msg));
}

void CdsNode::publish_change(Kernel& kernel, const std::optional<RiskChange>& change) {
  if (!change) return;
  to_gateway(kernel, "risk_change", to_wire(*change));
  kernel.deliver(wiring_.cds_id, wiring_.expert_id, "risk_change", to_wire(*change));
}

void CdsNode::handle(Kernel& kernel, const SimEvent& event) {
  const Json& msg = message_of(event);
  const SimTime now = kernel.now();

  // Uplink traffic from robots is what the epoch's bandwidth accounting sees.
  if (event.payload.contains("size") && event.payload.contains("from")) {
    const std::string patient = patient_of_robot(event.payload["from"].get<std::string>());
    if (!patient.empty()) {
      const auto size = event.payload["size"].get<std::uint64_t>();
      epoch_bytes_ += size;
      epoch_demand_[patient].bandwidth_kbps +=
          static_cast<double>(size) * 8.0 / static_cast<double>(config_.epoch_ms);
    }
  }

  if (event.kind == "fused_record") {
    const auto record = from_wire<FusedRecord>(msg);
    const IngestResult r = server_.ingest(record, now);
    to_gateway(kernel, "telemetry", to_wire(record));
    publish_change(kernel, r.change);
  } else if (event.kind == "session_record") {
    const auto rec = from_wire<SessionRecord>(msg);
    if (rec.analysis_placement == Placement::Cloud) {
      epoch_demand_[rec.patient_id].compute_units +=
          static_cast<double>(rec.analysis_cycles) / static_cast<double>(config_.epoch_ms);
    }
    to_gateway(kernel, "session_closed", to_wire(rec));
  } else if (event.kind == "alert") {
    const auto alert = from_wire<EmergencyAlert>(msg);
    if (const auto v = validate(alert); !v.ok()) {
      throw InvariantViolation(fmt::format("alert: {}", v.to_json().dump()));
    }
    const auto change = server_.raise_alert(alert, now);
    to_gateway(kernel, "alert", to_wire(alert));
    kernel.deliver(wiring_.cds_id, wiring_.expert_id, "alert", to_wire(alert));
    publish_change(kernel, change);
  } else if (event.kind == "progress_signal") {
    kernel.deliver(wiring_.cds_id, wiring_.expert_id, "progress_signal", msg);
  } else if (event.kind == "stage_applied") {
    const auto applied = from_wire<StageApplied>(msg);
    server_.set_stage(applied.patient_id, applied.stage);
    to_gateway(kernel, "stage_change", to_wire(applied));
  } else if (event.kind == "asset_request") {
    const auto req = from_wire<AssetRequest>(msg);
    epoch_demand_[req.patient_id].cache_quota_bytes += static_cast<double>(req.size_bytes);
    kernel.deliver(wiring_.cds_id, wiring_.rtms_id, "asset_request", msg);
  } else if (event.kind == "recommendation") {
    on_recommendation(kernel, from_wire<ExpertRecommendation>(msg));
  } else if (event.kind == "epoch") {
    EpochReport report;
    report.epoch = now;
    report.epoch_ms = config_.epoch_ms;
    report.bytes_delivered = epoch_bytes_;
    for (auto& [id, demand] : epoch_demand_) {
      report.patients[id] = PatientEpochDemand{demand, server_.dossier(id).risk.level};
      demand = Allocation{0, 0, 0};
    }
    epoch_bytes_ = 0;
    kernel.deliver(wiring_.cds_id, wiring_.rtms_id, "epoch_report", to_wire(report));
    schedule_epoch(kernel, now + config_.epoch_ms);
  } else if (event.kind == "resource_feedback") {
    feedback_.push_back(from_wire<ResourceFeedback>(msg));
    to_gateway(kernel, "feedback", msg);
  } else {
    throw Error(fmt::format("cds got unexpected '{}'", event.kind));
  }
}

void CdsNode::on_recommendation(Kernel& kernel, const ExpertRecommendation& rec) {
  RouteResult routed;
  try {
    routed = server_.route_recommendation(rec, kernel.now());
  } catch (const UnknownPatient& e) {
    routed.result = RecommendationResult{rec.rec_id(), rec.patient_id, rec.kind, false, e.what(), kernel.now()};
  } catch (const StaleAck& e) {
    routed.result = RecommendationResult{rec.rec_id(), rec.patient_id, rec.kind, false,
                                         fmt::format("StaleAck: {}", e.what()), kernel.now()};
  } catch (const InvalidRecommendation& e) {
    routed.result = RecommendationResult{rec.rec_id(), rec.patient_id, rec.kind, false, e.what(), kernel.now()};
  }
  to_gateway(kernel, "recommendation_result", to_wire(routed.result));
  if (routed.command) {
    kernel.deliver(wiring_.cds_id, robot_id_for(rec.patient_id), "command", to_wire(*routed.command));
  }
  if (routed.cleared) {
    to_gateway(kernel, "alert_cleared", to_wire(*routed.cleared));
    kernel.deliver(wiring_.cds_id, wiring_.expert_id, "alert_cleared", to_wire(*routed.cleared));
  }
  publish_change(kernel, routed.change);
}

// ---------------------------------------------------------------------------
// Resource & Therapy Management Server node

RtmsNode::RtmsNode(CloudConfig config, CdsWiring wiring, std::vector<std::string> robots)
    : config_(std::move(config)),
      wiring_(std::move(wiring)),
      robots_(std::move(robots)),
      cache_(config_.cache_capacity_bytes) {}

void RtmsNode::start(Kernel& kernel) {
  if (config_.edge_sites.empty()) return;
  for (const auto& robot : robots_) {
    const EdgeCandidate& chosen = handover(config_.edge_sites, config_.load_penalty_ms);
    kernel.schedule(kernel.now(), wiring_.gateway_id, "handover",
                    Json{{"robot", robot},
                         {"site", chosen.id},
                         {"score_ms", chosen.latency_ms + config_.load_penalty_ms * chosen.queue_length}});
  }
}

void RtmsNode::handle(Kernel& kernel, const SimEvent& event) {
  const Json& msg = message_of(event);
  if (event.kind == "asset_request") {
    const auto req = from_wire<AssetRequest>(msg);
    try {
      const CacheAccess a = cache_.access(req.asset_id, req.size_bytes);
      ++(a.hit ? hits_ : misses_);
      delivery_bytes_ += a.delivery_cost_bytes;
    } catch (const AssetTooLarge&) {
      // Streamed straight through without caching.
      ++misses_;
      delivery_bytes_ += req.size_bytes;
    }
  } else if (event.kind == "epoch_report") {
    const auto report = from_wire<EpochReport>(msg);
    ResourceFeedback fb;
    fb.plan = allocate(report.epoch, report.patients, config_.capacities);
    for (const auto& [id, d] : report.patients) fb.demands[id] = d.demand;
    fb.epoch_ms = report.epoch_ms;
    fb.bytes_delivered = report.bytes_delivered;
    const double capacity_bits = config_.capacities.bandwidth_kbps * static_cast<double>(report.epoch_ms);
    fb.utilization = capacity_bits > 0 ? static_cast<double>(report.bytes_delivered) * 8.0 / capacity_bits : 0.0;
    fb.cache_hits = hits_;
    fb.cache_misses = misses_;
    fb.cache_delivery_bytes = delivery_bytes_;
    hits_ = misses_ = 0;
    delivery_bytes_ = 0;
    kernel.deliver(wiring_.rtms_id, wiring_.cds_id, "resource_feedback", to_wire(fb));
  } else {
    throw Error(fmt::format("rtms got unexpected '{}'", event.kind));
  }
}

}  // namespace therasim
