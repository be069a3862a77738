#pragma once

// Cloud layer: the Cognitive Data Server (ingest, risk, alert bookkeeping,
// recommendation routing) and the Resource & Therapy Management Server
// (tiered allocation, offloading, handover, LRU asset cache).

#include <cstdint>
#include <deque>
#include <list>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "therasim/protocol.hpp"
#include "therasim/sim_kernel.hpp"

namespace therasim {

class UnknownPatient : public Error {
 public:
  using Error::Error;
};

class StaleAck : public Error {
 public:
  using Error::Error;
};

class InvalidRecommendation : public Error {
 public:
  using Error::Error;
};

class NoCandidates : public Error {
 public:
  using Error::Error;
};

class AssetTooLarge : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Risk

enum class SummaryStat : std::uint8_t { Min, Max, Mean };
std::string_view to_string(SummaryStat s);
SummaryStat parse_summary_stat(std::string_view text);

// Adds `points` when the window statistic lies strictly beyond `bound`.
struct RiskRule {
  SensorKind kind = SensorKind::SpO2;
  SummaryStat stat = SummaryStat::Min;
  BoundSide side = BoundSide::Lower;
  double bound = 0;
  std::int64_t points = 1;

  bool violated_by(double observed) const {
    return side == BoundSide::Lower ? observed < bound : observed > bound;
  }
  bool operator==(const RiskRule&) const = default;
};

struct RiskPolicy {
  std::vector<RiskRule> rules;
  RiskThresholds thresholds;
  bool operator==(const RiskPolicy&) const = default;
};

RiskPolicy default_risk_policy();
// Min rules must be Lower, Max rules Upper: that is what keeps the score
// monotone in every summarized statistic. Throws std::invalid_argument.
void check_policy(const RiskPolicy& policy);

void to_json(Json& j, const RiskRule& r);
void from_json(const Json& j, RiskRule& r);

// A missing record scores 0. An unacked alert forces Critical.
RiskAssessment evaluate_risk(const std::string& patient_id, const FusedRecord* record,
                             const RiskPolicy& policy, bool unacked_alert, SimTime t);

// ---------------------------------------------------------------------------
// Cognitive Data Server

struct PatientDossier {
  std::string patient_id;
  std::deque<FusedRecord> recent;
  RiskAssessment risk;
  Stage stage = Stage::Entry;
  std::map<std::string, EmergencyAlert> outstanding_alerts;
  std::vector<ExpertRecommendation> recommendations;
};

struct IngestResult {
  RiskAssessment assessment;
  std::optional<RiskChange> change;
};

struct RouteResult {
  RecommendationResult result;
  std::optional<TherapyCommand> command;
  std::optional<AlertCleared> cleared;
  std::optional<RiskChange> change;
};

class CognitiveDataServer {
 public:
  CognitiveDataServer(RiskPolicy policy, std::size_t dossier_depth);

  void register_patient(const std::string& patient_id, Stage stage);
  bool knows(const std::string& patient_id) const { return dossiers_.contains(patient_id); }
  const PatientDossier& dossier(const std::string& patient_id) const;
  const std::map<std::string, PatientDossier>& dossiers() const { return dossiers_; }

  // Throws UnknownPatient.
  IngestResult ingest(const FusedRecord& record, SimTime now);
  // Registers an alert as outstanding; risk goes Critical.
  std::optional<RiskChange> raise_alert(const EmergencyAlert& alert, SimTime now);
  // Throws UnknownPatient, StaleAck or InvalidRecommendation.
  RouteResult route_recommendation(const ExpertRecommendation& rec, SimTime now);
  void set_stage(const std::string& patient_id, Stage stage);

 private:
  PatientDossier& find(const std::string& patient_id);
  std::optional<RiskChange> reassess(PatientDossier& d, SimTime now);

  RiskPolicy policy_;
  std::size_t depth_;
  std::map<std::string, PatientDossier> dossiers_;
};

// ---------------------------------------------------------------------------
// Resource & Therapy Management Server

// Strict tiers Critical > High > Moderate > Low. Inside a tier every patient
// gets the same fraction of its demand, the largest one that still fits.
std::vector<double> allocate_tiered(const std::vector<double>& demands,
                                    const std::vector<RiskLevel>& tiers, double capacity);

ResourcePlan allocate(SimTime epoch, const std::map<std::string, PatientEpochDemand>& demands,
                      const Allocation& capacities);

struct OffloadTask {
  std::string task_id;
  std::int64_t cycles = 1;
  std::int64_t input_bytes = 0;
  std::string origin;
};

struct OffloadDecision {
  Placement placement = Placement::Local;
  double cost_local_ms = 0;
  double cost_cloud_ms = 0;
};

// Capacities are in cycles per millisecond. Ties stay local.
OffloadDecision offload_decision(const OffloadTask& task, std::int64_t edge_capacity,
                                 std::int64_t cloud_capacity, const LinkModel& link);

struct EdgeCandidate {
  std::string id;
  std::int64_t latency_ms = 0;
  std::int64_t queue_length = 0;
  bool operator==(const EdgeCandidate&) const = default;
};

void to_json(Json& j, const EdgeCandidate& c);
void from_json(const Json& j, EdgeCandidate& c);

// argmin(latency + load_penalty * queue_length); ties go to the smallest id.
const EdgeCandidate& handover(const std::vector<EdgeCandidate>& candidates, std::int64_t load_penalty_ms);

struct CacheAccess {
  bool hit = false;
  std::vector<std::string> evicted;
  std::int64_t delivery_cost_bytes = 0;
};

class LruCache {
 public:
  explicit LruCache(std::int64_t capacity_bytes);

  CacheAccess access(const std::string& asset_id, std::int64_t size_bytes);

  std::int64_t capacity() const { return capacity_; }
  std::int64_t used() const { return used_; }
  std::size_t size() const { return order_.size(); }
  bool contains(const std::string& asset_id) const { return index_.contains(asset_id); }
  // Most recently used first.
  std::vector<std::string> ids() const;

 private:
  struct Entry {
    std::string id;
    std::int64_t size;
  };

  std::int64_t capacity_;
  std::int64_t used_ = 0;
  std::list<Entry> order_;
  std::unordered_map<std::string, std::list<Entry>::iterator> index_;
};

// ---------------------------------------------------------------------------
// Kernel nodes

struct CloudConfig {
  RiskPolicy risk = default_risk_policy();
  Allocation capacities{10'000, 1'000, 50'000'000};
  std::int64_t epoch_ms = 60'000;
  // Epoch ticks closer than this to the horizon are skipped, so every epoch
  // still gets its feedback inside the run.
  std::int64_t epoch_guard_ms = 1'000;
  std::int64_t load_penalty_ms = 5;
  std::int64_t cache_capacity_bytes = 8'000'000;
  std::size_t dossier_depth = 10;
  std::vector<EdgeCandidate> edge_sites;
};

struct CdsWiring {
  std::string cds_id = "cds";
  std::string rtms_id = "rtms";
  std::string expert_id = "expert";
  std::string gateway_id = "gateway";
};

inline std::string robot_id_for(const std::string& patient_id) { return "robot/" + patient_id; }

class CdsNode : public Node {
 public:
  CdsNode(CloudConfig config, CdsWiring wiring, SimTime horizon);

  void register_patient(const std::string& patient_id, Stage stage);
  // Schedules the first epoch tick.
  void start(Kernel& kernel);
  void handle(Kernel& kernel, const SimEvent& event) override;

  const CognitiveDataServer& server() const { return server_; }
  const std::vector<ResourceFeedback>& feedback() const { return feedback_; }

 private:
  void on_recommendation(Kernel& kernel, const ExpertRecommendation& rec);
  void to_gateway(Kernel& kernel, const std::string& kind, Json msg);
  void publish_change(Kernel& kernel, const std::optional<RiskChange>& change);
  void schedule_epoch(Kernel& kernel, SimTime at);

  CloudConfig config_;
  CdsWiring wiring_;
  SimTime horizon_;
  CognitiveDataServer server_;
  std::vector<ResourceFeedback> feedback_;

  // Current epoch accounting.
  std::uint64_t epoch_bytes_ = 0;
  std::map<std::string, Allocation> epoch_demand_;
};

class RtmsNode : public Node {
 public:
  RtmsNode(CloudConfig config, CdsWiring wiring, std::vector<std::string> robots);

  // Runs the initial handover for every robot.
  void start(Kernel& kernel);
  void handle(Kernel& kernel, const SimEvent& event) override;

  const LruCache& cache() const { return cache_; }

 private:
  CloudConfig config_;
  CdsWiring wiring_;
  std::vector<std::string> robots_;
  LruCache cache_;
  std::uint64_t hits_ = 0;
  std::uint64_t misses_ = 0;
  std::int64_t delivery_bytes_ = 0;
};

}  // namespace therasim
