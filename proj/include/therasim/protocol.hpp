#pragma once

// Wire vocabulary shared by sensors, edge robots, cloud servers and the
// gateway. Every message encodes to canonical key-sorted JSON carrying a
// "type" tag and "v": 1. The encoded byte length is also the size used for
// link delay accounting.

#include <array>
#include <concepts>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "therasim/error.hpp"
#include "therasim/sim_kernel.hpp"

namespace therasim {

// ---------------------------------------------------------------------------
// Enumerations

enum class SensorKind : std::uint8_t {
  ECG,
  EMG,
  Respiration,
  Heartbeat,
  BodyTemp,
  SystolicPressure,
  SpO2,
  AmbientTemp,
  Humidity,
  AirQuality,
  AtmPressure,
};

inline constexpr std::array kAllSensorKinds{
    SensorKind::ECG,         SensorKind::EMG,      SensorKind::Respiration,
    SensorKind::Heartbeat,   SensorKind::BodyTemp, SensorKind::SystolicPressure,
    SensorKind::SpO2,        SensorKind::AmbientTemp, SensorKind::Humidity,
    SensorKind::AirQuality,  SensorKind::AtmPressure,
};

constexpr bool is_medical(SensorKind k) { return k < SensorKind::AmbientTemp; }
std::string_view unit_of(SensorKind k);

enum class Stage : std::uint8_t { Entry, Basic, Middle, Advanced };
inline constexpr std::array kAllStages{Stage::Entry, Stage::Basic, Stage::Middle, Stage::Advanced};

enum class Modality : std::uint8_t { Image, Voice };
enum class PatientResponse : std::uint8_t { Laugh, VerbalReply, NoResponse, Withdrawal };
enum class RiskLevel : std::uint8_t { Low, Moderate, High, Critical };
enum class RecommendationKind : std::uint8_t {
  PrescriptionUpdate,
  TherapyStageChange,
  Instruction,
  EmergencyAck,
};
enum class SessionOutcome : std::uint8_t { Success, Failure };
enum class BoundSide : std::uint8_t { Lower, Upper };
enum class Placement : std::uint8_t { Local, Cloud };

constexpr bool is_positive(PatientResponse r) {
  return r == PatientResponse::Laugh || r == PatientResponse::VerbalReply;
}

std::string_view to_string(SensorKind v);
std::string_view to_string(Stage v);
std::string_view to_string(Modality v);
std::string_view to_string(PatientResponse v);
std::string_view to_string(RiskLevel v);
std::string_view to_string(RecommendationKind v);
std::string_view to_string(SessionOutcome v);
std::string_view to_string(BoundSide v);
std::string_view to_string(Placement v);

// Throws std::invalid_argument naming the enum and the bad text.
template <class E>
E parse_enum(std::string_view text);

void to_json(Json& j, SensorKind v);
void from_json(const Json& j, SensorKind& v);
void to_json(Json& j, Stage v);
void from_json(const Json& j, Stage& v);
void to_json(Json& j, Modality v);
void from_json(const Json& j, Modality& v);
void to_json(Json& j, PatientResponse v);
void from_json(const Json& j, PatientResponse& v);
void to_json(Json& j, RiskLevel v);
void from_json(const Json& j, RiskLevel& v);
void to_json(Json& j, RecommendationKind v);
void from_json(const Json& j, RecommendationKind& v);
void to_json(Json& j, SessionOutcome v);
void from_json(const Json& j, SessionOutcome& v);
void to_json(Json& j, BoundSide v);
void from_json(const Json& j, BoundSide& v);
void to_json(Json& j, Placement v);
void from_json(const Json& j, Placement& v);

// ---------------------------------------------------------------------------
// Therapy stage ladder (four humor-development stages, in ladder order).

struct StageInfo {
  Stage stage;
  std::string_view cognitive_stage;
  std::string_view humor_style;
  std::string_view therapy;
  std::span<const Modality> data_types;
  std::span<const std::string_view> tree_ids;
  std::string_view default_tree;
};

std::span<const StageInfo> stage_table();
const StageInfo& stage_info(Stage s);
bool stage_allows(Stage s, Modality m);
bool stage_has_tree(Stage s, std::string_view tree_id);
std::optional<Stage> next_stage(Stage s);

// ---------------------------------------------------------------------------
// Physical bounds per sensor kind.

struct Range {
  double lo = 0;
  double hi = 0;
  bool lo_open = false;
  bool hi_open = false;

  bool contains(double v) const;
  // Nearest representable value inside the range.
  double clamp(double v) const;
  // e.g. "[0,100]" or "(0,300)".
  std::string describe() const;
  bool operator==(const Range&) const = default;
};

using PhysicalBounds = std::map<SensorKind, Range>;
const PhysicalBounds& default_physical_bounds();

// ---------------------------------------------------------------------------
// Messages

struct SensorFrame {
  static constexpr std::string_view kType = "SensorFrame";
  std::string sensor_id;
  std::string patient_id;
  SensorKind kind = SensorKind::ECG;
  SimTime t;
  double value = 0;
  std::uint64_t seq = 0;
  bool operator==(const SensorFrame&) const = default;
};

struct InteractionEvent {
  static constexpr std::string_view kType = "InteractionEvent";
  SimTime t;
  std::string session_id;
  std::string action;
  PatientResponse patient_response = PatientResponse::NoResponse;
  Modality modality = Modality::Image;
  bool operator==(const InteractionEvent&) const = default;
};

struct KindSummary {
  double mean = 0;
  double min = 0;
  double max = 0;
  std::uint64_t count = 0;
  bool operator==(const KindSummary&) const = default;
};

struct NetworkInfo {
  std::string network_type;
  std::uint64_t service_data_flow_bytes = 0;
  double communication_quality = 1.0;
  bool operator==(const NetworkInfo&) const = default;
};

struct FusedRecord {
  static constexpr std::string_view kType = "FusedRecord";
  std::string patient_id;
  SimTime t0;
  SimTime t1;
  std::map<SensorKind, KindSummary> vitals;
  std::map<SensorKind, KindSummary> ambient;
  std::vector<InteractionEvent> interactions;
  NetworkInfo network_info;
  bool operator==(const FusedRecord&) const = default;
};

struct RiskFactor {
  SensorKind kind = SensorKind::ECG;
  std::string stat;
  double observed = 0;
  double bound = 0;
  bool operator==(const RiskFactor&) const = default;
};

struct RiskAssessment {
  static constexpr std::string_view kType = "RiskAssessment";
  std::string patient_id;
  RiskLevel level = RiskLevel::Low;
  std::int64_t score = 0;
  std::vector<RiskFactor> factors;
  bool alert_override = false;
  SimTime t;
  bool operator==(const RiskAssessment&) const = default;
};

struct AlertCause {
  SensorKind kind = SensorKind::SpO2;
  double value = 0;
  double threshold = 0;
  BoundSide side = BoundSide::Lower;
  bool operator==(const AlertCause&) const = default;
};

// Always travels with Critical priority.
struct EmergencyAlert {
  static constexpr std::string_view kType = "EmergencyAlert";
  std::string alert_id;
  std::string patient_id;
  AlertCause cause;
  SimTime created_at;
  bool operator==(const EmergencyAlert&) const = default;
};

struct ExpertRecommendation {
  static constexpr std::string_view kType = "ExpertRecommendation";
  std::string expert_id;
  std::string patient_id;
  RecommendationKind kind = RecommendationKind::Instruction;
  std::optional<Stage> target_stage;    // TherapyStageChange
  std::optional<std::string> alert_id;  // EmergencyAck
  std::string text;                     // PrescriptionUpdate / Instruction
  SimTime issued_at;
  bool operator==(const ExpertRecommendation&) const = default;

  // Identity used for causality tracing: expert, time and kind.
  std::string rec_id() const;
};

struct TherapyCommand {
  static constexpr std::string_view kType = "TherapyCommand";
  std::string patient_id;
  Stage stage = Stage::Entry;
  std::string tree_id;
  std::map<std::string, std::string> session_params;
  bool operator==(const TherapyCommand&) const = default;
};

struct Allocation {
  double bandwidth_kbps = 0;
  double compute_units = 0;
  double cache_quota_bytes = 0;
  bool operator==(const Allocation&) const = default;
};

struct ResourcePlan {
  static constexpr std::string_view kType = "ResourcePlan";
  SimTime epoch;
  std::map<std::string, Allocation> allocations;
  Allocation capacities;
  Allocation used;
  bool operator==(const ResourcePlan&) const = default;
};

struct SessionRecord {
  static constexpr std::string_view kType = "SessionRecord";
  std::string session_id;
  std::string patient_id;
  std::string tree_id;
  Stage stage = Stage::Entry;
  SessionOutcome outcome = SessionOutcome::Success;
  std::uint64_t event_count = 0;
  std::uint64_t steps = 0;
  std::int64_t duration_ms = 0;
  SimTime started_at;
  SimTime closed_at;
  double positive_fraction = 0;
  std::string cause;
  Placement analysis_placement = Placement::Local;
  std::int64_t analysis_cycles = 0;
  bool operator==(const SessionRecord&) const = default;
};

// Edge -> cloud: the patient met the progression rule at its current stage.
struct ProgressSignal {
  static constexpr std::string_view kType = "ProgressSignal";
  std::string patient_id;
  Stage from_stage = Stage::Entry;
  Stage to_stage = Stage::Basic;
  SimTime t;
  bool operator==(const ProgressSignal&) const = default;
};

// Edge -> cloud: a TherapyCommand took effect at a session boundary.
struct StageApplied {
  static constexpr std::string_view kType = "StageApplied";
  std::string patient_id;
  Stage previous_stage = Stage::Entry;
  Stage stage = Stage::Entry;
  std::string tree_id;
  std::string cause;
  SimTime applied_at;
  bool operator==(const StageApplied&) const = default;
};

struct AssetRequest {
  static constexpr std::string_view kType = "AssetRequest";
  std::string patient_id;
  std::string asset_id;
  std::int64_t size_bytes = 1;
  SimTime t;
  bool operator==(const AssetRequest&) const = default;
};

struct PatientEpochDemand {
  Allocation demand;
  RiskLevel risk = RiskLevel::Low;
  bool operator==(const PatientEpochDemand&) const = default;
};

// Cognitive Data Server -> Resource & Therapy Management Server, once per epoch.
struct EpochReport {
  static constexpr std::string_view kType = "EpochReport";
  SimTime epoch;
  std::int64_t epoch_ms = 1;
  std::uint64_t bytes_delivered = 0;
  std::map<std::string, PatientEpochDemand> patients;
  bool operator==(const EpochReport&) const = default;
};

// Resource & Therapy Management Server -> Cognitive Data Server.
struct ResourceFeedback {
  static constexpr std::string_view kType = "ResourceFeedback";
  ResourcePlan plan;
  std::map<std::string, Allocation> demands;
  std::int64_t epoch_ms = 1;
  std::uint64_t bytes_delivered = 0;
  double utilization = 0;
  std::uint64_t cache_hits = 0;
  std::uint64_t cache_misses = 0;
  std::int64_t cache_delivery_bytes = 0;
  bool operator==(const ResourceFeedback&) const = default;
};

struct RiskChange {
  static constexpr std::string_view kType = "RiskChange";
  std::string patient_id;
  RiskLevel previous = RiskLevel::Low;
  RiskAssessment assessment;
  bool operator==(const RiskChange&) const = default;
};

struct AlertCleared {
  static constexpr std::string_view kType = "AlertCleared";
  std::string alert_id;
  std::string patient_id;
  std::string acked_by;
  SimTime t;
  bool operator==(const AlertCleared&) const = default;
};

struct RecommendationResult {
  static constexpr std::string_view kType = "RecommendationResult";
  std::string rec_id;
  std::string patient_id;
  RecommendationKind kind = RecommendationKind::Instruction;
  bool applied = false;
  std::string reason;
  SimTime t;
  bool operator==(const RecommendationResult&) const = default;
};

#define THERASIM_DECLARE_JSON(T) \
  void to_json(Json& j, const T& v); \
  void from_json(const Json& j, T& v);

THERASIM_DECLARE_JSON(SensorFrame)
THERASIM_DECLARE_JSON(InteractionEvent)
THERASIM_DECLARE_JSON(KindSummary)
THERASIM_DECLARE_JSON(NetworkInfo)
THERASIM_DECLARE_JSON(FusedRecord)
THERASIM_DECLARE_JSON(RiskFactor)
THERASIM_DECLARE_JSON(RiskAssessment)
THERASIM_DECLARE_JSON(AlertCause)
THERASIM_DECLARE_JSON(EmergencyAlert)
THERASIM_DECLARE_JSON(ExpertRecommendation)
THERASIM_DECLARE_JSON(TherapyCommand)
THERASIM_DECLARE_JSON(Allocation)
THERASIM_DECLARE_JSON(ResourcePlan)
THERASIM_DECLARE_JSON(SessionRecord)
THERASIM_DECLARE_JSON(ProgressSignal)
THERASIM_DECLARE_JSON(StageApplied)
THERASIM_DECLARE_JSON(AssetRequest)
THERASIM_DECLARE_JSON(PatientEpochDemand)
THERASIM_DECLARE_JSON(EpochReport)
THERASIM_DECLARE_JSON(ResourceFeedback)
THERASIM_DECLARE_JSON(RiskChange)
THERASIM_DECLARE_JSON(AlertCleared)
THERASIM_DECLARE_JSON(RecommendationResult)

#undef THERASIM_DECLARE_JSON

// ---------------------------------------------------------------------------
// Validation

struct Violation {
  std::string field;
  std::string rule;
  bool operator==(const Violation&) const = default;
};

struct ValidationResult {
  std::vector<Violation> violations;

  bool ok() const { return violations.empty(); }
  void add(std::string field, std::string rule) {
    violations.push_back({std::move(field), std::move(rule)});
  }
  bool mentions(std::string_view rule) const;
  Json to_json() const;
};

ValidationResult validate(const SensorFrame& m, const PhysicalBounds& bounds = default_physical_bounds());
ValidationResult validate(const InteractionEvent& m);
// Adds the per-stage modality check for the session that produced it.
ValidationResult validate(const InteractionEvent& m, Stage session_stage);
ValidationResult validate(const FusedRecord& m);
ValidationResult validate(const EmergencyAlert& m);
ValidationResult validate(const ExpertRecommendation& m);
ValidationResult validate(const TherapyCommand& m);
ValidationResult validate(const ResourcePlan& m);
ValidationResult validate(const SessionRecord& m);
ValidationResult validate(const ProgressSignal& m);
ValidationResult validate(const StageApplied& m);
ValidationResult validate(const AssetRequest& m);
ValidationResult validate(const EpochReport& m);
ValidationResult validate(const ResourceFeedback& m);
ValidationResult validate(const RiskChange& m);
ValidationResult validate(const AlertCleared& m);
ValidationResult validate(const RecommendationResult& m);

// Maps a score to a level. `critical` also applies unconditionally when an
// alert is active; that override is applied by the caller.
struct RiskThresholds {
  std::int64_t moderate = 1;
  std::int64_t high = 3;
  std::int64_t critical = 6;
  bool operator==(const RiskThresholds&) const = default;
};
RiskLevel bucketize(std::int64_t score, const RiskThresholds& thresholds = {});
ValidationResult validate(const RiskAssessment& m, const RiskThresholds& thresholds = {});

// ---------------------------------------------------------------------------
// Codec

class DecodeError : public Error {
 public:
  DecodeError(const std::string& what, std::size_t offset)
      : Error(what), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

template <class T>
concept WireMessage = requires(const T& m, Json& j) {
  { T::kType } -> std::convertible_to<std::string_view>;
  to_json(j, m);
};

// Message as a JSON object with "type" and "v" fields added.
template <WireMessage T>
Json to_wire(const T& m) {
  Json j = m;
  j["type"] = T::kType;
  j["v"] = 1;
  return j;
}

template <WireMessage T>
std::string encode(const T& m) {
  return to_wire(m).dump();
}

// Parses a wire object of the expected type. Structural problems that
// carry no byte position report the end of the input as offset.
Json parse_wire(std::string_view bytes, std::string_view expected_type);

template <WireMessage T>
T from_wire(const Json& j) {
  try {
    return j.get<T>();
  } catch (const Json::exception& e) {
    throw DecodeError(std::string(T::kType) + ": " + e.what(), 0);
  } catch (const std::invalid_argument& e) {
    throw DecodeError(std::string(T::kType) + ": " + e.what(), 0);
  }
}

template <WireMessage T>
T decode(std::string_view bytes) {
  Json j = parse_wire(bytes, T::kType);
  try {
    return j.get<T>();
  } catch (const Json::exception& e) {
    throw DecodeError(std::string(T::kType) + ": " + e.what(), bytes.size());
  } catch (const std::invalid_argument& e) {
    throw DecodeError(std::string(T::kType) + ": " + e.what(), bytes.size());
  }
}

}  // namespace therasim
