#include "therasim/protocol.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <fmt/format.h>

namespace therasim {

// ---------------------------------------------------------------------------
// Enum names

namespace {

template <class E>
struct EnumNames;

template <>
struct EnumNames<SensorKind> {
  static constexpr std::string_view kName = "SensorKind";
  static constexpr std::array<std::string_view, 11> kValues{
      "ECG",      "EMG",         "Respiration", "Heartbeat",  "BodyTemp",   "SystolicPressure",
      "SpO2",     "AmbientTemp", "Humidity",    "AirQuality", "AtmPressure"};
};
template <>
struct EnumNames<Stage> {
  static constexpr std::string_view kName = "Stage";
  static constexpr std::array<std::string_view, 4> kValues{"Entry", "Basic", "Middle", "Advanced"};
};
template <>
struct EnumNames<Modality> {
  static constexpr std::string_view kName = "Modality";
  static constexpr std::array<std::string_view, 2> kValues{"Image", "Voice"};
};
template <>
struct EnumNames<PatientResponse> {
  static constexpr std::string_view kName = "PatientResponse";
  static constexpr std::array<std::string_view, 4> kValues{"Laugh", "VerbalReply", "NoResponse",
                                                           "Withdrawal"};
};
template <>
struct EnumNames<RiskLevel> {
  static constexpr std::string_view kName = "RiskLevel";
  static constexpr std::array<std::string_view, 4> kValues{"Low", "Moderate", "High", "Critical"};
};
template <>
struct EnumNames<RecommendationKind> {
  static constexpr std::string_view kName = "RecommendationKind";
  static constexpr std::array<std::string_view, 4> kValues{"PrescriptionUpdate", "TherapyStageChange",
                                                           "Instruction", "EmergencyAck"};
};
template <>
struct EnumNames<SessionOutcome> {
  static constexpr std::string_view kName = "SessionOutcome";
  static constexpr std::array<std::string_view, 2> kValues{"Success", "Failure"};
};
template <>
struct EnumNames<BoundSide> {
  static constexpr std::string_view kName = "BoundSide";
  static constexpr std::array<std::string_view, 2> kValues{"Lower", "Upper"};
};
template <>
struct EnumNames<Placement> {
  static constexpr std::string_view kName = "Placement";
  static constexpr std::array<std::string_view, 2> kValues{"Local", "Cloud"};
};

template <class E>
std::string_view name_of(E v) {
  const auto i = static_cast<std::size_t>(v);
  if (i >= EnumNames<E>::kValues.size()) throw std::invalid_argument("enum value out of range");
  return EnumNames<E>::kValues[i];
}

template <class E>
void enum_to_json(Json& j, E v) {
  j = name_of(v);
}

template <class E>
void enum_from_json(const Json& j, E& v) {
  if (!j.is_string()) {
    throw std::invalid_argument(fmt::format("{} must be a string", EnumNames<E>::kName));
  }
  v = parse_enum<E>(j.get_ref<const std::string&>());
}

}  // namespace

template <class E>
E parse_enum(std::string_view text) {
  const auto& values = EnumNames<E>::kValues;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i] == text) return static_cast<E>(i);
  }
  throw std::invalid_argument(fmt::format("'{}' is not a valid {}", text, EnumNames<E>::kName));
}

#define THERASIM_ENUM_IMPL(E)                                          \
  template E parse_enum<E>(std::string_view);                          \
  std::string_view to_string(E v) { return name_of(v); }               \
  void to_json(Json& j, E v) { enum_to_json(j, v); }                   \
  void from_json(const Json& j, E& v) { enum_from_json(j, v); }

THERASIM_ENUM_IMPL(SensorKind)
THERASIM_ENUM_IMPL(Stage)
THERASIM_ENUM_IMPL(Modality)
THERASIM_ENUM_IMPL(PatientResponse)
THERASIM_ENUM_IMPL(RiskLevel)
THERASIM_ENUM_IMPL(RecommendationKind)
THERASIM_ENUM_IMPL(SessionOutcome)
THERASIM_ENUM_IMPL(BoundSide)
THERASIM_ENUM_IMPL(Placement)

#undef THERASIM_ENUM_IMPL

std::string_view unit_of(SensorKind k) {
  switch (k) {
    case SensorKind::ECG:
    case SensorKind::EMG:
      return "mV";
    case SensorKind::Respiration:
      return "breaths/min";
    case SensorKind::Heartbeat:
      return "bpm";
    case SensorKind::BodyTemp:
    case SensorKind::AmbientTemp:
      return "degC";
    case SensorKind::SystolicPressure:
      return "mmHg";
    case SensorKind::SpO2:
    case SensorKind::Humidity:
      return "%";
    case SensorKind::AirQuality:
      return "AQI";
    case SensorKind::AtmPressure:
      return "hPa";
  }
  return "";
}

// ---------------------------------------------------------------------------
// Stage ladder

namespace {

constexpr std::array kImageOnly{Modality::Image};
constexpr std::array kImageVoice{Modality::Image, Modality::Voice};

constexpr std::array<std::string_view, 3> kEntryTrees{"entry_playball", "entry_chasing",
                                                      "entry_spinning"};
constexpr std::array<std::string_view, 1> kBasicTrees{"basic_aladdin"};
constexpr std::array<std::string_view, 1> kMiddleTrees{"middle_knockknock"};
constexpr std::array<std::string_view, 2> kAdvancedTrees{"advanced_sarcasm_1", "advanced_sarcasm_2"};

const std::array<StageInfo, 4> kStageTable{{
    {Stage::Entry, "Sensorimotor Stage", "Incongruous Actions", "Funny Behaviors", kImageOnly,
     kEntryTrees, "entry_playball"},
    {Stage::Basic, "Sensorimotor Stage", "Incongruous Events", "Interesting Expression", kImageVoice,
     kBasicTrees, "basic_aladdin"},
    {Stage::Middle, "Preoperational Stage", "Conceptual Incongruity", "Knock-Knock Jokes",
     kImageVoice, kMiddleTrees, "middle_knockknock"},
    {Stage::Advanced, "Concrete Operations", "Multiple Meanings", "Sarcastic Jokes", kImageVoice,
     kAdvancedTrees, "advanced_sarcasm_1"},
}};

}  // namespace

std::span<const StageInfo> stage_table() { return kStageTable; }

const StageInfo& stage_info(Stage s) { return kStageTable.at(static_cast<std::size_t>(s)); }

bool stage_allows(Stage s, Modality m) {
  const auto types = stage_info(s).data_types;
  return std::find(types.begin(), types.end(), m) != types.end();
}

bool stage_has_tree(Stage s, std::string_view tree_id) {
  const auto ids = stage_info(s).tree_ids;
  return std::find(ids.begin(), ids.end(), tree_id) != ids.end();
}

std::optional<Stage> next_stage(Stage s) {
  if (s == Stage::Advanced) return std::nullopt;
  return static_cast<Stage>(static_cast<int>(s) + 1);
}

// ---------------------------------------------------------------------------
// Bounds

bool Range::contains(double v) const {
  if (!std::isfinite(v)) return false;
  const bool lo_ok = lo_open ? v > lo : v >= lo;
  const bool hi_ok = hi_open ? v < hi : v <= hi;
  return lo_ok && hi_ok;
}

double Range::clamp(double v) const {
  const double min_v = lo_open ? std::nextafter(lo, hi) : lo;
  const double max_v = hi_open ? std::nextafter(hi, lo) : hi;
  if (std::isnan(v)) return min_v;
  return std::clamp(v, min_v, max_v);
}

std::string Range::describe() const {
  return fmt::format("{}{},{}{}", lo_open ? '(' : '[', lo, hi, hi_open ? ')' : ']');
}

const PhysicalBounds& default_physical_bounds() {
  static const PhysicalBounds bounds{
      {SensorKind::ECG, {-10, 10}},
      {SensorKind::EMG, {-10, 10}},
      {SensorKind::Respiration, {0, 80}},
      {SensorKind::Heartbeat, {0, 300, true, true}},
      {SensorKind::BodyTemp, {30, 45}},
      {SensorKind::SystolicPressure, {50, 250}},
      {SensorKind::SpO2, {0, 100}},
      {SensorKind::AmbientTemp, {-40, 60}},
      {SensorKind::Humidity, {0, 100}},
      {SensorKind::AirQuality, {0, 500}},
      {SensorKind::AtmPressure, {850, 1100}},
  };
  return bounds;
}

std::string ExpertRecommendation::rec_id() const {
  return fmt::format("{}@{}:{}", expert_id, issued_at.ms, to_string(kind));
}

// ---------------------------------------------------------------------------
// JSON

namespace {

template <class T>
T field(const Json& j, const char* key) {
  return j.at(key).get<T>();
}

Json summaries_to_json(const std::map<SensorKind, KindSummary>& m) {
  Json out = Json::object();
  for (const auto& [kind, summary] : m) out[std::string(to_string(kind))] = summary;
  return out;
}

std::map<SensorKind, KindSummary> summaries_from_json(const Json& j) {
  if (!j.is_object()) throw std::invalid_argument("summary map must be an object");
  std::map<SensorKind, KindSummary> out;
  for (const auto& [key, value] : j.items()) out[parse_enum<SensorKind>(key)] = value.get<KindSummary>();
  return out;
}

}  // namespace

void to_json(Json& j, const SensorFrame& v) {
  j = Json{{"sensor_id", v.sensor_id}, {"patient_id", v.patient_id}, {"kind", v.kind},
           {"t", v.t},                 {"value", v.value},           {"seq", v.seq}};
}
void from_json(const Json& j, SensorFrame& v) {
  v.sensor_id = field<std::string>(j, "sensor_id");
  v.patient_id = field<std::string>(j, "patient_id");
  v.kind = field<SensorKind>(j, "kind");
  v.t = field<SimTime>(j, "t");
  v.value = field<double>(j, "value");
  v.seq = field<std::uint64_t>(j, "seq");
}

void to_json(Json& j, const InteractionEvent& v) {
  j = Json{{"t", v.t},
           {"session_id", v.session_id},
           {"action", v.action},
           {"patient_response", v.patient_response},
           {"modality", v.modality}};
}
void from_json(const Json& j, InteractionEvent& v) {
  v.t = field<SimTime>(j, "t");
  v.session_id = field<std::string>(j, "session_id");
  v.action = field<std::string>(j, "action");
  v.patient_response = field<PatientResponse>(j, "patient_response");
  v.modality = field<Modality>(j, "modality");
}

void to_json(Json& j, const KindSummary& v) {
  j = Json{{"mean", v.mean}, {"min", v.min}, {"max", v.max}, {"count", v.count}};
}
void from_json(const Json& j, KindSummary& v) {
  v.mean = field<double>(j, "mean");
  v.min = field<double>(j, "min");
  v.max = field<double>(j, "max");
  v.count = field<std::uint64_t>(j, "count");
}

void to_json(Json& j, const NetworkInfo& v) {
  j = Json{{"network_type", v.network_type},
           {"service_data_flow_bytes", v.service_data_flow_bytes},
           {"communication_quality", v.communication_quality}};
}
void from_json(const Json& j, NetworkInfo& v) {
  v.network_type = field<std::string>(j, "network_type");
  v.service_data_flow_bytes = field<std::uint64_t>(j, "service_data_flow_bytes");
  v.communication_quality = field<double>(j, "communication_quality");
}

void to_json(Json& j, const FusedRecord& v) {
  j = Json{{"patient_id", v.patient_id},
           {"window", Json::array({v.t0, v.t1})},
           {"vitals", summaries_to_json(v.vitals)},
           {"ambient", summaries_to_json(v.ambient)},
           {"interactions", v.interactions},
           {"network_info", v.network_info}};
}
void from_json(const Json& j, FusedRecord& v) {
  v.patient_id = field<std::string>(j, "patient_id");
  const Json& window = j.at("window");
  if (!window.is_array() || window.size() != 2) {
    throw std::invalid_argument("window must be a [t0, t1] pair");
  }
  v.t0 = window[0].get<SimTime>();
  v.t1 = window[1].get<SimTime>();
  v.vitals = summaries_from_json(j.at("vitals"));
  v.ambient = summaries_from_json(j.at("ambient"));
  v.interactions = field<std::vector<InteractionEvent>>(j, "interactions");
  v.network_info = field<NetworkInfo>(j, "network_info");
}

void to_json(Json& j, const RiskFactor& v) {
  j = Json{{"kind", v.kind}, {"stat", v.stat}, {"observed", v.observed}, {"bound", v.bound}};
}
void from_json(const Json& j, RiskFactor& v) {
  v.kind = field<SensorKind>(j, "kind");
  v.stat = field<std::string>(j, "stat");
  v.observed = field<double>(j, "observed");
  v.bound = field<double>(j, "bound");
}

void to_json(Json& j, const RiskAssessment& v) {
  j = Json{{"patient_id", v.patient_id}, {"level", v.level},
           {"score", v.score},           {"factors", v.factors},
           {"alert_override", v.alert_override}, {"t", v.t}};
}
void from_json(const Json& j, RiskAssessment& v) {
  v.patient_id = field<std::string>(j, "patient_id");
  v.level = field<RiskLevel>(j, "level");
  v.score = field<std::int64_t>(j, "score");
  v.factors = field<std::vector<RiskFactor>>(j, "factors");
  v.alert_override = field<bool>(j, "alert_override");
  v.t = field<SimTime>(j, "t");
}

void to_json(Json& j, const AlertCause& v) {
  j = Json{{"kind", v.kind}, {"value", v.value}, {"threshold", v.threshold}, {"side", v.side}};
}
void from_json(const Json& j, AlertCause& v) {
  v.kind = field<SensorKind>(j, "kind");
  v.value = field<double>(j, "value");
  v.threshold = field<double>(j, "threshold");
  v.side = field<BoundSide>(j, "side");
}

void to_json(Json& j, const EmergencyAlert& v) {
  j = Json{{"alert_id", v.alert_id},
           {"patient_id", v.patient_id},
           {"cause", v.cause},
           {"created_at", v.created_at},
           {"priority", RiskLevel::Critical}};
}
void from_json(const Json& j, EmergencyAlert& v) {
  v.alert_id = field<std::string>(j, "alert_id");
  v.patient_id = field<std::string>(j, "patient_id");
  v.cause = field<AlertCause>(j, "cause");
  v.created_at = field<SimTime>(j, "created_at");
  if (field<RiskLevel>(j, "priority") != RiskLevel::Critical) {
    throw std::invalid_argument("EmergencyAlert priority must be Critical");
  }
}

void to_json(Json& j, const ExpertRecommendation& v) {
  Json payload = Json::object();
  if (v.target_stage) payload["target_stage"] = *v.target_stage;
  if (v.alert_id) payload["alert_id"] = *v.alert_id;
  if (!v.text.empty()) payload["text"] = v.text;
  j = Json{{"expert_id", v.expert_id}, {"patient_id", v.patient_id}, {"kind", v.kind},
           {"payload", payload},       {"issued_at", v.issued_at}};
}
void from_json(const Json& j, ExpertRecommendation& v) {
  v.expert_id = field<std::string>(j, "expert_id");
  v.patient_id = field<std::string>(j, "patient_id");
  v.kind = field<RecommendationKind>(j, "kind");
  v.issued_at = field<SimTime>(j, "issued_at");
  const Json& payload = j.at("payload");
  if (!payload.is_object()) throw std::invalid_argument("payload must be an object");
  v.target_stage.reset();
  v.alert_id.reset();
  v.text.clear();
  if (payload.contains("target_stage")) v.target_stage = payload["target_stage"].get<Stage>();
  if (payload.contains("alert_id")) v.alert_id = payload["alert_id"].get<std::string>();
  if (payload.contains("text")) v.text = payload["text"].get<std::string>();
}

void to_json(Json& j, const TherapyCommand& v) {
  j = Json{{"patient_id", v.patient_id},
           {"stage", v.stage},
           {"tree_id", v.tree_id},
           {"session_params", v.session_params}};
}
void from_json(const Json& j, TherapyCommand& v) {
  v.patient_id = field<std::string>(j, "patient_id");
  v.stage = field<Stage>(j, "stage");
  v.tree_id = field<std::string>(j, "tree_id");
  v.session_params = field<std::map<std::string, std::string>>(j, "session_params");
}

void to_json(Json& j, const Allocation& v) {
  j = Json{{"bandwidth_kbps", v.bandwidth_kbps},
           {"compute_units", v.compute_units},
           {"cache_quota_bytes", v.cache_quota_bytes}};
}
void from_json(const Json& j, Allocation& v) {
  v.bandwidth_kbps = field<double>(j, "bandwidth_kbps");
  v.compute_units = field<double>(j, "compute_units");
  v.cache_quota_bytes = field<double>(j, "cache_quota_bytes");
}

void to_json(Json& j, const ResourcePlan& v) {
  j = Json{{"epoch", v.epoch},
           {"allocations", v.allocations},
           {"capacities", v.capacities},
           {"used", v.used}};
}
void from_json(const Json& j, ResourcePlan& v) {
  v.epoch = field<SimTime>(j, "epoch");
  v.allocations = field<std::map<std::string, Allocation>>(j, "allocations");
  v.capacities = field<Allocation>(j, "capacities");
  v.used = field<Allocation>(j, "used");
}

void to_json(Json& j, const SessionRecord& v) {
  j = Json{{"session_id", v.session_id},
           {"patient_id", v.patient_id},
           {"tree_id", v.tree_id},
           {"stage", v.stage},
           {"outcome", v.outcome},
           {"event_count", v.event_count},
           {"steps", v.steps},
           {"duration_ms", v.duration_ms},
           {"started_at", v.started_at},
           {"closed_at", v.closed_at},
           {"positive_fraction", v.positive_fraction},
           {"cause", v.cause},
           {"analysis_placement", v.analysis_placement},
           {"analysis_cycles", v.analysis_cycles}};
}
void from_json(const Json& j, SessionRecord& v) {
  v.session_id = field<std::string>(j, "session_id");
  v.patient_id = field<std::string>(j, "patient_id");
  v.tree_id = field<std::string>(j, "tree_id");
  v.stage = field<Stage>(j, "stage");
  v.outcome = field<SessionOutcome>(j, "outcome");
  v.event_count = field<std::uint64_t>(j, "event_count");
  v.steps = field<std::uint64_t>(j, "steps");
  v.duration_ms = field<std::int64_t>(j, "duration_ms");
  v.started_at = field<SimTime>(j, "started_at");
  v.closed_at = field<SimTime>(j, "closed_at");
  v.positive_fraction = field<double>(j, "positive_fraction");
  v.cause = field<std::string>(j, "cause");
  v.analysis_placement = field<Placement>(j, "analysis_placement");
  v.analysis_cycles = field<std::int64_t>(j, "analysis_cycles");
}

void to_json(Json& j, const ProgressSignal& v) {
  j = Json{{"patient_id", v.patient_id},
           {"from_stage", v.from_stage},
           {"to_stage", v.to_stage},
           {"t", v.t}};
}
void from_json(const Json& j, ProgressSignal& v) {
  v.patient_id = field<std::string>(j, "patient_id");
  v.from_stage = field<Stage>(j, "from_stage");
  v.to_stage = field<Stage>(j, "to_stage");
  v.t = field<SimTime>(j, "t");
}

void to_json(Json& j, const StageApplied& v) {
  j = Json{{"patient_id", v.patient_id}, {"previous_stage", v.previous_stage},
           {"stage", v.stage},           {"tree_id", v.tree_id},
           {"cause", v.cause},           {"applied_at", v.applied_at}};
}
void from_json(const Json& j, StageApplied& v) {
  v.patient_id = field<std::string>(j, "patient_id");
  v.previous_stage = field<Stage>(j, "previous_stage");
  v.stage = field<Stage>(j, "stage");
  v.tree_id = field<std::string>(j, "tree_id");
  v.cause = field<std::string>(j, "cause");
  v.applied_at = field<SimTime>(j, "applied_at");
}

void to_json(Json& j, const AssetRequest& v) {
  j = Json{{"patient_id", v.patient_id},
           {"asset_id", v.asset_id},
           {"size_bytes", v.size_bytes},
           {"t", v.t}};
}
void from_json(const Json& j, AssetRequest& v) {
  v.patient_id = field<std::string>(j, "patient_id");
  v.asset_id = field<std::string>(j, "asset_id");
  v.size_bytes = field<std::int64_t>(j, "size_bytes");
  v.t = field<SimTime>(j, "t");
}

void to_json(Json& j, const PatientEpochDemand& v) {
  j = Json{{"demand", v.demand}, {"risk", v.risk}};
}
void from_json(const Json& j, PatientEpochDemand& v) {
  v.demand = field<Allocation>(j, "demand");
  v.risk = field<RiskLevel>(j, "risk");
}

void to_json(Json& j, const EpochReport& v) {
  j = Json{{"epoch", v.epoch},
           {"epoch_ms", v.epoch_ms},
           {"bytes_delivered", v.bytes_delivered},
           {"patients", v.patients}};
}
void from_json(const Json& j, EpochReport& v) {
  v.epoch = field<SimTime>(j, "epoch");
  v.epoch_ms = field<std::int64_t>(j, "epoch_ms");
  v.bytes_delivered = field<std::uint64_t>(j, "bytes_delivered");
  v.patients = field<std::map<std::string, PatientEpochDemand>>(j, "patients");
}

void to_json(Json& j, const ResourceFeedback& v) {
  j = Json{{"plan", v.plan},
           {"demands", v.demands},
           {"epoch_ms", v.epoch_ms},
           {"bytes_delivered", v.bytes_delivered},
           {"utilization", v.utilization},
           {"cache_hits", v.cache_hits},
           {"cache_misses", v.cache_misses},
           {"cache_delivery_bytes", v.cache_delivery_bytes}};
}
void from_json(const Json& j, ResourceFeedback& v) {
  v.plan = field<ResourcePlan>(j, "plan");
  v.demands = field<std::map<std::string, Allocation>>(j, "demands");
  v.epoch_ms = field<std::int64_t>(j, "epoch_ms");
  v.bytes_delivered = field<std::uint64_t>(j, "bytes_delivered");
  v.utilization = field<double>(j, "utilization");
  v.cache_hits = field<std::uint64_t>(j, "cache_hits");
  v.cache_misses = field<std::uint64_t>(j, "cache_misses");
  v.cache_delivery_bytes = field<std::int64_t>(j, "cache_delivery_bytes");
}

void to_json(Json& j, const RiskChange& v) {
  j = Json{{"patient_id", v.patient_id}, {"previous", v.previous}, {"assessment", v.assessment}};
}
void from_json(const Json& j, RiskChange& v) {
  v.patient_id = field<std::string>(j, "patient_id");
  v.previous = field<RiskLevel>(j, "previous");
  v.assessment = field<RiskAssessment>(j, "assessment");
}

void to_json(Json& j, const AlertCleared& v) {
  j = Json{{"alert_id", v.alert_id},
           {"patient_id", v.patient_id},
           {"acked_by", v.acked_by},
           {"t", v.t}};
}
void from_json(const Json& j, AlertCleared& v) {
  v.alert_id = field<std::string>(j, "alert_id");
  v.patient_id = field<std::string>(j, "patient_id");
  v.acked_by = field<std::string>(j, "acked_by");
  v.t = field<SimTime>(j, "t");
}

void to_json(Json& j, const RecommendationResult& v) {
  j = Json{{"rec_id", v.rec_id},   {"patient_id", v.patient_id}, {"kind", v.kind},
           {"applied", v.applied}, {"reason", v.reason},         {"t", v.t}};
}
void from_json(const Json& j, RecommendationResult& v) {
  v.rec_id = field<std::string>(j, "rec_id");
  v.patient_id = field<std::string>(j, "patient_id");
  v.kind = field<RecommendationKind>(j, "kind");
  v.applied = field<bool>(j, "applied");
  v.reason = field<std::string>(j, "reason");
  v.t = field<SimTime>(j, "t");
}

// ---------------------------------------------------------------------------
// Validation

bool ValidationResult::mentions(std::string_view rule) const {
  return std::any_of(violations.begin(), violations.end(),
                     [&](const Violation& v) { return v.rule.find(rule) != std::string::npos; });
}

Json ValidationResult::to_json() const {
  Json out = Json::array();
  for (const auto& v : violations) out.push_back({{"field", v.field}, {"rule", v.rule}});
  return out;
}

namespace {

void require_id(ValidationResult& r, const std::string& value, const char* name) {
  if (value.empty()) r.add(name, fmt::format("{} must be non-empty", name));
}

void require_finite(ValidationResult& r, double value, const std::string& name) {
  if (!std::isfinite(value)) r.add(name, fmt::format("{} must be finite", name));
}

void check_summaries(ValidationResult& r, const std::map<SensorKind, KindSummary>& m,
                     const char* group, bool medical) {
  for (const auto& [kind, s] : m) {
    const std::string name = fmt::format("{}.{}", group, to_string(kind));
    if (is_medical(kind) != medical) {
      r.add(name, fmt::format("{} is not a {} kind", to_string(kind), group));
    }
    if (!std::isfinite(s.mean) || !std::isfinite(s.min) || !std::isfinite(s.max)) {
      r.add(name, "summary statistics must be finite");
      continue;
    }
    if (s.count == 0) {
      if (s.mean != 0 || s.min != 0 || s.max != 0) r.add(name, "empty summary must be all zero");
    } else if (!(s.min <= s.mean && s.mean <= s.max)) {
      r.add(name, "min <= mean <= max");
    }
  }
}

void check_allocation(ValidationResult& r, const Allocation& a, const std::string& name) {
  const std::array values{a.bandwidth_kbps, a.compute_units, a.cache_quota_bytes};
  for (double v : values) {
    if (!std::isfinite(v) || v < 0) {
      r.add(name, "allocations must be finite and >= 0");
      return;
    }
  }
}

// Sums may carry rounding from proportional splits.
bool within_capacity(double used, double capacity) {
  return used <= capacity + 1e-9 * std::max(1.0, std::abs(capacity));
}

}  // namespace

ValidationResult validate(const SensorFrame& m, const PhysicalBounds& bounds) {
  ValidationResult r;
  require_id(r, m.sensor_id, "sensor_id");
  require_id(r, m.patient_id, "patient_id");
  auto it = bounds.find(m.kind);
  if (it == bounds.end()) {
    r.add("kind", fmt::format("no physical bounds configured for {}", to_string(m.kind)));
  } else if (!it->second.contains(m.value)) {
    r.add("value", fmt::format("{} ∈ {}", to_string(m.kind), it->second.describe()));
  }
  return r;
}

ValidationResult validate(const InteractionEvent& m) {
  ValidationResult r;
  require_id(r, m.session_id, "session_id");
  require_id(r, m.action, "action");
  return r;
}

ValidationResult validate(const InteractionEvent& m, Stage session_stage) {
  ValidationResult r = validate(m);
  if (!stage_allows(session_stage, m.modality)) {
    r.add("modality", fmt::format("{} stage does not use {} data", to_string(session_stage),
                                  to_string(m.modality)));
  }
  return r;
}

ValidationResult validate(const FusedRecord& m) {
  ValidationResult r;
  require_id(r, m.patient_id, "patient_id");
  if (!(m.t0 < m.t1)) r.add("window", "t0 < t1");
  check_summaries(r, m.vitals, "vitals", true);
  check_summaries(r, m.ambient, "ambient", false);
  SimTime prev{0};
  for (std::size_t i = 0; i < m.interactions.size(); ++i) {
    const auto& ev = m.interactions[i];
    const std::string name = fmt::format("interactions[{}]", i);
    if (ev.t < m.t0 || !(ev.t < m.t1)) r.add(name, "interaction t ∈ [t0,t1)");
    if (i > 0 && ev.t < prev) r.add(name, "interactions in time order");
    prev = ev.t;
    for (const auto& v : validate(ev).violations) r.add(name + "." + v.field, v.rule);
  }
  const double q = m.network_info.communication_quality;
  if (!(q >= 0.0 && q <= 1.0)) r.add("network_info.communication_quality", "communication_quality ∈ [0,1]");
  return r;
}

RiskLevel bucketize(std::int64_t score, const RiskThresholds& th) {
  if (score >= th.critical) return RiskLevel::Critical;
  if (score >= th.high) return RiskLevel::High;
  if (score >= th.moderate) return RiskLevel::Moderate;
  return RiskLevel::Low;
}

ValidationResult validate(const RiskAssessment& m, const RiskThresholds& th) {
  ValidationResult r;
  require_id(r, m.patient_id, "patient_id");
  if (m.score < 0) r.add("score", "score >= 0");
  const RiskLevel expected = m.alert_override ? RiskLevel::Critical : bucketize(m.score, th);
  if (m.level != expected) {
    r.add("level", fmt::format("level must be {} for score {}", to_string(expected), m.score));
  }
  if (m.level > RiskLevel::Low && m.factors.empty() && !m.alert_override) {
    r.add("factors", "factors non-empty whenever level > Low");
  }
  return r;
}

ValidationResult validate(const EmergencyAlert& m) {
  ValidationResult r;
  require_id(r, m.alert_id, "alert_id");
  require_id(r, m.patient_id, "patient_id");
  require_finite(r, m.cause.value, "cause.value");
  const bool violates = m.cause.side == BoundSide::Lower ? m.cause.value < m.cause.threshold
                                                         : m.cause.value > m.cause.threshold;
  if (!violates) r.add("cause", "cause value must violate its threshold");
  return r;
}

ValidationResult validate(const ExpertRecommendation& m) {
  ValidationResult r;
  require_id(r, m.expert_id, "expert_id");
  require_id(r, m.patient_id, "patient_id");
  switch (m.kind) {
    case RecommendationKind::TherapyStageChange:
      if (!m.target_stage) {
        r.add("payload.target_stage",
              "TherapyStageChange target ∈ {Entry, Basic, Middle, Advanced}");
      }
      break;
    case RecommendationKind::EmergencyAck:
      if (!m.alert_id || m.alert_id->empty()) {
        r.add("payload.alert_id", "EmergencyAck must reference an alert_id");
      }
      break;
    case RecommendationKind::PrescriptionUpdate:
    case RecommendationKind::Instruction:
      if (m.text.empty()) r.add("payload.text", fmt::format("{} needs text", to_string(m.kind)));
      break;
  }
  return r;
}

ValidationResult validate(const TherapyCommand& m) {
  ValidationResult r;
  require_id(r, m.patient_id, "patient_id");
  if (!stage_has_tree(m.stage, m.tree_id)) {
    r.add("tree_id", fmt::format("tree_id ∈ trees of stage {}", to_string(m.stage)));
  }
  return r;
}

ValidationResult validate(const ResourcePlan& m) {
  ValidationResult r;
  check_allocation(r, m.capacities, "capacities");
  check_allocation(r, m.used, "used");
  Allocation sum;
  for (const auto& [pid, a] : m.allocations) {
    check_allocation(r, a, "allocations." + pid);
    sum.bandwidth_kbps += a.bandwidth_kbps;
    sum.compute_units += a.compute_units;
    sum.cache_quota_bytes += a.cache_quota_bytes;
  }
  if (!within_capacity(sum.bandwidth_kbps, m.capacities.bandwidth_kbps)) {
    r.add("allocations", "sum of bandwidth_kbps <= capacity");
  }
  if (!within_capacity(sum.compute_units, m.capacities.compute_units)) {
    r.add("allocations", "sum of compute_units <= capacity");
  }
  if (!within_capacity(sum.cache_quota_bytes, m.capacities.cache_quota_bytes)) {
    r.add("allocations", "sum of cache_quota_bytes <= capacity");
  }
  return r;
}

ValidationResult validate(const SessionRecord& m) {
  ValidationResult r;
  require_id(r, m.session_id, "session_id");
  require_id(r, m.patient_id, "patient_id");
  if (!stage_has_tree(m.stage, m.tree_id)) {
    r.add("tree_id", fmt::format("tree_id ∈ trees of stage {}", to_string(m.stage)));
  }
  if (m.steps == 0) r.add("steps", "steps >= 1");
  if (m.closed_at < m.started_at) r.add("closed_at", "closed_at >= started_at");
  if (!(m.positive_fraction >= 0.0 && m.positive_fraction <= 1.0)) {
    r.add("positive_fraction", "positive_fraction ∈ [0,1]");
  }
  if (m.duration_ms < 0) r.add("duration_ms", "duration_ms >= 0");
  return r;
}

ValidationResult validate(const ProgressSignal& m) {
  ValidationResult r;
  require_id(r, m.patient_id, "patient_id");
  if (next_stage(m.from_stage) != m.to_stage) r.add("to_stage", "advancement moves exactly one stage");
  return r;
}

ValidationResult validate(const StageApplied& m) {
  ValidationResult r;
  require_id(r, m.patient_id, "patient_id");
  require_id(r, m.cause, "cause");
  if (!stage_has_tree(m.stage, m.tree_id)) {
    r.add("tree_id", fmt::format("tree_id ∈ trees of stage {}", to_string(m.stage)));
  }
  return r;
}

ValidationResult validate(const AssetRequest& m) {
  ValidationResult r;
  require_id(r, m.patient_id, "patient_id");
  require_id(r, m.asset_id, "asset_id");
  if (m.size_bytes <= 0) r.add("size_bytes", "size_bytes > 0");
  return r;
}

ValidationResult validate(const EpochReport& m) {
  ValidationResult r;
  if (m.epoch_ms <= 0) r.add("epoch_ms", "epoch_ms > 0");
  for (const auto& [pid, d] : m.patients) check_allocation(r, d.demand, "patients." + pid);
  return r;
}

ValidationResult validate(const ResourceFeedback& m) {
  ValidationResult r = validate(m.plan);
  if (m.epoch_ms <= 0) r.add("epoch_ms", "epoch_ms > 0");
  if (!(m.utilization >= 0)) r.add("utilization", "utilization >= 0");
  return r;
}

ValidationResult validate(const RiskChange& m) {
  ValidationResult r;
  require_id(r, m.patient_id, "patient_id");
  if (m.previous == m.assessment.level) r.add("assessment.level", "risk change must change the level");
  return r;
}

ValidationResult validate(const AlertCleared& m) {
  ValidationResult r;
  require_id(r, m.alert_id, "alert_id");
  require_id(r, m.patient_id, "patient_id");
  return r;
}

ValidationResult validate(const RecommendationResult& m) {
  ValidationResult r;
  require_id(r, m.rec_id, "rec_id");
  if (!m.applied && m.reason.empty()) r.add("reason", "rejections carry a reason");
  return r;
}

// ---------------------------------------------------------------------------
// Codec

Json parse_wire(std::string_view bytes, std::string_view expected_type) {
  Json j;
  try {
    j = Json::parse(bytes.begin(), bytes.end());
  } catch (const Json::parse_error& e) {
    throw DecodeError(e.what(), e.byte == 0 ? 0 : e.byte - 1);
  }
  if (!j.is_object()) throw DecodeError("message must be a JSON object", 0);
  const auto type = j.find("type");
  if (type == j.end() || !type->is_string() || type->get_ref<const std::string&>() != expected_type) {
    throw DecodeError(fmt::format("expected message type {}", expected_type), bytes.size());
  }
  const auto version = j.find("v");
  if (version == j.end() || *version != 1) throw DecodeError("unsupported message version", bytes.size());
  return j;
}

}  // namespace therasim
