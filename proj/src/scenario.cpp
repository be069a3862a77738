#include "therasim/scenario.hpp"

#include <algorithm>
#include <fstream>
#include <regex>
#include <set>
#include <sstream>

#include <fmt/format.h>

namespace therasim {

namespace {

// Reads an object's fields by name and remembers which ones were consumed,
// so that anything left over can be reported as unknown.
class Section {
 public:
  Section(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_, "expected an object");
  }

  std::string at(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  bool has(const std::string& key) const { return j_.contains(key); }

  template <class T>
  void read(const std::string& key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const Json::exception& e) {
      throw ConfigError(at(key), e.what());
    } catch (const std::invalid_argument& e) {
      throw ConfigError(at(key), e.what());
    }
  }

  const Json& raw(const std::string& key) {
    seen_.insert(key);
    static const Json empty = Json::object();
    return j_.contains(key) ? j_.at(key) : empty;
  }

  const Json* optional_raw(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto& [key, _] : j_.items()) {
      if (!seen_.contains(key)) throw ConfigError(at(key), "unknown key");
    }
  }

 private:
  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void require(bool ok, const std::string& path, const std::string& message) {
  if (!ok) throw ConfigError(path, message);
}

LinkModel parse_link(const Json& j, const std::string& path, LinkModel link) {
  Section s(j, path);
  s.read("latency_ms", link.latency_ms);
  s.read("bandwidth_kbps", link.bandwidth_kbps);
  s.finish();
  require(link.latency_ms >= 0, s.at("latency_ms"), "must be >= 0");
  require(link.bandwidth_kbps > 0, s.at("bandwidth_kbps"), "must be > 0");
  return link;
}

SensorKind parse_kind(const std::string& text, const std::string& path) {
  try {
    return parse_enum<SensorKind>(text);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(path, e.what());
  }
}

void parse_sensors(const Json& j, SensorsConfig& out, const std::set<std::string>& patient_ids) {
  Section s(j, "sensors");

  const Json& profiles = s.raw("profiles");
  Section ps(profiles, "sensors.profiles");
  for (const auto& [name, body] : profiles.items()) {
    const std::string path = ps.at(name);
    const SensorKind kind = parse_kind(name, path);
    SensorProfile& p = out.profiles.at(kind);
    Section f(body, path);
    f.read("baseline", p.baseline);
    f.read("amplitude", p.amplitude);
    f.read("period_ms", p.period_ms);
    f.read("noise_sd", p.noise_sd);
    f.read("sample_period_ms", p.sample_period_ms);
    f.finish();
    require(p.period_ms > 0, f.at("period_ms"), "must be > 0");
    require(p.noise_sd >= 0, f.at("noise_sd"), "must be >= 0");
    require(p.sample_period_ms > 0, f.at("sample_period_ms"), "must be > 0");
  }

  const Json& bounds = s.raw("bounds");
  Section bs(bounds, "sensors.bounds");
  for (const auto& [name, body] : bounds.items()) {
    const std::string path = bs.at(name);
    Range& r = out.bounds.at(parse_kind(name, path));
    Section f(body, path);
    f.read("lo", r.lo);
    f.read("hi", r.hi);
    f.read("lo_open", r.lo_open);
    f.read("hi_open", r.hi_open);
    f.finish();
    require(r.lo < r.hi, path, "lo must be < hi");
  }

  if (const Json* anomalies = s.optional_raw("anomalies")) {
    require(anomalies->is_array(), "sensors.anomalies", "expected a list");
    for (std::size_t i = 0; i < anomalies->size(); ++i) {
      const std::string path = fmt::format("sensors.anomalies[{}]", i);
      Section a((*anomalies)[i], path);
      PatientAnomaly pa;
      std::string kind = "SpO2";
      std::int64_t onset = 0;
      a.read("patient_id", pa.patient_id);
      a.read("kind", kind);
      a.read("onset_ms", onset);
      a.read("duration_ms", pa.script.duration_ms);
      a.read("delta", pa.script.delta);
      a.finish();
      pa.script.kind = parse_kind(kind, a.at("kind"));
      pa.script.onset = SimTime{onset};
      require(patient_ids.contains(pa.patient_id), a.at("patient_id"), "unknown patient");
      require(onset >= 0, a.at("onset_ms"), "must be >= 0");
      require(pa.script.duration_ms > 0, a.at("duration_ms"), "must be > 0");
      out.anomalies.push_back(std::move(pa));
    }
  }
  s.finish();
}

void parse_edge(const Json& j, EdgeConfig& out, std::string& trees_dir, const PhysicalBounds& bounds) {
  Section s(j, "edge");
  s.read("fusion_window_ms", out.fusion_window_ms);
  s.read("beat_ms", out.beat_ms);
  s.read("review_timeout_ms", out.review_timeout_ms);
  s.read("latency_ref_ms", out.latency_ref_ms);
  s.read("network_type", out.network_type);
  s.read("trees_dir", trees_dir);
  s.read("emergency_rules", out.emergency_rules);
  if (s.has("compute")) {
    Section c(s.raw("compute"), "edge.compute");
    auto& cc = out.compute;
    c.read("edge_capacity", cc.edge_capacity);
    c.read("cloud_capacity", cc.cloud_capacity);
    c.read("base_cycles", cc.base_cycles);
    c.read("cycles_per_event", cc.cycles_per_event);
    c.read("bytes_per_event", cc.bytes_per_event);
    c.finish();
    require(cc.edge_capacity > 0, c.at("edge_capacity"), "must be > 0");
    require(cc.cloud_capacity > 0, c.at("cloud_capacity"), "must be > 0");
    require(cc.base_cycles > 0, c.at("base_cycles"), "must be > 0");
    require(cc.cycles_per_event >= 0, c.at("cycles_per_event"), "must be >= 0");
    require(cc.bytes_per_event >= 0, c.at("bytes_per_event"), "must be >= 0");
  } else {
    s.raw("compute");
  }
  s.finish();
  require(out.fusion_window_ms > 0, s.at("fusion_window_ms"), "must be > 0");
  require(out.beat_ms > 0, s.at("beat_ms"), "must be > 0");
  require(out.review_timeout_ms > 0, s.at("review_timeout_ms"), "must be > 0");
  require(out.latency_ref_ms > 0, s.at("latency_ref_ms"), "must be > 0");
  try {
    check_rules(out.emergency_rules, bounds);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(s.at("emergency_rules"), e.what());
  }
}

void parse_cloud(const Json& j, CloudConfig& out, QoeConfig& qoe) {
  Section s(j, "cloud");
  if (const Json* risk = s.optional_raw("risk")) {
    Section r(*risk, "cloud.risk");
    r.read("rules", out.risk.rules);
    if (const Json* th = r.optional_raw("thresholds")) {
      Section t(*th, "cloud.risk.thresholds");
      t.read("moderate", out.risk.thresholds.moderate);
      t.read("high", out.risk.thresholds.high);
      t.read("critical", out.risk.thresholds.critical);
      t.finish();
    }
    r.finish();
    try {
      check_policy(out.risk);
    } catch (const std::invalid_argument& e) {
      throw ConfigError("cloud.risk", e.what());
    }
  }
  if (const Json* caps = s.optional_raw("capacities")) {
    Section c(*caps, "cloud.capacities");
    c.read("bandwidth_kbps", out.capacities.bandwidth_kbps);
    c.read("compute_units", out.capacities.compute_units);
    c.read("cache_quota_bytes", out.capacities.cache_quota_bytes);
    c.finish();
    require(out.capacities.bandwidth_kbps >= 0 && out.capacities.compute_units >= 0 &&
                out.capacities.cache_quota_bytes >= 0,
            "cloud.capacities", "must be >= 0");
  }
  s.read("epoch_ms", out.epoch_ms);
  s.read("epoch_guard_ms", out.epoch_guard_ms);
  s.read("load_penalty_ms", out.load_penalty_ms);
  s.read("cache_capacity_bytes", out.cache_capacity_bytes);
  s.read("dossier_depth", out.dossier_depth);
  s.read("edge_sites", out.edge_sites);
  if (const Json* q = s.optional_raw("qoe")) {
    Section qs(*q, "cloud.qoe");
    qs.read("w1", qoe.w1);
    qs.read("w2", qoe.w2);
    qs.read("latency_ref_ms", qoe.latency_ref_ms);
    qs.finish();
    require(qoe.latency_ref_ms > 0, qs.at("latency_ref_ms"), "must be > 0");
  }
  s.finish();
  require(out.epoch_ms > 0, s.at("epoch_ms"), "must be > 0");
  require(out.epoch_guard_ms >= 0, s.at("epoch_guard_ms"), "must be >= 0");
  require(out.load_penalty_ms >= 0, s.at("load_penalty_ms"), "must be >= 0");
  require(out.cache_capacity_bytes >= 0, s.at("cache_capacity_bytes"), "must be >= 0");
  require(out.dossier_depth >= 1, s.at("dossier_depth"), "must be >= 1");
  std::set<std::string> site_ids;
  for (const auto& site : out.edge_sites) {
    require(site_ids.insert(site.id).second, s.at("edge_sites"), fmt::format("duplicate id '{}'", site.id));
  }
}

ResponseModel parse_response(const Json& j, const std::string& path) {
  ResponseModel m;
  Section s(j, path);
  s.read("match_same", m.match_same);
  s.read("match_one_above", m.match_one_above);
  s.read("match_one_below", m.match_one_below);
  s.read("match_other", m.match_other);
  s.read("laugh_given_positive", m.laugh_given_positive);
  s.read("no_response_given_negative", m.no_response_given_negative);
  s.read("engagement_gain", m.engagement_gain);
  s.read("engagement_loss", m.engagement_loss);
  s.finish();
  for (double v : {m.match_same, m.match_one_above, m.match_one_below, m.match_other, m.laugh_given_positive,
                   m.no_response_given_negative, m.engagement_gain, m.engagement_loss}) {
    require(v >= 0 && v <= 1, path, "probabilities and engagement steps must lie in [0,1]");
  }
  return m;
}

std::vector<PatientConfig> parse_patients(const Json* j) {
  std::vector<PatientConfig> out;
  if (!j) {
    PatientConfig p;
    p.id = "p1";
    out.push_back(p);
    return out;
  }
  require(j->is_array(), "patients", "expected a list");
  require(!j->empty(), "patients", "at least one patient is required");
  static const std::regex id_pattern("[A-Za-z0-9_-]+");
  std::set<std::string> ids;
  for (std::size_t i = 0; i < j->size(); ++i) {
    const std::string path = fmt::format("patients[{}]", i);
    Section s((*j)[i], path);
    PatientConfig p;
    s.read("id", p.id);
    s.read("stage", p.stage);
    s.read("engagement", p.engagement);
    s.read("cooperation_bias", p.cooperation_bias);
    if (const Json* r = s.optional_raw("response")) p.response = parse_response(*r, s.at("response"));
    s.finish();
    require(std::regex_match(p.id, id_pattern), s.at("id"), "must match [A-Za-z0-9_-]+");
    require(ids.insert(p.id).second, s.at("id"), "duplicate patient id");
    require(p.engagement >= 0 && p.engagement <= 1, s.at("engagement"), "must lie in [0,1]");
    require(p.cooperation_bias >= 0 && p.cooperation_bias <= 1, s.at("cooperation_bias"), "must lie in [0,1]");
    out.push_back(std::move(p));
  }
  return out;
}

void parse_expert(const Json& j, ExpertConfig& out) {
  Section s(j, "expert");
  std::string mode(to_string(out.mode));
  s.read("mode", mode);
  s.read("ack_delay_ms", out.ack_delay_ms);
  s.read("k", out.progression.k);
  s.read("theta", out.progression.theta);
  s.read("live_ack_timeout_ms", out.live_ack_timeout_ms);
  s.finish();
  try {
    out.mode = parse_expert_mode(mode);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(s.at("mode"), e.what());
  }
  require(out.ack_delay_ms >= 0, s.at("ack_delay_ms"), "must be >= 0");
  require(out.progression.k >= 1, s.at("k"), "must be >= 1");
  require(out.progression.theta >= 0 && out.progression.theta <= 1, s.at("theta"), "must lie in [0,1]");
  require(out.live_ack_timeout_ms >= 0, s.at("live_ack_timeout_ms"), "must be >= 0");
}

}  // namespace

ScenarioConfig parse_config(const Json& j) {
  ScenarioConfig c;
  Section s(j, "");
  s.read("seed", c.seed);
  s.read("duration_ms", c.duration_ms);
  require(c.duration_ms > 0, "duration_ms", "must be > 0");

  c.patients = parse_patients(s.optional_raw("patients"));
  std::set<std::string> ids;
  for (const auto& p : c.patients) ids.insert(p.id);

  if (const Json* links = s.optional_raw("links")) {
    Section l(*links, "links");
    if (const Json* x = l.optional_raw("edge_cloud")) c.links.edge_cloud = parse_link(*x, "links.edge_cloud", c.links.edge_cloud);
    if (const Json* x = l.optional_raw("cloud_expert")) c.links.cloud_expert = parse_link(*x, "links.cloud_expert", c.links.cloud_expert);
    if (const Json* x = l.optional_raw("cloud_internal")) c.links.cloud_internal = parse_link(*x, "links.cloud_internal", c.links.cloud_internal);
    l.finish();
  }
  if (const Json* x = s.optional_raw("sensors")) parse_sensors(*x, c.sensors, ids);
  if (const Json* x = s.optional_raw("edge")) parse_edge(*x, c.edge, c.trees_dir, c.sensors.bounds);
  if (const Json* x = s.optional_raw("cloud")) parse_cloud(*x, c.cloud, c.qoe);
  if (const Json* x = s.optional_raw("expert")) parse_expert(*x, c.expert);
  s.finish();
  return c;
}

ScenarioConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("", fmt::format("cannot read {}", path.string()));
  std::stringstream buf;
  buf << in.rdbuf();
  Json j;
  try {
    j = Json::parse(buf.str());
  } catch (const Json::parse_error& e) {
    throw ConfigError("", fmt::format("{} is not valid JSON (byte {}): {}", path.string(), e.byte, e.what()));
  }
  return parse_config(j);
}

namespace {

Json link_json(const LinkModel& l) { return Json{{"latency_ms", l.latency_ms}, {"bandwidth_kbps", l.bandwidth_kbps}}; }

Json allocation_json(const Allocation& a) {
  return Json{{"bandwidth_kbps", a.bandwidth_kbps},
              {"compute_units", a.compute_units},
              {"cache_quota_bytes", a.cache_quota_bytes}};
}

}  // namespace

Json resolved_json(const ScenarioConfig& c) {
  Json profiles = Json::object();
  for (const auto& [kind, p] : c.sensors.profiles) {
    profiles[std::string(to_string(kind))] = Json{{"baseline", p.baseline},
                                                  {"amplitude", p.amplitude},
                                                  {"period_ms", p.period_ms},
                                                  {"noise_sd", p.noise_sd},
                                                  {"sample_period_ms", p.sample_period_ms}};
  }
  Json bounds = Json::object();
  for (const auto& [kind, r] : c.sensors.bounds) {
    bounds[std::string(to_string(kind))] = Json{{"lo", r.lo}, {"hi", r.hi}, {"lo_open", r.lo_open}, {"hi_open", r.hi_open}};
  }
  Json anomalies = Json::array();
  for (const auto& a : c.sensors.anomalies) {
    anomalies.push_back(Json{{"patient_id", a.patient_id},
                             {"kind", a.script.kind},
                             {"onset_ms", a.script.onset.ms},
                             {"duration_ms", a.script.duration_ms},
                             {"delta", a.script.delta}});
  }
  const auto& cc = c.edge.compute;
  Json edge{{"fusion_window_ms", c.edge.fusion_window_ms},
            {"beat_ms", c.edge.beat_ms},
            {"review_timeout_ms", c.edge.review_timeout_ms},
            {"latency_ref_ms", c.edge.latency_ref_ms},
            {"network_type", c.edge.network_type},
            {"trees_dir", c.trees_dir},
            {"emergency_rules", c.edge.emergency_rules},
            {"compute",
             {{"edge_capacity", cc.edge_capacity},
              {"cloud_capacity", cc.cloud_capacity},
              {"base_cycles", cc.base_cycles},
              {"cycles_per_event", cc.cycles_per_event},
              {"bytes_per_event", cc.bytes_per_event}}}};
  const auto& th = c.cloud.risk.thresholds;
  Json cloud{{"risk",
              {{"rules", c.cloud.risk.rules},
               {"thresholds", {{"moderate", th.moderate}, {"high", th.high}, {"critical", th.critical}}}}},
             {"capacities", allocation_json(c.cloud.capacities)},
             {"epoch_ms", c.cloud.epoch_ms},
             {"epoch_guard_ms", c.cloud.epoch_guard_ms},
             {"load_penalty_ms", c.cloud.load_penalty_ms},
             {"cache_capacity_bytes", c.cloud.cache_capacity_bytes},
             {"dossier_depth", c.cloud.dossier_depth},
             {"edge_sites", c.cloud.edge_sites},
             {"qoe", {{"w1", c.qoe.w1}, {"w2", c.qoe.w2}, {"latency_ref_ms", c.qoe.latency_ref_ms}}}};
  Json patients = Json::array();
  for (const auto& p : c.patients) {
    const auto& m = p.response;
    patients.push_back(Json{{"id", p.id},
                            {"stage", p.stage},
                            {"engagement", p.engagement},
                            {"cooperation_bias", p.cooperation_bias},
                            {"response",
                             {{"match_same", m.match_same},
                              {"match_one_above", m.match_one_above},
                              {"match_one_below", m.match_one_below},
                              {"match_other", m.match_other},
                              {"laugh_given_positive", m.laugh_given_positive},
                              {"no_response_given_negative", m.no_response_given_negative},
                              {"engagement_gain", m.engagement_gain},
                              {"engagement_loss", m.engagement_loss}}}});
  }
  Json expert{{"mode", to_string(c.expert.mode)},
              {"ack_delay_ms", c.expert.ack_delay_ms},
              {"k", c.expert.progression.k},
              {"theta", c.expert.progression.theta},
              {"live_ack_timeout_ms", c.expert.live_ack_timeout_ms}};
  return Json{{"seed", c.seed},
              {"duration_ms", c.duration_ms},
              {"links",
               {{"edge_cloud", link_json(c.links.edge_cloud)},
                {"cloud_expert", link_json(c.links.cloud_expert)},
                {"cloud_internal", link_json(c.links.cloud_internal)}}},
              {"sensors", {{"profiles", profiles}, {"bounds", bounds}, {"anomalies", anomalies}}},
              {"edge", edge},
              {"cloud", cloud},
              {"patients", patients},
              {"expert", expert}};
}

TreeCatalog load_catalog(const ScenarioConfig& config) {
  TreeCatalog catalog = bt::builtin_trees();
  if (config.trees_dir.empty()) return catalog;
  const std::filesystem::path dir(config.trees_dir);
  if (!std::filesystem::is_directory(dir)) throw ConfigError("edge.trees_dir", "not a directory");
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.path().extension() == ".json") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& file : files) {
    std::ifstream in(file);
    std::stringstream buf;
    buf << in.rdbuf();
    try {
      bt::TreeDef tree = bt::load_tree(buf.str());
      const std::string id = tree.tree_id;
      catalog[id] = std::move(tree);
    } catch (const Error& e) {
      throw ConfigError("edge.trees_dir", fmt::format("{}: {}", file.filename().string(), e.what()));
    }
  }
  return catalog;
}

}  // namespace therasim
