#pragma once

// Scenario configuration: JSON schema with a default for every field. Unknown
// keys are rejected with the offending path.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "therasim/cloud_services.hpp"
#include "therasim/edge_robot.hpp"
#include "therasim/iot_sensors.hpp"
#include "therasim/patient_models.hpp"

namespace therasim {

class ConfigError : public Error {
 public:
  ConfigError(const std::string& path, const std::string& message)
      : Error(path.empty() ? message : path + ": " + message), path_(path) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

struct LinksConfig {
  LinkModel edge_cloud{"edge-cloud", 20, 1'000};
  LinkModel cloud_expert{"cloud-expert", 50, 1'000};
  LinkModel cloud_internal{"cloud-internal", 5, 100'000};
};

struct PatientAnomaly {
  std::string patient_id;
  AnomalyScript script;
};

struct SensorsConfig {
  std::map<SensorKind, SensorProfile> profiles = default_profiles();
  PhysicalBounds bounds = default_physical_bounds();
  std::vector<PatientAnomaly> anomalies;
};

struct PatientConfig {
  std::string id;
  Stage stage = Stage::Entry;
  double engagement = 0.5;
  double cooperation_bias = 0.5;
  ResponseModel response;
};

struct ExpertConfig {
  ExpertMode mode = ExpertMode::AutoAdvance;
  std::int64_t ack_delay_ms = 5'000;
  ProgressionRule progression;
  // Live mode: the scripted expert only acks, after this long.
  std::int64_t live_ack_timeout_ms = 30'000;
};

struct QoeConfig {
  double w1 = 1.0;
  double w2 = 0.5;
  std::int64_t latency_ref_ms = 200;
};

struct ScenarioConfig {
  std::uint64_t seed = 42;
  std::int64_t duration_ms = 600'000;
  LinksConfig links;
  SensorsConfig sensors;
  EdgeConfig edge;
  std::string trees_dir;
  CloudConfig cloud;
  QoeConfig qoe;
  std::vector<PatientConfig> patients;
  ExpertConfig expert;
};

ScenarioConfig parse_config(const Json& j);
ScenarioConfig load_config(const std::filesystem::path& path);
// Every field, defaults included.
Json resolved_json(const ScenarioConfig& config);

// Built-in trees plus any *.json under config.trees_dir (same id overrides).
TreeCatalog load_catalog(const ScenarioConfig& config);

}  // namespace therasim
