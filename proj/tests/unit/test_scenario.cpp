#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "therasim/scenario.hpp"

using namespace therasim;

namespace {

const std::filesystem::path kSource = THERASIM_SOURCE_DIR;

std::string error_path(const std::string& text) {
  try {
    parse_config(Json::parse(text));
  } catch (const ConfigError& e) {
    return e.path();
  }
  return "<accepted>";
}

}  // namespace

TEST_CASE("an empty object gives the documented defaults") {
  const auto c = parse_config(Json::object());
  CHECK(c.seed == 42);
  CHECK(c.duration_ms == 600000);
  CHECK(c.links.edge_cloud.latency_ms == 20);
  CHECK(c.links.edge_cloud.bandwidth_kbps == 1000);
  CHECK(c.edge.fusion_window_ms == 10000);
  CHECK(c.edge.beat_ms == 3000);
  CHECK(c.cloud.epoch_ms == 60000);
  CHECK(c.expert.mode == ExpertMode::AutoAdvance);
  CHECK(c.expert.progression.k == 3);
  CHECK(c.expert.progression.theta == 0.6);
  CHECK(c.sensors.profiles.size() == 11);
  REQUIRE(c.patients.size() == 1);
  CHECK(c.patients[0].id == "p1");
  CHECK(error_path(R"({"patients": []})") == "patients");
}

TEST_CASE("unknown keys are rejected with their path") {
  CHECK(error_path(R"({"sede": 1})") == "sede");
  CHECK(error_path(R"({"edge": {"beat": 5}})") == "edge.beat");
  CHECK(error_path(R"({"links": {"edge_cloud": {"latency": 5}}})") == "links.edge_cloud.latency");
  CHECK(error_path(R"({"patients": [{"id": "p1", "mood": 1}]})") == "patients[0].mood");
  CHECK(error_path(R"({"sensors": {"profiles": {"SpO2": {"base": 1}}}})") == "sensors.profiles.SpO2.base");
}

TEST_CASE("bad values are rejected with their path") {
  CHECK(error_path(R"({"duration_ms": 0})") == "duration_ms");
  CHECK(error_path(R"({"seed": "x"})") == "seed");
  CHECK(error_path(R"({"patients": [{"id": "p1", "engagement": 1.5}]})") == "patients[0].engagement");
  CHECK(error_path(R"({"patients": [{"id": "p1", "stage": "Expert"}]})") == "patients[0].stage");
  CHECK(error_path(R"({"expert": {"theta": 2}})") == "expert.theta");
  CHECK(error_path(R"({"sensors": {"anomalies": [{"patient_id": "p9", "kind": "SpO2", "duration_ms": 1, "delta": 1}]}})") ==
        "sensors.anomalies[0].patient_id");
}

TEST_CASE("the shipped scenarios load") {
  for (const char* name : {"minimal", "reference", "emergency", "progression"}) {
    CAPTURE(name);
    CHECK_NOTHROW(load_config(kSource / "scenarios" / (std::string(name) + ".json")));
  }
  const auto ref = load_config(kSource / "scenarios" / "reference.json");
  CHECK(ref.patients.size() == 3);
  CHECK(ref.duration_ms == 600000);
  CHECK(ref.seed == 42);
  CHECK(ref.sensors.anomalies.size() == 1);
}

TEST_CASE("the resolved form parses back to itself") {
  for (const char* name : {"minimal", "reference", "emergency", "progression"}) {
    CAPTURE(name);
    const auto c = load_config(kSource / "scenarios" / (std::string(name) + ".json"));
    const Json resolved = resolved_json(c);
    CHECK(resolved_json(parse_config(resolved)) == resolved);
  }
}

TEST_CASE("trees_dir entries replace built-ins by id") {
  const auto dir = std::filesystem::temp_directory_path() / "therasim_trees_test";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "entry_playball.json");
    out << R"({"tree_id": "entry_playball", "stage": "Entry", "root": {"kind": "Sequence", "name": "s", "children": [
      {"kind": "Action", "name": "a", "action_spec": {"behavior": "wave", "modality": "Image"}}]}})";
  }
  ScenarioConfig c;
  c.trees_dir = dir.string();
  const auto catalog = load_catalog(c);
  CHECK(catalog.at("entry_playball").root.children.size() == 1);
  CHECK(catalog.contains("basic_aladdin"));

  {
    std::ofstream out(dir / "broken.json");
    out << R"({"tree_id": "broken", "stage": "Entry", "root": {"kind": "Sequence", "name": "s", "children": []}})";
  }
  CHECK_THROWS_AS(load_catalog(c), ConfigError);
  std::filesystem::remove_all(dir);
  CHECK_THROWS_AS(load_catalog(c), ConfigError);
}

TEST_CASE("unreadable files raise ConfigError") {
  CHECK_THROWS_AS(load_config("/nonexistent/scenario.json"), ConfigError);
}
