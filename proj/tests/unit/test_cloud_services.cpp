#include <doctest.h>

#include "../common/oracles.hpp"
#include "therasim/cloud_services.hpp"
#include "therasim/scenario.hpp"
#include "therasim/simulation.hpp"

using namespace therasim;

namespace {

FusedRecord record_with(std::map<SensorKind, KindSummary> vitals) {
  FusedRecord r;
  r.patient_id = "p1";
  r.t0 = SimTime{0};
  r.t1 = SimTime{10000};
  r.network_info.network_type = "5G";
  r.vitals = std::move(vitals);
  return r;
}

EmergencyAlert alert(const std::string& id) {
  return EmergencyAlert{id, "p1", AlertCause{SensorKind::SpO2, 85, 90, BoundSide::Lower}, SimTime{1000}};
}

ExpertRecommendation rec(RecommendationKind kind, std::int64_t t) {
  ExpertRecommendation r;
  r.expert_id = "expert";
  r.patient_id = "p1";
  r.kind = kind;
  r.issued_at = SimTime{t};
  return r;
}

}  // namespace

// ---------------------------------------------------------------------------
// risk

TEST_CASE("no record scores zero and is Low") {
  const auto a = evaluate_risk("p1", nullptr, default_risk_policy(), false, SimTime{0});
  CHECK(a.score == 0);
  CHECK(a.level == RiskLevel::Low);
  CHECK(a.factors.empty());
}

TEST_CASE("SpO2 min 85 with heart rate max 130 scores 6 and is Critical") {
  const auto r = record_with({{SensorKind::SpO2, KindSummary{92, 85, 97, 10}},
                              {SensorKind::Heartbeat, KindSummary{100, 80, 130, 10}}});
  const auto a = evaluate_risk("p1", &r, default_risk_policy(), false, SimTime{0});
  CHECK(a.score == 6);
  CHECK(a.level == RiskLevel::Critical);
  CHECK(a.factors.size() == 2);
  CHECK(validate(a).ok());
}

TEST_CASE("an unacknowledged alert forces Critical whatever the score") {
  const auto a = evaluate_risk("p1", nullptr, default_risk_policy(), true, SimTime{0});
  CHECK(a.score == 0);
  CHECK(a.level == RiskLevel::Critical);
  CHECK(a.alert_override);
}

TEST_CASE("score thresholds bucket as configured") {
  const auto r = record_with({{SensorKind::Respiration, KindSummary{20, 6, 32, 10}}});
  const auto a = evaluate_risk("p1", &r, default_risk_policy(), false, SimTime{0});
  CHECK(a.score == 2);
  CHECK(a.level == RiskLevel::Moderate);
}

TEST_CASE("worsening any single statistic never lowers the risk level") {
  const auto sweep = oracle::risk_monotonicity_sweep(6, 1000);
  INFO(sweep.first_mismatch);
  CHECK(sweep.cases == 1000 * 16);
  CHECK(sweep.mismatches == 0);
}

TEST_CASE("policies that would break monotonicity are rejected") {
  RiskPolicy p = default_risk_policy();
  CHECK_NOTHROW(check_policy(p));
  p.rules.push_back(RiskRule{SensorKind::SpO2, SummaryStat::Min, BoundSide::Upper, 99, 1});
  CHECK_THROWS_AS(check_policy(p), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// data server

TEST_CASE("ingest keeps a bounded dossier and reports level changes") {
  CognitiveDataServer cds(default_risk_policy(), 3);
  cds.register_patient("p1", Stage::Entry);
  const auto bad = record_with({{SensorKind::SpO2, KindSummary{88, 85, 92, 10}}});
  const auto r1 = cds.ingest(bad, SimTime{10000});
  REQUIRE(r1.change.has_value());
  CHECK(r1.change->previous == RiskLevel::Low);
  CHECK(r1.assessment.level == RiskLevel::High);
  CHECK_FALSE(cds.ingest(bad, SimTime{20000}).change.has_value());
  for (int i = 0; i < 5; ++i) cds.ingest(record_with({}), SimTime{30000 + i * 10000});
  CHECK(cds.dossier("p1").recent.size() == 3);
  CHECK(cds.dossier("p1").risk.level == RiskLevel::Low);
  auto stranger = bad;
  stranger.patient_id = "p9";
  CHECK_THROWS_AS(cds.ingest(stranger, SimTime{0}), UnknownPatient);
}

TEST_CASE("stage change for a Middle patient routes the knock-knock tree") {
  CognitiveDataServer cds(default_risk_policy(), 10);
  cds.register_patient("p1", Stage::Basic);
  auto r = rec(RecommendationKind::TherapyStageChange, 5000);
  r.target_stage = Stage::Middle;
  const auto out = cds.route_recommendation(r, SimTime{5000});
  REQUIRE(out.command.has_value());
  CHECK(out.command->stage == Stage::Middle);
  CHECK(out.command->tree_id == "middle_knockknock");
  CHECK(out.command->session_params.at("rec_id") == r.rec_id());
  CHECK(out.result.applied);
}

TEST_CASE("acks clear an outstanding alert once; a second ack is stale") {
  CognitiveDataServer cds(default_risk_policy(), 10);
  cds.register_patient("p1", Stage::Entry);
  const auto raised = cds.raise_alert(alert("p1/alert1"), SimTime{1000});
  REQUIRE(raised.has_value());
  CHECK(raised->assessment.level == RiskLevel::Critical);
  auto ack = rec(RecommendationKind::EmergencyAck, 6000);
  ack.alert_id = "p1/alert1";
  const auto out = cds.route_recommendation(ack, SimTime{6000});
  REQUIRE(out.cleared.has_value());
  CHECK(out.cleared->alert_id == "p1/alert1");
  REQUIRE(out.change.has_value());
  CHECK(out.change->assessment.level == RiskLevel::Low);
  CHECK_THROWS_AS(cds.route_recommendation(ack, SimTime{7000}), StaleAck);
  ack.alert_id = "p1/alert9";
  CHECK_THROWS_AS(cds.route_recommendation(ack, SimTime{7000}), StaleAck);
}

TEST_CASE("invalid recommendations are rejected") {
  CognitiveDataServer cds(default_risk_policy(), 10);
  cds.register_patient("p1", Stage::Entry);
  auto r = rec(RecommendationKind::TherapyStageChange, 0);
  CHECK_THROWS_AS(cds.route_recommendation(r, SimTime{0}), InvalidRecommendation);
  r.patient_id = "nobody";
  r.target_stage = Stage::Basic;
  CHECK_THROWS_AS(cds.route_recommendation(r, SimTime{0}), UnknownPatient);
}

// ---------------------------------------------------------------------------
// allocation

TEST_CASE("equal demands over capacity split evenly") {
  const auto two = allocate_tiered({60, 60}, {RiskLevel::Low, RiskLevel::Low}, 100);
  CHECK(two[0] == doctest::Approx(50));
  CHECK(two[1] == doctest::Approx(50));
  const auto one = allocate_tiered({60}, {RiskLevel::Low}, 100);
  CHECK(one[0] == 60);
}

TEST_CASE("a higher tier is served in full before a lower tier gets anything") {
  const auto a = allocate_tiered({60, 60}, {RiskLevel::Low, RiskLevel::Critical}, 100);
  CHECK(a[1] == 60);
  CHECK(a[0] == doctest::Approx(40));
  const auto b = allocate_tiered({80, 80, 10}, {RiskLevel::High, RiskLevel::High, RiskLevel::Moderate}, 100);
  CHECK(b[0] == doctest::Approx(50));
  CHECK(b[1] == doctest::Approx(50));
  CHECK(b[2] == 0);
}

TEST_CASE("allocation matches the water-filling oracle on small instances") {
  // Every ordering up to 3 patients, multisets with shuffles for 4.
  const auto sweep = oracle::allocation_sweep(4, 3, 10, 20, 1);
  INFO(sweep.first_mismatch);
  CHECK(sweep.cases > 1'000'000);
  CHECK(sweep.mismatches == 0);
}

TEST_CASE("allocate builds a plan per resource and sums usage") {
  std::map<std::string, PatientEpochDemand> d;
  d["p1"] = PatientEpochDemand{Allocation{600, 10, 1000}, RiskLevel::Low};
  d["p2"] = PatientEpochDemand{Allocation{600, 10, 1000}, RiskLevel::Low};
  const auto plan = allocate(SimTime{60000}, d, Allocation{1000, 100, 1500});
  CHECK(plan.allocations.at("p1").bandwidth_kbps == doctest::Approx(500));
  CHECK(plan.allocations.at("p1").compute_units == 10);
  CHECK(plan.allocations.at("p2").cache_quota_bytes == doctest::Approx(750));
  CHECK(plan.used.bandwidth_kbps == doctest::Approx(1000));
}

// ---------------------------------------------------------------------------
// offload, handover, cache

TEST_CASE("offload examples") {
  const LinkModel link{"edge-cloud", 20, 1000};
  // No input and a faster cloud: remote wins on compute alone.
  CHECK(offload_decision(OffloadTask{"a", 1000, 0, "r"}, 10, 100, LinkModel{"x", 0, 1000}).placement ==
        Placement::Cloud);
  // 1000 cycles: local 100 ms, cloud 10 + 20 + 0 = 30 ms.
  CHECK(offload_decision(OffloadTask{"b", 1000, 0, "r"}, 10, 100, link).placement == Placement::Cloud);
  // 300 cycles: local 30, cloud 3 + 20 = 23.
  CHECK(offload_decision(OffloadTask{"c", 300, 0, "r"}, 10, 100, link).placement == Placement::Cloud);
  // Exact tie stays local: local 25, cloud 5 + 20.
  const auto tie = offload_decision(OffloadTask{"d", 250, 0, "r"}, 10, 50, link);
  CHECK(tie.cost_local_ms == tie.cost_cloud_ms);
  CHECK(tie.placement == Placement::Local);
}

TEST_CASE("offload agrees with the two-option oracle on random tasks") {
  const auto sweep = oracle::offload_sweep(21, 1000);
  INFO(sweep.first_mismatch);
  CHECK(sweep.cases == 1000);
  CHECK(sweep.mismatches == 0);
}

TEST_CASE("handover picks the lowest latency plus load penalty") {
  const std::vector<EdgeCandidate> sites{{"A", 20, 0}, {"B", 15, 0}};
  CHECK(handover(sites, 5).id == "B");
  const std::vector<EdgeCandidate> loaded{{"A", 20, 0}, {"B", 15, 2}};
  CHECK(handover(loaded, 5).id == "A");
  const std::vector<EdgeCandidate> tied{{"Z", 10, 0}, {"M", 5, 1}};
  CHECK(handover(tied, 5).id == "M");
  CHECK_THROWS_AS(handover({}, 5), NoCandidates);
}

TEST_CASE("handover agrees with a linear-scan argmin on random sets") {
  const auto sweep = oracle::handover_sweep(22, 500);
  INFO(sweep.first_mismatch);
  CHECK(sweep.cases == 500);
  CHECK(sweep.mismatches == 0);
}

TEST_CASE("LRU evicts the least recently used asset") {
  LruCache c(10);
  CHECK_FALSE(c.access("a", 4).hit);
  CHECK_FALSE(c.access("b", 4).hit);
  const auto third = c.access("c", 4);
  CHECK(third.evicted == std::vector<std::string>{"a"});
  CHECK(third.delivery_cost_bytes == 4);
  CHECK(c.access("b", 4).hit);
  CHECK(c.access("d", 4).evicted == std::vector<std::string>{"c"});
  CHECK(c.ids() == std::vector<std::string>{"d", "b"});
  CHECK(c.used() == 8);
  CHECK_THROWS_AS(c.access("huge", 11), AssetTooLarge);
  CHECK(c.used() == 8);
}

TEST_CASE("LRU agrees with a stamp-based reference on a long trace") {
  const auto sweep = oracle::lru_sweep(23, 10000);
  INFO(sweep.first_mismatch);
  CHECK(sweep.cases == 10000);
  CHECK(sweep.mismatches == 0);
}

// ---------------------------------------------------------------------------
// nodes

TEST_CASE("one feedback per epoch, utilization from delivered bytes") {
  auto config = parse_config(Json::parse(R"({"seed": 3, "duration_ms": 300000,
    "patients": [{"id": "p1", "stage": "Entry", "engagement": 0.7, "cooperation_bias": 0.8},
                 {"id": "p2", "stage": "Basic", "engagement": 0.5, "cooperation_bias": 0.5}]})"));
  Simulation sim(config, false);
  std::vector<ResourceFeedback> feedback;
  std::uint64_t uplink_bytes = 0;
  std::vector<std::uint64_t> bytes_per_epoch;
  sim.set_trace_writer([&](const std::string& line) {
    const Json j = Json::parse(line);
    if (j["target"] != "cds") return;
    if (j["kind"] == "resource_feedback") {
      feedback.push_back(from_wire<ResourceFeedback>(j["payload"]["msg"]));
    } else if (j["kind"] == "epoch") {
      bytes_per_epoch.push_back(uplink_bytes);
      uplink_bytes = 0;
    } else if (j["payload"].contains("from") && j["payload"]["from"].get<std::string>().rfind("robot/", 0) == 0) {
      uplink_bytes += j["payload"]["size"].get<std::uint64_t>();
    }
  });
  sim.start();
  sim.finish();
  REQUIRE(feedback.size() == 4);
  REQUIRE(bytes_per_epoch.size() == 4);
  for (std::size_t i = 0; i < feedback.size(); ++i) {
    const auto& fb = feedback[i];
    CHECK(fb.plan.epoch.ms == static_cast<std::int64_t>(i + 1) * 60000);
    CHECK(fb.bytes_delivered == bytes_per_epoch[i]);
    const double expect = static_cast<double>(bytes_per_epoch[i]) * 8.0 / (config.cloud.capacities.bandwidth_kbps * 60000.0);
    CHECK(fb.utilization == doctest::Approx(expect));
    CHECK(fb.plan.allocations.size() == 2);
  }
}
