#include <doctest.h>

#include "../common/oracles.hpp"
#include "therasim/patient_models.hpp"

using namespace therasim;

namespace {

PatientModel patient(Stage stage, double engagement, double coop) {
  PatientModel p;
  p.patient_id = "p1";
  p.stage = stage;
  p.engagement = engagement;
  p.cooperation_bias = coop;
  return p;
}

PatientModel with_history(Stage stage, std::vector<std::pair<SessionOutcome, double>> sessions) {
  PatientModel p = patient(stage, 0.5, 0.5);
  for (const auto& [outcome, fraction] : sessions) p.record_session({"t", stage, outcome, fraction});
  return p;
}

constexpr auto S = SessionOutcome::Success;
constexpr auto F = SessionOutcome::Failure;

}  // namespace

TEST_CASE("positive rate matches the closed form within 0.02 on random parameter sets") {
  std::mt19937_64 g(8);
  for (int i = 0; i < 20; ++i) {
    const auto c = oracle::calibrate(g, 100 + static_cast<std::uint64_t>(i), 10000);
    INFO("engagement " << c.engagement << " cooperation " << c.cooperation << " action "
                       << to_string(c.action) << " patient " << to_string(c.patient));
    CHECK(std::abs(c.empirical - c.expected) <= 0.02);
  }
}

TEST_CASE("closed form and library agree exactly on the probability") {
  std::mt19937_64 g(9);
  std::uniform_real_distribution<double> u(0, 1);
  for (int i = 0; i < 200; ++i) {
    const Stage a = static_cast<Stage>(g() % 4);
    const Stage s = static_cast<Stage>(g() % 4);
    const auto p = patient(s, u(g), u(g));
    CHECK(positive_probability(p, a) == oracle::closed_form_p(p.engagement, p.cooperation_bias, a, s, ResponseModel{}));
  }
}

TEST_CASE("zero engagement is always negative") {
  auto p = patient(Stage::Entry, 0.0, 1.0);
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) CHECK_FALSE(is_positive(respond(p, Stage::Entry, rng)));
  CHECK(p.engagement == 0.0);
}

TEST_CASE("full engagement and cooperation at a matched stage is always positive") {
  auto p = patient(Stage::Middle, 1.0, 1.0);
  Rng rng(2);
  for (int i = 0; i < 1000; ++i) CHECK(is_positive(respond(p, Stage::Middle, rng)));
  CHECK(p.engagement == 1.0);
}

TEST_CASE("engagement stays in [0, 1] over long runs") {
  Rng rng(3);
  for (double start : {0.0, 0.3, 0.97, 1.0}) {
    auto p = patient(Stage::Basic, start, 0.9);
    for (int i = 0; i < 5000; ++i) {
      respond(p, static_cast<Stage>(i % 4), rng);
      REQUIRE(p.engagement >= 0.0);
      REQUIRE(p.engagement <= 1.0);
    }
  }
}

TEST_CASE("each response consumes exactly two uniforms") {
  auto p = patient(Stage::Entry, 0.5, 0.5);
  Rng a(4), b(4);
  respond(p, Stage::Entry, a);
  b.uniform();
  b.uniform();
  CHECK(a.uniform() == b.uniform());
}

TEST_CASE("stage match factors") {
  CHECK(stage_match(Stage::Basic, Stage::Basic) == 1.0);
  CHECK(stage_match(Stage::Middle, Stage::Basic) == 0.5);
  CHECK(stage_match(Stage::Entry, Stage::Basic) == 0.8);
  CHECK(stage_match(Stage::Advanced, Stage::Entry) == 0.2);
}

TEST_CASE("progression needs K qualifying sessions at the current stage") {
  const ProgressionRule rule{3, 0.6};
  CHECK(maybe_advance(with_history(Stage::Entry, {{S, 0.7}, {S, 0.9}, {S, 0.6}}), rule) == Stage::Basic);
  CHECK_FALSE(maybe_advance(with_history(Stage::Entry, {{S, 0.7}, {F, 0.9}, {S, 0.6}}), rule));
  CHECK_FALSE(maybe_advance(with_history(Stage::Entry, {{S, 0.7}, {S, 0.9}, {S, 0.59}}), rule));
  CHECK_FALSE(maybe_advance(with_history(Stage::Entry, {{S, 0.7}, {S, 0.9}}), rule));
  CHECK(maybe_advance(with_history(Stage::Entry, {{F, 0.1}, {S, 0.7}, {S, 0.9}, {S, 0.6}}), rule) == Stage::Basic);
  CHECK_FALSE(maybe_advance(with_history(Stage::Advanced, {{S, 1}, {S, 1}, {S, 1}}), rule));
}

TEST_CASE("sessions before a stage change do not count toward the next one") {
  auto p = with_history(Stage::Entry, {{S, 1}, {S, 1}, {S, 1}});
  p.set_stage(Stage::Basic);
  CHECK_FALSE(maybe_advance(p, ProgressionRule{}));
  p.record_session({"basic_aladdin", Stage::Basic, S, 1});
  p.record_session({"basic_aladdin", Stage::Basic, S, 1});
  CHECK_FALSE(maybe_advance(p, ProgressionRule{}));
  p.record_session({"basic_aladdin", Stage::Basic, S, 1});
  CHECK(maybe_advance(p, ProgressionRule{}) == Stage::Middle);
}

TEST_CASE("expert acks an alert once its delay is due") {
  ExpertPolicy policy;
  ExpertView view;
  std::map<std::string, Stage> signals;
  view.now = SimTime{1000};
  view.alerts["p1/alert1"] = PendingAck{"p1", SimTime{6000}};
  CHECK(expert_step(policy, view, signals, "expert").empty());
  view.now = SimTime{6000};
  const auto out = expert_step(policy, view, signals, "expert");
  REQUIRE(out.size() == 1);
  CHECK(out[0].kind == RecommendationKind::EmergencyAck);
  CHECK(out[0].alert_id == "p1/alert1");
  CHECK(out[0].issued_at.ms == 6000);
  CHECK(view.alerts.empty());
}

TEST_CASE("AutoAdvance follows signals, Conservative waits for Low risk") {
  ExpertView view;
  view.now = SimTime{1000};
  view.risk["p1"] = RiskLevel::Moderate;
  std::map<std::string, Stage> signals{{"p1", Stage::Basic}};

  auto conservative = signals;
  ExpertPolicy careful{ExpertMode::Conservative, 5000, true};
  CHECK(expert_step(careful, view, conservative, "expert").empty());
  CHECK(conservative.size() == 1);
  view.risk["p1"] = RiskLevel::Low;
  const auto later = expert_step(careful, view, conservative, "expert");
  REQUIRE(later.size() == 1);
  CHECK(later[0].target_stage == Stage::Basic);
  CHECK(conservative.empty());

  view.risk["p1"] = RiskLevel::Critical;
  const auto eager = expert_step(ExpertPolicy{}, view, signals, "expert");
  REQUIRE(eager.size() == 1);
  CHECK(eager[0].kind == RecommendationKind::TherapyStageChange);
  CHECK(validate(eager[0]).ok());

  std::map<std::string, Stage> live_signals{{"p1", Stage::Basic}};
  CHECK(expert_step(ExpertPolicy{ExpertMode::AutoAdvance, 5000, false}, view, live_signals, "expert").empty());
}

TEST_CASE("expert modes parse") {
  CHECK(parse_expert_mode("Conservative") == ExpertMode::Conservative);
  CHECK(to_string(ExpertMode::AutoAdvance) == "AutoAdvance");
  CHECK_THROWS_AS(parse_expert_mode("Eager"), std::invalid_argument);
}
