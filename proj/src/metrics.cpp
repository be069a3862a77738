#include "therasim/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include <fmt/format.h>

namespace therasim {

void MetricsAccumulator::add_line(std::string_view text) {
  const std::uint64_t line_no = lines_ + 1;
  if (saw_run_end_) throw CorruptTrace(fmt::format("line {}: event after run_end", line_no), line_no);
  Json line;
  try {
    line = Json::parse(text.begin(), text.end());
  } catch (const Json::parse_error& e) {
    throw CorruptTrace(fmt::format("line {}: {}", line_no, e.what()), line_no);
  }
  hash_ = fnv1a64("\n", fnv1a64(text, hash_));
  try {
    add(line);
  } catch (const Json::exception& e) {
    throw CorruptTrace(fmt::format("line {}: {}", line_no, e.what()), line_no);
  }
  if (!saw_run_start_) throw CorruptTrace(fmt::format("line {}: trace must open with run_start", line_no), line_no);
}

void MetricsAccumulator::add(const Json& line) {
  ++lines_;
  const std::int64_t t = line.at("t").get<std::int64_t>();
  const std::string& target = line.at("target").get_ref<const std::string&>();
  const std::string& kind = line.at("kind").get_ref<const std::string&>();
  const Json& payload = line.at("payload");

  if (payload.is_object() && payload.contains("link") && payload.contains("size")) {
    bytes_moved_ += payload["size"].get<std::uint64_t>();
    ++deliveries_;
  }

  if (target == "gateway") {
    if (kind == "run_start") {
      saw_run_start_ = true;
      const Json& config = payload.at("config");
      seed_ = config.at("seed").get<std::uint64_t>();
      duration_ms_ = config.at("duration_ms").get<std::int64_t>();
      const Json& qoe = config.at("cloud").at("qoe");
      w1_ = qoe.at("w1").get<double>();
      w2_ = qoe.at("w2").get<double>();
      latency_ref_ms_ = qoe.at("latency_ref_ms").get<double>();
      for (const auto& p : config.at("patients")) {
        Patient& st = patients_[p.at("id").get<std::string>()];
        st.stage_timeline.push_back(Json{{"t", 0}, {"stage", p.at("stage")}, {"cause", "scenario"}});
      }
    } else if (kind == "run_end") {
      saw_run_end_ = true;
    } else if (kind == "stage_change") {
      Patient& st = patients_[payload.at("patient_id").get<std::string>()];
      st.stage_timeline.push_back(Json{{"t", t},
                                       {"stage", payload.at("stage")},
                                       {"tree_id", payload.at("tree_id")},
                                       {"cause", payload.at("cause")}});
      if (payload.at("stage") != payload.at("previous_stage")) ++st.stage_changes;
    } else if (kind == "session_closed") {
      Patient& st = patients_[payload.at("patient_id").get<std::string>()];
      ++st.sessions[payload.at("outcome").get<std::string>()];
      cycles_by_location_[payload.at("analysis_placement").get<std::string>()] +=
          payload.at("analysis_cycles").get<std::int64_t>();
    } else if (kind == "feedback") {
      const Json& allocs = payload.at("plan").at("allocations");
      for (const auto& [id, demand] : payload.at("demands").items()) {
        const double want = demand.at("bandwidth_kbps").get<double>();
        const double got = allocs.at(id).at("bandwidth_kbps").get<double>();
        patients_[id].bandwidth_ratios.push_back(want > 0 ? std::min(1.0, got / want) : 1.0);
      }
      cache_hits_ += payload.at("cache_hits").get<std::uint64_t>();
      cache_misses_ += payload.at("cache_misses").get<std::uint64_t>();
      epochs_.push_back(Json{{"epoch", payload.at("plan").at("epoch")},
                             {"bytes_delivered", payload.at("bytes_delivered")},
                             {"utilization", payload.at("utilization")}});
    } else if (kind == "recommendation_result") {
      ++(payload.at("applied").get<bool>() ? recommendations_applied_ : recommendations_rejected_);
    }
  } else if (target == "cds") {
    if (kind == "fused_record") {
      Patient& st = patients_[payload.at("msg").at("patient_id").get<std::string>()];
      st.latency_sum += static_cast<double>(t - payload.at("sent_at").get<std::int64_t>());
      ++st.uplinks;
    } else if (kind == "alert") {
      const Json& msg = payload.at("msg");
      Patient& st = patients_[msg.at("patient_id").get<std::string>()];
      st.alert_latencies.push_back(t - msg.at("created_at").get<std::int64_t>());
      ++alerts_;
    }
  }
}

Json MetricsAccumulator::result() const {
  Json patients = Json::object();
  std::uint64_t stage_changes = 0;
  for (const auto& [id, st] : patients_) {
    const double mean_latency = st.uplinks > 0 ? st.latency_sum / static_cast<double>(st.uplinks) : 0.0;
    const double satisfaction =
        st.bandwidth_ratios.empty()
            ? 1.0
            : std::accumulate(st.bandwidth_ratios.begin(), st.bandwidth_ratios.end(), 0.0) /
                  static_cast<double>(st.bandwidth_ratios.size());
    const double qoe = std::clamp(w1_ * satisfaction - w2_ * (mean_latency / latency_ref_ms_), 0.0, 1.0);
    Json sessions = Json{{"Success", 0}, {"Failure", 0}};
    for (const auto& [outcome, n] : st.sessions) sessions[outcome] = n;
    patients[id] = Json{{"mean_uplink_latency_ms", mean_latency},
                        {"uplink_records", st.uplinks},
                        {"alert_latencies_ms", st.alert_latencies},
                        {"bandwidth_satisfaction", satisfaction},
                        {"qoe", qoe},
                        {"stage_timeline", st.stage_timeline},
                        {"stage_changes", st.stage_changes},
                        {"sessions_by_outcome", sessions}};
    stage_changes += st.stage_changes;
  }
  const std::uint64_t accesses = cache_hits_ + cache_misses_;
  Json global{{"cache_hit_ratio", accesses > 0 ? static_cast<double>(cache_hits_) / static_cast<double>(accesses) : 0.0},
              {"cache_hits", cache_hits_},
              {"cache_misses", cache_misses_},
              {"bytes_moved", bytes_moved_},
              {"link_deliveries", deliveries_},
              {"epochs", epochs_},
              {"compute_cycles_by_location", cycles_by_location_},
              {"alerts", alerts_},
              {"stage_changes", stage_changes},
              {"recommendations_applied", recommendations_applied_},
              {"recommendations_rejected", recommendations_rejected_},
              {"trace_events", lines_},
              {"trace_hash", fmt::format("{:016x}", hash_)}};
  return Json{{"seed", seed_}, {"duration_ms", duration_ms_}, {"complete", saw_run_end_},
              {"patients", patients}, {"global", global}};
}

Json metrics_from_trace(std::istream& in) {
  MetricsAccumulator acc;
  std::string text;
  std::uint64_t line_no = 0;
  while (std::getline(in, text)) {
    ++line_no;
    if (in.eof()) {
      throw CorruptTrace(fmt::format("line {}: missing newline, trace was truncated", line_no), line_no);
    }
    acc.add_line(text);
  }
  if (!acc.complete()) {
    throw CorruptTrace(fmt::format("line {}: trace ends without run_end", line_no + 1), line_no + 1);
  }
  return acc.result();
}

std::string metrics_text(const Json& metrics) { return metrics.dump(2) + "\n"; }

}  // namespace therasim
