#pragma once

// Run metrics computed from the event trace alone, one line at a time.
//
//   QoE = clamp(w1 * mean_epochs(min(1, allocated / demanded bandwidth))
//               - w2 * mean_uplink_latency / latency_ref, 0, 1)

#include <cstdint>
#include <istream>
#include <map>
#include <string>
#include <vector>

#include "therasim/sim_kernel.hpp"

namespace therasim {

class CorruptTrace : public Error {
 public:
  CorruptTrace(const std::string& what, std::uint64_t line) : Error(what), line_(line) {}
  std::uint64_t line() const { return line_; }

 private:
  std::uint64_t line_;
};

class MetricsAccumulator {
 public:
  // One trace line without its trailing newline. Throws CorruptTrace.
  void add_line(std::string_view text);
  void add(const Json& line);

  bool complete() const { return saw_run_end_; }
  std::uint64_t lines() const { return lines_; }
  std::uint64_t trace_hash() const { return hash_; }

  // Valid at any point; final once the run_end line has been seen.
  Json result() const;

 private:
  struct Patient {
    double latency_sum = 0;
    std::uint64_t uplinks = 0;
    std::vector<std::int64_t> alert_latencies;
    std::vector<double> bandwidth_ratios;
    Json stage_timeline = Json::array();
    std::map<std::string, std::uint64_t> sessions;
    std::uint64_t stage_changes = 0;
  };

  std::uint64_t lines_ = 0;
  std::uint64_t hash_ = fnv1a64("");
  bool saw_run_start_ = false;
  bool saw_run_end_ = false;
  std::uint64_t seed_ = 0;
  std::int64_t duration_ms_ = 0;
  double w1_ = 1.0;
  double w2_ = 0.5;
  double latency_ref_ms_ = 200;

  std::map<std::string, Patient> patients_;
  std::uint64_t bytes_moved_ = 0;
  std::uint64_t deliveries_ = 0;
  std::uint64_t cache_hits_ = 0;
  std::uint64_t cache_misses_ = 0;
  Json epochs_ = Json::array();
  std::map<std::string, std::int64_t> cycles_by_location_{{"Local", 0}, {"Cloud", 0}};
  std::uint64_t alerts_ = 0;
  std::uint64_t recommendations_applied_ = 0;
  std::uint64_t recommendations_rejected_ = 0;
};

// Replays a trace file. Throws CorruptTrace with the 1-based line number for
// unparsable lines, lines after run_end, or a missing run_end.
Json metrics_from_trace(std::istream& in);

// Canonical file form: two-space indent plus trailing newline.
std::string metrics_text(const Json& metrics);

}  // namespace therasim
