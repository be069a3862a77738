#pragma once

// Deterministic discrete-event kernel: virtual clock, (fire_at, seq) ordered
// event queue, per-node random sub-streams and a static point-to-point link
// model. Every processed event is serialized to one canonical JSONL trace line.

#include <compare>
#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <map>
#include <mutex>
#include <queue>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "therasim/error.hpp"

namespace therasim {

using Json = nlohmann::json;

// Virtual milliseconds since epoch 0. Integer only so ordering never depends
// on floating point behaviour.
struct SimTime {
  std::int64_t ms = 0;

  constexpr auto operator<=>(const SimTime&) const = default;
  constexpr SimTime operator+(std::int64_t delta) const { return SimTime{ms + delta}; }
  constexpr std::int64_t operator-(SimTime other) const { return ms - other.ms; }
};

inline constexpr SimTime kTimeMax{std::numeric_limits<std::int64_t>::max()};

void to_json(Json& j, const SimTime& t);
void from_json(const Json& j, SimTime& t);

class SchedulingInPast : public Error {
 public:
  using Error::Error;
};

class NoRoute : public Error {
 public:
  using Error::Error;
};

class UnknownNode : public Error {
 public:
  using Error::Error;
};

struct LinkModel {
  std::string name;
  std::int64_t latency_ms = 0;
  std::int64_t bandwidth_kbps = 1;

  // latency + ceil(bits / kbps). kbps is bits per millisecond, so the
  // transmission term is already in ms.
  std::int64_t delivery_delay(std::int64_t size_bytes) const;

  bool operator==(const LinkModel&) const = default;
};

std::uint64_t fnv1a64(std::string_view data, std::uint64_t state = 0xcbf29ce484222325ULL);

// Seed for a named sub-stream. Depends only on (seed, stream_id), so adding or
// removing nodes never shifts another node's randomness.
std::uint64_t derive_stream_seed(std::uint64_t seed, std::string_view stream_id);

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  // Uniform in [0, 1) with 53 bits of precision.
  double uniform();
  // Box-Muller; consumes exactly two uniforms per call.
  double normal(double mean, double sd);
  bool bernoulli(double p) { return uniform() < p; }

 private:
  std::mt19937_64 engine_;
};

struct SimEvent {
  SimTime fire_at;
  std::uint64_t seq = 0;
  std::string target;
  std::string kind;
  Json payload;
};

struct EventTraceSummary {
  std::uint64_t processed = 0;
  SimTime clock;
  std::uint64_t trace_hash = 0;
};

// An external input as it was drained from the inbox. Replaying the same
// records against the same scenario reproduces the trace of a live run.
struct InputRecord {
  std::uint64_t after_events = 0;
  SimTime now;
  std::string target;
  std::string kind;
  Json payload;
};

void to_json(Json& j, const InputRecord& r);
void from_json(const Json& j, InputRecord& r);

struct Delivery {
  SimTime arrival;
  std::int64_t size_bytes = 0;
};

class Kernel;

class Node {
 public:
  virtual ~Node() = default;
  virtual void handle(Kernel& kernel, const SimEvent& event) = 0;
};

class Kernel {
 public:
  using TraceSink = std::function<void(const Json& line, const std::string& text)>;
  using InputRecorder = std::function<void(const InputRecord&)>;

  explicit Kernel(std::uint64_t seed);

  Kernel(const Kernel&) = delete;
  Kernel& operator=(const Kernel&) = delete;

  // Nodes are not owned; they must outlive the kernel's run.
  void add_node(const std::string& id, Node& node);
  bool has_node(const std::string& id) const { return nodes_.contains(id); }

  // Links are bidirectional and static for the whole run.
  void add_link(const std::string& a, const std::string& b, LinkModel link);
  const LinkModel& link_between(const std::string& a, const std::string& b) const;

  std::uint64_t schedule(SimTime fire_at, std::string target, std::string kind, Json payload);

  // Sends `msg` over the link between `from` and `to`. The delivered payload is
  // an envelope {from, link, sent_at, size, msg}; size is the canonical
  // encoded length of msg.
  Delivery deliver(const std::string& from, const std::string& to, std::string kind, Json msg);

  EventTraceSummary run_until(SimTime horizon);

  SimTime now() const { return now_; }
  std::uint64_t seed() const { return seed_; }
  std::uint64_t processed() const { return processed_; }
  std::uint64_t trace_hash() const { return trace_hash_; }
  std::size_t pending() const { return queue_.size(); }

  Rng make_rng(std::string_view stream_id) const {
    return Rng(derive_stream_seed(seed_, stream_id));
  }

  // Thread-safe. The event fires at (clock at drain time) + 1 ms.
  void inject(std::string target, std::string kind, Json payload);

  void set_trace_sink(TraceSink sink) { trace_sink_ = std::move(sink); }
  void set_input_recorder(InputRecorder recorder) { input_recorder_ = std::move(recorder); }
  void set_scripted_inputs(std::vector<InputRecord> inputs);

 private:
  struct Later {
    bool operator()(const SimEvent& a, const SimEvent& b) const {
      if (a.fire_at != b.fire_at) return a.fire_at > b.fire_at;
      return a.seq > b.seq;
    }
  };

  struct PendingInput {
    std::string target;
    std::string kind;
    Json payload;
  };

  void drain_inbox();
  void dispatch(const SimEvent& event);

  std::uint64_t seed_;
  SimTime now_;
  std::uint64_t next_seq_ = 0;
  std::uint64_t processed_ = 0;
  std::uint64_t trace_hash_ = fnv1a64("");
  std::priority_queue<SimEvent, std::vector<SimEvent>, Later> queue_;
  std::map<std::string, Node*> nodes_;
  std::map<std::pair<std::string, std::string>, LinkModel> links_;

  std::mutex inbox_mutex_;
  std::deque<PendingInput> inbox_;
  std::deque<InputRecord> scripted_;

  TraceSink trace_sink_;
  InputRecorder input_recorder_;
};

}  // namespace therasim
