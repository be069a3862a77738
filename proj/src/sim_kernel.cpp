#include "therasim/sim_kernel.hpp"

#include <cmath>
#include <numbers>

#include <fmt/format.h>

namespace therasim {

void to_json(Json& j, const SimTime& t) { j = t.ms; }

void from_json(const Json& j, SimTime& t) {
  if (!j.is_number_integer()) throw Json::type_error::create(302, "SimTime must be an integer", &j);
  t.ms = j.get<std::int64_t>();
  if (t.ms < 0) throw Json::out_of_range::create(401, "SimTime must be non-negative", &j);
}

std::int64_t LinkModel::delivery_delay(std::int64_t size_bytes) const {
  const std::int64_t bits = size_bytes * 8;
  return latency_ms + (bits + bandwidth_kbps - 1) / bandwidth_kbps;
}

std::uint64_t fnv1a64(std::string_view data, std::uint64_t state) {
  for (unsigned char c : data) {
    state ^= c;
    state *= 0x100000001b3ULL;
  }
  return state;
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t derive_stream_seed(std::uint64_t seed, std::string_view stream_id) {
  return splitmix64(splitmix64(seed) ^ fnv1a64(stream_id));
}

double Rng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

double Rng::normal(double mean, double sd) {
  // 1 - u keeps the log argument in (0, 1].
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  const double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  return mean + sd * z;
}

void to_json(Json& j, const InputRecord& r) {
  j = Json{{"after_events", r.after_events},
           {"now", r.now},
           {"target", r.target},
           {"kind", r.kind},
           {"payload", r.payload}};
}

void from_json(const Json& j, InputRecord& r) {
  r.after_events = j.at("after_events").get<std::uint64_t>();
  r.now = j.at("now").get<SimTime>();
  r.target = j.at("target").get<std::string>();
  r.kind = j.at("kind").get<std::string>();
  r.payload = j.at("payload");
}

Kernel::Kernel(std::uint64_t seed) : seed_(seed) {}

void Kernel::add_node(const std::string& id, Node& node) {
  if (!nodes_.emplace(id, &node).second) throw Error(fmt::format("duplicate node id '{}'", id));
}

namespace {

std::pair<std::string, std::string> link_key(const std::string& a, const std::string& b) {
  return a < b ? std::pair{a, b} : std::pair{b, a};
}

}  // namespace

void Kernel::add_link(const std::string& a, const std::string& b, LinkModel link) {
  if (link.latency_ms < 0 || link.bandwidth_kbps <= 0) {
    throw Error(fmt::format("link '{}' needs latency >= 0 and bandwidth > 0", link.name));
  }
  links_[link_key(a, b)] = std::move(link);
}

const LinkModel& Kernel::link_between(const std::string& a, const std::string& b) const {
  auto it = links_.find(link_key(a, b));
  if (it == links_.end()) throw NoRoute(fmt::format("no link between '{}' and '{}'", a, b));
  return it->second;
}

std::uint64_t Kernel::schedule(SimTime fire_at, std::string target, std::string kind,
                               Json payload) {
  if (fire_at < now_) {
    throw SchedulingInPast(
        fmt::format("event '{}' for '{}' at t={} but now={}", kind, target, fire_at.ms, now_.ms));
  }
  const std::uint64_t seq = next_seq_++;
  queue_.push(SimEvent{fire_at, seq, std::move(target), std::move(kind), std::move(payload)});
  return seq;
}

Delivery Kernel::deliver(const std::string& from, const std::string& to, std::string kind,
                         Json msg) {
  const LinkModel& link = link_between(from, to);
  const auto size = static_cast<std::int64_t>(msg.dump().size());
  const SimTime arrival = now_ + link.delivery_delay(size);
  Json envelope{{"from", from},
                {"link", link.name},
                {"sent_at", now_},
                {"size", size},
                {"msg", std::move(msg)}};
  schedule(arrival, to, std::move(kind), std::move(envelope));
  return Delivery{arrival, size};
}

void Kernel::inject(std::string target, std::string kind, Json payload) {
  std::lock_guard lock(inbox_mutex_);
  inbox_.push_back(PendingInput{std::move(target), std::move(kind), std::move(payload)});
}

void Kernel::set_scripted_inputs(std::vector<InputRecord> inputs) {
  scripted_.assign(std::make_move_iterator(inputs.begin()), std::make_move_iterator(inputs.end()));
}

void Kernel::drain_inbox() {
  // Scripted inputs stand in for the live inbox; they are injected at the
  // exact point of the event stream where the live run drained them.
  while (!scripted_.empty() && scripted_.front().after_events == processed_) {
    InputRecord rec = std::move(scripted_.front());
    scripted_.pop_front();
    if (rec.now < now_) throw InvariantViolation("scripted input precedes the current clock");
    schedule(rec.now + 1, rec.target, rec.kind, rec.payload);
  }

  std::deque<PendingInput> batch;
  {
    std::lock_guard lock(inbox_mutex_);
    batch.swap(inbox_);
  }
  for (auto& in : batch) {
    if (input_recorder_) {
      input_recorder_(InputRecord{processed_, now_, in.target, in.kind, in.payload});
    }
    schedule(now_ + 1, std::move(in.target), std::move(in.kind), std::move(in.payload));
  }
}

void Kernel::dispatch(const SimEvent& event) {
  auto it = nodes_.find(event.target);
  if (it == nodes_.end()) throw UnknownNode(fmt::format("no node '{}'", event.target));

  Json line{{"t", event.fire_at},
            {"seq", event.seq},
            {"target", event.target},
            {"kind", event.kind},
            {"payload", event.payload}};
  std::string text = line.dump();
  trace_hash_ = fnv1a64("\n", fnv1a64(text, trace_hash_));
  if (trace_sink_) trace_sink_(line, text);

  it->second->handle(*this, event);
}

EventTraceSummary Kernel::run_until(SimTime horizon) {
  if (horizon < now_) throw SchedulingInPast("horizon lies before the current clock");
  std::uint64_t count = 0;
  for (;;) {
    drain_inbox();
    if (queue_.empty() || queue_.top().fire_at > horizon) break;
    SimEvent event = queue_.top();
    queue_.pop();
    if (event.fire_at < now_) throw InvariantViolation("event queue went back in time");
    now_ = event.fire_at;
    ++processed_;
    ++count;
    dispatch(event);
  }
  now_ = horizon;
  return EventTraceSummary{count, now_, trace_hash_};
}

}  // namespace therasim
