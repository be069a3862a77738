#pragma once

// Synthetic medical and ambient sensor streams.
//
//   value(t) = clamp(baseline + amplitude * sin(2*pi*t / period_ms)
//                    + sum(active anomaly deltas) + N(0, noise_sd))
//
// clamped to the kind's physical bounds.

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "therasim/protocol.hpp"
#include "therasim/sim_kernel.hpp"

namespace therasim {

struct SensorProfile {
  SensorKind kind = SensorKind::ECG;
  double baseline = 0;
  double amplitude = 0;
  std::int64_t period_ms = 60'000;
  double noise_sd = 0;
  std::int64_t sample_period_ms = 1'000;

  bool operator==(const SensorProfile&) const = default;
};

struct AnomalyScript {
  SensorKind kind = SensorKind::SpO2;
  SimTime onset;
  std::int64_t duration_ms = 0;
  double delta = 0;

  bool active_at(SimTime t) const { return t >= onset && t < onset + duration_ms; }
  bool operator==(const AnomalyScript&) const = default;
};

void to_json(Json& j, const SensorProfile& v);
void to_json(Json& j, const AnomalyScript& v);

// Noise-free part of the signal, before clamping.
double deterministic_value(const SensorProfile& profile, std::span<const AnomalyScript> scripts,
                           SimTime t);

// One frame at grid time t. Draws a normal variate only when noise_sd > 0.
// `seq` is the sensor's running counter; it is incremented.
SensorFrame generate_frame(const std::string& sensor_id, const std::string& patient_id,
                           const SensorProfile& profile, std::span<const AnomalyScript> scripts,
                           SimTime t, Rng& rng, std::uint64_t& seq,
                           const PhysicalBounds& bounds = default_physical_bounds());

// One profile per kind: vitals sample every 1000 ms, ambient every 10000 ms.
std::map<SensorKind, SensorProfile> default_profiles();

// Kernel node for one sensor. Samples on its own grid and hands each frame to
// the robot in the same tick (body-area / in-room link, no network delay).
class SensorNode : public Node {
 public:
  SensorNode(std::string sensor_id, std::string patient_id, std::string robot_id,
             SensorProfile profile, std::vector<AnomalyScript> scripts, Rng rng,
             PhysicalBounds bounds);

  // Schedules the first sample at t = 0.
  void start(Kernel& kernel);
  void handle(Kernel& kernel, const SimEvent& event) override;

  const std::string& id() const { return sensor_id_; }

 private:
  std::string sensor_id_;
  std::string patient_id_;
  std::string robot_id_;
  SensorProfile profile_;
  std::vector<AnomalyScript> scripts_;
  Rng rng_;
  PhysicalBounds bounds_;
  std::uint64_t seq_ = 0;
};

}  // namespace therasim
