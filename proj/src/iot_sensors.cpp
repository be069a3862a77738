#include "therasim/iot_sensors.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include <fmt/format.h>

namespace therasim {

void to_json(Json& j, const SensorProfile& v) {
  j = Json{{"kind", v.kind},           {"baseline", v.baseline}, {"amplitude", v.amplitude},
           {"period_ms", v.period_ms}, {"noise_sd", v.noise_sd}, {"sample_period_ms", v.sample_period_ms}};
}

void to_json(Json& j, const AnomalyScript& v) {
  j = Json{{"kind", v.kind}, {"onset_ms", v.onset.ms}, {"duration_ms", v.duration_ms}, {"delta", v.delta}};
}

double deterministic_value(const SensorProfile& profile, std::span<const AnomalyScript> scripts,
                           SimTime t) {
  const double phase = 2.0 * std::numbers::pi * static_cast<double>(t.ms) /
                       static_cast<double>(profile.period_ms);
  double value = profile.baseline + profile.amplitude * std::sin(phase);
  for (const auto& s : scripts) {
    if (s.kind == profile.kind && s.active_at(t)) value += s.delta;
  }
  return value;
}

SensorFrame generate_frame(const std::string& sensor_id, const std::string& patient_id,
                           const SensorProfile& profile, std::span<const AnomalyScript> scripts,
                           SimTime t, Rng& rng, std::uint64_t& seq, const PhysicalBounds& bounds) {
  if (profile.sample_period_ms <= 0 || t.ms % profile.sample_period_ms != 0) {
    throw std::invalid_argument(fmt::format("t={} is not on the {} ms sampling grid", t.ms,
                                            profile.sample_period_ms));
  }
  double value = deterministic_value(profile, scripts, t);
  if (profile.noise_sd > 0) value += rng.normal(0.0, profile.noise_sd);
  const Range& range = bounds.at(profile.kind);
  return SensorFrame{sensor_id, patient_id, profile.kind, t, range.clamp(value), ++seq};
}

std::map<SensorKind, SensorProfile> default_profiles() {
  constexpr std::int64_t kVitals = 1'000;
  constexpr std::int64_t kAmbient = 10'000;
  // kind, baseline, amplitude, period, noise, sample period
  return {
      {SensorKind::ECG, {SensorKind::ECG, 1.0, 0.2, 60'000, 0.05, kVitals}},
      {SensorKind::EMG, {SensorKind::EMG, 0.5, 0.1, 45'000, 0.05, kVitals}},
      {SensorKind::Respiration, {SensorKind::Respiration, 16.0, 2.0, 120'000, 0.5, kVitals}},
      {SensorKind::Heartbeat, {SensorKind::Heartbeat, 80.0, 5.0, 60'000, 1.0, kVitals}},
      {SensorKind::BodyTemp, {SensorKind::BodyTemp, 36.8, 0.2, 600'000, 0.05, kVitals}},
      {SensorKind::SystolicPressure, {SensorKind::SystolicPressure, 115.0, 5.0, 300'000, 1.5, kVitals}},
      {SensorKind::SpO2, {SensorKind::SpO2, 97.0, 0.5, 120'000, 0.3, kVitals}},
      {SensorKind::AmbientTemp, {SensorKind::AmbientTemp, 22.0, 1.0, 600'000, 0.1, kAmbient}},
      {SensorKind::Humidity, {SensorKind::Humidity, 45.0, 3.0, 600'000, 0.5, kAmbient}},
      {SensorKind::AirQuality, {SensorKind::AirQuality, 40.0, 5.0, 600'000, 1.0, kAmbient}},
      {SensorKind::AtmPressure, {SensorKind::AtmPressure, 1013.0, 1.0, 600'000, 0.2, kAmbient}},
  };
}

SensorNode::SensorNode(std::string sensor_id, std::string patient_id, std::string robot_id,
                       SensorProfile profile, std::vector<AnomalyScript> scripts, Rng rng,
                       PhysicalBounds bounds)
    : sensor_id_(std::move(sensor_id)),
      patient_id_(std::move(patient_id)),
      robot_id_(std::move(robot_id)),
      profile_(profile),
      scripts_(std::move(scripts)),
      rng_(rng),
      bounds_(std::move(bounds)) {}

void SensorNode::start(Kernel& kernel) { kernel.schedule(SimTime{0}, sensor_id_, "sample", Json::object()); }

void SensorNode::handle(Kernel& kernel, const SimEvent& event) {
  if (event.kind != "sample") throw Error(fmt::format("sensor got unexpected '{}'", event.kind));
  const SimTime now = kernel.now();
  const SensorFrame frame =
      generate_frame(sensor_id_, patient_id_, profile_, scripts_, now, rng_, seq_, bounds_);
  kernel.schedule(now, robot_id_, "frame", to_wire(frame));
  kernel.schedule(now + profile_.sample_period_ms, sensor_id_, "sample", Json::object());
}

}  // namespace therasim
