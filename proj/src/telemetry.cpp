#include "xaiport/telemetry.hpp"

#include <cmath>
#include <cstdio>

#include "xaiport/error.hpp"

namespace xaiport {

std::string_view stage_name(Stage s) {
  switch (s) {
    case Stage::data_processing: return "data_processing";
    case Stage::feature_variation: return "feature_variation";
    case Stage::inference: return "inference";
    case Stage::xai: return "xai";
    case Stage::evaluation: return "evaluation";
  }
  return "?";
}

Stage stage_from_name(std::string_view name) {
  for (Stage s : kStages) {
    if (stage_name(s) == name) return s;
  }
  throw Error(errc::unknown_stage, "unknown stage name: " + std::string(name));
}

std::string_view stage_display_name(Stage s) {
  switch (s) {
    case Stage::data_processing: return "Data Processing";
    case Stage::feature_variation: return "Feature Variation";
    case Stage::inference: return "Cloud Inference";
    case Stage::xai: return "XAI";
    case Stage::evaluation: return "Explanation Stability";
  }
  return "?";
}

double StageTiming::total_s() const {
  double acc = 0.0;
  for (double d : durations_s) acc += d;
  return acc;
}

double StageTiming::mean_s() const {
  return durations_s.empty() ? 0.0 : total_s() / double(durations_s.size());
}

double StageTiming::stddev_s() const {
  if (durations_s.empty()) return 0.0;
  const double mu = mean_s();
  double acc = 0.0;
  for (double d : durations_s) acc += (d - mu) * (d - mu);
  return std::sqrt(acc / double(durations_s.size()));
}

void StageCollector::record(Stage s, double seconds) {
  if (!(seconds >= 0.0)) throw Error(errc::invalid_argument, "duration must be >= 0");
  for (auto& t : timings_) {
    if (t.stage == s) {
      t.durations_s.push_back(seconds);
      return;
    }
  }
  timings_.push_back(StageTiming{s, {seconds}});
}

void StageCollector::merge_from(const StageCollector& other) {
  for (const auto& t : other.timings_) {
    for (double d : t.durations_s) record(t.stage, d);
  }
}

EnergyEstimate estimate_energy(const DeviceDurations& durations, const PowerModel& power) {
  if (!(durations.cpu_s >= 0.0 && durations.gpu_s >= 0.0 && durations.ram_s >= 0.0)) {
    throw Error(errc::invalid_argument, "device durations must be >= 0");
  }
  if (!(power.cpu_w >= 0.0 && power.gpu_w >= 0.0 && power.ram_w >= 0.0)) {
    throw Error(errc::invalid_argument, "power model watts must be >= 0");
  }
  EnergyEstimate e;
  e.power = power;
  e.cpu_kwh = power.cpu_w * durations.cpu_s / 3.6e6;
  e.gpu_kwh = power.gpu_w * durations.gpu_s / 3.6e6;
  e.ram_kwh = power.ram_w * durations.ram_s / 3.6e6;
  e.total_kwh = e.cpu_kwh + e.gpu_kwh + e.ram_kwh;
  return e;
}

std::map<Stage, double> decompose(std::span<const StageTiming> timings) {
  double grand = 0.0;
  for (const auto& t : timings) grand += t.total_s();
  if (!(grand > 0.0)) {
    throw Error(errc::invalid_argument, "cannot decompose all-zero stage totals");
  }
  std::map<Stage, double> fractions;
  for (const auto& t : timings) fractions[t.stage] = t.total_s() / grand;
  return fractions;
}

nlohmann::json telemetry_json(const StageCollector& collector, const EnergyEstimate& energy) {
  nlohmann::json out;
  const auto& timings = collector.timings();
  double grand = 0.0;
  for (const auto& t : timings) grand += t.total_s();
  for (const auto& t : timings) {
    nlohmann::json s;
    s["count"] = t.durations_s.size();
    s["mean_s"] = t.mean_s();
    s["std_s"] = t.stddev_s();
    s["total_s"] = t.total_s();
    s["fraction"] = grand > 0.0 ? t.total_s() / grand : 0.0;
    out[std::string(stage_name(t.stage))] = std::move(s);
  }
  out["energy"] = {{"cpu_kwh", energy.cpu_kwh},
                   {"gpu_kwh", energy.gpu_kwh},
                   {"ram_kwh", energy.ram_kwh},
                   {"total_kwh", energy.total_kwh},
                   {"power_model", {{"cpu_w", energy.power.cpu_w},
                                    {"gpu_w", energy.power.gpu_w},
                                    {"ram_w", energy.power.ram_w}}}};
  return out;
}

std::string render_stage_line(std::string_view label, double mean_s, double std_s) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%.*s (%.2fs ± %.2fs)", int(label.size()), label.data(),
                mean_s, std_s);
  return buf;
}

std::string render_energy_row(std::string_view name, const EnergyEstimate& e) {
  auto micro = [](double kwh) { return kwh * 1e6; };
  char buf[160];
  std::snprintf(buf, sizeof buf, "%.*s %.2f %.2f %.2f %.2f", int(name.size()), name.data(),
                micro(e.cpu_kwh), micro(e.gpu_kwh), micro(e.ram_kwh), micro(e.total_kwh));
  return buf;
}

}  // namespace xaiport
