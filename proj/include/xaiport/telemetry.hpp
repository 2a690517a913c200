#pragma once

#include <array>
#include <chrono>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "json.hpp"

namespace xaiport {

// The five pipeline stages whose wall time is accounted separately.
enum class Stage { data_processing, feature_variation, inference, xai, evaluation };

inline constexpr std::array<Stage, 5> kStages = {Stage::data_processing, Stage::feature_variation,
                                                 Stage::inference, Stage::xai, Stage::evaluation};

std::string_view stage_name(Stage s);
Stage stage_from_name(std::string_view name);  // throws unknown_stage
std::string_view stage_display_name(Stage s);  // chart label, e.g. "Cloud Inference"

struct StageTiming {
  Stage stage = Stage::data_processing;
  std::vector<double> durations_s;

  double total_s() const;
  double mean_s() const;
  double stddev_s() const;  // population
};

// Per-worker duration collector; merge at job end is a multiset union, so the
// result does not depend on merge order.
class StageCollector {
public:
  void record(Stage s, double seconds);

  // Runs the unit of work under a monotonic clock and records its duration.
  template <typename F>
  auto time_stage(Stage s, F&& fn) -> decltype(fn()) {
    const auto start = std::chrono::steady_clock::now();
    if constexpr (std::is_void_v<decltype(fn())>) {
      fn();
      record(s, std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
    } else {
      auto result = fn();
      record(s, std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
      return result;
    }
  }

  // Name-validated variant for callers holding a stage string.
  template <typename F>
  auto time_stage(std::string_view name, F&& fn) -> decltype(fn()) {
    return time_stage(stage_from_name(name), std::forward<F>(fn));
  }

  void merge_from(const StageCollector& other);
  const std::vector<StageTiming>& timings() const { return timings_; }

private:
  std::vector<StageTiming> timings_;  // at most one entry per stage
};

struct PowerModel {
  double cpu_w = 15.0;
  double gpu_w = 0.0;
  double ram_w = 3.0;
};

struct DeviceDurations {
  double cpu_s = 0.0;
  double gpu_s = 0.0;
  double ram_s = 0.0;
};

struct EnergyEstimate {
  double cpu_kwh = 0.0;
  double gpu_kwh = 0.0;
  double ram_kwh = 0.0;
  double total_kwh = 0.0;  // exact sum of the three
  PowerModel power;
};

// kWh per device = watts x seconds / 3.6e6.
EnergyEstimate estimate_energy(const DeviceDurations& durations, const PowerModel& power);

// Fraction of the grand total per stage; fractions sum to 1 within 1e-9.
std::map<Stage, double> decompose(std::span<const StageTiming> timings);

// {<stage>: {count, mean_s, std_s, total_s, fraction}, energy: {...}}
nlohmann::json telemetry_json(const StageCollector& collector, const EnergyEstimate& energy);

// Chart annotation, e.g. "Data Processing (0.12s ± 0.03s)".
std::string render_stage_line(std::string_view label, double mean_s, double std_s);

// Energy-table row in 1e-6 kWh, e.g. "GradCAM 8.32 19.50 0.10 27.91".
std::string render_energy_row(std::string_view name, const EnergyEstimate& e);

}  // namespace xaiport
