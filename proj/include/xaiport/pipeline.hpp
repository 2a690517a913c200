#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "xaiport/backends.hpp"
#include "xaiport/model.hpp"
#include "xaiport/store.hpp"
#include "xaiport/telemetry.hpp"

namespace xaiport {

inline constexpr const char* kCodeVersion = "xaiport-0.1.0";

struct DatasetRef {
  enum class Kind { synthetic_bars, directory, stored } kind = Kind::synthetic_bars;
  uint32_t count = 0;      // synthetic
  uint64_t seed = 0;       // synthetic
  std::string path_or_id;  // directory path or stored dataset id
};

struct VariantConfig {
  std::string name;  // baseline | cutmix | saliency_mix; fixes the augmentation
  TrainConfig train;
};

struct PipelineConfig {
  DatasetRef dataset;
  std::vector<VariantConfig> variants;
  std::vector<BackendRef> backends;
  std::vector<std::string> methods;
  double probe_fraction = 0.25;
  uint64_t master_seed = 0;
  std::string output_dir;
  PowerModel power;
};

// Parses, rejects unknown fields, checks every invariant; errors carry the
// offending field path.
PipelineConfig validate_config(const std::string& raw_json_text);

// Sorted-key form used for job hashing. Excludes output_dir (an execution
// location, not an experiment parameter); directory/stored datasets
// contribute a content digest so the id pins the actual data.
nlohmann::json canonical_config_json(const PipelineConfig& cfg);
std::string job_id_for(const PipelineConfig& cfg);

enum class JobState { pending, running, succeeded, failed };
std::string_view job_state_name(JobState s);

struct StageErrorInfo {
  std::string stage;
  std::string code;
  std::string message;
};

struct PipelineJob {
  std::string id;
  JobState state = JobState::pending;
  nlohmann::json manifest;
  std::optional<StageErrorInfo> error;
  std::filesystem::path job_dir;
};

// Executes the five-stage pipeline for every (variant, backend, method) cell
// under cfg.output_dir. Re-running an identical config returns the cached
// succeeded job; failures keep partial artifacts and are re-attempted.
PipelineJob run_pipeline(const PipelineConfig& cfg);

// Loads a previously stored job by id (manifest must exist).
PipelineJob load_job(const std::filesystem::path& data_dir, const std::string& job_id);

// Directory dataset layout: labels.json plus one XTEN file per sample.
LabeledDataset load_directory_dataset(const std::filesystem::path& dir);
void save_directory_dataset(const LabeledDataset& ds, const std::filesystem::path& dir);

}  // namespace xaiport
