#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace xaiport {

// Error carried across the service boundary: a stable machine code plus a
// human message, and optionally the config/body field path that caused it.
class Error : public std::runtime_error {
public:
  Error(std::string code, const std::string& message, std::string field = "")
      : std::runtime_error(message), code_(std::move(code)), field_(std::move(field)) {}

  const std::string& code() const { return code_; }
  const std::string& field() const { return field_; }

private:
  std::string code_;
  std::string field_;
};

namespace errc {
inline constexpr const char* shape_mismatch = "shape_mismatch";
inline constexpr const char* invalid_axis = "invalid_axis";
inline constexpr const char* invalid_spec = "invalid_spec";
inline constexpr const char* invalid_argument = "invalid_argument";
inline constexpr const char* empty_dataset = "empty_dataset";
inline constexpr const char* class_out_of_range = "class_out_of_range";
inline constexpr const char* config_parse_error = "config_parse_error";
inline constexpr const char* config_invalid = "config_invalid";
inline constexpr const char* timeout_exceeded = "timeout_exceeded";
inline constexpr const char* protocol_malformed = "protocol_malformed";
inline constexpr const char* unknown_stage = "unknown_stage";
inline constexpr const char* missing_run = "missing_run";
inline constexpr const char* storage_io = "storage_io";
inline constexpr const char* stage_failed = "stage_failed";
inline constexpr const char* job_not_found = "job_not_found";
inline constexpr const char* dataset_not_found = "dataset_not_found";
inline constexpr const char* dataset_exists = "dataset_exists";
inline constexpr const char* data_dir_locked = "data_dir_locked";
}  // namespace errc

}  // namespace xaiport
