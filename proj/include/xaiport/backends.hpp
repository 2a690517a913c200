#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "xaiport/model.hpp"
#include "xaiport/tensor.hpp"

namespace xaiport {

// Deterministic test double for a cloud scoring service. Exactly one of
// `fixed` / `linear_weights` must be set; latency and failure injection are
// optional modifiers.
struct MockRules {
  std::optional<std::vector<float>> fixed;          // constant response
  std::optional<std::vector<Tensor>> linear_weights;  // per-class (C,H,W); softmax of dot products
  double latency_ms = 0.0;
  uint32_t failure_every_n = 0;  // every n-th physical call returns a protocol error
};

struct BackendRef {
  std::string id;
  enum class Kind { local, http, mock } kind = Kind::local;
  std::string endpoint;  // http only
  uint32_t timeout_ms = 5000;
  uint32_t retries = 0;
  std::vector<std::string> labels;
  uint32_t max_in_flight = 8;  // http client concurrency bound
  std::shared_ptr<const MockRules> mock;

  void validate() const;
};

struct ScoreResult {
  std::vector<float> scores;
  double latency_ms = 0.0;
  std::string backend_id;
  std::string sample_id;
};

// Runtime scorer behind a BackendRef. score() wraps the kind-specific attempt
// with the retry policy (fixed 100 ms backoff) and stamps latency/provenance;
// safe for concurrent calls.
class Backend {
public:
  virtual ~Backend() = default;

  ScoreResult score(const Tensor& image, const std::string& sample_id) const;

  const BackendRef& ref() const { return ref_; }

protected:
  explicit Backend(BackendRef ref) : ref_(std::move(ref)) {}
  virtual std::vector<float> score_attempt(const Tensor& image,
                                           const std::string& sample_id) const = 0;

private:
  BackendRef ref_;
};

// local kind requires the surrogate model; others ignore it.
std::unique_ptr<Backend> make_backend(const BackendRef& ref, const Model* local_model);

BackendRef mock_configure(MockRules rules, std::string id, std::vector<std::string> labels);

// /v1/score wire protocol. The request carries the shape and the base64 of
// the XTEN float payload (raw little-endian f32, row-major).
nlohmann::json score_request_json(const Tensor& image, const std::string& sample_id);
Tensor image_from_score_request(const nlohmann::json& body, std::string* sample_id = nullptr);
nlohmann::json score_response_json(const std::vector<float>& scores,
                                   const std::vector<std::string>& labels,
                                   const std::string& model_version);
std::vector<float> scores_from_response(const nlohmann::json& body);

std::string base64_encode(std::span<const std::byte> bytes);
std::vector<std::byte> base64_decode(std::string_view text);

}  // namespace xaiport
