#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include "json.hpp"
#include "xaiport/model.hpp"

namespace xaiport {

// Non-2xx bodies all carry this shape.
struct ApiError {
  int status = 500;
  std::string code;
  std::string message;
  std::string field;  // optional path of the offending field

  nlohmann::json to_json() const;
};

// Machine-readable description served at /v1/openapi.
nlohmann::json openapi_document();

struct GatewayOptions {
  int port = 0;  // 0 = ephemeral
  std::filesystem::path data_dir;
  uint32_t job_workers = 2;
  std::optional<std::filesystem::path> model_checkpoint;  // surrogate for /v1/score
};

// The service surface: datasets, pipelines, jobs, saliency fetch and the
// /v1/score self-test path. One gateway owns its data directory exclusively
// (flock on <data>/.lock).
class Gateway {
public:
  explicit Gateway(GatewayOptions options);
  ~Gateway();

  Gateway(const Gateway&) = delete;
  Gateway& operator=(const Gateway&) = delete;

  void start();  // binds and serves on a background thread
  void stop();
  int port() const;

  const Model& surrogate() const;

private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Minimal standalone server exposing only POST /v1/score over a model; the
// self-testable remote end of the http backend kind.
class ScoreServer {
public:
  ScoreServer(Model model, std::vector<std::string> labels, int port = 0);
  ~ScoreServer();

  void start();
  void stop();
  int port() const;
  std::string endpoint() const;  // http://127.0.0.1:<port>

private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace xaiport
