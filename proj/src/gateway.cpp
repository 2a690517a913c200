#include "xaiport/gateway.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <atomic>
#include <condition_variable>
#include <deque>
#include <fstream>
#include <mutex>
#include <set>
#include <thread>
#include <vector>

#include "httplib.h"
#include "xaiport/backends.hpp"
#include "xaiport/error.hpp"
#include "xaiport/pipeline.hpp"

namespace xaiport {

namespace {

using nlohmann::json;

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(errc::storage_io, "cannot read " + path.string());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(2) + "\n", "application/json");
}

void send_error(httplib::Response& res, int status, std::string code, std::string message,
                std::string field = "") {
  ApiError err{status, std::move(code), std::move(message), std::move(field)};
  send_json(res, status, err.to_json());
}

int status_for(const Error& e) {
  if (e.code() == errc::job_not_found || e.code() == errc::dataset_not_found) return 404;
  if (e.code() == errc::dataset_exists) return 409;
  if (e.code() == errc::storage_io) return 500;
  return 400;
}

std::vector<std::string> default_labels(uint32_t classes) {
  std::vector<std::string> labels;
  for (uint32_t i = 0; i < classes; ++i) labels.push_back("class_" + std::to_string(i));
  return labels;
}

}  // namespace

nlohmann::json ApiError::to_json() const {
  json j;
  j["status"] = status;
  j["code"] = code;
  j["message"] = message;
  if (!field.empty()) j["field"] = field;
  return j;
}

nlohmann::json openapi_document() {
  auto api_error_ref = json{{"$ref", "#/components/schemas/ApiError"}};
  auto error_response = [&](const char* desc) {
    return json{{"description", desc},
                {"content", {{"application/json", {{"schema", api_error_ref}}}}}};
  };
  json doc;
  doc["openapi"] = "3.0.3";
  doc["info"] = {{"title", "xaiport"},
                 {"version", kCodeVersion},
                 {"description",
                  "Configurable XAI operations: datasets, five-stage pipelines, saliency "
                  "artifacts, stability metrics and scoring."}};
  doc["components"]["schemas"]["ApiError"] = {
      {"type", "object"},
      {"required", {"status", "code", "message"}},
      {"properties",
       {{"status", {{"type", "integer"}}},
        {"code", {{"type", "string"}}},
        {"message", {{"type", "string"}}},
        {"field", {{"type", "string"}}}}}};
  doc["components"]["schemas"]["ScoreRequest"] = {
      {"type", "object"},
      {"required", {"sample_id", "shape", "pixels"}},
      {"properties",
       {{"sample_id", {{"type", "string"}}},
        {"shape", {{"type", "array"}, {"items", {{"type", "integer"}}}}},
        {"pixels", {{"type", "string"}, {"description", "base64 of the XTEN float payload"}}}}}};
  doc["components"]["schemas"]["ScoreResponse"] = {
      {"type", "object"},
      {"required", {"scores", "labels", "model_version"}},
      {"properties",
       {{"scores", {{"type", "array"}, {"items", {{"type", "number"}}}}},
        {"labels", {{"type", "array"}, {"items", {{"type", "string"}}}}},
        {"model_version", {{"type", "string"}}}}}};

  doc["paths"]["/v1/openapi"]["get"] = {
      {"summary", "This document"},
      {"responses", {{"200", {{"description", "OpenAPI description"}}}}}};
  doc["paths"]["/v1/datasets"]["post"] = {
      {"summary", "Create a dataset from a synthetic spec or multipart upload"},
      {"responses",
       {{"201", {{"description", "dataset created"}}},
        {"400", error_response("invalid body")},
        {"409", error_response("duplicate dataset id")}}}};
  doc["paths"]["/v1/pipelines"]["post"] = {
      {"summary", "Submit a pipeline config; runs asynchronously"},
      {"responses",
       {{"202", {{"description", "job accepted, body carries job_id"}}},
        {"400", error_response("invalid config")}}}};
  doc["paths"]["/v1/jobs/{id}"]["get"] = {
      {"summary", "Job state and telemetry"},
      {"responses",
       {{"200", {{"description", "job status"}}}, {"404", error_response("unknown job")}}}};
  doc["paths"]["/v1/jobs/{id}/report"]["get"] = {
      {"summary", "Metric report of a succeeded job"},
      {"responses",
       {{"200", {{"description", "MetricReport JSON"}}},
        {"404", error_response("unknown job or report not ready")}}}};
  doc["paths"]["/v1/jobs/{id}/saliency/{sample}/{method}"]["get"] = {
      {"summary", "Saliency map bytes (XTEN)"},
      {"responses",
       {{"200", {{"description", "XTEN bytes"}}}, {"404", error_response("unknown artifact")}}}};
  doc["paths"]["/v1/score"]["post"] = {
      {"summary", "Score an image on the local surrogate"},
      {"responses",
       {{"200", {{"description", "ScoreResponse"}}}, {"400", error_response("malformed request")}}}};
  return doc;
}

// ---------------------------------------------------------------------------
// Gateway
// ---------------------------------------------------------------------------

struct Gateway::Impl {
  GatewayOptions options;
  httplib::Server server;
  std::thread server_thread;
  int bound_port = 0;
  int lock_fd = -1;

  Model surrogate = Model::init(ModelSpec::desk_scale());
  std::vector<std::string> surrogate_labels;

  // Job queue + states. Status reads never block on job execution.
  std::mutex mu;
  std::condition_variable cv;
  std::deque<std::pair<std::string, PipelineConfig>> queue;
  std::map<std::string, std::string> job_states;  // id -> pending|running|succeeded|failed
  std::vector<std::thread> workers;
  std::atomic<bool> stopping{false};

  explicit Impl(GatewayOptions opts) : options(std::move(opts)) {
    std::filesystem::create_directories(options.data_dir);
    acquire_lock();
    if (options.model_checkpoint) surrogate = load_checkpoint(*options.model_checkpoint);
    surrogate_labels = default_labels(surrogate.spec().class_count());
    setup_routes();
  }

  ~Impl() {
    shutdown();
    if (lock_fd >= 0) close(lock_fd);
  }

  void acquire_lock() {
    const auto lock_path = options.data_dir / ".lock";
    lock_fd = ::open(lock_path.c_str(), O_CREAT | O_RDWR, 0644);
    if (lock_fd < 0) throw Error(errc::storage_io, "cannot open lock file " + lock_path.string());
    if (flock(lock_fd, LOCK_EX | LOCK_NB) != 0) {
      close(lock_fd);
      lock_fd = -1;
      throw Error(errc::data_dir_locked,
                  "data directory is owned by another service: " + options.data_dir.string());
    }
  }

  void worker_loop() {
    for (;;) {
      std::pair<std::string, PipelineConfig> item;
      {
        std::unique_lock lock(mu);
        cv.wait(lock, [&] { return stopping || !queue.empty(); });
        if (queue.empty()) return;
        item = std::move(queue.front());
        queue.pop_front();
        job_states[item.first] = "running";
      }
      std::string state = "failed";
      try {
        PipelineJob job = run_pipeline(item.second);
        state = std::string(job_state_name(job.state));
      } catch (...) {
        state = "failed";
      }
      std::lock_guard lock(mu);
      job_states[item.first] = state;
    }
  }

  void start() {
    if (options.port == 0) {
      bound_port = server.bind_to_any_port("127.0.0.1");
      if (bound_port <= 0) throw Error(errc::storage_io, "cannot bind an ephemeral port");
    } else {
      if (!server.bind_to_port("127.0.0.1", options.port)) {
        throw Error(errc::storage_io, "cannot bind port " + std::to_string(options.port));
      }
      bound_port = options.port;
    }
    for (uint32_t i = 0; i < std::max(1u, options.job_workers); ++i) {
      workers.emplace_back([this] { worker_loop(); });
    }
    server_thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }

  void shutdown() {
    if (stopping.exchange(true)) return;
    server.stop();
    if (server_thread.joinable()) server_thread.join();
    cv.notify_all();
    for (auto& w : workers) {
      if (w.joinable()) w.join();
    }
  }

  // --- route handlers -----------------------------------------------------

  void handle_datasets(const httplib::Request& req, httplib::Response& res) {
    std::string id;
    LabeledDataset ds;
    if (req.is_multipart_form_data()) {
      if (!req.has_file("id") || !req.has_file("labels.json")) {
        send_error(res, 400, errc::config_invalid, "multipart upload needs 'id' and 'labels.json'",
                   "id");
        return;
      }
      id = req.get_file_value("id").content;
      const auto dir = options.data_dir / "datasets" / id;
      if (std::filesystem::exists(dir)) {
        send_error(res, 409, errc::dataset_exists, "dataset already exists: " + id, "id");
        return;
      }
      std::filesystem::create_directories(dir);
      for (const auto& [name, file] : req.files) {
        if (name == "id") continue;
        std::ofstream f(dir / file.filename, std::ios::binary | std::ios::trunc);
        f << file.content;
      }
      try {
        ds = load_directory_dataset(dir);  // validates the upload
      } catch (const Error& e) {
        std::filesystem::remove_all(dir);
        send_error(res, 400, e.code(), e.what(), e.field());
        return;
      }
      send_json(res, 201, {{"dataset_id", id}, {"samples", ds.samples.size()}});
      return;
    }

    json body;
    try {
      body = json::parse(req.body);
      id = body.at("id").get<std::string>();
    } catch (const json::exception& e) {
      send_error(res, 400, errc::config_parse_error, std::string("bad dataset body: ") + e.what(),
                 "id");
      return;
    }
    const auto dir = options.data_dir / "datasets" / id;
    if (std::filesystem::exists(dir)) {
      send_error(res, 409, errc::dataset_exists, "dataset already exists: " + id, "id");
      return;
    }
    try {
      if (!body.contains("synthetic_bars")) {
        send_error(res, 400, errc::config_invalid, "body needs 'synthetic_bars' or multipart files",
                   "synthetic_bars");
        return;
      }
      const auto& spec = body.at("synthetic_bars");
      const uint32_t count = spec.at("count").get<uint32_t>();
      const uint64_t seed = spec.value("seed", uint64_t(0));
      ds = make_synthetic_bars(count, seed);
      save_directory_dataset(ds, dir);
    } catch (const Error& e) {
      send_error(res, status_for(e), e.code(), e.what(), e.field());
      return;
    } catch (const json::exception& e) {
      send_error(res, 400, errc::config_invalid, std::string("bad synthetic spec: ") + e.what(),
                 "synthetic_bars");
      return;
    }
    send_json(res, 201, {{"dataset_id", id}, {"samples", ds.samples.size()}});
  }

  void handle_submit(const httplib::Request& req, httplib::Response& res) {
    PipelineConfig cfg;
    try {
      cfg = validate_config(req.body);
    } catch (const Error& e) {
      send_error(res, 400, e.code(), e.what(), e.field());
      return;
    }
    cfg.output_dir = options.data_dir.string();
    const std::string id = job_id_for(cfg);

    std::lock_guard lock(mu);
    auto it = job_states.find(id);
    const bool known_live =
        it != job_states.end() && (it->second == "pending" || it->second == "running" ||
                                   it->second == "succeeded");
    bool on_disk_succeeded = false;
    if (!known_live) {
      const auto manifest = options.data_dir / "jobs" / id / "manifest.json";
      if (std::filesystem::exists(manifest)) {
        try {
          on_disk_succeeded = json::parse(read_text_file(manifest)).value("state", "") == "succeeded";
        } catch (...) {
        }
      }
    }
    if (!known_live && !on_disk_succeeded) {
      job_states[id] = "pending";
      queue.emplace_back(id, std::move(cfg));
      cv.notify_one();
    } else if (on_disk_succeeded) {
      job_states[id] = "succeeded";
    }
    send_json(res, 202, {{"job_id", id}});
  }

  void handle_job_status(const httplib::Request& req, httplib::Response& res) {
    const std::string id = req.path_params.at("id");
    std::string state;
    {
      std::lock_guard lock(mu);
      auto it = job_states.find(id);
      if (it != job_states.end()) state = it->second;
    }
    json manifest;
    const auto job_dir = options.data_dir / "jobs" / id;
    if (state.empty()) {
      if (!std::filesystem::exists(job_dir / "manifest.json")) {
        send_error(res, 404, errc::job_not_found, "no such job: " + id);
        return;
      }
      try {
        manifest = json::parse(read_text_file(job_dir / "manifest.json"));
        state = manifest.value("state", "failed");
      } catch (...) {
        state = "failed";
      }
    }
    json out;
    out["job_id"] = id;
    out["state"] = state;
    const auto telemetry_path = job_dir / "telemetry.json";
    if (state == "succeeded" && std::filesystem::exists(telemetry_path)) {
      out["telemetry"] = json::parse(read_text_file(telemetry_path));
    }
    if (manifest.contains("error")) out["error"] = manifest["error"];
    send_json(res, 200, out);
  }

  void handle_report(const httplib::Request& req, httplib::Response& res) {
    const std::string id = req.path_params.at("id");
    const auto job_dir = options.data_dir / "jobs" / id;
    if (!std::filesystem::exists(job_dir / "manifest.json")) {
      send_error(res, 404, errc::job_not_found, "no such job: " + id);
      return;
    }
    const auto report_path = job_dir / "report.json";
    if (!std::filesystem::exists(report_path)) {
      send_error(res, 404, "report_not_ready", "job has not produced a report: " + id);
      return;
    }
    res.status = 200;
    res.set_content(read_text_file(report_path), "application/json");
  }

  void handle_saliency(const httplib::Request& req, httplib::Response& res) {
    const std::string id = req.path_params.at("id");
    const std::string sample = req.path_params.at("sample");
    const std::string method = req.path_params.at("method");
    const auto manifest_path = options.data_dir / "jobs" / id / "manifest.json";
    if (!std::filesystem::exists(manifest_path)) {
      send_error(res, 404, errc::job_not_found, "no such job: " + id);
      return;
    }
    const json manifest = json::parse(read_text_file(manifest_path));
    if (!manifest.contains("variants")) {
      send_error(res, 404, "artifact_not_found", "job has no saliency artifacts");
      return;
    }
    std::string variant = req.has_param("variant") ? req.get_param_value("variant") : "";
    const json* vmanifest = nullptr;
    for (auto it = manifest["variants"].begin(); it != manifest["variants"].end(); ++it) {
      if (variant.empty() || it.key() == variant) {
        vmanifest = &it.value();
        break;
      }
    }
    const std::string key = sample + "/" + method;
    if (!vmanifest || !vmanifest->contains("saliency") ||
        !(*vmanifest)["saliency"].contains(key)) {
      send_error(res, 404, "artifact_not_found", "no saliency map for " + key);
      return;
    }
    const std::string artifact_id = (*vmanifest)["saliency"][key]["xten"].get<std::string>();
    ArtifactStore store(options.data_dir / "artifacts");
    try {
      auto bytes = store.get(artifact_id);
      res.status = 200;
      res.set_content(std::string(reinterpret_cast<const char*>(bytes.data()), bytes.size()),
                      "application/octet-stream");
    } catch (const Error& e) {
      send_error(res, 404, "artifact_not_found", e.what());
    }
  }

  void handle_score(const httplib::Request& req, httplib::Response& res) {
    try {
      const json body = json::parse(req.body);
      std::string sample_id;
      const Tensor image = image_from_score_request(body, &sample_id);
      const auto scores = surrogate.forward(image);
      send_json(res, 200, score_response_json(scores, surrogate_labels, kCodeVersion));
    } catch (const Error& e) {
      send_error(res, 400, e.code(), e.what(), e.field());
    } catch (const json::exception& e) {
      send_error(res, 400, errc::protocol_malformed, std::string("bad request body: ") + e.what());
    }
  }

  void setup_routes() {
    server.set_pre_routing_handler([this](const httplib::Request&, httplib::Response& res) {
      if (stopping) {
        send_error(res, 503, "shutting_down", "service is shutting down");
        return httplib::Server::HandlerResponse::Handled;
      }
      return httplib::Server::HandlerResponse::Unhandled;
    });
    server.set_exception_handler(
        [](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
          try {
            std::rethrow_exception(ep);
          } catch (const Error& e) {
            send_error(res, status_for(e), e.code(), e.what(), e.field());
          } catch (const std::exception& e) {
            send_error(res, 500, "internal_error", e.what());
          }
        });

    server.Get("/v1/openapi", [](const httplib::Request&, httplib::Response& res) {
      send_json(res, 200, openapi_document());
    });
    server.Post("/v1/datasets",
                [this](const httplib::Request& req, httplib::Response& res) { handle_datasets(req, res); });
    server.Post("/v1/pipelines",
                [this](const httplib::Request& req, httplib::Response& res) { handle_submit(req, res); });
    server.Get("/v1/jobs/:id", [this](const httplib::Request& req, httplib::Response& res) {
      handle_job_status(req, res);
    });
    server.Get("/v1/jobs/:id/report",
               [this](const httplib::Request& req, httplib::Response& res) { handle_report(req, res); });
    server.Get("/v1/jobs/:id/saliency/:sample/:method",
               [this](const httplib::Request& req, httplib::Response& res) { handle_saliency(req, res); });
    server.Post("/v1/score",
                [this](const httplib::Request& req, httplib::Response& res) { handle_score(req, res); });
  }
};

Gateway::Gateway(GatewayOptions options) : impl_(std::make_unique<Impl>(std::move(options))) {}
Gateway::~Gateway() = default;

void Gateway::start() { impl_->start(); }
void Gateway::stop() { impl_->shutdown(); }
int Gateway::port() const { return impl_->bound_port; }
const Model& Gateway::surrogate() const { return impl_->surrogate; }

// ---------------------------------------------------------------------------
// ScoreServer
// ---------------------------------------------------------------------------

struct ScoreServer::Impl {
  Model model;
  std::vector<std::string> labels;
  int requested_port;
  int bound_port = 0;
  httplib::Server server;
  std::thread thread;

  Impl(Model m, std::vector<std::string> l, int port)
      : model(std::move(m)), labels(std::move(l)), requested_port(port) {
    if (labels.empty()) labels = default_labels(model.spec().class_count());
    server.Post("/v1/score", [this](const httplib::Request& req, httplib::Response& res) {
      try {
        const json body = json::parse(req.body);
        std::string sample_id;
        const Tensor image = image_from_score_request(body, &sample_id);
        send_json(res, 200, score_response_json(model.forward(image), labels, kCodeVersion));
      } catch (const Error& e) {
        send_error(res, 400, e.code(), e.what(), e.field());
      } catch (const json::exception& e) {
        send_error(res, 400, errc::protocol_malformed, std::string("bad request body: ") + e.what());
      }
    });
  }
};

ScoreServer::ScoreServer(Model model, std::vector<std::string> labels, int port)
    : impl_(std::make_unique<Impl>(std::move(model), std::move(labels), port)) {}

ScoreServer::~ScoreServer() { stop(); }

void ScoreServer::start() {
  if (impl_->requested_port == 0) {
    impl_->bound_port = impl_->server.bind_to_any_port("127.0.0.1");
  } else {
    impl_->server.bind_to_port("127.0.0.1", impl_->requested_port);
    impl_->bound_port = impl_->requested_port;
  }
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
}

void ScoreServer::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

int ScoreServer::port() const { return impl_->bound_port; }

std::string ScoreServer::endpoint() const {
  return "http://127.0.0.1:" + std::to_string(impl_->bound_port);
}

}  // namespace xaiport
