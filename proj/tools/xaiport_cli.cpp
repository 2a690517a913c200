// xaiport command line: run pipelines, serve the API, render reports.

#include <chrono>
#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <thread>

#include "CLI11.hpp"
#include "xaiport/error.hpp"
#include "xaiport/evaluation.hpp"
#include "xaiport/gateway.hpp"
#include "xaiport/pipeline.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitStageFailure = 3;
constexpr int kExitUsage = 64;

std::string default_data_dir() {
  const char* env = std::getenv("XAIPORT_DATA_DIR");
  return env ? env : "xaiport-data";
}

volatile std::sig_atomic_t g_stop = 0;
void handle_signal(int) { g_stop = 1; }

int cmd_run(const std::string& config_path, const std::string& out_override) {
  std::ifstream f(config_path, std::ios::binary);
  if (!f) {
    std::cerr << "error: cannot open config file: " << config_path << "\n";
    return kExitConfig;
  }
  std::string raw((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  xaiport::PipelineConfig cfg;
  try {
    cfg = xaiport::validate_config(raw);
  } catch (const xaiport::Error& e) {
    std::cerr << "config error";
    if (!e.field().empty()) std::cerr << " (" << e.field() << ")";
    std::cerr << ": " << e.what() << "\n";
    return kExitConfig;
  }
  if (!out_override.empty()) cfg.output_dir = out_override;

  xaiport::PipelineJob job;
  try {
    job = xaiport::run_pipeline(cfg);
  } catch (const xaiport::Error& e) {
    std::cerr << "pipeline error: " << e.what() << "\n";
    return kExitStageFailure;
  }
  std::cout << "job " << job.id << " " << xaiport::job_state_name(job.state) << "\n";
  if (job.state != xaiport::JobState::succeeded) {
    if (job.error) {
      std::cerr << "failed at stage " << job.error->stage << ": " << job.error->message << "\n";
    }
    return kExitStageFailure;
  }
  std::cout << "report: " << (job.job_dir / "report.json").string() << "\n";
  return kExitOk;
}

int cmd_report(const std::string& job_id, const std::string& data_dir, const std::string& format) {
  try {
    xaiport::PipelineJob job = xaiport::load_job(data_dir, job_id);
    const auto report_path = job.job_dir / "report.json";
    std::ifstream f(report_path, std::ios::binary);
    if (!f) {
      std::cerr << "error: job " << job_id << " has no report\n";
      return kExitStageFailure;
    }
    std::string raw((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (format == "json") {
      std::cout << raw;
    } else {
      const auto report = xaiport::report_from_json(nlohmann::json::parse(raw));
      std::cout << xaiport::render_report_table(report);
    }
    return kExitOk;
  } catch (const xaiport::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.code() == xaiport::errc::job_not_found ? kExitConfig : kExitStageFailure;
  }
}

int serve_until_signal(xaiport::Gateway& gateway, const char* what) {
  std::signal(SIGINT, handle_signal);
  std::signal(SIGTERM, handle_signal);
  gateway.start();
  std::cout << what << " listening on 127.0.0.1:" << gateway.port() << "\n";
  while (!g_stop) {
    std::this_thread::sleep_for(std::chrono::milliseconds(100));
  }
  gateway.stop();
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"xaiport: configurable XAI operations over pluggable scoring backends"};
  app.require_subcommand(1);

  auto* run = app.add_subcommand("run", "Run a pipeline from a config file");
  std::string config_path, out_override;
  run->add_option("--config", config_path, "Pipeline config JSON")->required();
  run->add_option("--out", out_override, "Output/data directory (overrides config)");

  auto* serve = app.add_subcommand("serve", "Serve the HTTP API");
  int serve_port = 8080;
  std::string serve_data = default_data_dir();
  uint32_t workers = 2;
  std::string serve_model;
  serve->add_option("--port", serve_port, "Port to listen on");
  serve->add_option("--data", serve_data, "Data directory (default $XAIPORT_DATA_DIR)");
  serve->add_option("--workers", workers, "Concurrent pipeline jobs");
  serve->add_option("--model", serve_model, "Surrogate checkpoint for /v1/score");

  auto* report = app.add_subcommand("report", "Print a finished job's metric report");
  std::string job_id, report_data = default_data_dir(), format = "table";
  report->add_option("--job", job_id, "Job id")->required();
  report->add_option("--data", report_data, "Data directory");
  report->add_option("--format", format, "table or json")
      ->check(CLI::IsMember({"table", "json"}));

  auto* scoreserver = app.add_subcommand("scoreserver", "Serve /v1/score over a checkpoint");
  std::string ckpt;
  int score_port = 8081;
  scoreserver->add_option("--model", ckpt, "Checkpoint directory")->required();
  scoreserver->add_option("--port", score_port, "Port to listen on");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*run) return cmd_run(config_path, out_override);
    if (*report) return cmd_report(job_id, report_data, format);
    if (*serve) {
      xaiport::GatewayOptions options;
      options.port = serve_port;
      options.data_dir = serve_data;
      options.job_workers = workers;
      if (!serve_model.empty()) options.model_checkpoint = serve_model;
      xaiport::Gateway gateway(std::move(options));
      return serve_until_signal(gateway, "xaiport");
    }
    if (*scoreserver) {
      xaiport::Model model = xaiport::load_checkpoint(ckpt);
      xaiport::ScoreServer server(std::move(model), {}, score_port);
      std::signal(SIGINT, handle_signal);
      std::signal(SIGTERM, handle_signal);
      server.start();
      std::cout << "score server listening on 127.0.0.1:" << server.port() << "\n";
      while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
      server.stop();
      return kExitOk;
    }
  } catch (const xaiport::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.code() == xaiport::errc::data_dir_locked ? kExitConfig : kExitStageFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitStageFailure;
  }
  return kExitUsage;
}
