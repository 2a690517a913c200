#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "xaiport/backends.hpp"
#include "xaiport/explainers.hpp"

namespace xaiport {

// Per-sample deletion scores (percentage points) for one (method, backend,
// dataset) triple; the unit of comparison for the stability metrics.
struct ExplanationSummary {
  std::string method;
  std::string backend_id;
  std::vector<std::string> sample_ids;
  std::vector<double> deletion_scores;
  double probe_fraction = 0.0;
};

// Drop of the predicted-class score, in percentage points, after masking the
// top-p salient pixels with the dataset mean. Negative when masking helps.
double deletion_score(const Backend& backend, const Tensor& image, const SaliencyMap& saliency,
                      double p, std::span<const float> channel_mean, const std::string& sample_id);

// Stability f_d^K: mean |d_i - d_j| over all C(m,2) unordered pairs of the
// summary's deletion scores. Smaller is better.
double stability(const ExplanationSummary& summary);

// Consistency f_d^X: mean over the other methods' summaries of the
// per-sample mean |d^X_s - d^i_s|. All summaries must share the sample list.
double consistency(const std::vector<ExplanationSummary>& summaries, const std::string& method_x);

// Macro-averaged F1; a class with no predicted and no true positives
// contributes 0.
double f1_score(std::span<const uint32_t> predictions, std::span<const uint32_t> truths);

struct ReportRow {
  std::string backend_id;
  std::string variant;  // baseline | cutmix | saliency_mix
  double f1 = 0.0;
  uint32_t sample_count = 0;  // m
  uint64_t pair_count = 0;    // K = m(m-1)/2
  std::map<std::string, double> stability;
  std::map<std::string, double> consistency;  // present when >= 2 methods ran
};

struct MetricReport {
  std::vector<std::string> methods;  // canonical order
  std::vector<ReportRow> rows;       // backends lexicographic, variants B,C,P
};

// One evaluated (backend, variant) cell: summaries for every configured
// method plus the clean-input predictions used for F1.
struct EvaluationRun {
  std::string backend_id;
  std::string variant;
  std::vector<ExplanationSummary> summaries;
  std::vector<uint32_t> predictions;
  std::vector<uint32_t> truths;
};

MetricReport build_report(const std::vector<EvaluationRun>& runs,
                          const std::vector<std::string>& methods);

nlohmann::json report_to_json(const MetricReport& report);
MetricReport report_from_json(const nlohmann::json& j);

// Table rendering mirrors the service/F1/per-method matrix layout.
std::string method_display_name(std::string_view method);
std::string variant_letter(std::string_view variant);
std::string render_report_row(const std::string& service, const std::string& letter, double f1,
                              std::span<const double> values);
std::string render_report_table(const MetricReport& report);

}  // namespace xaiport
