#include "xaiport/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "xaiport/error.hpp"
#include "xaiport/variation.hpp"

namespace xaiport {

namespace {

uint32_t argmax(const std::vector<float>& v) {
  uint32_t best = 0;
  for (uint32_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

// f_d between two summaries: mean per-sample absolute difference.
double pair_distance(const ExplanationSummary& a, const ExplanationSummary& b) {
  double acc = 0.0;
  for (std::size_t s = 0; s < a.deletion_scores.size(); ++s) {
    acc += std::abs(a.deletion_scores[s] - b.deletion_scores[s]);
  }
  return acc / double(a.deletion_scores.size());
}

std::string fmt3(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

}  // namespace

double deletion_score(const Backend& backend, const Tensor& image, const SaliencyMap& saliency,
                      double p, std::span<const float> channel_mean, const std::string& sample_id) {
  const ScoreResult clean = backend.score(image, sample_id);
  const uint32_t c = argmax(clean.scores);
  const Tensor masked = mask_topk(image, saliency, p, channel_mean);
  const ScoreResult probed = backend.score(masked, sample_id);
  if (probed.scores.size() != clean.scores.size()) {
    throw Error(errc::protocol_malformed, backend.ref().id + ": score vector length changed");
  }
  return 100.0 * (double(clean.scores[c]) - double(probed.scores[c]));
}

double stability(const ExplanationSummary& summary) {
  const std::size_t m = summary.deletion_scores.size();
  if (m < 2) {
    throw Error(errc::invalid_argument, "stability needs at least two per-sample summaries");
  }
  // Sorted prefix-sum form of the mean pairwise absolute difference:
  // sum over i<j of (d_(j) - d_(i)) = sum_j (j*d_(j) - prefix_j).
  std::vector<double> d = summary.deletion_scores;
  std::sort(d.begin(), d.end());
  double total = 0.0;
  double prefix = 0.0;
  for (std::size_t j = 0; j < m; ++j) {
    total += double(j) * d[j] - prefix;
    prefix += d[j];
  }
  const double pairs = double(m) * double(m - 1) / 2.0;
  return total / pairs;
}

double consistency(const std::vector<ExplanationSummary>& summaries, const std::string& method_x) {
  if (summaries.size() < 2) {
    throw Error(errc::invalid_argument, "consistency needs at least two method summaries");
  }
  const ExplanationSummary* x = nullptr;
  for (const auto& s : summaries) {
    if (s.method == method_x) x = &s;
  }
  if (!x) throw Error(errc::invalid_argument, "method not present in summaries: " + method_x);
  for (const auto& s : summaries) {
    if (s.sample_ids != x->sample_ids) {
      throw Error(errc::invalid_argument, "summaries disagree on the sample list (" + s.method +
                                              " vs " + x->method + ")");
    }
  }
  double acc = 0.0;
  for (const auto& s : summaries) {
    if (&s == x) continue;
    acc += pair_distance(*x, s);
  }
  return acc / double(summaries.size() - 1);
}

double f1_score(std::span<const uint32_t> predictions, std::span<const uint32_t> truths) {
  if (predictions.size() != truths.size() || predictions.empty()) {
    throw Error(errc::invalid_argument, "prediction/truth lists must have equal nonzero length");
  }
  uint32_t classes = 0;
  for (uint32_t v : predictions) classes = std::max(classes, v + 1);
  for (uint32_t v : truths) classes = std::max(classes, v + 1);

  double macro = 0.0;
  for (uint32_t c = 0; c < classes; ++c) {
    uint64_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
      const bool pred = predictions[i] == c;
      const bool truth = truths[i] == c;
      tp += pred && truth;
      fp += pred && !truth;
      fn += !pred && truth;
    }
    const uint64_t denom = 2 * tp + fp + fn;
    macro += denom == 0 ? 0.0 : 2.0 * double(tp) / double(denom);
  }
  return macro / double(classes);
}

MetricReport build_report(const std::vector<EvaluationRun>& runs,
                          const std::vector<std::string>& methods) {
  if (methods.empty()) throw Error(errc::invalid_argument, "method list is empty", "methods");

  std::vector<std::string> missing;
  MetricReport report;
  report.methods = methods;

  for (const auto& run : runs) {
    ReportRow row;
    row.backend_id = run.backend_id;
    row.variant = run.variant;
    for (const auto& method : methods) {
      const ExplanationSummary* found = nullptr;
      for (const auto& s : run.summaries) {
        if (s.method == method) found = &s;
      }
      if (!found || found->deletion_scores.size() < 2) {
        missing.push_back(run.backend_id + "/" + run.variant + "/" + method);
        continue;
      }
      row.stability[method] = stability(*found);
      row.sample_count = uint32_t(found->deletion_scores.size());
    }
    if (methods.size() >= 2 && missing.empty()) {
      for (const auto& method : methods) row.consistency[method] = consistency(run.summaries, method);
    }
    row.pair_count = uint64_t(row.sample_count) * (row.sample_count - 1) / 2;
    row.f1 = f1_score(run.predictions, run.truths);
    report.rows.push_back(std::move(row));
  }

  if (!missing.empty()) {
    std::string cells;
    for (const auto& m : missing) cells += (cells.empty() ? "" : ", ") + m;
    throw Error(errc::missing_run, "missing or undersized runs for cells: " + cells);
  }

  // Canonical ordering: backends lexicographic, variants B, C, P.
  auto variant_rank = [](const std::string& v) {
    if (v == "baseline") return 0;
    if (v == "cutmix") return 1;
    return 2;
  };
  std::sort(report.rows.begin(), report.rows.end(), [&](const ReportRow& a, const ReportRow& b) {
    if (a.backend_id != b.backend_id) return a.backend_id < b.backend_id;
    return variant_rank(a.variant) < variant_rank(b.variant);
  });
  return report;
}

nlohmann::json report_to_json(const MetricReport& report) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : report.rows) {
    nlohmann::json r;
    r["backend"] = row.backend_id;
    r["variant"] = row.variant;
    r["f1"] = row.f1;
    r["m"] = row.sample_count;
    r["K"] = row.pair_count;
    r["stability"] = row.stability;
    if (!row.consistency.empty()) r["consistency"] = row.consistency;
    rows.push_back(std::move(r));
  }
  return {{"methods", report.methods}, {"rows", rows}};
}

MetricReport report_from_json(const nlohmann::json& j) {
  MetricReport report;
  report.methods = j.at("methods").get<std::vector<std::string>>();
  for (const auto& r : j.at("rows")) {
    ReportRow row;
    row.backend_id = r.at("backend").get<std::string>();
    row.variant = r.at("variant").get<std::string>();
    row.f1 = r.at("f1").get<double>();
    row.sample_count = r.at("m").get<uint32_t>();
    row.pair_count = r.at("K").get<uint64_t>();
    row.stability = r.at("stability").get<std::map<std::string, double>>();
    if (r.contains("consistency")) {
      row.consistency = r.at("consistency").get<std::map<std::string, double>>();
    }
    report.rows.push_back(std::move(row));
  }
  return report;
}

std::string method_display_name(std::string_view method) {
  if (method == "grad_cam") return "GradCAM";
  if (method == "grad_cam_pp") return "GradCAM++";
  if (method == "eigen_cam") return "EigenCAM";
  if (method == "layer_cam") return "LayerCAM";
  if (method == "xgrad_cam") return "XGradCAM";
  return std::string(method);
}

std::string variant_letter(std::string_view variant) {
  if (variant == "baseline") return "B";
  if (variant == "cutmix") return "C";
  if (variant == "saliency_mix") return "P";
  return "?";
}

std::string render_report_row(const std::string& service, const std::string& letter, double f1,
                              std::span<const double> values) {
  std::string out = service + " (" + letter + ") " + fmt3(f1);
  for (double v : values) out += " | " + fmt3(v);
  return out;
}

std::string render_report_table(const MetricReport& report) {
  std::ostringstream os;
  os << "Service  F1-score";
  for (const auto& m : report.methods) os << "  " << method_display_name(m);
  os << '\n';
  for (const auto& row : report.rows) {
    std::vector<double> values;
    for (const auto& m : report.methods) values.push_back(row.stability.at(m));
    os << render_report_row(row.backend_id, variant_letter(row.variant), row.f1, values) << '\n';
  }
  return os.str();
}

}  // namespace xaiport
