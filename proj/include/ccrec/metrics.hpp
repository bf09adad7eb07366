#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ccrec/error.hpp"

namespace ccrec::metrics {

struct KMetrics {
  double hr = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct MetricReport {
  std::map<int, KMetrics> at_k;
  size_t users = 0;     // users actually scored
  size_t excluded = 0;  // empty truth sets plus users missing predictions
};

// F1 from aggregate precision/recall; 0 when both are 0.
double aggregate_f1(double precision, double recall);

// Per-k set-overlap metrics over users:
//   HR@k        fraction of users whose top-k contains >= 1 true category
//   Precision@k mean over users of |top-k intersect truth| / k
//   Recall@k    mean over users of |top-k intersect truth| / |truth|
//   F1@k        harmonic mean of the aggregate precision and recall
// Users with an empty truth set are excluded and counted. Ranked lists must
// be duplicate-free.
MetricReport metrics_at_k(const std::vector<std::vector<int32_t>>& ranked,
                          const std::vector<std::vector<int32_t>>& truth,
                          const std::vector<int>& ks);

// Prediction file: TSV rows "user<TAB>rank<TAB>category<TAB>score" with
// contiguous 1-based ranks per user. A duplicated user is fatal; examples
// without predictions are excluded and counted.
MetricReport evaluate_run(const std::string& prediction_path,
                          const std::string& example_path,
                          const std::vector<int>& ks,
                          const std::string& report_json_path,
                          const std::string& report_text_path);

std::string render_report_text(const MetricReport& report);
void write_report(const MetricReport& report, const std::string& json_path,
                  const std::string& text_path);
MetricReport read_report_json(const std::string& path);

}  // namespace ccrec::metrics
