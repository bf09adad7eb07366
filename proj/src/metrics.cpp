#include "ccrec/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "ccrec/data.hpp"
#include "json.hpp"

namespace ccrec::metrics {

using nlohmann::json;

double aggregate_f1(double precision, double recall) {
  double denom = precision + recall;
  if (denom == 0.0) return 0.0;
  return 2.0 * precision * recall / denom;
}

MetricReport metrics_at_k(const std::vector<std::vector<int32_t>>& ranked,
                          const std::vector<std::vector<int32_t>>& truth,
                          const std::vector<int>& ks) {
  if (ranked.size() != truth.size())
    throw DimensionError("ranked and truth lists differ in length");
  for (int k : ks)
    if (k <= 0) throw ConfigError("metric cutoffs must be positive");

  MetricReport report;
  std::map<int, size_t> hit_users;
  std::map<int, double> prec_sum, rec_sum;
  for (size_t u = 0; u < ranked.size(); ++u) {
    if (truth[u].empty()) {
      ++report.excluded;
      continue;
    }
    std::set<int32_t> seen(ranked[u].begin(), ranked[u].end());
    if (seen.size() != ranked[u].size())
      throw DataError("ranked list contains duplicates");
    std::set<int32_t> gamma(truth[u].begin(), truth[u].end());
    ++report.users;
    for (int k : ks) {
      size_t kk = static_cast<size_t>(k);
      size_t hits = 0;
      for (size_t i = 0; i < ranked[u].size() && i < kk; ++i)
        if (gamma.count(ranked[u][i])) ++hits;
      if (hits > 0) hit_users[k]++;
      prec_sum[k] += static_cast<double>(hits) / static_cast<double>(kk);
      rec_sum[k] += static_cast<double>(hits) / static_cast<double>(gamma.size());
    }
  }
  for (int k : ks) {
    KMetrics m;
    if (report.users > 0) {
      m.hr = static_cast<double>(hit_users[k]) / static_cast<double>(report.users);
      m.precision = prec_sum[k] / static_cast<double>(report.users);
      m.recall = rec_sum[k] / static_cast<double>(report.users);
      m.f1 = aggregate_f1(m.precision, m.recall);
    }
    report.at_k[k] = m;
  }
  return report;
}

namespace {

struct PredictionRow {
  std::string user;
  int rank = 0;
  int32_t category = 0;
};

std::map<std::string, std::vector<int32_t>> read_predictions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::map<std::string, std::vector<int32_t>> lists;
  std::string line;
  size_t line_no = 0;
  std::string prev_user;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> f;
    size_t start = 0;
    for (;;) {
      size_t pos = line.find('\t', start);
      if (pos == std::string::npos) {
        f.push_back(line.substr(start));
        break;
      }
      f.push_back(line.substr(start, pos - start));
      start = pos + 1;
    }
    if (f.size() < 3)
      throw DataError(path + ":" + std::to_string(line_no) + ": expected at least 3 columns");
    int rank = 0;
    int32_t category = 0;
    auto r1 = std::from_chars(f[1].data(), f[1].data() + f[1].size(), rank);
    auto r2 = std::from_chars(f[2].data(), f[2].data() + f[2].size(), category);
    if (r1.ec != std::errc() || r2.ec != std::errc())
      throw DataError(path + ":" + std::to_string(line_no) + ": malformed row");
    auto& list = lists[f[0]];
    if (rank != static_cast<int>(list.size()) + 1) {
      if (rank == 1)
        throw DataError("duplicate user '" + f[0] + "' in " + path);
      throw DataError(path + ":" + std::to_string(line_no) + ": ranks not contiguous");
    }
    if (f[0] != prev_user && !list.empty() && rank != 1)
      throw DataError("user '" + f[0] + "' appears in multiple blocks of " + path);
    list.push_back(category);
    prev_user = f[0];
  }
  return lists;
}

}  // namespace

MetricReport evaluate_run(const std::string& prediction_path,
                          const std::string& example_path,
                          const std::vector<int>& ks,
                          const std::string& report_json_path,
                          const std::string& report_text_path) {
  auto predictions = read_predictions(prediction_path);
  auto examples = data::read_examples(example_path);

  std::vector<std::vector<int32_t>> ranked, truth;
  size_t missing = 0;
  for (const auto& ex : examples) {
    auto it = predictions.find(ex.user);
    if (it == predictions.end()) {
      ++missing;
      continue;
    }
    ranked.push_back(it->second);
    truth.push_back(ex.gamma);
  }
  MetricReport report = metrics_at_k(ranked, truth, ks);
  report.excluded += missing;
  write_report(report, report_json_path, report_text_path);
  return report;
}

std::string render_report_text(const MetricReport& report) {
  std::ostringstream out;
  char buf[64];
  auto col = [&](const char* fam, int k) {
    std::snprintf(buf, sizeof buf, "%s@%d", fam, k);
    out << buf;
    for (int pad = static_cast<int>(std::strlen(buf)); pad < 10; ++pad) out << ' ';
  };
  for (const auto& [k, m] : report.at_k) col("HR", k);
  for (const auto& [k, m] : report.at_k) col("P", k);
  for (const auto& [k, m] : report.at_k) col("R", k);
  for (const auto& [k, m] : report.at_k) col("F1", k);
  out << "users     excluded\n";
  auto val = [&](double v) {
    std::snprintf(buf, sizeof buf, "%-10.4f", v);
    out << buf;
  };
  for (const auto& [k, m] : report.at_k) val(m.hr);
  for (const auto& [k, m] : report.at_k) val(m.precision);
  for (const auto& [k, m] : report.at_k) val(m.recall);
  for (const auto& [k, m] : report.at_k) val(m.f1);
  std::snprintf(buf, sizeof buf, "%-10zu%zu", report.users, report.excluded);
  out << buf << '\n';
  return out.str();
}

void write_report(const MetricReport& report, const std::string& json_path,
                  const std::string& text_path) {
  json j;
  j["users"] = report.users;
  j["excluded"] = report.excluded;
  j["k"] = json::object();
  for (const auto& [k, m] : report.at_k) {
    json mk;
    mk["hr"] = m.hr;
    mk["precision"] = m.precision;
    mk["recall"] = m.recall;
    mk["f1"] = m.f1;
    j["k"][std::to_string(k)] = std::move(mk);
  }
  std::ofstream out(json_path, std::ios::binary);
  if (!out) throw IoError("cannot write " + json_path);
  out << j.dump(2) << '\n';
  if (!text_path.empty()) {
    std::ofstream txt(text_path, std::ios::binary);
    if (!txt) throw IoError("cannot write " + text_path);
    txt << render_report_text(report);
  }
}

MetricReport read_report_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw DataError("invalid report " + path + ": " + e.what());
  }
  MetricReport report;
  report.users = j.at("users").get<size_t>();
  report.excluded = j.at("excluded").get<size_t>();
  for (const auto& [key, mk] : j.at("k").items()) {
    KMetrics m;
    m.hr = mk.at("hr").get<double>();
    m.precision = mk.at("precision").get<double>();
    m.recall = mk.at("recall").get<double>();
    m.f1 = mk.at("f1").get<double>();
    report.at_k[std::stoi(key)] = m;
  }
  return report;
}

}  // namespace ccrec::metrics
