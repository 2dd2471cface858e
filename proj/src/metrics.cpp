#include "servesim/metrics.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <stdexcept>

namespace servesim {

RequestMetrics request_metrics(const RequestRecord& rec) {
  if (!(rec.arrival_ms <= rec.first_token_ms &&
        rec.first_token_ms <= rec.completed_ms)) {
    throw std::invalid_argument("RequestRecord timestamps out of order");
  }
  RequestMetrics m;
  m.ttft_ms = rec.first_token_ms - rec.arrival_ms;
  m.e2e_ms = rec.completed_ms - rec.arrival_ms;
  if (rec.output_tokens >= 2) {
    m.tpot_ms = (rec.completed_ms - rec.first_token_ms) /
                static_cast<double>(rec.output_tokens - 1);
  } else {
    m.tpot_ms = 0.0;
    m.single_token = true;
  }
  return m;
}

double percentile(std::vector<double> values, double p) {
  if (values.empty()) throw std::invalid_argument("percentile of empty set");
  if (!(p > 0.0 && p <= 100.0)) {
    throw std::invalid_argument("percentile requires 0 < p <= 100");
  }
  std::sort(values.begin(), values.end());
  const auto n = static_cast<double>(values.size());
  const auto rank = static_cast<size_t>(std::ceil(p / 100.0 * n));
  return values[std::max<size_t>(rank, 1) - 1];
}

SloAttainment slo_attainment(std::span<const RequestRecord> records,
                             const SLOSpec& slo) {
  if (records.empty()) return {100.0, true};
  int64_t pass = 0;
  for (const auto& rec : records) {
    const RequestMetrics m = request_metrics(rec);
    const bool ttft_ok = m.ttft_ms <= slo.ttft_slo_ms;
    const bool tpot_ok = m.single_token || m.tpot_ms <= slo.tpot_slo_ms;
    if (ttft_ok && tpot_ok) ++pass;
  }
  return {100.0 * static_cast<double>(pass) /
              static_cast<double>(records.size()),
          false};
}

MetricsSummary summarize(std::span<const RequestRecord> records,
                         const SLOSpec& slo) {
  MetricsSummary out;
  out.completed = static_cast<int64_t>(records.size());
  if (records.empty()) return out;

  std::vector<double> e2e, ttft, tpot;
  std::map<int, int64_t> per_engine;
  double ttft_sum = 0.0, tpot_sum = 0.0;
  int64_t tpot_count = 0;
  for (const auto& rec : records) {
    const RequestMetrics m = request_metrics(rec);
    e2e.push_back(m.e2e_ms);
    ttft.push_back(m.ttft_ms);
    ttft_sum += m.ttft_ms;
    if (!m.single_token) {
      tpot.push_back(m.tpot_ms);
      tpot_sum += m.tpot_ms;
      ++tpot_count;
    }
    ++per_engine[rec.engine_id];
  }
  out.p50_e2e_ms = percentile(e2e, 50.0);
  out.p90_e2e_ms = percentile(e2e, 90.0);
  out.p50_ttft_ms = percentile(ttft, 50.0);
  out.p50_tpot_ms = tpot.empty() ? 0.0 : percentile(tpot, 50.0);
  out.mean_ttft_ms = ttft_sum / static_cast<double>(records.size());
  out.mean_tpot_ms =
      tpot_count ? tpot_sum / static_cast<double>(tpot_count) : 0.0;
  out.slo_attainment_pct = slo_attainment(records, slo).percent;
  for (const auto& [engine, count] : per_engine) {
    out.engine_share.emplace_back(
        engine, static_cast<double>(count) / static_cast<double>(records.size()));
  }
  return out;
}

void write_requests_csv(const std::string& path,
                        std::span<const RequestRecord> records) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write csv: " + path);
  out << "request_id,engine_id,arrival_ms,first_token_ms,completed_ms,"
         "prompt_tokens,output_tokens,ttft_ms,tpot_ms,e2e_ms\n";
  char buf[320];
  for (const auto& rec : records) {
    const RequestMetrics m = request_metrics(rec);
    std::snprintf(buf, sizeof buf,
                  "%llu,%d,%.3f,%.3f,%.3f,%lld,%lld,%.3f,%.6f,%.3f\n",
                  static_cast<unsigned long long>(rec.request_id),
                  rec.engine_id, rec.arrival_ms, rec.first_token_ms,
                  rec.completed_ms, static_cast<long long>(rec.prompt_tokens),
                  static_cast<long long>(rec.output_tokens), m.ttft_ms,
                  m.tpot_ms, m.e2e_ms);
    out << buf;
  }
}

}  // namespace servesim
