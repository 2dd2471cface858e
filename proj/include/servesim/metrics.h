#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "servesim/lens.h"

namespace servesim {

struct RequestRecord {
  uint64_t request_id = 0;
  double arrival_ms = 0.0;
  double first_token_ms = 0.0;
  double completed_ms = 0.0;
  int64_t prompt_tokens = 0;
  int64_t output_tokens = 0;
  int engine_id = 0;
};

struct RequestMetrics {
  double ttft_ms = 0.0;
  double tpot_ms = 0.0;
  double e2e_ms = 0.0;
  bool single_token = false;  // TPOT undefined, reported as 0
};

RequestMetrics request_metrics(const RequestRecord& rec);

// Nearest-rank percentile: element at rank ceil(p/100 * n) of the sorted
// values. p in (0, 100]; empty input throws.
double percentile(std::vector<double> values, double p);

struct SloAttainment {
  double percent = 100.0;
  bool empty = false;
};

// Fraction of records meeting both latency bounds (TTFT only for
// single-token requests), as a percentage.
SloAttainment slo_attainment(std::span<const RequestRecord> records,
                             const SLOSpec& slo);

struct MetricsSummary {
  int64_t completed = 0;
  double p50_e2e_ms = 0.0;
  double p90_e2e_ms = 0.0;
  double p50_ttft_ms = 0.0;
  double p50_tpot_ms = 0.0;
  double mean_ttft_ms = 0.0;
  double mean_tpot_ms = 0.0;
  double slo_attainment_pct = 100.0;
  std::vector<std::pair<int, double>> engine_share;  // engine_id -> fraction
};

MetricsSummary summarize(std::span<const RequestRecord> records,
                         const SLOSpec& slo);

void write_requests_csv(const std::string& path,
                        std::span<const RequestRecord> records);

}  // namespace servesim
