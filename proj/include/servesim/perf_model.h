#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace servesim {

// Coefficients of the per-iteration latency model
//   T(B,S) = tau0 + (w0 + ws*S) / Thr(B,S) + tauB*B + tauS*S
// with Thr(B,S) = p_max * (1 - e^(-kB*B)) * (1 - e^(-kS*S)).
// Units are fixed cluster-wide: milliseconds and tokens per millisecond.
struct PerfParams {
  double tau0 = 0.0;   // fixed overhead, ms
  double w0 = 0.0;     // workload intercept, token-equivalents
  double ws = 1.0;     // workload slope, token-equivalents per token
  double tauB = 0.0;   // per-request overhead, ms
  double tauS = 0.0;   // per-token overhead, ms
  double p_max = 1.0;  // peak throughput, tokens/ms
  double kB = 1.0;     // batch-size saturation rate
  double kS = 1.0;     // token-count saturation rate

  bool valid() const;

  std::string to_json() const;
  static PerfParams from_json(const std::string& text);
};

// One iteration's shape: B requests, S total scheduled tokens.
struct BatchShape {
  int64_t b = 1;
  int64_t s = 1;

  bool valid() const { return b >= 1 && s >= b; }
};

struct LatencySample {
  BatchShape shape;
  double observed_ms = 0.0;
  double sim_time_ms = 0.0;
};

// Effective throughput in tokens/ms; strictly inside (0, p_max).
double throughput(const PerfParams& params, const BatchShape& shape);

// Predicted iteration latency in ms; strictly positive.
double predict_latency(const PerfParams& params, const BatchShape& shape);

// R^2 of predict_latency against observed latencies. Requires at least two
// samples with nonidentical observations; throws std::invalid_argument
// otherwise.
double goodness_of_fit(const PerfParams& params,
                       std::span<const LatencySample> samples);

}  // namespace servesim
