#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "servesim/perf_model.h"

namespace servesim {

struct LearnerConfig {
  int64_t long_window = 4096;   // structural-fit window, samples
  int64_t short_window = 64;    // linear-fit window, samples
  int64_t structural_period = 1024;
  int64_t linear_period = 32;
  int64_t min_structural_samples = 256;

  bool valid() const {
    return long_window > 0 && short_window > 0 && structural_period > 0 &&
           linear_period > 0 && min_structural_samples > 0 &&
           short_window < long_window && linear_period < structural_period;
  }
};

struct LearnerCounters {
  int64_t linear_updates = 0;
  int64_t structural_updates = 0;
  int64_t degenerate_updates = 0;   // rank-deficient linear design matrix
  int64_t rescale_updates = 0;      // scale-only fallback on degenerate data
  int64_t clamp_events = 0;         // OLS coefficient pushed back into range
  int64_t failed_fits = 0;          // structural fit rejected
  int64_t low_identifiability = 0;  // window saturated in both factors
};

// Maintains a PerfParams estimate from streamed step latencies with two
// update rates: a cheap linear refit every few dozen samples and a slower
// nonlinear refit of the saturation parameters over a long window.
//
// Readers take params() as an immutable snapshot; it is never observable in
// a half-updated state because updates assign a fully validated value.
class OnlineLearner {
 public:
  OnlineLearner(const PerfParams& priors, const LearnerConfig& cfg);

  // Deliberately misconfigured starting point for unprofiled hardware; the
  // online updates are responsible for correcting it.
  static PerfParams default_priors();

  void record_sample(const LatencySample& sample);

  const PerfParams& params() const { return current_; }
  int64_t samples_seen() const { return samples_seen_; }
  int64_t buffered() const { return static_cast<int64_t>(buffer_.size()); }
  const LearnerCounters& counters() const { return counters_; }
  const LearnerConfig& config() const { return cfg_; }

  // OLS over the last short_window samples for the linear coefficients,
  // holding the structural ones fixed. Returns false (and leaves params
  // untouched) on a rank-deficient design.
  bool update_linear();

  // Damped coordinate descent over log{p_max, kB, kS}, each evaluation
  // refitting the linear tier; an accepted fit never increases the windowed
  // squared error. Returns false if skipped or rejected.
  bool update_structural();

  // Mean relative prediction error over a probe set.
  double convergence_error(std::span<const LatencySample> probe) const;

  std::string to_json() const;

 private:
  struct LinearFit {
    bool ok = false;
    bool clamped = false;
    double tau0, w0, ws, tauB, tauS;
  };

  std::vector<LatencySample> window(int64_t n) const;
  LinearFit solve_linear(std::span<const LatencySample> samples,
                         const PerfParams& structural) const;
  double windowed_sse(std::span<const LatencySample> samples,
                      const PerfParams& params) const;
  // Profiled least squares for fixed (kB, kS) in the ws=1 gauge; returns the
  // windowed SSE and writes the fitted parameter set.
  double gauged_fit(std::span<const LatencySample> samples, double kB,
                    double kS, PerfParams* out) const;

  LearnerConfig cfg_;
  PerfParams current_;
  std::vector<LatencySample> buffer_;  // ring, capacity long_window
  size_t ring_head_ = 0;
  int64_t samples_seen_ = 0;
  LearnerCounters counters_;
};

// Loads LatencySample records from JSONL lines of
// {"b":..,"s":..,"observed_ms":..,"sim_time_ms":..}.
std::vector<LatencySample> load_samples_jsonl(const std::string& path);

}  // namespace servesim
