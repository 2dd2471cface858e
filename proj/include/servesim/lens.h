#pragma once

#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "servesim/perf_model.h"

namespace servesim {

struct SLOSpec {
  double ttft_slo_ms = 2000.0;
  double tpot_slo_ms = 12.0;

  bool valid() const { return ttft_slo_ms > 0.0 && tpot_slo_ms > 0.0; }
};

// Linear TTFT-vs-TPOT trade-off estimate: ttft(t_d) ~= alpha - beta * t_d.
struct TradeoffModel {
  double alpha_ms = 2000.0;  // extrapolated max TTFT
  double beta = 16.0;        // trade-off rate, ms TTFT per ms TPOT
  double l_bar = 128.0;      // expected decode length, tokens
  double td_min_ms = 2.0;    // safety floor for the iteration target

  bool valid() const { return beta > 0.0 && l_bar >= 1.0 && td_min_ms > 0.0; }

  // Pre-history default: the implied TTFT boundary starts exactly at the
  // TPOT bound, so the first targets are achievable and tighten only once
  // completions calibrate the real line.
  static TradeoffModel initial_for(const SLOSpec& slo) {
    TradeoffModel tm;
    tm.alpha_ms = 2.0 * slo.ttft_slo_ms;
    tm.beta = slo.ttft_slo_ms / slo.tpot_slo_ms;
    return tm;
  }
};

enum class RequestState { kWaiting, kRunning, kFinished };

struct Request {
  uint64_t id = 0;
  std::string session_id;
  int64_t prompt_len = 1;
  int64_t prefilled = 0;        // prompt tokens processed so far
  int64_t decoded = 0;          // decode steps completed
  int64_t target_decode = 1;    // ground-truth output length (engine-only)
  int64_t precredited = 0;      // prefix tokens credited at admission
  double arrival_ms = 0.0;
  std::optional<double> first_token_ms;
  RequestState state = RequestState::kWaiting;

  // Engine-side bookkeeping.
  bool kv_admitted = false;          // KV growth reservation granted
  int64_t allocated_prefill = 0;     // lifetime prefill tokens scheduled
  int64_t allocated_decode = 0;      // lifetime decode tokens scheduled

  int64_t remaining_prompt() const { return prompt_len - prefilled; }
};

struct SchedulerConfig {
  int64_t m_max = 8192;      // per-batch token cap
  int64_t q_max = 256;       // per-batch request cap
  int n_search_iters = 10;
  double eps_ratio = 0.05;   // early-exit threshold as a fraction of target
  double q_ref = 16.0;       // waiting-queue size that fully relaxes the target

  bool valid() const {
    return m_max >= q_max && q_max >= 1 && n_search_iters >= 1 &&
           eps_ratio > 0.0 && eps_ratio < 1.0 && q_ref > 0.0;
  }
};

struct Allocation {
  uint64_t request_id = 0;
  int64_t tokens = 0;
  bool is_prefill = false;
};

struct BatchPlan {
  std::vector<Allocation> allocations;
  int64_t b = 0;
  int64_t s = 0;
  double predicted_ms = 0.0;
  double target_ms = 0.0;
  bool overload = false;  // running queue exceeded q_max; plan truncated

  bool empty() const { return allocations.empty(); }
};

struct TargetLatency {
  double target_ms = 0.0;
  bool slo_risk = false;  // feasible TPOT interval was empty
};

// Adaptive per-iteration latency target: picks a TPOT target inside the
// SLO-feasible interval based on expected decode length, then relaxes it
// toward the TPOT bound as the waiting queue grows.
TargetLatency target_latency(int64_t wait_count, const SLOSpec& slo,
                             const TradeoffModel& tm, double q_ref);

// Largest token budget S in [b, s_cap] whose predicted latency stays within
// target_ms, located by bisection (at most n_search_iters probes). Returns b
// when even the minimal batch overshoots. s_cap defaults to cfg.m_max.
int64_t binary_search_budget(int64_t b, double target_ms,
                             const PerfParams& params,
                             const SchedulerConfig& cfg, int64_t s_cap = -1);

// Greedy allocation: every running request gets one decode token, then
// waiting requests are admitted FCFS with chunked prefills until request
// slots (b) or the token budget (s) run out.
std::vector<Allocation> allocate_tokens(std::span<const Request* const> run_q,
                                        std::span<const Request* const> wait_q,
                                        int64_t b, int64_t s);

// One scheduling decision: sweeps candidate batch sizes, binary-searches a
// token budget per candidate, and keeps the realized plan whose predicted
// latency lands closest to the adaptive target.
BatchPlan schedule_step(std::span<const Request* const> wait_q,
                        std::span<const Request* const> run_q,
                        const SLOSpec& slo, const TradeoffModel& tm,
                        const PerfParams& params, const SchedulerConfig& cfg);

struct CompletionStats {
  double ttft_ms = 0.0;
  double tpot_ms = 0.0;
  int64_t decode_len = 0;
};

// Refits the TTFT/TPOT trade-off line and the decode-length EMA from
// completed requests. Keeps a sliding window of recent completions.
class TradeoffEstimator {
 public:
  explicit TradeoffEstimator(const TradeoffModel& initial) : model_(initial) {}

  void update(std::span<const CompletionStats> completed);

  const TradeoffModel& model() const { return model_; }
  int64_t degenerate_updates() const { return degenerate_updates_; }

 private:
  static constexpr size_t kWindow = 200;
  static constexpr double kEmaSmoothing = 0.05;
  static constexpr double kBetaMin = 1e-3;

  TradeoffModel model_;
  std::deque<CompletionStats> window_;
  int64_t degenerate_updates_ = 0;
};

}  // namespace servesim
