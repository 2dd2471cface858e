#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <list>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "servesim/engine.h"
#include "servesim/lens.h"
#include "servesim/rng.h"

namespace servesim {

enum class RouterPolicy {
  kPrism,
  kRoundRobin,
  kSessionAffinity,
  kLeastLoaded,
  kLatencyBased,
  kWeighted,
};

RouterPolicy router_policy_from_string(const std::string& name);
std::string to_string(RouterPolicy policy);

struct RouterConfig {
  RouterPolicy policy = RouterPolicy::kPrism;
  std::array<double, 4> weights{1.0, 1.0, 1.0, 1.0};  // latency, load,
                                                      // capacity, affinity
  double beta_aff = 1.5;           // session-affinity boost, > 1
  double latency_knee = 0.5;       // knee as a fraction of the TTFT SLO
  double latency_scale_ms = 0.0;   // 0 = derive as 0.25 * ttft_slo
  double load_half_ms = 50.0;      // backlog at which S_load = 0.5
  double capacity_headroom = 2.0;  // demand multiple for a full score
  double staleness_limit_ms = 1000.0;
  double latency_window_ms = 2000.0;  // rolling window for latency_based
  std::map<int, double> static_weights;  // engine shares for weighted

  bool valid() const {
    bool w_ok = true;
    for (double w : weights) w_ok = w_ok && w >= 0.0;
    return w_ok && beta_aff > 1.0 && latency_knee >= 0.0 &&
           latency_scale_ms >= 0.0 && load_half_ms > 0.0 &&
           capacity_headroom >= 1.0 && staleness_limit_ms > 0.0 &&
           latency_window_ms > 0.0;
  }
};

// SLO margin: 1 below the knee, exponential decay past it.
double score_latency(const StateVector& sv, const SLOSpec& slo,
                     const RouterConfig& cfg);

// Relative load: backlog normalized by peak throughput, mapped so the score
// is 0.5 at load_half_ms of backlog.
double score_load(const StateVector& sv, const RouterConfig& cfg);

// Capacity gatekeeper: 0 with no headroom, 1 once free KV covers
// headroom x demand, quadratic in between.
double score_capacity(const StateVector& sv, double req_demand_tokens,
                      const RouterConfig& cfg);

struct RouteDecision {
  int engine_id = -1;
  double score = 0.0;
  std::array<double, 4> factors{1.0, 1.0, 1.0, 1.0};
  bool degraded = false;  // every engine state was stale or missing
};

// Cluster-layer request router. Consumes periodic engine reports and applies
// either the multiplicative predictive score or one of the baseline
// policies. Single logical decision point: scoring reads the latest report
// table, which report events replace atomically between decisions.
class Router {
 public:
  Router(const RouterConfig& cfg, const SLOSpec& slo, uint64_t root_seed);

  void register_engine(int engine_id);
  void on_report(const EngineReport& report);
  void on_completion(int engine_id, const std::string& session_id,
                     double e2e_ms, int64_t decode_len, double now_ms);

  RouteDecision route(const Request& request, double now_ms);

  double score_affinity(int engine_id, const std::string& session_id) const;
  double demand_estimate_tokens(int64_t prompt_len) const;
  size_t engine_count() const { return order_.size(); }

 private:
  struct EngineInfo {
    std::optional<EngineReport> report;
    std::deque<std::pair<double, double>> latencies;  // (completed_at, e2e)
    double latency_sum = 0.0;
  };

  void remember_session(const std::string& session_id, int engine_id);
  int pick_round_robin();
  double rolling_latency(EngineInfo& info, double now_ms);

  RouterConfig cfg_;
  SLOSpec slo_;
  Rng rng_;
  std::vector<int> order_;  // registration order drives deterministic scans
  std::unordered_map<int, EngineInfo> engines_;
  uint64_t rr_next_ = 0;

  static constexpr size_t kSessionCapacity = 100000;
  std::list<std::string> session_lru_;
  struct SessionEntry {
    int engine_id;
    std::list<std::string>::iterator lru_it;
  };
  std::unordered_map<std::string, SessionEntry> sessions_;

  double l_bar_ema_ = 128.0;  // router-side decode-length estimate
  static constexpr double kEmaSmoothing = 0.05;
};

}  // namespace servesim
