#pragma once

#include <cstdint>
#include <deque>
#include <list>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "servesim/learner.h"
#include "servesim/lens.h"
#include "servesim/perf_model.h"
#include "servesim/rng.h"

namespace servesim {

enum class SchedulerPolicy { kLens, kPrefillPriority, kStaticChunked };

SchedulerPolicy scheduler_policy_from_string(const std::string& name);
std::string to_string(SchedulerPolicy policy);

// Ground-truth hardware profiles ("fast", "medium", "slow") with 4:2:1 peak
// throughput, standing in for three GPU tiers.
PerfParams perf_profile(const std::string& name);

struct EngineConfig {
  int engine_id = 0;
  PerfParams true_params;  // ground truth; hidden from scheduler and learner
  double noise_sigma = 0.05;
  int64_t kv_blocks = 8192;
  int64_t block_size = 16;
  int64_t m_max = 8192;
  int64_t q_max = 256;
  SchedulerPolicy scheduler_policy = SchedulerPolicy::kLens;
  int64_t static_budget = 2048;
  double state_report_period_ms = 100.0;
  double state_staleness_ms = 0.0;
  int64_t wait_cap = 0;  // 0 = unbounded

  bool valid() const {
    return kv_blocks > 0 && block_size >= 1 && noise_sigma >= 0.0 &&
           static_budget >= 1 && static_budget <= m_max && m_max >= q_max &&
           q_max >= 1 && state_report_period_ms > 0.0 &&
           state_staleness_ms >= 0.0 && wait_cap >= 0 && true_params.valid();
  }
};

// Forward-looking engine state exported to the routing layer.
struct StateVector {
  int engine_id = 0;
  double l_hat_ms = 0.0;       // predicted remaining time of in-flight batch
  double w_load_tokens = 0.0;  // pending prefill tokens + weighted queue size
  double m_free_tokens = 0.0;  // KV headroom after queued requests' estimates
  double p_max = 1.0;          // learner's current peak-throughput estimate
  double reported_at_ms = 0.0;

  bool valid() const {
    return l_hat_ms >= 0.0 && w_load_tokens >= 0.0 && m_free_tokens >= 0.0 &&
           p_max > 0.0;
  }
};

struct EngineReport {
  StateVector state;
  int64_t queue_len = 0;  // |run| + |wait|, for the least-loaded baseline
};

struct StepOutcome {
  BatchPlan plan;
  double actual_ms = 0.0;
  std::vector<uint64_t> finished;      // reached target_decode this step
  std::vector<uint64_t> first_tokens;  // prefill completed this step
};

// Baseline engine policies. prefill_priority batches whole prompts whenever
// anything is waiting; static_chunked runs the greedy allocation against a
// fixed token budget with no target or search.
BatchPlan schedule_baseline(SchedulerPolicy policy,
                            std::span<const Request* const> wait_q,
                            std::span<const Request* const> run_q,
                            const PerfParams& params, const EngineConfig& cfg);

// One simulated inference engine: FCFS wait queue, running decode set,
// block-granular KV accounting with a prefix cache for finished sessions,
// and step execution against the hidden ground-truth latency oracle.
class EngineSim {
 public:
  EngineSim(const EngineConfig& cfg, const SLOSpec& slo,
            const SchedulerConfig& sched, const TradeoffModel& tradeoff_init,
            const LearnerConfig& learner_cfg, uint64_t root_seed);

  // Ground-truth latency with multiplicative log-normal noise from this
  // engine's dedicated rng stream.
  double oracle_latency(const BatchShape& shape);

  bool admit(Request* request, double now_ms);

  bool busy() const { return inflight_.has_value(); }
  bool has_work() const { return !wait_q_.empty() || !run_q_.empty(); }

  // Plans and launches the next step. Returns the oracle step duration in
  // ms, or nullopt when nothing was scheduled.
  std::optional<double> begin_step(double now_ms);
  StepOutcome complete_step(double now_ms);

  StateVector export_state(double now_ms) const;
  int64_t queue_len() const {
    return static_cast<int64_t>(wait_q_.size() + run_q_.size());
  }

  void record_learner_sample(const LatencySample& sample) {
    learner_.record_sample(sample);
  }

  const EngineConfig& config() const { return cfg_; }
  const SchedulerConfig& scheduler_config() const { return sched_; }
  OnlineLearner& learner() { return learner_; }
  const OnlineLearner& learner() const { return learner_; }
  TradeoffEstimator& tradeoff() { return tradeoff_; }
  const BatchPlan* inflight_plan() const {
    return inflight_ ? &inflight_->plan : nullptr;
  }

  // KV accounting, exposed for invariant checks.
  int64_t used_blocks() const { return pinned_blocks_; }
  int64_t free_blocks() const { return cfg_.kv_blocks - pinned_blocks_; }
  int64_t reserved_blocks() const { return reserved_blocks_; }
  int64_t cache_blocks() const { return cache_blocks_; }
  int64_t cached_prefix_tokens(const std::string& session) const;
  void check_kv_consistency() const;  // throws std::logic_error on violation

  const std::deque<Request*>& wait_queue() const { return wait_q_; }
  const std::vector<Request*>& run_queue() const { return run_q_; }

 private:
  struct Inflight {
    BatchPlan plan;
    double started_ms = 0.0;
    double actual_ms = 0.0;
  };
  struct PrefixEntry {
    std::string session_id;
    int64_t tokens = 0;
    int64_t blocks = 0;
  };

  int64_t blocks_for(int64_t tokens) const {
    return (tokens + cfg_.block_size - 1) / cfg_.block_size;
  }
  int64_t committed_blocks() const {
    return pinned_blocks_ + reserved_blocks_;
  }
  BatchPlan plan_step();
  void trim_for_kv(BatchPlan* plan);
  void evict_to_fit();
  void cache_insert(const std::string& session, int64_t tokens);

  EngineConfig cfg_;
  SLOSpec slo_;
  SchedulerConfig sched_;
  OnlineLearner learner_;
  TradeoffEstimator tradeoff_;
  Rng rng_;

  std::deque<Request*> wait_q_;
  std::vector<Request*> run_q_;
  std::unordered_map<uint64_t, Request*> active_;
  std::optional<Inflight> inflight_;

  // pinned: blocks held by live requests; reserved: their future growth up
  // to prompt+target_decode, granted at first scheduling so decode growth
  // can always be satisfied. Finished-session prefixes live inside the free
  // region and are reclaimed LRU-first when reservations need the space.
  int64_t pinned_blocks_ = 0;
  int64_t reserved_blocks_ = 0;
  int64_t cache_blocks_ = 0;
  std::list<PrefixEntry> cache_lru_;  // front = oldest
  std::unordered_map<std::string, std::list<PrefixEntry>::iterator> cache_map_;
};

}  // namespace servesim
