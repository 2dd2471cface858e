#include "servesim/engine.h"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace servesim {
namespace {

// Token price of one queued request's concurrency pressure in W_e.
constexpr double kConcurrencyTokenWeight = 32.0;

}  // namespace

SchedulerPolicy scheduler_policy_from_string(const std::string& name) {
  if (name == "lens") return SchedulerPolicy::kLens;
  if (name == "prefill_priority") return SchedulerPolicy::kPrefillPriority;
  if (name == "static_chunked") return SchedulerPolicy::kStaticChunked;
  throw std::runtime_error("unknown scheduler policy: " + name);
}

std::string to_string(SchedulerPolicy policy) {
  switch (policy) {
    case SchedulerPolicy::kLens:
      return "lens";
    case SchedulerPolicy::kPrefillPriority:
      return "prefill_priority";
    case SchedulerPolicy::kStaticChunked:
      return "static_chunked";
  }
  return "?";
}

PerfParams perf_profile(const std::string& name) {
  PerfParams p;
  p.w0 = 0.0;
  p.ws = 1.0;
  p.kB = 4.0;
  p.kS = 0.05;
  if (name == "fast") {
    p.p_max = 20.0;
    p.tau0 = 4.0;
    p.tauB = 0.08;
    p.tauS = 0.0004;
  } else if (name == "medium") {
    p.p_max = 10.0;
    p.tau0 = 5.0;
    p.tauB = 0.12;
    p.tauS = 0.0008;
  } else if (name == "slow") {
    p.p_max = 5.0;
    p.tau0 = 6.0;
    p.tauB = 0.18;
    p.tauS = 0.0016;
  } else {
    throw std::runtime_error("unknown perf profile: " + name);
  }
  return p;
}

BatchPlan schedule_baseline(SchedulerPolicy policy,
                            std::span<const Request* const> wait_q,
                            std::span<const Request* const> run_q,
                            const PerfParams& params, const EngineConfig& cfg) {
  BatchPlan plan;
  if (wait_q.empty() && run_q.empty()) return plan;

  if (policy == SchedulerPolicy::kPrefillPriority) {
    if (!wait_q.empty()) {
      // Whole-prompt prefill batch; decodes stall until the queue drains.
      for (const Request* r : wait_q) {
        const int64_t need = r->remaining_prompt();
        if (plan.b >= cfg.q_max || plan.s + need > cfg.m_max) {
          if (plan.allocations.empty()) {
            throw std::runtime_error(
                "prefill_priority: prompt exceeds m_max; raise m_max for "
                "engine " +
                std::to_string(cfg.engine_id));
          }
          break;
        }
        plan.allocations.push_back({r->id, need, true});
        plan.b += 1;
        plan.s += need;
      }
    } else {
      for (const Request* r : run_q) {
        plan.allocations.push_back({r->id, 1, false});
        plan.b += 1;
        plan.s += 1;
      }
    }
  } else if (policy == SchedulerPolicy::kStaticChunked) {
    const int64_t b = std::min<int64_t>(
        static_cast<int64_t>(run_q.size() + wait_q.size()), cfg.q_max);
    const int64_t s = std::min(cfg.m_max, std::max(cfg.static_budget, b));
    plan.allocations = allocate_tokens(run_q, wait_q, b, s);
    plan.b = static_cast<int64_t>(plan.allocations.size());
    for (const auto& a : plan.allocations) plan.s += a.tokens;
  } else {
    throw std::logic_error("schedule_baseline called with lens policy");
  }

  if (!plan.allocations.empty()) {
    plan.predicted_ms = predict_latency(params, {plan.b, plan.s});
  }
  return plan;
}

EngineSim::EngineSim(const EngineConfig& cfg, const SLOSpec& slo,
                     const SchedulerConfig& sched,
                     const TradeoffModel& tradeoff_init,
                     const LearnerConfig& learner_cfg, uint64_t root_seed)
    : cfg_(cfg),
      slo_(slo),
      sched_(sched),
      learner_(OnlineLearner::default_priors(), learner_cfg),
      tradeoff_(tradeoff_init),
      rng_(substream_seed(root_seed, "engine-noise",
                          static_cast<uint64_t>(cfg.engine_id))) {
  if (!cfg_.valid()) throw std::invalid_argument("invalid EngineConfig");
  // Per-engine batch caps override the cluster scheduler defaults.
  sched_.m_max = cfg_.m_max;
  sched_.q_max = cfg_.q_max;
  if (!sched_.valid()) throw std::invalid_argument("invalid SchedulerConfig");
}

double EngineSim::oracle_latency(const BatchShape& shape) {
  const double base = predict_latency(cfg_.true_params, shape);
  if (cfg_.noise_sigma == 0.0) return base;
  return base * std::exp(cfg_.noise_sigma * rng_.normal());
}

int64_t EngineSim::cached_prefix_tokens(const std::string& session) const {
  const auto it = cache_map_.find(session);
  return it == cache_map_.end() ? 0 : it->second->tokens;
}

bool EngineSim::admit(Request* request, double now_ms) {
  if (request->state != RequestState::kWaiting) {
    throw std::invalid_argument("admit: request not in waiting state");
  }
  if (cfg_.wait_cap > 0 &&
      static_cast<int64_t>(wait_q_.size()) >= cfg_.wait_cap) {
    return false;
  }

  const auto it = cache_map_.find(request->session_id);
  if (it != cache_map_.end()) {
    // A full-prompt hit still leaves one token to process, so the request
    // has a step in which to produce its first token.
    const int64_t credit =
        std::min(it->second->tokens, request->prompt_len - 1);
    const int64_t credit_blocks = blocks_for(credit);
    if (credit > 0 && committed_blocks() + credit_blocks <= cfg_.kv_blocks) {
      cache_blocks_ -= it->second->blocks;
      cache_lru_.erase(it->second);
      cache_map_.erase(it);
      request->prefilled = credit;
      request->precredited = credit;
      pinned_blocks_ += credit_blocks;
    }
  }

  wait_q_.push_back(request);
  active_[request->id] = request;
  (void)now_ms;
  return true;
}

BatchPlan EngineSim::plan_step() {
  std::vector<const Request*> run(run_q_.begin(), run_q_.end());
  std::vector<const Request*> wait(wait_q_.begin(), wait_q_.end());
  const std::span<const Request* const> run_span(run);
  const std::span<const Request* const> wait_span(wait);
  if (cfg_.scheduler_policy == SchedulerPolicy::kLens) {
    return schedule_step(wait_span, run_span, slo_, tradeoff_.model(),
                         learner_.params(), sched_);
  }
  return schedule_baseline(cfg_.scheduler_policy, wait_span, run_span,
                           learner_.params(), cfg_);
}

void EngineSim::trim_for_kv(BatchPlan* plan) {
  std::vector<Allocation> kept;
  kept.reserve(plan->allocations.size());
  bool trimmed = false;
  for (const auto& alloc : plan->allocations) {
    Request* r = active_.at(alloc.request_id);
    if (!alloc.is_prefill || r->kv_admitted) {
      kept.push_back(alloc);  // growth already covered by its reservation
      continue;
    }
    if (trimmed) continue;  // FCFS: keep only the admissible prefix
    const int64_t footprint = blocks_for(r->prompt_len + r->target_decode);
    const int64_t future = footprint - blocks_for(r->prefilled + r->decoded);
    if (committed_blocks() + future <= cfg_.kv_blocks) {
      reserved_blocks_ += future;
      r->kv_admitted = true;
      kept.push_back(alloc);
    } else {
      trimmed = true;
    }
  }
  if (kept.size() == plan->allocations.size()) return;

  plan->allocations = std::move(kept);
  plan->b = static_cast<int64_t>(plan->allocations.size());
  plan->s = 0;
  for (const auto& a : plan->allocations) plan->s += a.tokens;
  plan->predicted_ms =
      plan->b > 0 ? predict_latency(learner_.params(), {plan->b, plan->s})
                  : 0.0;
}

std::optional<double> EngineSim::begin_step(double now_ms) {
  if (busy()) throw std::logic_error("begin_step on a busy engine");
  if (!has_work()) return std::nullopt;

  BatchPlan plan = plan_step();
  if (plan.empty()) return std::nullopt;
  trim_for_kv(&plan);
  if (plan.empty()) return std::nullopt;

  const double actual = oracle_latency({plan.b, plan.s});
  inflight_ = Inflight{std::move(plan), now_ms, actual};
  return actual;
}

StepOutcome EngineSim::complete_step(double now_ms) {
  if (!busy()) throw std::logic_error("complete_step on an idle engine");
  StepOutcome outcome;
  outcome.plan = std::move(inflight_->plan);
  outcome.actual_ms = inflight_->actual_ms;
  inflight_.reset();

  std::vector<CompletionStats> completions;
  for (const auto& alloc : outcome.plan.allocations) {
    Request* r = active_.at(alloc.request_id);
    const int64_t blocks_before = blocks_for(r->prefilled + r->decoded);
    if (alloc.is_prefill) {
      r->prefilled += alloc.tokens;
      r->allocated_prefill += alloc.tokens;
    } else {
      r->decoded += 1;
      r->allocated_decode += 1;
    }
    const int64_t delta = blocks_for(r->prefilled + r->decoded) - blocks_before;
    pinned_blocks_ += delta;
    reserved_blocks_ -= delta;

    if (alloc.is_prefill && r->prefilled == r->prompt_len) {
      r->state = RequestState::kRunning;
      r->first_token_ms = now_ms;
      outcome.first_tokens.push_back(r->id);
      auto it = std::find(wait_q_.begin(), wait_q_.end(), r);
      wait_q_.erase(it);
      run_q_.push_back(r);
    } else if (!alloc.is_prefill && r->decoded == r->target_decode) {
      r->state = RequestState::kFinished;
      outcome.finished.push_back(r->id);

      CompletionStats stats;
      stats.ttft_ms = *r->first_token_ms - r->arrival_ms;
      stats.decode_len = r->target_decode;
      stats.tpot_ms = r->target_decode >= 2
                          ? (now_ms - *r->first_token_ms) /
                                static_cast<double>(r->target_decode - 1)
                          : 0.0;
      completions.push_back(stats);

      const int64_t held = blocks_for(r->prefilled + r->decoded);
      pinned_blocks_ -= held;
      cache_insert(r->session_id, r->prefilled + r->decoded);
      run_q_.erase(std::find(run_q_.begin(), run_q_.end(), r));
      active_.erase(r->id);
    }
  }
  evict_to_fit();
  if (!completions.empty()) tradeoff_.update(completions);
  return outcome;
}

void EngineSim::cache_insert(const std::string& session, int64_t tokens) {
  const auto it = cache_map_.find(session);
  if (it != cache_map_.end()) {
    cache_blocks_ -= it->second->blocks;
    cache_lru_.erase(it->second);
    cache_map_.erase(it);
  }
  const int64_t blocks = blocks_for(tokens);
  cache_lru_.push_back({session, tokens, blocks});
  cache_map_[session] = std::prev(cache_lru_.end());
  cache_blocks_ += blocks;
  evict_to_fit();
}

void EngineSim::evict_to_fit() {
  while (cache_blocks_ > free_blocks() && !cache_lru_.empty()) {
    const PrefixEntry& victim = cache_lru_.front();
    cache_blocks_ -= victim.blocks;
    cache_map_.erase(victim.session_id);
    cache_lru_.pop_front();
  }
}

StateVector EngineSim::export_state(double now_ms) const {
  StateVector sv;
  sv.engine_id = cfg_.engine_id;
  sv.reported_at_ms = now_ms;
  sv.p_max = learner_.params().p_max;

  if (inflight_) {
    const double elapsed = now_ms - inflight_->started_ms;
    sv.l_hat_ms = std::max(0.0, inflight_->plan.predicted_ms - elapsed);
  }

  double pending_prefill = 0.0;
  double queued_demand = 0.0;
  const double l_bar = tradeoff_.model().l_bar;
  for (const Request* r : wait_q_) {
    pending_prefill += static_cast<double>(r->remaining_prompt());
    queued_demand += static_cast<double>(r->remaining_prompt()) + l_bar;
  }
  sv.w_load_tokens =
      pending_prefill + kConcurrencyTokenWeight *
                            static_cast<double>(wait_q_.size() + run_q_.size());
  const double free_tokens =
      static_cast<double>(free_blocks() * cfg_.block_size);
  sv.m_free_tokens = std::max(0.0, free_tokens - queued_demand);
  return sv;
}

void EngineSim::check_kv_consistency() const {
  int64_t pinned = 0;
  for (const auto& [id, r] : active_) {
    pinned += blocks_for(r->prefilled + r->decoded);
  }
  if (pinned != pinned_blocks_) {
    throw std::logic_error("kv accounting drift: pinned mismatch");
  }
  if (pinned_blocks_ + free_blocks() != cfg_.kv_blocks) {
    throw std::logic_error("kv conservation violated");
  }
  if (pinned_blocks_ < 0 || reserved_blocks_ < 0 || cache_blocks_ < 0) {
    throw std::logic_error("negative kv counter");
  }
  if (committed_blocks() > cfg_.kv_blocks) {
    throw std::logic_error("kv oversubscribed");
  }
  if (cache_blocks_ > free_blocks()) {
    throw std::logic_error("prefix cache exceeds free space");
  }
  int64_t cache = 0;
  for (const auto& e : cache_lru_) cache += e.blocks;
  if (cache != cache_blocks_) {
    throw std::logic_error("kv accounting drift: cache mismatch");
  }
}

}  // namespace servesim
