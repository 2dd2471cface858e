#include "servesim/lens.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace servesim {

TargetLatency target_latency(int64_t wait_count, const SLOSpec& slo,
                             const TradeoffModel& tm, double q_ref) {
  if (!slo.valid() || !tm.valid() || q_ref <= 0.0) {
    throw std::invalid_argument("target_latency: invalid inputs");
  }
  const double td_tpot = slo.tpot_slo_ms;
  const double td_ttft = (tm.alpha_ms - slo.ttft_slo_ms) / tm.beta;

  TargetLatency out;
  out.slo_risk = td_ttft > td_tpot;  // empty feasible interval
  if (tm.l_bar > tm.beta) {
    out.target_ms = std::min(td_tpot, std::max(tm.td_min_ms, td_ttft));
  } else {
    out.target_ms = td_tpot;
  }
  if (wait_count > 0) {
    const double relax =
        std::min(1.0, static_cast<double>(wait_count) / q_ref);
    out.target_ms += relax * (td_tpot - out.target_ms);
  }
  return out;
}

int64_t binary_search_budget(int64_t b, double target_ms,
                             const PerfParams& params,
                             const SchedulerConfig& cfg, int64_t s_cap) {
  if (b < 1 || b > cfg.q_max || !(target_ms > 0.0)) {
    throw std::invalid_argument("binary_search_budget: invalid inputs");
  }
  if (s_cap < 0) s_cap = cfg.m_max;
  s_cap = std::max(b, std::min(s_cap, cfg.m_max));

  int64_t lo = b;
  int64_t hi = s_cap;
  int64_t budget = b;
  for (int iter = 0; iter < cfg.n_search_iters; ++iter) {
    if (lo > hi) break;
    const int64_t mid = (lo + hi) / 2;
    if (predict_latency(params, {b, mid}) <= target_ms) {
      budget = mid;
      lo = mid + 1;
    } else {
      hi = mid - 1;
    }
  }
  return budget;
}

std::vector<Allocation> allocate_tokens(std::span<const Request* const> run_q,
                                        std::span<const Request* const> wait_q,
                                        int64_t b, int64_t s) {
  if (b < static_cast<int64_t>(run_q.size()) || s < b) {
    throw std::invalid_argument("allocate_tokens: budget below queue needs");
  }
  std::vector<Allocation> out;
  out.reserve(static_cast<size_t>(b));
  for (const Request* r : run_q) {
    out.push_back({r->id, 1, false});
  }
  int64_t slots = b - static_cast<int64_t>(run_q.size());
  int64_t budget = s - static_cast<int64_t>(run_q.size());
  for (const Request* r : wait_q) {
    if (slots <= 0 || budget <= 0) break;
    const int64_t take = std::min(r->remaining_prompt(), budget);
    out.push_back({r->id, take, true});
    --slots;
    budget -= take;
  }
  return out;
}

namespace {

BatchPlan realize(std::vector<Allocation> alloc, const PerfParams& params,
                  double target_ms) {
  BatchPlan plan;
  plan.allocations = std::move(alloc);
  plan.b = static_cast<int64_t>(plan.allocations.size());
  for (const auto& a : plan.allocations) plan.s += a.tokens;
  plan.predicted_ms = predict_latency(params, {plan.b, plan.s});
  plan.target_ms = target_ms;
  return plan;
}

}  // namespace

BatchPlan schedule_step(std::span<const Request* const> wait_q,
                        std::span<const Request* const> run_q,
                        const SLOSpec& slo, const TradeoffModel& tm,
                        const PerfParams& params, const SchedulerConfig& cfg) {
  if (!cfg.valid()) throw std::invalid_argument("invalid SchedulerConfig");
  BatchPlan plan;
  if (wait_q.empty() && run_q.empty()) return plan;

  const auto target =
      target_latency(static_cast<int64_t>(wait_q.size()), slo, tm, cfg.q_ref);

  const int64_t run_count = static_cast<int64_t>(run_q.size());
  if (run_count > cfg.q_max) {
    // Transient overload: emit a truncated decode-only plan; the remaining
    // running requests wait one step.
    std::vector<Allocation> alloc;
    alloc.reserve(static_cast<size_t>(cfg.q_max));
    for (int64_t i = 0; i < cfg.q_max; ++i) alloc.push_back({run_q[i]->id, 1, false});
    plan = realize(std::move(alloc), params, target.target_ms);
    plan.overload = true;
    return plan;
  }

  // Token supply for each candidate batch size: one decode token per running
  // request plus the remaining prompts of the first (B - |run|) waiters.
  std::vector<int64_t> wait_prefix(wait_q.size() + 1, 0);
  for (size_t i = 0; i < wait_q.size(); ++i) {
    wait_prefix[i + 1] = wait_prefix[i] + wait_q[i]->remaining_prompt();
  }

  const int64_t b_lo = std::max<int64_t>(run_count, 1);
  const int64_t b_hi =
      std::min(run_count + static_cast<int64_t>(wait_q.size()), cfg.q_max);

  double min_error = std::numeric_limits<double>::infinity();
  for (int64_t b = b_lo; b <= b_hi; ++b) {
    const int64_t avail = run_count + wait_prefix[static_cast<size_t>(b - run_count)];
    const int64_t s_cap = std::min(cfg.m_max, avail);
    const int64_t budget =
        binary_search_budget(b, target.target_ms, params, cfg, s_cap);
    BatchPlan candidate = realize(allocate_tokens(run_q, wait_q, b, budget),
                                  params, target.target_ms);
    const double error = std::fabs(candidate.predicted_ms - target.target_ms);
    if (error < min_error) {
      min_error = error;
      plan = std::move(candidate);
      if (min_error < target.target_ms * cfg.eps_ratio) break;
    }
  }
  return plan;
}

void TradeoffEstimator::update(std::span<const CompletionStats> completed) {
  for (const auto& c : completed) {
    model_.l_bar = std::max(
        1.0, model_.l_bar + kEmaSmoothing * (static_cast<double>(c.decode_len) -
                                             model_.l_bar));
    if (c.decode_len >= 2) {
      window_.push_back(c);
      if (window_.size() > kWindow) window_.pop_front();
    }
  }
  if (window_.size() < 2) return;

  double mean_tp = 0.0;
  double mean_td = 0.0;
  for (const auto& c : window_) {
    mean_tp += c.ttft_ms;
    mean_td += c.tpot_ms;
  }
  const double n = static_cast<double>(window_.size());
  mean_tp /= n;
  mean_td /= n;

  double var_td = 0.0;
  double cov = 0.0;
  for (const auto& c : window_) {
    const double dd = c.tpot_ms - mean_td;
    var_td += dd * dd;
    cov += dd * (c.ttft_ms - mean_tp);
  }
  // The line is an extrapolation across operating points. A cloud sitting
  // at one TPOT level cannot identify the slope, and a noise-fit slope
  // swings the target violently, so require real spread before refitting.
  const double std_td = std::sqrt(var_td / n);
  if (std_td <= 0.15 * mean_td) {
    ++degenerate_updates_;
    return;
  }
  const double slope = cov / var_td;
  model_.beta = std::max(kBetaMin, -slope);
  model_.alpha_ms = mean_tp + model_.beta * mean_td;
}

}  // namespace servesim
