#include "servesim/lens.h"

#include <cmath>
#include <deque>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "servesim/engine.h"
#include "servesim/rng.h"

using namespace servesim;

namespace {

SLOSpec slo_12ms() { return {40.0, 12.0}; }

TradeoffModel tm_base() {
  TradeoffModel tm;
  tm.alpha_ms = 100.0;
  tm.beta = 10.0;
  tm.l_bar = 200.0;
  tm.td_min_ms = 1.0;
  return tm;
}

struct Queues {
  std::deque<Request> storage;
  std::vector<const Request*> run;
  std::vector<const Request*> wait;

  Request* add_running(uint64_t id, int64_t prompt) {
    Request r;
    r.id = id;
    r.prompt_len = prompt;
    r.prefilled = prompt;
    r.target_decode = 1000;
    r.state = RequestState::kRunning;
    storage.push_back(std::move(r));
    run.push_back(&storage.back());
    return &storage.back();
  }

  Request* add_waiting(uint64_t id, int64_t prompt, int64_t prefilled = 0) {
    Request r;
    r.id = id;
    r.prompt_len = prompt;
    r.prefilled = prefilled;
    r.target_decode = 100;
    r.state = RequestState::kWaiting;
    storage.push_back(std::move(r));
    wait.push_back(&storage.back());
    return &storage.back();
  }
};

// Exhaustive scan for the largest feasible budget, used as the oracle for
// the bisection.
int64_t scan_budget(int64_t b, double target, const PerfParams& p,
                    int64_t s_cap) {
  int64_t best = b;
  for (int64_t s = b; s <= s_cap; ++s) {
    if (predict_latency(p, {b, s}) <= target) best = s;
  }
  return best;
}

}  // namespace

TEST_CASE("target_latency picks the TTFT boundary for long outputs") {
  const auto t = target_latency(0, slo_12ms(), tm_base(), 16.0);
  CHECK(t.target_ms == doctest::Approx(6.0));  // (100 - 40) / 10
  CHECK_FALSE(t.slo_risk);
}

TEST_CASE("target_latency picks the TPOT bound for short outputs") {
  TradeoffModel tm = tm_base();
  tm.l_bar = 5.0;  // below beta
  const auto t = target_latency(0, slo_12ms(), tm, 16.0);
  CHECK(t.target_ms == doctest::Approx(12.0));
}

TEST_CASE("an empty feasible interval falls back to the TPOT bound") {
  TradeoffModel tm = tm_base();
  tm.beta = 2.0;  // td_ttft = 30 > 12
  const auto t = target_latency(0, slo_12ms(), tm, 16.0);
  CHECK(t.target_ms == doctest::Approx(12.0));
  CHECK(t.slo_risk);
}

TEST_CASE("a full waiting queue relaxes the target to the TPOT bound") {
  const auto t = target_latency(16, slo_12ms(), tm_base(), 16.0);
  CHECK(t.target_ms == doctest::Approx(12.0));
}

TEST_CASE("the safety floor applies when the TTFT boundary dives") {
  TradeoffModel tm = tm_base();
  tm.alpha_ms = 30.0;  // td_ttft negative
  tm.td_min_ms = 2.0;
  const auto t = target_latency(0, slo_12ms(), tm, 16.0);
  CHECK(t.target_ms == doctest::Approx(2.0));
}

TEST_CASE("target_latency is nondecreasing in the waiting-queue size") {
  Rng rng(19);
  for (int i = 0; i < 200; ++i) {
    TradeoffModel tm;
    tm.alpha_ms = rng.uniform() * 300.0;
    tm.beta = 0.5 + rng.uniform() * 30.0;
    tm.l_bar = 1.0 + rng.uniform() * 400.0;
    tm.td_min_ms = 0.5 + rng.uniform() * 4.0;
    SLOSpec slo{10.0 + rng.uniform() * 3000.0, 1.0 + rng.uniform() * 50.0};
    double prev = 0.0;
    for (int64_t wait = 0; wait <= 40; wait += 4) {
      const double t = target_latency(wait, slo, tm, 16.0).target_ms;
      if (wait > 0) CHECK(t >= prev - 1e-12);
      prev = t;
    }
  }
}

TEST_CASE("binary search returns the cap when everything is feasible") {
  SchedulerConfig cfg;
  cfg.n_search_iters = 20;
  CHECK(binary_search_budget(1, 1e9, perf_profile("fast"), cfg) == cfg.m_max);
}

TEST_CASE("binary search returns b when even the minimal batch overshoots") {
  SchedulerConfig cfg;
  cfg.n_search_iters = 20;
  const PerfParams p = perf_profile("slow");
  const double floor = predict_latency(p, {8, 8});
  CHECK(binary_search_budget(8, floor * 0.5, p, cfg) == 8);
}

TEST_CASE("binary search matches the exhaustive scan") {
  Rng rng(29);
  SchedulerConfig cfg;
  cfg.n_search_iters = 20;
  cfg.m_max = 4096;
  for (int i = 0; i < 200; ++i) {
    PerfParams p = perf_profile(i % 2 ? "fast" : "medium");
    p.tau0 = rng.uniform() * 10.0;
    p.tauB = rng.uniform();
    p.kS = 0.01 + rng.uniform() * 0.2;
    const int64_t b = 1 + static_cast<int64_t>(rng.below(32));
    const double target = predict_latency(p, {b, b}) *
                          (0.5 + rng.uniform() * 4.0);
    CHECK(binary_search_budget(b, target, p, cfg) ==
          scan_budget(b, target, p, cfg.m_max));
  }
}

TEST_CASE("allocate_tokens: decode-only when budgets just cover the run queue") {
  Queues q;
  q.add_running(1, 100);
  q.add_running(2, 100);
  q.add_running(3, 100);
  const auto alloc = allocate_tokens(q.run, q.wait, 3, 3);
  REQUIRE(alloc.size() == 3);
  for (const auto& a : alloc) {
    CHECK(a.tokens == 1);
    CHECK_FALSE(a.is_prefill);
  }
}

TEST_CASE("allocate_tokens chunks a long prompt to the budget") {
  Queues q;
  q.add_waiting(1, 500);
  const auto alloc = allocate_tokens(q.run, q.wait, 1, 256);
  REQUIRE(alloc.size() == 1);
  CHECK(alloc[0].tokens == 256);
  CHECK(alloc[0].is_prefill);
}

TEST_CASE("allocate_tokens follows the greedy FCFS trace") {
  Queues q;
  q.add_running(1, 64);
  q.add_running(2, 64);
  q.add_waiting(3, 100);
  q.add_waiting(4, 300);
  const auto alloc = allocate_tokens(q.run, q.wait, 4, 352);
  REQUIRE(alloc.size() == 4);
  CHECK(alloc[0].tokens == 1);
  CHECK(alloc[1].tokens == 1);
  CHECK(alloc[2].request_id == 3);
  CHECK(alloc[2].tokens == 100);
  CHECK(alloc[3].request_id == 4);
  CHECK(alloc[3].tokens == 250);  // budget exhausted
}

TEST_CASE("allocate_tokens admits someone whenever it has slack") {
  Rng rng(31);
  for (int i = 0; i < 300; ++i) {
    Queues q;
    const int n_run = static_cast<int>(rng.below(6));
    const int n_wait = 1 + static_cast<int>(rng.below(6));
    for (int r = 0; r < n_run; ++r) q.add_running(100 + r, 64);
    for (int w = 0; w < n_wait; ++w) {
      q.add_waiting(200 + w, 1 + static_cast<int64_t>(rng.below(512)));
    }
    const int64_t b = n_run + 1 + static_cast<int64_t>(rng.below(4));
    const int64_t s =
        std::max<int64_t>(b, n_run + 1 + static_cast<int64_t>(rng.below(1024)));
    const auto alloc = allocate_tokens(q.run, q.wait, b, s);
    // both budgets had room beyond the decodes, so at least one waiter runs
    CHECK(static_cast<int>(alloc.size()) > n_run);
    int64_t total = 0;
    for (const auto& a : alloc) total += a.tokens;
    CHECK(total <= s);
  }
}

TEST_CASE("schedule_step returns an empty plan for empty queues") {
  Queues q;
  const auto plan = schedule_step(q.wait, q.run, slo_12ms(), tm_base(),
                                  perf_profile("fast"), SchedulerConfig{});
  CHECK(plan.empty());
}

TEST_CASE("schedule_step with one running request plans a single decode") {
  Queues q;
  q.add_running(7, 128);
  const auto plan = schedule_step(q.wait, q.run, slo_12ms(), tm_base(),
                                  perf_profile("fast"), SchedulerConfig{});
  REQUIRE(plan.b == 1);
  CHECK(plan.s == 1);
  CHECK(plan.allocations[0].request_id == 7);
}

TEST_CASE("schedule_step matches a full-scan candidate search") {
  const PerfParams params = perf_profile("medium");
  SchedulerConfig cfg;
  cfg.eps_ratio = 1e-12;  // effectively disable early exit
  cfg.n_search_iters = 20;

  Rng rng(37);
  for (int trial = 0; trial < 50; ++trial) {
    Queues q;
    for (int i = 0; i < 4; ++i) q.add_running(i, 64);
    for (int i = 0; i < 6; ++i) {
      q.add_waiting(10 + i, 1 + static_cast<int64_t>(rng.below(2000)));
    }
    const auto target =
        target_latency(static_cast<int64_t>(q.wait.size()), slo_12ms(),
                       tm_base(), cfg.q_ref);

    // Independent re-derivation of the candidate sweep.
    double best_err = 1e300;
    int64_t best_b = -1;
    for (int64_t b = 4; b <= 10; ++b) {
      int64_t avail = 4;
      for (int64_t w = 0; w < b - 4; ++w) {
        avail += q.wait[static_cast<size_t>(w)]->remaining_prompt();
      }
      const int64_t s_cap = std::min(cfg.m_max, avail);
      const int64_t budget =
          binary_search_budget(b, target.target_ms, params, cfg, s_cap);
      const auto alloc = allocate_tokens(q.run, q.wait, b, budget);
      int64_t s_act = 0;
      for (const auto& a : alloc) s_act += a.tokens;
      const double err = std::fabs(
          predict_latency(params,
                          {static_cast<int64_t>(alloc.size()), s_act}) -
          target.target_ms);
      if (err < best_err) {
        best_err = err;
        best_b = static_cast<int64_t>(alloc.size());
      }
    }

    const auto plan =
        schedule_step(q.wait, q.run, slo_12ms(), tm_base(), params, cfg);
    CHECK(plan.b == best_b);
    CHECK(std::fabs(plan.predicted_ms - plan.target_ms) ==
          doctest::Approx(best_err));
  }
}

TEST_CASE("early exit still satisfies the error contract") {
  const PerfParams params = perf_profile("medium");
  SchedulerConfig strict;
  strict.eps_ratio = 1e-12;
  strict.n_search_iters = 20;
  SchedulerConfig eager = strict;
  eager.eps_ratio = 0.05;

  Rng rng(41);
  for (int trial = 0; trial < 50; ++trial) {
    Queues q;
    for (int i = 0; i < 4; ++i) q.add_running(i, 64);
    for (int i = 0; i < 6; ++i) {
      q.add_waiting(10 + i, 1 + static_cast<int64_t>(rng.below(2000)));
    }
    const auto full = schedule_step(q.wait, q.run, slo_12ms(), tm_base(),
                                    params, strict);
    const auto fast = schedule_step(q.wait, q.run, slo_12ms(), tm_base(),
                                    params, eager);
    const double full_err = std::fabs(full.predicted_ms - full.target_ms);
    const double fast_err = std::fabs(fast.predicted_ms - fast.target_ms);
    CHECK((fast_err <= full_err + 1e-12 ||
           fast_err <= fast.target_ms * eager.eps_ratio));
  }
}

TEST_CASE("an oversized running queue degrades to a truncated decode plan") {
  SchedulerConfig cfg;
  cfg.q_max = 4;
  Queues q;
  for (int i = 0; i < 6; ++i) q.add_running(i, 32);
  const auto plan = schedule_step(q.wait, q.run, slo_12ms(), tm_base(),
                                  perf_profile("fast"), cfg);
  CHECK(plan.overload);
  CHECK(plan.b == 4);
  CHECK(plan.s == 4);
}

TEST_CASE("plans respect every feasibility invariant") {
  Rng rng(47);
  for (int trial = 0; trial < 200; ++trial) {
    SchedulerConfig cfg;
    cfg.q_max = 1 + static_cast<int64_t>(rng.below(16));
    cfg.m_max = cfg.q_max + static_cast<int64_t>(rng.below(4096));
    Queues q;
    const int n_run = static_cast<int>(rng.below(cfg.q_max + 1));
    const int n_wait = static_cast<int>(rng.below(8));
    for (int i = 0; i < n_run; ++i) q.add_running(i, 64);
    for (int i = 0; i < n_wait; ++i) {
      q.add_waiting(100 + i, 1 + static_cast<int64_t>(rng.below(3000)));
    }
    if (n_run == 0 && n_wait == 0) continue;
    const auto plan = schedule_step(q.wait, q.run, slo_12ms(), tm_base(),
                                    perf_profile("slow"), cfg);
    CHECK(plan.b <= cfg.q_max);
    CHECK(plan.s <= cfg.m_max);
    CHECK(plan.b == static_cast<int64_t>(plan.allocations.size()));
    int64_t total = 0;
    size_t decodes = 0;
    for (const auto& a : plan.allocations) {
      total += a.tokens;
      if (!a.is_prefill) {
        CHECK(a.tokens == 1);
        ++decodes;
      } else {
        const Request* r = nullptr;
        for (const auto& req : q.storage) {
          if (req.id == a.request_id) r = &req;
        }
        REQUIRE(r != nullptr);
        CHECK(a.tokens >= 1);
        CHECK(a.tokens <= r->remaining_prompt());
      }
    }
    CHECK(total == plan.s);
    // continuous batching: every running request keeps its decode slot
    CHECK(decodes == q.run.size());
  }
}

TEST_CASE("tradeoff estimator recovers an exact line") {
  TradeoffEstimator est(tm_base());
  std::vector<CompletionStats> batch;
  for (int i = 1; i <= 40; ++i) {
    const double td = static_cast<double>(i);
    batch.push_back({200.0 - 8.0 * td, td, 64});
  }
  est.update(batch);
  CHECK(est.model().alpha_ms == doctest::Approx(200.0).epsilon(1e-9));
  CHECK(est.model().beta == doctest::Approx(8.0).epsilon(1e-9));
}

TEST_CASE("tradeoff estimator flags zero TPOT variance") {
  TradeoffEstimator est(tm_base());
  std::vector<CompletionStats> batch;
  for (int i = 0; i < 10; ++i) {
    batch.push_back({50.0 + i, 7.5, 64});
  }
  est.update(batch);
  CHECK(est.degenerate_updates() == 1);
  CHECK(est.model().alpha_ms == doctest::Approx(tm_base().alpha_ms));
  CHECK(est.model().beta == doctest::Approx(tm_base().beta));
}

TEST_CASE("decode-length EMA follows the stated smoothing") {
  TradeoffModel tm = tm_base();
  tm.l_bar = 100.0;
  TradeoffEstimator est(tm);
  std::vector<CompletionStats> batch = {
      {50.0, 5.0, 100}, {50.0, 6.0, 100}, {50.0, 7.0, 300}};
  est.update(batch);
  // 100 -> 100 -> 100 -> 100 + 0.05 * 200 = 110
  CHECK(est.model().l_bar == doctest::Approx(110.0));
}

TEST_CASE("beta stays above its floor on inverted data") {
  TradeoffEstimator est(tm_base());
  std::vector<CompletionStats> batch;
  for (int i = 1; i <= 20; ++i) {
    const double td = static_cast<double>(i);
    batch.push_back({10.0 + 3.0 * td, td, 64});  // ttft rising with tpot
  }
  est.update(batch);
  CHECK(est.model().beta == doctest::Approx(1e-3));
}
