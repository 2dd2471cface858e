#include "servesim/engine.h"

#include <cmath>
#include <cstring>
#include <deque>
#include <vector>

#include "doctest.h"

using namespace servesim;

namespace {

EngineConfig base_config() {
  EngineConfig cfg;
  cfg.engine_id = 0;
  cfg.true_params = perf_profile("medium");
  cfg.noise_sigma = 0.0;
  cfg.kv_blocks = 4096;
  cfg.block_size = 16;
  cfg.m_max = 8192;
  cfg.q_max = 64;
  return cfg;
}

SLOSpec slo() { return {2000.0, 50.0}; }

TradeoffModel tradeoff() {
  TradeoffModel tm;
  tm.alpha_ms = 2000.0;
  tm.beta = 16.0;
  tm.l_bar = 200.0;
  tm.td_min_ms = 2.0;
  return tm;
}

LearnerConfig learner_cfg() { return LearnerConfig{}; }

struct Harness {
  explicit Harness(const EngineConfig& cfg, uint64_t seed = 1)
      : engine(cfg, slo(), SchedulerConfig{}, tradeoff(), learner_cfg(),
               seed) {}

  Request* make_request(const std::string& session, int64_t prompt,
                        int64_t decode, double arrival = 0.0) {
    Request r;
    r.id = next_id++;
    r.session_id = session;
    r.prompt_len = prompt;
    r.target_decode = decode;
    r.arrival_ms = arrival;
    storage.push_back(std::move(r));
    return &storage.back();
  }

  // Runs steps until the engine drains, returning every outcome.
  std::vector<StepOutcome> drain(double start_ms = 0.0) {
    std::vector<StepOutcome> outcomes;
    double now = start_ms;
    while (true) {
      const auto dur = engine.begin_step(now);
      if (!dur) break;
      now += *dur;
      outcomes.push_back(engine.complete_step(now));
      engine.check_kv_consistency();
    }
    return outcomes;
  }

  EngineSim engine;
  std::deque<Request> storage;
  uint64_t next_id = 1;
};

}  // namespace

TEST_CASE("oracle latency equals the model exactly without noise") {
  Harness h(base_config());
  const BatchShape shape{4, 512};
  CHECK(h.engine.oracle_latency(shape) ==
        predict_latency(perf_profile("medium"), shape));
}

TEST_CASE("oracle noise replays bit-identically for one seed") {
  EngineConfig cfg = base_config();
  cfg.noise_sigma = 0.05;
  Harness a(cfg, 99);
  Harness b(cfg, 99);
  for (int i = 0; i < 100; ++i) {
    const double x = a.engine.oracle_latency({2, 64});
    const double y = b.engine.oracle_latency({2, 64});
    CHECK(std::memcmp(&x, &y, sizeof x) == 0);
  }
}

TEST_CASE("oracle log-ratio spread matches the configured sigma") {
  EngineConfig cfg = base_config();
  cfg.noise_sigma = 0.05;
  Harness h(cfg, 7);
  const BatchShape shape{8, 1024};
  const double base = predict_latency(cfg.true_params, shape);
  double sum = 0.0;
  double sum2 = 0.0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const double ratio = std::log(h.engine.oracle_latency(shape) / base);
    sum += ratio;
    sum2 += ratio * ratio;
  }
  const double mean = sum / n;
  const double std_dev = std::sqrt(sum2 / n - mean * mean);
  CHECK(std_dev == doctest::Approx(0.05).epsilon(0.1));
  CHECK(std::fabs(std_dev - 0.05) <= 0.005);
}

TEST_CASE("admit queues a fresh session with no credit") {
  Harness h(base_config());
  Request* r = h.make_request("s1", 512, 8);
  CHECK(h.engine.admit(r, 0.0));
  CHECK(h.engine.wait_queue().size() == 1);
  CHECK(r->prefilled == 0);
}

TEST_CASE("admit rejects once the wait cap is hit") {
  EngineConfig cfg = base_config();
  cfg.wait_cap = 2;
  Harness h(cfg);
  CHECK(h.engine.admit(h.make_request("a", 10, 1), 0.0));
  CHECK(h.engine.admit(h.make_request("b", 10, 1), 0.0));
  CHECK_FALSE(h.engine.admit(h.make_request("c", 10, 1), 0.0));
}

TEST_CASE("a finished session leaves a reusable prefix") {
  Harness h(base_config());
  Request* first = h.make_request("chat", 3900, 100);
  REQUIRE(h.engine.admit(first, 0.0));
  h.drain();
  CHECK(first->state == RequestState::kFinished);
  CHECK(h.engine.cached_prefix_tokens("chat") == 4000);

  // Follow-up turn: history plus a little new text.
  Request* second = h.make_request("chat", 4089, 10);
  REQUIRE(h.engine.admit(second, 1000.0));
  CHECK(second->prefilled == 4000);
  CHECK(second->precredited == 4000);
  CHECK(h.engine.cached_prefix_tokens("chat") == 0);  // consumed
  h.drain(1000.0);
  CHECK(second->state == RequestState::kFinished);
  // only the uncached tail was ever scheduled as prefill work
  CHECK(second->allocated_prefill == 4089 - 4000);
}

TEST_CASE("an evicted prefix gives no credit") {
  EngineConfig cfg = base_config();
  cfg.kv_blocks = 40;  // 640 tokens: too tight to keep the old prefix
  Harness h(cfg);
  Request* first = h.make_request("chat", 128, 16);
  REQUIRE(h.engine.admit(first, 0.0));
  h.drain();
  CHECK(h.engine.cached_prefix_tokens("chat") == 144);

  // 35 of the 40 blocks pinned while this one runs; the old prefix goes.
  Request* big = h.make_request("other", 544, 16);
  REQUIRE(h.engine.admit(big, 0.0));
  h.drain();
  CHECK(h.engine.cached_prefix_tokens("chat") == 0);

  Request* followup = h.make_request("chat", 200, 8);
  REQUIRE(h.engine.admit(followup, 0.0));
  CHECK(followup->prefilled == 0);
}

TEST_CASE("an idle engine schedules nothing") {
  Harness h(base_config());
  CHECK_FALSE(h.engine.begin_step(0.0).has_value());
  CHECK_FALSE(h.engine.busy());
}

TEST_CASE("a single-chunk prefill completes and reports the first token") {
  EngineConfig cfg = base_config();
  cfg.scheduler_policy = SchedulerPolicy::kStaticChunked;
  cfg.static_budget = 512;
  Harness h(cfg);
  Request* r = h.make_request("s", 256, 4);
  REQUIRE(h.engine.admit(r, 0.0));
  const auto dur = h.engine.begin_step(0.0);
  REQUIRE(dur.has_value());
  const BatchPlan& plan = *h.engine.inflight_plan();
  CHECK(plan.b == 1);
  CHECK(plan.s == 256);
  const auto outcome = h.engine.complete_step(*dur);
  REQUIRE(outcome.first_tokens.size() == 1);
  CHECK(outcome.first_tokens[0] == r->id);
  CHECK(r->state == RequestState::kRunning);
  CHECK(*r->first_token_ms == *dur);
}

TEST_CASE("requests finish after exactly target_decode decode steps") {
  EngineConfig cfg = base_config();
  cfg.scheduler_policy = SchedulerPolicy::kStaticChunked;
  cfg.static_budget = 512;
  Harness h(cfg);
  Request* r = h.make_request("s", 64, 5);
  REQUIRE(h.engine.admit(r, 0.0));
  const auto outcomes = h.drain();
  CHECK(r->state == RequestState::kFinished);
  CHECK(r->allocated_prefill == 64);
  CHECK(r->allocated_decode == 5);
  // prefill step + five decode steps
  CHECK(outcomes.size() == 6);
  CHECK(outcomes.back().finished.size() == 1);
}

TEST_CASE("kv pressure trims new admissions but never touches decodes") {
  EngineConfig cfg = base_config();
  cfg.scheduler_policy = SchedulerPolicy::kStaticChunked;
  cfg.static_budget = 512;
  // footprints: runner 2 blocks, each waiter 5 blocks; 11 total blocks let
  // the runner and one waiter through and exactly block the second waiter.
  cfg.kv_blocks = 11;
  Harness h(cfg);

  Request* runner = h.make_request("r", 16, 16);
  REQUIRE(h.engine.admit(runner, 0.0));
  const auto d0 = h.engine.begin_step(0.0);
  REQUIRE(d0.has_value());
  h.engine.complete_step(*d0);
  CHECK(runner->state == RequestState::kRunning);

  Request* w1 = h.make_request("w1", 64, 16);
  Request* w2 = h.make_request("w2", 64, 16);
  REQUIRE(h.engine.admit(w1, 1.0));
  REQUIRE(h.engine.admit(w2, 1.0));

  const auto d1 = h.engine.begin_step(*d0);
  REQUIRE(d1.has_value());
  const BatchPlan& plan = *h.engine.inflight_plan();
  REQUIRE(plan.allocations.size() == 2);  // decode + first waiter only
  CHECK_FALSE(plan.allocations[0].is_prefill);
  CHECK(plan.allocations[0].request_id == runner->id);
  CHECK(plan.allocations[1].request_id == w1->id);
  CHECK(w2->kv_admitted == false);
  h.engine.complete_step(*d0 + *d1);
  h.engine.check_kv_consistency();
}

TEST_CASE("state export matches the specified composition") {
  EngineConfig cfg = base_config();
  cfg.kv_blocks = 625;  // 10000 tokens
  cfg.block_size = 16;
  Harness h(cfg);

  SUBCASE("idle engine") {
    const StateVector sv = h.engine.export_state(5.0);
    CHECK(sv.l_hat_ms == 0.0);
    CHECK(sv.w_load_tokens == 0.0);
    CHECK(sv.m_free_tokens == 10000.0);
    CHECK(sv.p_max == h.engine.learner().params().p_max);
    CHECK(sv.reported_at_ms == 5.0);
  }

  SUBCASE("one waiting request discounts its demand estimate") {
    Request* r = h.make_request("s", 100, 8);
    REQUIRE(h.engine.admit(r, 0.0));
    const StateVector sv = h.engine.export_state(0.0);
    // prompt 100 plus the expected decode length 200
    CHECK(sv.m_free_tokens == doctest::Approx(10000.0 - 300.0));
    // pending prefill plus one queued request at 32 tokens of pressure
    CHECK(sv.w_load_tokens == doctest::Approx(100.0 + 32.0));
  }

  SUBCASE("remaining step time counts down") {
    Request* r = h.make_request("s", 100, 8);
    REQUIRE(h.engine.admit(r, 0.0));
    REQUIRE(h.engine.begin_step(0.0).has_value());
    const double predicted = h.engine.inflight_plan()->predicted_ms;
    const StateVector sv = h.engine.export_state(15.0);
    CHECK(sv.l_hat_ms == doctest::Approx(std::max(0.0, predicted - 15.0)));
  }
}

TEST_CASE("prefill_priority batches whole prompts and starves decodes") {
  EngineConfig cfg = base_config();
  std::deque<Request> storage;
  std::vector<const Request*> run;
  std::vector<const Request*> wait;
  for (int i = 0; i < 5; ++i) {
    Request r;
    r.id = 100 + i;
    r.prompt_len = 64;
    r.prefilled = 64;
    r.target_decode = 100;
    r.state = RequestState::kRunning;
    storage.push_back(std::move(r));
    run.push_back(&storage.back());
  }
  for (int64_t prompt : {300, 400}) {
    Request r;
    r.id = static_cast<uint64_t>(prompt);
    r.prompt_len = prompt;
    r.target_decode = 10;
    storage.push_back(std::move(r));
    wait.push_back(&storage.back());
  }
  const auto plan = schedule_baseline(SchedulerPolicy::kPrefillPriority, wait,
                                      run, perf_profile("fast"), cfg);
  REQUIRE(plan.b == 2);
  CHECK(plan.s == 700);
  for (const auto& a : plan.allocations) CHECK(a.is_prefill);

  wait.clear();
  const auto decode_plan = schedule_baseline(
      SchedulerPolicy::kPrefillPriority, wait, run, perf_profile("fast"), cfg);
  CHECK(decode_plan.b == 5);
  CHECK(decode_plan.s == 5);
}

TEST_CASE("static_chunked runs decodes first and chunks to its budget") {
  EngineConfig cfg = base_config();
  cfg.static_budget = 512;
  std::deque<Request> storage;
  std::vector<const Request*> run;
  std::vector<const Request*> wait;
  for (int i = 0; i < 3; ++i) {
    Request r;
    r.id = 1 + i;
    r.prompt_len = 32;
    r.prefilled = 32;
    r.target_decode = 100;
    r.state = RequestState::kRunning;
    storage.push_back(std::move(r));
    run.push_back(&storage.back());
  }
  Request w;
  w.id = 50;
  w.prompt_len = 1000;
  w.target_decode = 10;
  storage.push_back(std::move(w));
  wait.push_back(&storage.back());

  const auto plan = schedule_baseline(SchedulerPolicy::kStaticChunked, wait,
                                      run, perf_profile("fast"), cfg);
  REQUIRE(plan.b == 4);
  CHECK(plan.s == 512);
  CHECK(plan.allocations[3].tokens == 509);

  run.clear();
  wait.clear();
  const auto empty_plan = schedule_baseline(
      SchedulerPolicy::kStaticChunked, wait, run, perf_profile("fast"), cfg);
  CHECK(empty_plan.empty());
}

TEST_CASE("step outcomes replay bit-identically for one seed") {
  EngineConfig cfg = base_config();
  cfg.noise_sigma = 0.05;
  auto run_once = [&] {
    Harness h(cfg, 321);
    for (int i = 0; i < 10; ++i) {
      REQUIRE(h.engine.admit(
          h.make_request("s" + std::to_string(i), 100 + 17 * i, 4 + i), 0.0));
    }
    std::vector<double> latencies;
    for (const auto& o : h.drain()) latencies.push_back(o.actual_ms);
    return latencies;
  };
  const auto a = run_once();
  const auto b = run_once();
  REQUIRE(a.size() == b.size());
  CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
}

TEST_CASE("kv accounting survives a mixed random workout") {
  EngineConfig cfg = base_config();
  cfg.kv_blocks = 256;
  cfg.noise_sigma = 0.05;
  Harness h(cfg, 17);
  Rng rng(909);
  double now = 0.0;
  uint64_t admitted = 0;
  for (int round = 0; round < 200; ++round) {
    if (rng.below(3) != 0) {
      const std::string session = "s" + std::to_string(rng.below(10));
      Request* r = h.make_request(session, 1 + rng.below(600),
                                  1 + rng.below(40), now);
      if (h.engine.admit(r, now)) ++admitted;
    }
    if (!h.engine.busy()) {
      const auto dur = h.engine.begin_step(now);
      if (dur) {
        now += *dur;
        h.engine.complete_step(now);
      } else {
        now += 1.0;
      }
    }
    h.engine.check_kv_consistency();
  }
  // drain the rest and verify token conservation per finished request
  h.drain(now);
  for (const auto& r : h.storage) {
    if (r.state == RequestState::kFinished) {
      CHECK(r.allocated_prefill + r.precredited == r.prompt_len);
      CHECK(r.allocated_decode == r.target_decode);
    }
  }
}
