#include "servesim/sim.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <queue>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace servesim {
namespace {

using nlohmann::json;
using nlohmann::ordered_json;

int64_t to_us(double ms) { return llround(ms * 1000.0); }
double to_ms(int64_t us) { return static_cast<double>(us) / 1000.0; }

uint64_t fnv1a(uint64_t h, uint64_t v) {
  for (int i = 0; i < 8; ++i) {
    h ^= (v >> (8 * i)) & 0xff;
    h *= 0x100000001b3ULL;
  }
  return h;
}

enum class EventKind : uint8_t {
  kArrival = 0,
  kStepComplete = 1,
  kStateReport = 2,
  kLearnerUpdate = 3,
  kReport = 4,  // delayed delivery of a state report to the router
};

struct SimEvent {
  int64_t time_us = 0;
  uint64_t sequence = 0;  // total order among equal timestamps
  EventKind kind = EventKind::kArrival;
  int engine_id = -1;
  uint64_t request_id = 0;
  LatencySample sample;  // learner_update payload
  EngineReport report;   // report payload
};

struct EventAfter {
  bool operator()(const SimEvent& a, const SimEvent& b) const {
    if (a.time_us != b.time_us) return a.time_us > b.time_us;
    return a.sequence > b.sequence;
  }
};

class Simulation {
 public:
  explicit Simulation(const RunConfig& cfg) : cfg_(cfg) { cfg_.validate(); }

  RunResult run();

 private:
  void push(SimEvent ev) {
    ev.sequence = next_sequence_++;
    queue_.push(std::move(ev));
  }

  void build_workload();
  void try_begin_step(int engine_id, int64_t now_us);
  void handle_arrival(const SimEvent& ev);
  void handle_step_complete(const SimEvent& ev);
  void handle_state_report(const SimEvent& ev);
  int64_t active_requests() const {
    return arrived_ - rejected_ - static_cast<int64_t>(records_.size());
  }
  void write_outputs(const RunResult& result) const;
  std::string build_summary(const RunResult& result) const;

  RunConfig cfg_;
  std::deque<Request> requests_;
  std::vector<TraceRecord> trace_;
  std::vector<std::unique_ptr<EngineSim>> engines_;
  std::unordered_map<int, size_t> engine_index_;
  std::unique_ptr<Router> router_;

  std::priority_queue<SimEvent, std::vector<SimEvent>, EventAfter> queue_;
  uint64_t next_sequence_ = 0;

  int64_t arrived_ = 0;
  int64_t rejected_ = 0;
  int64_t pending_arrivals_ = 0;
  uint64_t arrival_hash_ = 0xcbf29ce484222325ULL;
  uint64_t event_hash_ = 0xcbf29ce484222325ULL;
  std::vector<RequestRecord> records_;
  std::vector<LearnerSnapshot> learner_history_;
  std::ostringstream plans_log_;
  std::ostringstream routing_log_;
};

void Simulation::build_workload() {
  const auto& w = cfg_.workload;
  if (!w.trace_path.empty()) {
    trace_ = load_trace(w.trace_path);
    if (w.mode == ArrivalMode::kQps) {
      trace_ = assign_arrivals(std::move(trace_), ArrivalMode::kQps,
                               w.rate_per_s, cfg_.seed, 1.0, w.poisson);
    } else {
      trace_ = assign_arrivals(std::move(trace_), ArrivalMode::kTimestamp,
                               0.0, cfg_.seed, w.time_scale);
    }
  } else {
    const ScenarioStats stats = !w.scenario_file.empty()
                                    ? load_scenario_json(w.scenario_file)
                                    : scenario_by_name(w.scenario);
    trace_ = synth_generate(stats, w.n, cfg_.seed);
    trace_ = assign_arrivals(std::move(trace_), ArrivalMode::kQps,
                             w.rate_per_s, cfg_.seed, 1.0, w.poisson);
  }

  uint64_t session_hash_seed = 0;
  for (size_t i = 0; i < trace_.size(); ++i) {
    const auto& rec = trace_[i];
    Request r;
    r.id = static_cast<uint64_t>(i);
    r.session_id = rec.session_id;
    r.prompt_len = rec.prompt_tokens;
    r.target_decode = rec.output_tokens;
    r.arrival_ms = rec.arrival_ms;
    requests_.push_back(std::move(r));

    arrival_hash_ = fnv1a(arrival_hash_, static_cast<uint64_t>(to_us(rec.arrival_ms)));
    arrival_hash_ = fnv1a(arrival_hash_, static_cast<uint64_t>(rec.prompt_tokens));
    arrival_hash_ = fnv1a(arrival_hash_, static_cast<uint64_t>(rec.output_tokens));
    session_hash_seed = 0xcbf29ce484222325ULL;
    for (char c : rec.session_id) {
      session_hash_seed = fnv1a(session_hash_seed, static_cast<uint8_t>(c));
    }
    arrival_hash_ = fnv1a(arrival_hash_, session_hash_seed);
  }
}

void Simulation::try_begin_step(int engine_id, int64_t now_us) {
  EngineSim& engine = *engines_[engine_index_.at(engine_id)];
  if (engine.busy() || !engine.has_work()) return;
  const auto duration_ms = engine.begin_step(to_ms(now_us));
  if (!duration_ms) return;

  if (!cfg_.output.plans_jsonl.empty()) {
    const BatchPlan& plan = *engine.inflight_plan();
    ordered_json j;
    j["sim_time"] = to_ms(now_us);
    j["engine_id"] = engine_id;
    j["b"] = plan.b;
    j["s"] = plan.s;
    j["predicted_ms"] = plan.predicted_ms;
    j["target_ms"] = plan.target_ms;
    plans_log_ << j.dump() << '\n';
  }

  SimEvent done;
  done.time_us = now_us + std::max<int64_t>(1, to_us(*duration_ms));
  done.kind = EventKind::kStepComplete;
  done.engine_id = engine_id;
  push(std::move(done));
}

void Simulation::handle_arrival(const SimEvent& ev) {
  Request& request = requests_[ev.request_id];
  ++arrived_;
  --pending_arrivals_;
  const double now_ms = to_ms(ev.time_us);
  const RouteDecision decision = router_->route(request, now_ms);

  if (!cfg_.output.routing_jsonl.empty()) {
    ordered_json j;
    j["sim_time"] = now_ms;
    j["request_id"] = request.id;
    j["chosen_engine"] = decision.engine_id;
    j["s_latency"] = decision.factors[0];
    j["s_load"] = decision.factors[1];
    j["s_capacity"] = decision.factors[2];
    j["s_affinity"] = decision.factors[3];
    j["score"] = decision.score;
    routing_log_ << j.dump() << '\n';
  }

  EngineSim& engine = *engines_[engine_index_.at(decision.engine_id)];
  if (!engine.admit(&request, now_ms)) {
    ++rejected_;
    return;
  }
  try_begin_step(decision.engine_id, ev.time_us);
}

void Simulation::handle_step_complete(const SimEvent& ev) {
  const double now_ms = to_ms(ev.time_us);
  EngineSim& engine = *engines_[engine_index_.at(ev.engine_id)];
  const StepOutcome outcome = engine.complete_step(now_ms);

  for (uint64_t id : outcome.finished) {
    const Request& r = requests_[id];
    RequestRecord rec;
    rec.request_id = id;
    rec.arrival_ms = r.arrival_ms;
    rec.first_token_ms = *r.first_token_ms;
    rec.completed_ms = now_ms;
    rec.prompt_tokens = r.prompt_len;
    rec.output_tokens = r.target_decode;
    rec.engine_id = ev.engine_id;
    records_.push_back(rec);
    router_->on_completion(ev.engine_id, r.session_id,
                           now_ms - r.arrival_ms, r.target_decode, now_ms);
  }

  SimEvent update;
  update.time_us = ev.time_us;
  update.kind = EventKind::kLearnerUpdate;
  update.engine_id = ev.engine_id;
  update.sample = {{outcome.plan.b, outcome.plan.s}, outcome.actual_ms, now_ms};
  push(std::move(update));

  try_begin_step(ev.engine_id, ev.time_us);
}

void Simulation::handle_state_report(const SimEvent& ev) {
  EngineSim& engine = *engines_[engine_index_.at(ev.engine_id)];
  const double now_ms = to_ms(ev.time_us);

  SimEvent delivery;
  delivery.time_us =
      ev.time_us + to_us(engine.config().state_staleness_ms);
  delivery.kind = EventKind::kReport;
  delivery.engine_id = ev.engine_id;
  delivery.report = {engine.export_state(now_ms), engine.queue_len()};
  push(std::move(delivery));

  SimEvent next;
  next.time_us = ev.time_us + to_us(engine.config().state_report_period_ms);
  next.kind = EventKind::kStateReport;
  next.engine_id = ev.engine_id;
  push(std::move(next));
}

RunResult Simulation::run() {
  build_workload();

  // Whole-prompt batching cannot split prompts, so its token cap must cover
  // the largest prompt in the stream.
  int64_t max_prompt = 0;
  for (const auto& rec : trace_) {
    max_prompt = std::max(max_prompt, rec.prompt_tokens);
  }
  for (const auto& ec : cfg_.engines) {
    if (ec.scheduler_policy == SchedulerPolicy::kPrefillPriority &&
        max_prompt > ec.m_max) {
      throw std::runtime_error(
          "config: engine " + std::to_string(ec.engine_id) +
          " uses prefill_priority but m_max " + std::to_string(ec.m_max) +
          " < longest prompt " + std::to_string(max_prompt));
    }
  }

  for (const auto& ec : cfg_.engines) {
    engine_index_[ec.engine_id] = engines_.size();
    engines_.push_back(std::make_unique<EngineSim>(
        ec, cfg_.slo, cfg_.scheduler, cfg_.tradeoff, cfg_.learner, cfg_.seed));
  }
  router_ = std::make_unique<Router>(cfg_.router, cfg_.slo, cfg_.seed);
  for (const auto& ec : cfg_.engines) router_->register_engine(ec.engine_id);

  // Initial state reports precede any arrival at t=0.
  for (const auto& ec : cfg_.engines) {
    SimEvent ev;
    ev.time_us = 0;
    ev.kind = EventKind::kStateReport;
    ev.engine_id = ec.engine_id;
    push(std::move(ev));
  }
  for (const Request& r : requests_) {
    SimEvent ev;
    ev.time_us = to_us(r.arrival_ms);
    ev.kind = EventKind::kArrival;
    ev.request_id = r.id;
    push(std::move(ev));
    ++pending_arrivals_;
  }

  const int64_t duration_us = to_us(cfg_.duration_ms);
  while (!queue_.empty()) {
    const SimEvent ev = queue_.top();
    queue_.pop();
    if (ev.time_us > duration_us) break;

    // Periodic reports keep no work alive; drop them once the run drains so
    // the queue can empty.
    if (ev.kind == EventKind::kStateReport && pending_arrivals_ == 0 &&
        active_requests() == 0) {
      continue;
    }

    event_hash_ = fnv1a(event_hash_, static_cast<uint64_t>(ev.time_us));
    event_hash_ = fnv1a(event_hash_, static_cast<uint64_t>(ev.kind));
    event_hash_ = fnv1a(event_hash_, static_cast<uint64_t>(ev.engine_id + 1));
    event_hash_ = fnv1a(event_hash_, ev.request_id);

    switch (ev.kind) {
      case EventKind::kArrival:
        handle_arrival(ev);
        break;
      case EventKind::kStepComplete:
        handle_step_complete(ev);
        break;
      case EventKind::kStateReport:
        handle_state_report(ev);
        break;
      case EventKind::kReport:
        router_->on_report(ev.report);
        break;
      case EventKind::kLearnerUpdate: {
        EngineSim& engine = *engines_[engine_index_.at(ev.engine_id)];
        engine.record_learner_sample(ev.sample);
        if (cfg_.record_learner_history) {
          learner_history_.push_back({ev.engine_id, to_ms(ev.time_us),
                                      engine.learner().samples_seen(),
                                      engine.learner().params()});
        }
        break;
      }
    }
  }

  RunResult result;
  result.arrived = arrived_;
  result.rejected = rejected_;
  result.completed = static_cast<int64_t>(records_.size());
  result.unfinished = arrived_ - rejected_ - result.completed +
                      pending_arrivals_;  // cut off by duration_ms
  result.arrival_hash = arrival_hash_;
  result.event_hash = event_hash_;
  result.records = std::move(records_);
  result.metrics = summarize(result.records, cfg_.slo);
  result.learner_history = std::move(learner_history_);
  result.summary_json = build_summary(result);
  if (!cfg_.output.dir.empty()) write_outputs(result);
  return result;
}

std::string Simulation::build_summary(const RunResult& result) const {
  char hex[32];
  ordered_json j;
  j["seed"] = cfg_.seed;
  j["router_policy"] = to_string(cfg_.router.policy);
  j["engines"] = cfg_.engines.size();
  j["arrived"] = result.arrived;
  j["completed"] = result.completed;
  j["rejected"] = result.rejected;
  j["unfinished"] = result.unfinished;
  std::snprintf(hex, sizeof hex, "%016llx",
                static_cast<unsigned long long>(result.arrival_hash));
  j["arrival_hash"] = hex;
  std::snprintf(hex, sizeof hex, "%016llx",
                static_cast<unsigned long long>(result.event_hash));
  j["event_hash"] = hex;

  ordered_json m;
  m["p50_e2e_ms"] = result.metrics.p50_e2e_ms;
  m["p90_e2e_ms"] = result.metrics.p90_e2e_ms;
  m["p50_ttft_ms"] = result.metrics.p50_ttft_ms;
  m["p50_tpot_ms"] = result.metrics.p50_tpot_ms;
  m["mean_ttft_ms"] = result.metrics.mean_ttft_ms;
  m["mean_tpot_ms"] = result.metrics.mean_tpot_ms;
  m["slo_attainment"] = result.metrics.slo_attainment_pct;
  j["metrics"] = m;

  ordered_json share = ordered_json::object();
  for (const auto& [engine_id, fraction] : result.metrics.engine_share) {
    share[std::to_string(engine_id)] = fraction;
  }
  j["engine_share"] = share;

  ordered_json learners = ordered_json::array();
  for (const auto& engine : engines_) {
    ordered_json e;
    e["engine_id"] = engine->config().engine_id;
    e["samples"] = engine->learner().samples_seen();
    e["p_max"] = engine->learner().params().p_max;
    learners.push_back(e);
  }
  j["learners"] = learners;
  return j.dump(2) + "\n";
}

void Simulation::write_outputs(const RunResult& result) const {
  namespace fs = std::filesystem;
  const fs::path dir(cfg_.output.dir);
  fs::create_directories(dir);
  if (!cfg_.output.summary.empty()) {
    std::ofstream out(dir / cfg_.output.summary);
    out << result.summary_json;
  }
  if (!cfg_.output.requests_csv.empty()) {
    write_requests_csv((dir / cfg_.output.requests_csv).string(),
                       result.records);
  }
  if (!cfg_.output.plans_jsonl.empty()) {
    std::ofstream out(dir / cfg_.output.plans_jsonl);
    out << plans_log_.str();
  }
  if (!cfg_.output.routing_jsonl.empty()) {
    std::ofstream out(dir / cfg_.output.routing_jsonl);
    out << routing_log_.str();
  }
}

}  // namespace

void RunConfig::validate() const {
  if (engines.empty()) throw std::runtime_error("config: needs >= 1 engine");
  if (!(duration_ms > 0)) throw std::runtime_error("config: duration_ms <= 0");
  if (!slo.valid()) throw std::runtime_error("config: invalid slo");
  if (!scheduler.valid()) throw std::runtime_error("config: invalid scheduler");
  if (!tradeoff.valid()) throw std::runtime_error("config: invalid tradeoff");
  if (!learner.valid()) throw std::runtime_error("config: invalid learner");
  if (!router.valid()) throw std::runtime_error("config: invalid router");
  std::vector<int> ids;
  for (const auto& e : engines) {
    if (!e.valid()) {
      throw std::runtime_error("config: invalid engine " +
                               std::to_string(e.engine_id));
    }
    ids.push_back(e.engine_id);
  }
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) {
    throw std::runtime_error("config: duplicate engine_id");
  }
  const auto& w = workload;
  if (w.trace_path.empty() && w.scenario.empty() && w.scenario_file.empty()) {
    throw std::runtime_error("config: workload needs a scenario or trace");
  }
  if (w.trace_path.empty() && w.n < 1) {
    throw std::runtime_error("config: workload n must be >= 1");
  }
  if (w.mode == ArrivalMode::kQps && !(w.rate_per_s > 0)) {
    throw std::runtime_error("config: qps mode needs rate > 0");
  }
  if (w.mode == ArrivalMode::kTimestamp && w.trace_path.empty()) {
    throw std::runtime_error(
        "config: timestamp mode needs a trace with recorded arrivals");
  }
}

RunConfig RunConfig::from_json_text(const std::string& text) {
  const json j = json::parse(text);
  RunConfig cfg;
  cfg.seed = j.value("seed", cfg.seed);
  cfg.duration_ms = j.value("duration_ms", cfg.duration_ms);
  cfg.record_learner_history =
      j.value("record_learner_history", cfg.record_learner_history);

  if (j.contains("slo")) {
    cfg.slo.ttft_slo_ms = j["slo"].value("ttft_slo_ms", cfg.slo.ttft_slo_ms);
    cfg.slo.tpot_slo_ms = j["slo"].value("tpot_slo_ms", cfg.slo.tpot_slo_ms);
  }
  if (j.contains("scheduler")) {
    const auto& s = j["scheduler"];
    cfg.scheduler.m_max = s.value("m_max", cfg.scheduler.m_max);
    cfg.scheduler.q_max = s.value("q_max", cfg.scheduler.q_max);
    cfg.scheduler.n_search_iters =
        s.value("n_search_iters", cfg.scheduler.n_search_iters);
    cfg.scheduler.eps_ratio = s.value("eps_ratio", cfg.scheduler.eps_ratio);
    cfg.scheduler.q_ref = s.value("q_ref", cfg.scheduler.q_ref);
  }
  cfg.tradeoff = TradeoffModel::initial_for(cfg.slo);
  if (j.contains("tradeoff")) {
    const auto& t = j["tradeoff"];
    cfg.tradeoff.alpha_ms = t.value("alpha_ms", cfg.tradeoff.alpha_ms);
    cfg.tradeoff.beta = t.value("beta", cfg.tradeoff.beta);
    cfg.tradeoff.l_bar = t.value("l_bar", cfg.tradeoff.l_bar);
    cfg.tradeoff.td_min_ms = t.value("td_min_ms", cfg.tradeoff.td_min_ms);
  }
  if (j.contains("learner")) {
    const auto& l = j["learner"];
    cfg.learner.long_window = l.value("long_window", cfg.learner.long_window);
    cfg.learner.short_window =
        l.value("short_window", cfg.learner.short_window);
    cfg.learner.structural_period =
        l.value("structural_period", cfg.learner.structural_period);
    cfg.learner.linear_period =
        l.value("linear_period", cfg.learner.linear_period);
    cfg.learner.min_structural_samples = l.value(
        "min_structural_samples", cfg.learner.min_structural_samples);
  }
  if (j.contains("router")) {
    const auto& r = j["router"];
    cfg.router.policy =
        router_policy_from_string(r.value("policy", std::string("prism")));
    if (r.contains("weights")) {
      const auto& w = r["weights"];
      if (!w.is_array() || w.size() != 4) {
        throw std::runtime_error("config: router.weights must have 4 entries");
      }
      for (int i = 0; i < 4; ++i) cfg.router.weights[i] = w[i].get<double>();
    }
    cfg.router.beta_aff = r.value("beta_aff", cfg.router.beta_aff);
    cfg.router.latency_knee =
        r.value("latency_knee", cfg.router.latency_knee);
    cfg.router.latency_scale_ms =
        r.value("latency_scale_ms", cfg.router.latency_scale_ms);
    cfg.router.load_half_ms = r.value("load_half_ms", cfg.router.load_half_ms);
    cfg.router.capacity_headroom =
        r.value("capacity_headroom", cfg.router.capacity_headroom);
    cfg.router.staleness_limit_ms =
        r.value("staleness_limit_ms", cfg.router.staleness_limit_ms);
    cfg.router.latency_window_ms =
        r.value("latency_window_ms", cfg.router.latency_window_ms);
    if (r.contains("static_weights")) {
      for (const auto& [key, value] : r["static_weights"].items()) {
        cfg.router.static_weights[std::stoi(key)] = value.get<double>();
      }
    }
  }
  if (!j.contains("engines") || !j["engines"].is_array() ||
      j["engines"].empty()) {
    throw std::runtime_error("config: engines array required");
  }
  for (const auto& e : j["engines"]) {
    EngineConfig ec;
    ec.engine_id = e.value("engine_id", static_cast<int>(cfg.engines.size()));
    if (e.contains("true_params")) {
      ec.true_params = PerfParams::from_json(e["true_params"].dump());
    } else {
      ec.true_params = perf_profile(e.value("profile", std::string("medium")));
    }
    ec.noise_sigma = e.value("noise_sigma", ec.noise_sigma);
    ec.kv_blocks = e.value("kv_blocks", ec.kv_blocks);
    ec.block_size = e.value("block_size", ec.block_size);
    ec.m_max = e.value("m_max", cfg.scheduler.m_max);
    ec.q_max = e.value("q_max", cfg.scheduler.q_max);
    ec.scheduler_policy = scheduler_policy_from_string(
        e.value("scheduler_policy", std::string("lens")));
    ec.static_budget = e.value("static_budget", ec.static_budget);
    ec.state_report_period_ms =
        e.value("state_report_period_ms", ec.state_report_period_ms);
    ec.state_staleness_ms =
        e.value("state_staleness_ms", ec.state_staleness_ms);
    ec.wait_cap = e.value("wait_cap", ec.wait_cap);
    cfg.engines.push_back(std::move(ec));
  }
  if (j.contains("workload")) {
    const auto& w = j["workload"];
    cfg.workload.scenario = w.value("scenario", cfg.workload.scenario);
    cfg.workload.scenario_file =
        w.value("scenario_file", cfg.workload.scenario_file);
    cfg.workload.trace_path = w.value("trace", cfg.workload.trace_path);
    const std::string mode = w.value("mode", std::string("qps"));
    if (mode == "qps") {
      cfg.workload.mode = ArrivalMode::kQps;
    } else if (mode == "timestamp") {
      cfg.workload.mode = ArrivalMode::kTimestamp;
    } else {
      throw std::runtime_error("config: workload mode must be qps|timestamp");
    }
    cfg.workload.rate_per_s = w.value("rate", cfg.workload.rate_per_s);
    cfg.workload.n = w.value("n", cfg.workload.n);
    cfg.workload.time_scale = w.value("time_scale", cfg.workload.time_scale);
    cfg.workload.poisson = w.value("poisson", cfg.workload.poisson);
  }
  if (j.contains("output")) {
    const auto& o = j["output"];
    cfg.output.dir = o.value("dir", cfg.output.dir);
    cfg.output.summary = o.value("summary", cfg.output.summary);
    cfg.output.requests_csv =
        o.value("requests_csv", cfg.output.requests_csv);
    cfg.output.plans_jsonl = o.value("plans_jsonl", cfg.output.plans_jsonl);
    cfg.output.routing_jsonl =
        o.value("routing_jsonl", cfg.output.routing_jsonl);
  }
  cfg.validate();
  return cfg;
}

RunConfig RunConfig::from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return from_json_text(buf.str());
  } catch (const std::exception& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
}

RunResult run_simulation(const RunConfig& cfg) {
  Simulation sim(cfg);
  return sim.run();
}

SweepAxis sweep_axis_from_string(const std::string& name) {
  if (name == "rate") return SweepAxis::kRate;
  if (name == "policy") return SweepAxis::kPolicy;
  if (name == "budget") return SweepAxis::kBudget;
  throw std::runtime_error("unknown sweep axis: " + name);
}

SweepResult sweep(const RunConfig& base, SweepAxis axis,
                  const std::vector<std::string>& values) {
  SweepResult out;
  out.axis = axis;
  for (const std::string& value : values) {
    SweepRow row;
    row.value = value;
    try {
      RunConfig cfg = base;
      cfg.output.dir.clear();  // sweeps report through the table only
      switch (axis) {
        case SweepAxis::kRate:
          cfg.workload.mode = ArrivalMode::kQps;
          cfg.workload.rate_per_s = std::stod(value);
          break;
        case SweepAxis::kPolicy: {
          const SchedulerPolicy policy = scheduler_policy_from_string(value);
          for (auto& e : cfg.engines) e.scheduler_policy = policy;
          break;
        }
        case SweepAxis::kBudget: {
          const int64_t budget = std::stoll(value);
          for (auto& e : cfg.engines) e.static_budget = budget;
          break;
        }
      }
      row.result = run_simulation(cfg);
      row.ok = true;
    } catch (const std::exception& e) {
      row.error = e.what();
    }
    out.rows.push_back(std::move(row));
  }
  return out;
}

std::string sweep_csv(const SweepResult& result) {
  std::ostringstream out;
  out << "value,arrived,completed,rejected,unfinished,mean_ttft_ms,"
         "mean_tpot_ms,p50_e2e_ms,p90_e2e_ms,p50_ttft_ms,p50_tpot_ms,"
         "slo_attainment,arrival_hash,error\n";
  char buf[360];
  for (const auto& row : result.rows) {
    if (!row.ok) {
      out << row.value << ",,,,,,,,,,,,,\"" << row.error << "\"\n";
      continue;
    }
    const auto& r = row.result;
    std::snprintf(buf, sizeof buf,
                  "%s,%lld,%lld,%lld,%lld,%.4f,%.4f,%.4f,%.4f,%.4f,%.4f,%.4f,"
                  "%016llx,\n",
                  row.value.c_str(), static_cast<long long>(r.arrived),
                  static_cast<long long>(r.completed),
                  static_cast<long long>(r.rejected),
                  static_cast<long long>(r.unfinished),
                  r.metrics.mean_ttft_ms, r.metrics.mean_tpot_ms,
                  r.metrics.p50_e2e_ms, r.metrics.p90_e2e_ms,
                  r.metrics.p50_ttft_ms, r.metrics.p50_tpot_ms,
                  r.metrics.slo_attainment_pct,
                  static_cast<unsigned long long>(r.arrival_hash));
    out << buf;
  }
  return out.str();
}

}  // namespace servesim
