#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "servesim/engine.h"
#include "servesim/learner.h"
#include "servesim/lens.h"
#include "servesim/metrics.h"
#include "servesim/router.h"
#include "servesim/workload.h"

namespace servesim {

struct WorkloadConfig {
  std::string scenario;       // built-in scenario name
  std::string scenario_file;  // JSON stats file; overrides scenario
  std::string trace_path;     // JSONL trace; overrides synthesis
  ArrivalMode mode = ArrivalMode::kQps;
  double rate_per_s = 1.0;
  int64_t n = 100;            // synthetic request count
  double time_scale = 1.0;    // timestamp mode load multiplier
  bool poisson = false;
};

struct OutputConfig {
  std::string dir;  // empty = no files written
  std::string summary = "summary.json";
  std::string requests_csv = "requests.csv";
  std::string plans_jsonl;    // per-step plan log, empty = off
  std::string routing_jsonl;  // per-request routing log, empty = off
};

struct RunConfig {
  uint64_t seed = 1;
  double duration_ms = 3.6e6;
  SLOSpec slo;
  SchedulerConfig scheduler;
  TradeoffModel tradeoff;
  LearnerConfig learner;
  RouterConfig router;
  std::vector<EngineConfig> engines;
  WorkloadConfig workload;
  OutputConfig output;
  bool record_learner_history = false;
  bool validate_invariants = false;  // per-step checks; throws on violation

  void validate() const;  // throws std::runtime_error with a description

  static RunConfig from_json_text(const std::string& text);
  static RunConfig from_json_file(const std::string& path);
};

struct LearnerSnapshot {
  int engine_id = 0;
  double sim_time_ms = 0.0;
  int64_t samples_seen = 0;
  PerfParams params;
};

struct RunResult {
  int64_t arrived = 0;
  int64_t completed = 0;
  int64_t rejected = 0;
  int64_t unfinished = 0;
  uint64_t arrival_hash = 0;  // fingerprint of the arrival stream
  uint64_t event_hash = 0;    // fingerprint of the processed event sequence
  std::vector<RequestRecord> records;
  MetricsSummary metrics;
  std::vector<LearnerSnapshot> learner_history;
  std::string summary_json;
};

// Runs one deterministic simulation; writes output files when
// cfg.output.dir is set.
RunResult run_simulation(const RunConfig& cfg);

enum class SweepAxis { kRate, kPolicy, kBudget };
SweepAxis sweep_axis_from_string(const std::string& name);

struct SweepRow {
  std::string value;
  bool ok = false;
  std::string error;
  RunResult result;
};

struct SweepResult {
  SweepAxis axis;
  std::vector<SweepRow> rows;
};

// One simulation per axis value; per-run failures are recorded and the
// sweep continues.
SweepResult sweep(const RunConfig& base, SweepAxis axis,
                  const std::vector<std::string>& values);

std::string sweep_csv(const SweepResult& result);

}  // namespace servesim
