#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace servesim {

struct TraceRecord {
  double arrival_ms = 0.0;
  std::string session_id;
  int64_t prompt_tokens = 1;
  int64_t output_tokens = 1;
};

struct LengthStats {
  double mean = 0.0;
  double p99 = 0.0;
  double std_dev = 0.0;
};

struct ScenarioStats {
  std::string name;
  LengthStats prompt;
  LengthStats output;
  double session_turn_prob = 0.0;  // chance a request continues a live session

  bool valid() const {
    return prompt.mean > 0.0 && output.mean > 0.0 && prompt.p99 >= 0.0 &&
           output.p99 >= 0.0 && prompt.std_dev >= 0.0 && output.std_dev >= 0.0 &&
           session_turn_prob >= 0.0 && session_turn_prob <= 1.0;
  }
};

enum class ArrivalMode { kTimestamp, kQps };

// Built-in scenario table; throws on unknown name.
const ScenarioStats& scenario_by_name(const std::string& name);
std::vector<std::string> scenario_names();
ScenarioStats load_scenario_json(const std::string& path);

// Parses a JSONL trace of {arrival_ms, session_id, prompt_tokens,
// output_tokens}. Malformed lines raise an error naming the line; unsorted
// input is sorted with a warning flag.
std::vector<TraceRecord> load_trace(const std::string& path,
                                    bool* sorted_warning = nullptr);

void write_trace(const std::string& path,
                 const std::vector<TraceRecord>& records);

// Draws prompt/output lengths from moment-matched truncated log-normals and
// threads a session_turn_prob fraction of requests through live sessions.
// Arrivals are left unset (0).
std::vector<TraceRecord> synth_generate(const ScenarioStats& stats, int64_t n,
                                        uint64_t seed);

// Timestamp mode preserves arrivals (optionally compressing gaps by
// time_scale); qps mode spaces requests at exactly 1000/rate ms, or draws
// exponential gaps of the same mean when poisson is set.
std::vector<TraceRecord> assign_arrivals(std::vector<TraceRecord> records,
                                         ArrivalMode mode, double rate_per_s,
                                         uint64_t seed,
                                         double time_scale = 1.0,
                                         bool poisson = false);

}  // namespace servesim
