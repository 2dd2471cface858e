#include "servesim/workload.h"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

#include "servesim/rng.h"

namespace servesim {
namespace {

const std::vector<ScenarioStats>& builtin_scenarios() {
  static const std::vector<ScenarioStats> table = {
      {"flowgpt", {4089, 7014, 2061}, {177, 51, 200}, 0.7},
      {"coding", {440, 1131, 214}, {283, 1096, 233}, 0.2},
      {"sharegpt", {370, 1420, 351}, {249, 760, 170}, 0.5},
      {"summarization", {8936, 10171, 694}, {259, 587, 115}, 0.0},
  };
  return table;
}

// Log-normal parameters matching a target mean and standard deviation.
struct LogNormal {
  double mu = 0.0;
  double sigma = 0.0;
};

LogNormal match_moments(double mean, double std_dev) {
  const double cv2 = (std_dev / mean) * (std_dev / mean);
  LogNormal ln;
  ln.sigma = std::sqrt(std::log1p(cv2));
  ln.mu = std::log(mean) - 0.5 * ln.sigma * ln.sigma;
  return ln;
}

int64_t draw_length(const LengthStats& stats, Rng& rng) {
  if (stats.std_dev <= 0.0) {
    return std::max<int64_t>(1, llround(stats.mean));
  }
  const LogNormal ln = match_moments(stats.mean, stats.std_dev);
  const double x = std::exp(ln.mu + ln.sigma * rng.normal());
  const double cap = std::max(1.0, 4.0 * stats.p99);
  return std::max<int64_t>(1, llround(std::min(x, cap)));
}

}  // namespace

const ScenarioStats& scenario_by_name(const std::string& name) {
  for (const auto& s : builtin_scenarios()) {
    if (s.name == name) return s;
  }
  throw std::runtime_error("unknown scenario: " + name);
}

std::vector<std::string> scenario_names() {
  std::vector<std::string> names;
  for (const auto& s : builtin_scenarios()) names.push_back(s.name);
  return names;
}

ScenarioStats load_scenario_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open scenario file: " + path);
  nlohmann::json j;
  in >> j;
  ScenarioStats s;
  s.name = j.at("name").get<std::string>();
  s.prompt = {j.at("prompt").at("mean").get<double>(),
              j.at("prompt").at("p99").get<double>(),
              j.at("prompt").at("std").get<double>()};
  s.output = {j.at("output").at("mean").get<double>(),
              j.at("output").at("p99").get<double>(),
              j.at("output").at("std").get<double>()};
  s.session_turn_prob = j.value("session_turn_prob", 0.0);
  if (!s.valid()) throw std::runtime_error("scenario stats invalid: " + path);
  return s;
}

std::vector<TraceRecord> load_trace(const std::string& path,
                                    bool* sorted_warning) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open trace file: " + path);
  std::vector<TraceRecord> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      TraceRecord rec;
      rec.arrival_ms = j.at("arrival_ms").get<double>();
      rec.session_id = j.at("session_id").get<std::string>();
      rec.prompt_tokens = j.at("prompt_tokens").get<int64_t>();
      rec.output_tokens = j.at("output_tokens").get<int64_t>();
      if (rec.prompt_tokens < 1 || rec.output_tokens < 1) {
        throw std::runtime_error("token counts must be >= 1");
      }
      out.push_back(std::move(rec));
    } catch (const std::exception& e) {
      throw std::runtime_error(path + ": line " + std::to_string(lineno) +
                               ": " + e.what());
    }
  }
  const bool sorted = std::is_sorted(
      out.begin(), out.end(),
      [](const auto& a, const auto& b) { return a.arrival_ms < b.arrival_ms; });
  if (!sorted) {
    std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
      return a.arrival_ms < b.arrival_ms;
    });
    if (sorted_warning) *sorted_warning = true;
  } else if (sorted_warning) {
    *sorted_warning = false;
  }
  return out;
}

void write_trace(const std::string& path,
                 const std::vector<TraceRecord>& records) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write trace file: " + path);
  for (const auto& rec : records) {
    nlohmann::ordered_json j;
    j["arrival_ms"] = rec.arrival_ms;
    j["session_id"] = rec.session_id;
    j["prompt_tokens"] = rec.prompt_tokens;
    j["output_tokens"] = rec.output_tokens;
    out << j.dump() << '\n';
  }
}

std::vector<TraceRecord> synth_generate(const ScenarioStats& stats, int64_t n,
                                        uint64_t seed) {
  if (n < 1) throw std::invalid_argument("synth_generate: n must be >= 1");
  if (!stats.valid()) throw std::invalid_argument("invalid scenario stats");
  Rng rng(substream_seed(seed, "workload"));

  // Sessions a follow-up turn may continue; bounded so reuse stays recent.
  constexpr size_t kLiveSessions = 64;
  std::deque<std::string> live;
  uint64_t next_session = 0;

  std::vector<TraceRecord> out;
  out.reserve(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    TraceRecord rec;
    rec.prompt_tokens = draw_length(stats.prompt, rng);
    rec.output_tokens = draw_length(stats.output, rng);
    const bool continue_session =
        !live.empty() && rng.uniform() <= stats.session_turn_prob;
    if (continue_session) {
      rec.session_id = live[rng.below(live.size())];
    } else {
      rec.session_id = "s" + std::to_string(next_session++);
      live.push_back(rec.session_id);
      if (live.size() > kLiveSessions) live.pop_front();
    }
    out.push_back(std::move(rec));
  }
  return out;
}

std::vector<TraceRecord> assign_arrivals(std::vector<TraceRecord> records,
                                         ArrivalMode mode, double rate_per_s,
                                         uint64_t seed, double time_scale,
                                         bool poisson) {
  if (mode == ArrivalMode::kQps) {
    if (rate_per_s <= 0.0) {
      throw std::runtime_error("qps mode requires rate > 0");
    }
    const double gap_ms = 1000.0 / rate_per_s;
    if (poisson) {
      Rng rng(substream_seed(seed, "arrivals"));
      double t = 0.0;
      for (auto& rec : records) {
        rec.arrival_ms = t;
        t += -gap_ms * std::log(rng.uniform());
      }
    } else {
      for (size_t i = 0; i < records.size(); ++i) {
        records[i].arrival_ms = static_cast<double>(i) * gap_ms;
      }
    }
    return records;
  }

  // Timestamp mode: keep the recorded pattern; scale > 1 compresses gaps
  // (multiplies the offered rate).
  if (time_scale <= 0.0) throw std::runtime_error("time_scale must be > 0");
  for (auto& rec : records) rec.arrival_ms /= time_scale;
  return records;
}

}  // namespace servesim
