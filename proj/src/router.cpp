#include "servesim/router.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace servesim {

RouterPolicy router_policy_from_string(const std::string& name) {
  if (name == "prism") return RouterPolicy::kPrism;
  if (name == "round_robin") return RouterPolicy::kRoundRobin;
  if (name == "session_affinity") return RouterPolicy::kSessionAffinity;
  if (name == "least_loaded") return RouterPolicy::kLeastLoaded;
  if (name == "latency_based") return RouterPolicy::kLatencyBased;
  if (name == "weighted") return RouterPolicy::kWeighted;
  throw std::runtime_error("unknown router policy: " + name);
}

std::string to_string(RouterPolicy policy) {
  switch (policy) {
    case RouterPolicy::kPrism:
      return "prism";
    case RouterPolicy::kRoundRobin:
      return "round_robin";
    case RouterPolicy::kSessionAffinity:
      return "session_affinity";
    case RouterPolicy::kLeastLoaded:
      return "least_loaded";
    case RouterPolicy::kLatencyBased:
      return "latency_based";
    case RouterPolicy::kWeighted:
      return "weighted";
  }
  return "?";
}

double score_latency(const StateVector& sv, const SLOSpec& slo,
                     const RouterConfig& cfg) {
  const double knee = cfg.latency_knee * slo.ttft_slo_ms;
  if (sv.l_hat_ms <= knee) return 1.0;
  const double scale =
      cfg.latency_scale_ms > 0.0 ? cfg.latency_scale_ms : 0.25 * slo.ttft_slo_ms;
  return std::exp(-(sv.l_hat_ms - knee) / scale);
}

double score_load(const StateVector& sv, const RouterConfig& cfg) {
  const double rho = sv.w_load_tokens / sv.p_max;  // ms of backlog at peak
  return 1.0 / (1.0 + rho / cfg.load_half_ms);
}

double score_capacity(const StateVector& sv, double req_demand_tokens,
                      const RouterConfig& cfg) {
  if (req_demand_tokens < 1.0) {
    throw std::invalid_argument("score_capacity: demand must be >= 1 token");
  }
  const double r = std::clamp(
      sv.m_free_tokens / (cfg.capacity_headroom * req_demand_tokens), 0.0, 1.0);
  return r * r;
}

Router::Router(const RouterConfig& cfg, const SLOSpec& slo, uint64_t root_seed)
    : cfg_(cfg), slo_(slo), rng_(substream_seed(root_seed, "router")) {
  if (!cfg.valid()) throw std::invalid_argument("invalid RouterConfig");
}

void Router::register_engine(int engine_id) {
  if (engines_.contains(engine_id)) {
    throw std::invalid_argument("engine registered twice");
  }
  order_.push_back(engine_id);
  engines_[engine_id] = EngineInfo{};
}

void Router::on_report(const EngineReport& report) {
  auto it = engines_.find(report.state.engine_id);
  if (it == engines_.end()) {
    throw std::invalid_argument("report from unregistered engine");
  }
  it->second.report = report;
}

void Router::on_completion(int engine_id, const std::string& session_id,
                           double e2e_ms, int64_t decode_len, double now_ms) {
  auto it = engines_.find(engine_id);
  if (it == engines_.end()) return;
  it->second.latencies.emplace_back(now_ms, e2e_ms);
  it->second.latency_sum += e2e_ms;
  l_bar_ema_ += kEmaSmoothing * (static_cast<double>(decode_len) - l_bar_ema_);
  if (l_bar_ema_ < 1.0) l_bar_ema_ = 1.0;
  remember_session(session_id, engine_id);
}

double Router::score_affinity(int engine_id,
                              const std::string& session_id) const {
  const auto it = sessions_.find(session_id);
  if (it != sessions_.end() && it->second.engine_id == engine_id) {
    return cfg_.beta_aff;
  }
  return 1.0;
}

double Router::demand_estimate_tokens(int64_t prompt_len) const {
  return std::max(1.0, static_cast<double>(prompt_len) + l_bar_ema_);
}

void Router::remember_session(const std::string& session_id, int engine_id) {
  auto it = sessions_.find(session_id);
  if (it != sessions_.end()) {
    it->second.engine_id = engine_id;
    session_lru_.erase(it->second.lru_it);
    session_lru_.push_back(session_id);
    it->second.lru_it = std::prev(session_lru_.end());
    return;
  }
  if (sessions_.size() >= kSessionCapacity) {
    sessions_.erase(session_lru_.front());
    session_lru_.pop_front();
  }
  session_lru_.push_back(session_id);
  sessions_[session_id] = {engine_id, std::prev(session_lru_.end())};
}

int Router::pick_round_robin() {
  const int id = order_[rr_next_ % order_.size()];
  ++rr_next_;
  return id;
}

double Router::rolling_latency(EngineInfo& info, double now_ms) {
  auto& window = info.latencies;
  while (!window.empty() &&
         window.front().first < now_ms - cfg_.latency_window_ms) {
    info.latency_sum -= window.front().second;
    window.pop_front();
  }
  if (window.empty()) return 0.0;
  return info.latency_sum / static_cast<double>(window.size());
}

RouteDecision Router::route(const Request& request, double now_ms) {
  if (order_.empty()) throw std::runtime_error("route: no engines registered");
  RouteDecision decision;

  switch (cfg_.policy) {
    case RouterPolicy::kRoundRobin:
      decision.engine_id = pick_round_robin();
      break;

    case RouterPolicy::kSessionAffinity: {
      const auto it = sessions_.find(request.session_id);
      decision.engine_id =
          it != sessions_.end() ? it->second.engine_id : pick_round_robin();
      break;
    }

    case RouterPolicy::kLeastLoaded: {
      int best = order_.front();
      int64_t best_len = std::numeric_limits<int64_t>::max();
      for (int id : order_) {
        const auto& info = engines_.at(id);
        const int64_t len = info.report ? info.report->queue_len : 0;
        if (len < best_len) {
          best_len = len;
          best = id;
        }
      }
      decision.engine_id = best;
      break;
    }

    case RouterPolicy::kLatencyBased: {
      int best = order_.front();
      double best_lat = std::numeric_limits<double>::infinity();
      for (int id : order_) {
        const double lat = rolling_latency(engines_.at(id), now_ms);
        if (lat < best_lat) {
          best_lat = lat;
          best = id;
        }
      }
      decision.engine_id = best;
      break;
    }

    case RouterPolicy::kWeighted: {
      double total = 0.0;
      for (int id : order_) {
        const auto it = cfg_.static_weights.find(id);
        total += it != cfg_.static_weights.end() ? it->second : 1.0;
      }
      double draw = rng_.uniform() * total;
      decision.engine_id = order_.back();
      for (int id : order_) {
        const auto it = cfg_.static_weights.find(id);
        draw -= it != cfg_.static_weights.end() ? it->second : 1.0;
        if (draw <= 0.0) {
          decision.engine_id = id;
          break;
        }
      }
      break;
    }

    case RouterPolicy::kPrism: {
      const double demand = demand_estimate_tokens(request.prompt_len);
      bool any_fresh = false;
      double best_score = -1.0;
      double best_rho = std::numeric_limits<double>::infinity();
      for (int id : order_) {
        const auto& info = engines_.at(id);
        std::array<double, 4> f{1.0, 1.0, 1.0, 1.0};
        double rho = 0.0;
        const double age = info.report
                               ? now_ms - info.report->state.reported_at_ms
                               : std::numeric_limits<double>::infinity();
        if (info.report && age <= cfg_.staleness_limit_ms) {
          any_fresh = true;
          const StateVector& sv = info.report->state;
          f[0] = score_latency(sv, slo_, cfg_);
          f[1] = score_load(sv, cfg_);
          f[2] = score_capacity(sv, demand, cfg_);
          rho = sv.w_load_tokens / sv.p_max;
        } else {
          // Graceful degradation: neutral guesses, with the last known load
          // score decaying toward 1 as the report ages further.
          f[0] = 0.5;
          f[2] = 0.5;
          if (info.report) {
            const StateVector& sv = info.report->state;
            rho = sv.w_load_tokens / sv.p_max;
            const double blend =
                std::exp(-(age - cfg_.staleness_limit_ms) /
                         cfg_.staleness_limit_ms);
            f[1] = 1.0 + (score_load(sv, cfg_) - 1.0) * blend;
          }
        }
        f[3] = score_affinity(id, request.session_id);

        double score = 1.0;
        for (int i = 0; i < 4; ++i) {
          score *= f[i] == 0.0 && cfg_.weights[i] > 0.0
                       ? 0.0
                       : std::pow(f[i], cfg_.weights[i]);
        }
        const bool better =
            score > best_score ||
            (score == best_score &&
             (rho < best_rho ||
              (rho == best_rho && id < decision.engine_id)));
        if (decision.engine_id < 0 || better) {
          best_score = score;
          best_rho = rho;
          decision.engine_id = id;
          decision.score = score;
          decision.factors = f;
        }
      }
      if (!any_fresh) {
        // Every report is stale or missing: fall back to least known load.
        decision.degraded = true;
        int best = order_.front();
        int64_t best_len = std::numeric_limits<int64_t>::max();
        for (int id : order_) {
          const auto& info = engines_.at(id);
          const int64_t len = info.report ? info.report->queue_len : 0;
          if (len < best_len) {
            best_len = len;
            best = id;
          }
        }
        decision.engine_id = best;
      }

      // Echo the dispatch into the local load view so the requests routed
      // between two reports do not all pile onto the same engine.
      auto& chosen = engines_.at(decision.engine_id);
      if (chosen.report) {
        chosen.report->queue_len += 1;
        chosen.report->state.w_load_tokens +=
            static_cast<double>(request.prompt_len) + 32.0;
      }
      break;
    }
  }

  remember_session(request.session_id, decision.engine_id);
  return decision;
}

}  // namespace servesim
