#include "servesim/learner.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <stdexcept>

#include "json.hpp"

namespace servesim {
namespace {

constexpr double kWsMin = 1e-6;
constexpr double kPmaxMin = 1e-3;
constexpr double kPmaxMax = 1e4;
constexpr double kSaturatedExponent = 20.0;

// Gaussian elimination with column scaling and partial pivoting. Returns
// false when a scaled pivot collapses, i.e. the system is rank deficient.
// Pass x = nullptr for a pure rank probe.
bool solve5(std::array<std::array<double, 5>, 5> a, std::array<double, 5> b,
            std::array<double, 5>* x) {
  std::array<double, 5> scale{};
  for (int j = 0; j < 5; ++j) {
    double m = 0.0;
    for (int i = 0; i < 5; ++i) m = std::max(m, std::fabs(a[i][j]));
    if (m <= 0.0) return false;
    scale[j] = 1.0 / m;
    for (int i = 0; i < 5; ++i) a[i][j] *= scale[j];
  }
  double norm = 0.0;
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) norm = std::max(norm, std::fabs(a[i][j]));

  for (int col = 0; col < 5; ++col) {
    int pivot = col;
    for (int r = col + 1; r < 5; ++r)
      if (std::fabs(a[r][col]) > std::fabs(a[pivot][col])) pivot = r;
    if (std::fabs(a[pivot][col]) < 1e-10 * norm) return false;
    std::swap(a[col], a[pivot]);
    std::swap(b[col], b[pivot]);
    for (int r = col + 1; r < 5; ++r) {
      const double f = a[r][col] / a[col][col];
      for (int c = col; c < 5; ++c) a[r][c] -= f * a[col][c];
      b[r] -= f * b[col];
    }
  }
  if (!x) return true;
  auto& out = *x;
  for (int r = 4; r >= 0; --r) {
    double acc = b[r];
    for (int c = r + 1; c < 5; ++c) acc -= a[r][c] * out[c];
    out[r] = acc / a[r][r];
  }
  for (int j = 0; j < 5; ++j) out[j] *= scale[j];
  return true;
}

struct Ols5 {
  std::array<std::array<double, 5>, 5> ata{};
  std::array<double, 5> atb{};
  double y2 = 0.0;
  size_t n = 0;

  void add(const std::array<double, 5>& row, double y) {
    for (int i = 0; i < 5; ++i) {
      for (int j = 0; j < 5; ++j) ata[i][j] += row[i] * row[j];
      atb[i] += row[i] * y;
    }
    y2 += y * y;
    ++n;
  }

  // Ridge anchored at `prior`, scaled by the residual level so clean data
  // solves exactly while noisy near-collinear windows stay pinned to the
  // anchor in their unidentifiable directions.
  bool solve(const std::array<double, 5>& prior, std::array<double, 5>* x,
             std::function<double(const std::array<double, 5>&)> sse,
             double lambda_cap = 1e-3) const {
    if (!solve5(ata, atb, x)) return false;
    const double lambda =
        std::min(lambda_cap, sse(*x) / std::max(y2, 1e-30));
    if (lambda > 1e-14) {
      auto a = ata;
      auto b = atb;
      for (int i = 0; i < 5; ++i) {
        const double d = lambda * ata[i][i];
        a[i][i] += d;
        b[i] += d * prior[i];
      }
      if (!solve5(a, b, x)) return false;
    }
    return true;
  }
};

double clamp_floor(double v, double lo, bool& clamped) {
  if (v < lo) {
    clamped = true;
    return lo;
  }
  return v;
}

}  // namespace

OnlineLearner::OnlineLearner(const PerfParams& priors, const LearnerConfig& cfg)
    : cfg_(cfg), current_(priors) {
  if (!cfg.valid()) throw std::invalid_argument("invalid LearnerConfig");
  if (!priors.valid()) throw std::invalid_argument("invalid learner priors");
  buffer_.reserve(static_cast<size_t>(cfg.long_window));
}

PerfParams OnlineLearner::default_priors() {
  PerfParams p;
  p.p_max = 20.0;
  p.kB = 0.1;
  p.kS = 0.02;
  p.tau0 = 5.0;
  p.w0 = 0.0;
  p.ws = 1.0;
  p.tauB = 0.1;
  p.tauS = 0.001;
  return p;
}

void OnlineLearner::record_sample(const LatencySample& sample) {
  if (!(sample.observed_ms > 0.0) || !sample.shape.valid()) {
    throw std::invalid_argument("invalid LatencySample");
  }
  if (buffer_.size() < static_cast<size_t>(cfg_.long_window)) {
    buffer_.push_back(sample);
  } else {
    buffer_[ring_head_] = sample;  // evict oldest
    ring_head_ = (ring_head_ + 1) % buffer_.size();
  }
  ++samples_seen_;
  if (samples_seen_ % cfg_.linear_period == 0) update_linear();
  if (samples_seen_ >= cfg_.min_structural_samples &&
      samples_seen_ % cfg_.structural_period == 0) {
    update_structural();
  }
}

std::vector<LatencySample> OnlineLearner::window(int64_t n) const {
  const int64_t count = std::min<int64_t>(n, buffer_.size());
  std::vector<LatencySample> out;
  out.reserve(static_cast<size_t>(count));
  // chronological order: ring_head_ is the oldest slot once the ring is full
  const size_t size = buffer_.size();
  for (int64_t i = size - count; i < static_cast<int64_t>(size); ++i) {
    out.push_back(buffer_[(ring_head_ + static_cast<size_t>(i)) % size]);
  }
  return out;
}

OnlineLearner::LinearFit OnlineLearner::solve_linear(
    std::span<const LatencySample> samples, const PerfParams& structural) const {
  LinearFit fit;
  if (samples.size() < 5) return fit;

  Ols5 ols;
  std::vector<std::array<double, 5>> rows;
  rows.reserve(samples.size());
  for (const auto& sample : samples) {
    const double thr = throughput(structural, sample.shape);
    const double s = static_cast<double>(sample.shape.s);
    const double b = static_cast<double>(sample.shape.b);
    rows.push_back({1.0, 1.0 / thr, s / thr, b, s});
    const double inv_y = 1.0 / sample.observed_ms;
    ols.add({rows.back()[0] * inv_y, rows.back()[1] * inv_y,
             rows.back()[2] * inv_y, rows.back()[3] * inv_y,
             rows.back()[4] * inv_y},
            1.0);
  }
  const std::array<double, 5> prior{current_.tau0, current_.w0, current_.ws,
                                    current_.tauB, current_.tauS};
  auto rel_sse = [&](const std::array<double, 5>& x) {
    double acc = 0.0;
    for (size_t i = 0; i < rows.size(); ++i) {
      double pred = 0.0;
      for (int j = 0; j < 5; ++j) pred += rows[i][j] * x[j];
      const double r = (samples[i].observed_ms - pred) / samples[i].observed_ms;
      acc += r * r;
    }
    return acc;
  };
  // Short windows under noise cannot pin all five coefficients at once; the
  // anchor keeps the fit a gentle adjustment of the structural tier's
  // solution rather than a fresh arbitrary split.
  auto noise_level = [&](const std::array<double, 5>& x) {
    return 8.0 * rel_sse(x);
  };
  std::array<double, 5> x{};
  if (!ols.solve(prior, &x, noise_level, 1e-2)) return fit;

  fit.ok = true;
  fit.tau0 = clamp_floor(x[0], 0.0, fit.clamped);
  fit.w0 = clamp_floor(x[1], 0.0, fit.clamped);
  fit.ws = clamp_floor(x[2], kWsMin, fit.clamped);
  fit.tauB = clamp_floor(x[3], 0.0, fit.clamped);
  fit.tauS = clamp_floor(x[4], 0.0, fit.clamped);
  return fit;
}

double OnlineLearner::windowed_sse(std::span<const LatencySample> samples,
                                   const PerfParams& params) const {
  // Relative residuals: the noise is multiplicative, and an absolute loss
  // would let the largest batches drown out the small shapes that carry all
  // of the saturation-curve signal.
  double sse = 0.0;
  for (const auto& sample : samples) {
    const double r =
        (sample.observed_ms - predict_latency(params, sample.shape)) /
        sample.observed_ms;
    sse += r * r;
  }
  return sse;
}

// Fits everything except {kB, kS} for fixed saturation rates, in the gauge
// ws = 1 (work measured in tokens). That gauge makes 1/p_max an ordinary
// regression coefficient; without it, rescaling p_max together with
// (w0, ws) leaves every prediction unchanged and p_max means nothing.
double OnlineLearner::gauged_fit(std::span<const LatencySample> samples,
                                 double kB, double kS,
                                 PerfParams* out) const {
  Ols5 ols;
  std::vector<std::array<double, 5>> rows;
  rows.reserve(samples.size());
  for (const auto& sample : samples) {
    const double fb = -std::expm1(-kB * static_cast<double>(sample.shape.b));
    const double fs = -std::expm1(-kS * static_cast<double>(sample.shape.s));
    const double f = std::max(fb * fs, 1e-300);
    const double s = static_cast<double>(sample.shape.s);
    const double b = static_cast<double>(sample.shape.b);
    rows.push_back({1.0, 1.0 / f, s / f, b, s});
    const double inv_y = 1.0 / sample.observed_ms;
    ols.add({rows.back()[0] * inv_y, rows.back()[1] * inv_y,
             rows.back()[2] * inv_y, rows.back()[3] * inv_y,
             rows.back()[4] * inv_y},
            1.0);
  }
  // Anchor at the current parameters expressed in this gauge.
  const double cur_c = current_.ws / current_.p_max;
  const std::array<double, 5> prior{current_.tau0, current_.w0 / current_.p_max,
                                    cur_c, current_.tauB, current_.tauS};
  auto sse = [&](const std::array<double, 5>& x) {
    double acc = 0.0;
    for (size_t i = 0; i < rows.size(); ++i) {
      double pred = 0.0;
      for (int j = 0; j < 5; ++j) pred += rows[i][j] * x[j];
      const double r = (samples[i].observed_ms - pred) / samples[i].observed_ms;
      acc += r * r;
    }
    return acc;
  };
  // The long weighted window is well conditioned, so only a vanishing ridge
  // is kept as collinearity insurance; anything stronger drags the fit back
  // toward whatever split the short-window tier last produced.
  std::array<double, 5> x{};
  if (!ols.solve(prior, &x, sse, 1e-7)) {
    return std::numeric_limits<double>::infinity();
  }

  bool clamped = false;
  const double tau0 = clamp_floor(x[0], 0.0, clamped);
  const double a = clamp_floor(x[1], 0.0, clamped);           // w0 / p_max
  // Trust region on the capacity estimate: windows where every batch sits
  // deep below B-saturation leave p_max * kB identifiable only as a
  // product, and an unconstrained solve can run p_max to absurd values in
  // a single fit. Anchored on the saturated per-token slope, which stays
  // meaningful regardless of how the linear tier split it between ws and
  // tauS.
  const double slope_cur = current_.ws / current_.p_max + current_.tauS;
  const double c_lo = std::max(1.0 / kPmaxMax, slope_cur / 16.0);
  const double c_hi =
      std::max(c_lo, std::min(1.0 / kPmaxMin, 4.0 * slope_cur));
  const double c = std::clamp(x[2], c_lo, c_hi);
  const double tauB = clamp_floor(x[3], 0.0, clamped);
  const double tauS = clamp_floor(x[4], 0.0, clamped);
  (void)clamped;

  PerfParams p = current_;
  p.kB = kB;
  p.kS = kS;
  p.p_max = 1.0 / c;
  p.w0 = a / c;
  p.ws = 1.0;
  p.tau0 = tau0;
  p.tauB = tauB;
  p.tauS = tauS;
  *out = p;
  return windowed_sse(samples, p);
}

bool OnlineLearner::update_linear() {
  const auto recent = window(cfg_.short_window);
  if (recent.size() < 5) return false;
  const LinearFit fit = solve_linear(recent, current_);
  if (!fit.ok) {
    ++counters_.degenerate_updates;
    // The window cannot separate the five coefficients (typically one
    // repeated shape during cold start, when a badly wrong model keeps the
    // scheduler pinned to minimal batches). The overall scale is still
    // identifiable from any sample, and the prediction is linear in the
    // linear tier, so rescaling it applies that correction exactly. Without
    // this the cold start deadlocks: wrong model -> degenerate batches ->
    // degenerate window -> no update, forever.
    double num = 0.0;
    double den = 0.0;
    for (const auto& sample : recent) {
      const double pred = predict_latency(current_, sample.shape);
      const double wt = 1.0 / (sample.observed_ms * sample.observed_ms);
      num += wt * pred * sample.observed_ms;
      den += wt * pred * pred;
    }
    const double gamma = num / den;
    if (std::isfinite(gamma) && gamma > 0.0 && gamma != 1.0) {
      PerfParams next = current_;
      next.tau0 *= gamma;
      next.w0 *= gamma;
      next.ws = std::max(kWsMin, next.ws * gamma);
      next.tauB *= gamma;
      next.tauS *= gamma;
      current_ = next;
      ++counters_.rescale_updates;
    }
    return false;
  }
  PerfParams next = current_;
  next.tau0 = fit.tau0;
  next.w0 = fit.w0;
  next.ws = fit.ws;
  next.tauB = fit.tauB;
  next.tauS = fit.tauS;
  current_ = next;
  ++counters_.linear_updates;
  if (fit.clamped) ++counters_.clamp_events;
  return true;
}

bool OnlineLearner::update_structural() {
  const auto all = window(cfg_.long_window);
  if (static_cast<int64_t>(all.size()) < cfg_.min_structural_samples ||
      all.size() < 5) {
    return false;
  }

  // No gradient signal when every sample sits on the saturated plateau of
  // both exponential factors; keep the current estimate.
  bool saturated = true;
  int64_t prefill_shaped = 0;
  for (const auto& sample : all) {
    if (current_.kB * static_cast<double>(sample.shape.b) < kSaturatedExponent ||
        current_.kS * static_cast<double>(sample.shape.s) < kSaturatedExponent) {
      saturated = false;
    }
    // Decode batches have s == b, which leaves kB and kS perfectly
    // confounded; only chunk-carrying steps decouple the two factors.
    if (sample.shape.s >= 64 && sample.shape.s >= 4 * sample.shape.b) {
      ++prefill_shaped;
    }
  }
  if (saturated || prefill_shaped < 16) {
    ++counters_.low_identifiability;
    return false;
  }

  const double base_err = windowed_sse(all, current_);

  const double log_k_lo = std::log(1e-8);
  const double log_k_hi = std::log(1e4);
  std::array<double, 2> theta{std::log(current_.kB), std::log(current_.kS)};
  std::array<double, 2> step{0.5, 0.5};

  PerfParams best;
  double best_err = gauged_fit(all, std::exp(theta[0]), std::exp(theta[1]),
                               &best);
  if (!std::isfinite(best_err)) {
    ++counters_.failed_fits;
    return false;
  }

  // Coarse grid seed: the descent start can sit a long way from the basin
  // when the priors are badly wrong.
  for (double kb : {0.05, 0.7, 8.0}) {
    for (double ks : {0.002, 0.03, 0.4}) {
      PerfParams cand;
      const double err = gauged_fit(all, kb, ks, &cand);
      if (std::isfinite(err) && err < best_err * (1.0 - 1e-3)) {
        theta = {std::log(kb), std::log(ks)};
        best = cand;
        best_err = err;
      }
    }
  }

  constexpr int kMaxSweeps = 50;
  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    bool improved = false;
    for (int c = 0; c < 2; ++c) {
      bool coord_improved = false;
      for (double dir : {+1.0, -1.0}) {
        std::array<double, 2> cand_theta = theta;
        cand_theta[c] =
            std::clamp(cand_theta[c] + dir * step[c], log_k_lo, log_k_hi);
        if (cand_theta[c] == theta[c]) continue;
        PerfParams cand;
        const double err = gauged_fit(all, std::exp(cand_theta[0]),
                                      std::exp(cand_theta[1]), &cand);
        // Material improvement only: unidentifiable windows leave a flat
        // ridge in (p_max, kB), and drifting along it to the bounds would
        // wreck the exported capacity estimate.
        if (std::isfinite(err) && err < best_err * (1.0 - 1e-3)) {
          theta = cand_theta;
          best = cand;
          best_err = err;
          coord_improved = true;
          break;
        }
      }
      step[c] *= coord_improved ? 1.6 : 0.5;
      improved |= coord_improved;
    }
    if (!improved && std::max(step[0], step[1]) < 1e-5) break;
  }

  if (!best.valid() || best_err > base_err) {
    ++counters_.failed_fits;
    return false;
  }
  current_ = best;
  ++counters_.structural_updates;
  update_linear();  // re-fit the fast tier against the new structural params
  return true;
}

double OnlineLearner::convergence_error(
    std::span<const LatencySample> probe) const {
  if (probe.empty()) throw std::invalid_argument("empty probe");
  double acc = 0.0;
  for (const auto& sample : probe) {
    acc += std::fabs(predict_latency(current_, sample.shape) -
                     sample.observed_ms) /
           sample.observed_ms;
  }
  return acc / static_cast<double>(probe.size());
}

std::string OnlineLearner::to_json() const {
  nlohmann::ordered_json j;
  j["params"] = nlohmann::ordered_json::parse(current_.to_json());
  j["samples_seen"] = samples_seen_;
  j["buffered"] = buffered();
  j["linear_updates"] = counters_.linear_updates;
  j["structural_updates"] = counters_.structural_updates;
  j["degenerate_updates"] = counters_.degenerate_updates;
  j["rescale_updates"] = counters_.rescale_updates;
  j["clamp_events"] = counters_.clamp_events;
  j["failed_fits"] = counters_.failed_fits;
  j["low_identifiability"] = counters_.low_identifiability;
  return j.dump(2);
}

std::vector<LatencySample> load_samples_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open samples file: " + path);
  std::vector<LatencySample> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      LatencySample s;
      s.shape.b = j.at("b").get<int64_t>();
      s.shape.s = j.at("s").get<int64_t>();
      s.observed_ms = j.at("observed_ms").get<double>();
      s.sim_time_ms = j.value("sim_time_ms", 0.0);
      if (!s.shape.valid() || !(s.observed_ms > 0.0)) {
        throw std::runtime_error("invariant violation");
      }
      out.push_back(s);
    } catch (const std::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": bad sample record: " + e.what());
    }
  }
  return out;
}

}  // namespace servesim
