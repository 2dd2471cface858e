#include "servesim/perf_model.h"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "json.hpp"

namespace servesim {
namespace {

// Largest double below 1. The exponential factors are clamped here so the
// throughput bound 0 < Thr < p_max stays strict even once 1-e^(-x) rounds
// to 1 in double precision.
const double kFactorMax = std::nextafter(1.0, 0.0);

double saturation_factor(double k, double x) {
  const double f = -std::expm1(-k * static_cast<double>(x));
  return f < kFactorMax ? f : kFactorMax;
}

void require_valid(const PerfParams& params, const BatchShape& shape) {
  if (!shape.valid()) {
    throw std::invalid_argument("BatchShape requires b >= 1 and s >= b");
  }
  if (!params.valid()) {
    throw std::invalid_argument("PerfParams violate invariants");
  }
}

}  // namespace

bool PerfParams::valid() const {
  return p_max > 0.0 && kB > 0.0 && kS > 0.0 && tau0 >= 0.0 && tauB >= 0.0 &&
         tauS >= 0.0 && ws > 0.0 && w0 >= 0.0;
}

double throughput(const PerfParams& params, const BatchShape& shape) {
  require_valid(params, shape);
  return params.p_max * saturation_factor(params.kB, double(shape.b)) *
         saturation_factor(params.kS, double(shape.s));
}

double predict_latency(const PerfParams& params, const BatchShape& shape) {
  const double thr = throughput(params, shape);
  const double work = params.w0 + params.ws * static_cast<double>(shape.s);
  return params.tau0 + work / thr + params.tauB * static_cast<double>(shape.b) +
         params.tauS * static_cast<double>(shape.s);
}

double goodness_of_fit(const PerfParams& params,
                       std::span<const LatencySample> samples) {
  if (samples.size() < 2) {
    throw std::invalid_argument("goodness_of_fit needs at least 2 samples");
  }
  double mean = 0.0;
  for (const auto& s : samples) mean += s.observed_ms;
  mean /= static_cast<double>(samples.size());

  double ss_tot = 0.0;
  double ss_res = 0.0;
  for (const auto& s : samples) {
    const double r = s.observed_ms - predict_latency(params, s.shape);
    ss_res += r * r;
    const double d = s.observed_ms - mean;
    ss_tot += d * d;
  }
  if (ss_tot <= 0.0) {
    throw std::invalid_argument("goodness_of_fit undefined: zero variance");
  }
  return 1.0 - ss_res / ss_tot;
}

std::string PerfParams::to_json() const {
  nlohmann::ordered_json j;
  j["tau0"] = tau0;
  j["w0"] = w0;
  j["ws"] = ws;
  j["tauB"] = tauB;
  j["tauS"] = tauS;
  j["p_max"] = p_max;
  j["kB"] = kB;
  j["kS"] = kS;
  return j.dump();
}

PerfParams PerfParams::from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  PerfParams p;
  p.tau0 = j.at("tau0").get<double>();
  p.w0 = j.at("w0").get<double>();
  p.ws = j.at("ws").get<double>();
  p.tauB = j.at("tauB").get<double>();
  p.tauS = j.at("tauS").get<double>();
  p.p_max = j.at("p_max").get<double>();
  p.kB = j.at("kB").get<double>();
  p.kS = j.at("kS").get<double>();
  if (!p.valid()) {
    throw std::invalid_argument("PerfParams JSON violates invariants");
  }
  return p;
}

}  // namespace servesim
