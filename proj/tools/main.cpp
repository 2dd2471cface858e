#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "servesim/learner.h"
#include "servesim/sim.h"
#include "servesim/workload.h"

namespace {

std::vector<std::string> split_csv(const std::string& values) {
  std::vector<std::string> out;
  std::stringstream ss(values);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deterministic simulator for two-tier LLM serving clusters"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  uint64_t seed = 0;
  bool seed_set = false;

  auto* run_cmd = app.add_subcommand("run", "Run one simulation");
  run_cmd->add_option("--config", config_path, "Run config JSON")->required();
  run_cmd->add_option("--seed", seed, "Override the config seed")
      ->each([&](const std::string&) { seed_set = true; });
  run_cmd->add_option("--out", out_dir, "Output directory override");

  std::string axis;
  std::string values;
  std::string sweep_out;
  auto* sweep_cmd =
      app.add_subcommand("sweep", "Run one simulation per axis value");
  sweep_cmd->add_option("--config", config_path, "Run config JSON")
      ->required();
  sweep_cmd->add_option("--axis", axis, "rate | policy | budget")->required();
  sweep_cmd->add_option("--values", values, "Comma-separated axis values")
      ->required();
  sweep_cmd->add_option("--out", sweep_out, "CSV output path");
  sweep_cmd->add_option("--seed", seed, "Override the config seed")
      ->each([&](const std::string&) { seed_set = true; });

  std::string params_path;
  std::string samples_path;
  auto* validate_cmd = app.add_subcommand(
      "validate-model", "Score a parameter set against observed samples");
  validate_cmd->add_option("--params", params_path, "PerfParams JSON")
      ->required();
  validate_cmd
      ->add_option("--samples", samples_path, "LatencySample JSONL")
      ->required();

  std::string scenario;
  int64_t n = 1000;
  uint64_t trace_seed = 1;
  std::string trace_out;
  double trace_rate = 1.0;
  auto* gen_cmd =
      app.add_subcommand("gen-trace", "Generate a synthetic trace");
  gen_cmd->add_option("--scenario", scenario, "Scenario preset name")
      ->required();
  gen_cmd->add_option("--n", n, "Request count")->required();
  gen_cmd->add_option("--seed", trace_seed, "Generator seed")->required();
  gen_cmd->add_option("--out", trace_out, "Trace JSONL path")->required();
  gen_cmd->add_option("--rate", trace_rate,
                      "Uniform arrival rate, requests/s (default 1)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run_cmd) {
      servesim::RunConfig cfg = servesim::RunConfig::from_json_file(config_path);
      if (seed_set) cfg.seed = seed;
      if (!out_dir.empty()) cfg.output.dir = out_dir;
      const servesim::RunResult result = servesim::run_simulation(cfg);
      std::cout << result.summary_json;
      return 0;
    }
    if (*sweep_cmd) {
      servesim::RunConfig cfg = servesim::RunConfig::from_json_file(config_path);
      if (seed_set) cfg.seed = seed;
      const auto result = servesim::sweep(
          cfg, servesim::sweep_axis_from_string(axis), split_csv(values));
      const std::string csv = servesim::sweep_csv(result);
      if (!sweep_out.empty()) {
        std::ofstream out(sweep_out);
        if (!out) throw std::runtime_error("cannot write " + sweep_out);
        out << csv;
      }
      std::cout << csv;
      return 0;
    }
    if (*validate_cmd) {
      std::ifstream in(params_path);
      if (!in) throw std::runtime_error("cannot open " + params_path);
      std::stringstream buf;
      buf << in.rdbuf();
      const auto params = servesim::PerfParams::from_json(buf.str());
      const auto samples = servesim::load_samples_jsonl(samples_path);
      const double r2 = servesim::goodness_of_fit(params, samples);
      std::printf("samples: %zu\nr2: %.6f\n", samples.size(), r2);
      return 0;
    }
    if (*gen_cmd) {
      const auto& stats = servesim::scenario_by_name(scenario);
      auto records = servesim::synth_generate(stats, n, trace_seed);
      records = servesim::assign_arrivals(
          std::move(records), servesim::ArrivalMode::kQps, trace_rate,
          trace_seed);
      servesim::write_trace(trace_out, records);
      std::printf("wrote %zu records to %s\n", records.size(),
                  trace_out.c_str());
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
