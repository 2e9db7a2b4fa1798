/* Copyright 2026 The kvswitch Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "kvswitch/cli.hpp"

#include <cstdlib>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "kvswitch/config.hpp"
#include "kvswitch/errors.hpp"

namespace kvswitch {

namespace {

void setup_logging() {
  auto logger = spdlog::get("kvswitch");
  if (!logger) logger = spdlog::stderr_color_mt("kvswitch");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%l] %v");
  spdlog::set_level(spdlog::level::warn);
  if (const char* env = std::getenv("KVSWITCH_LOG")) {
    const auto level = spdlog::level::from_str(env);
    // from_str maps unknown names to off; only honour real level names.
    if (level != spdlog::level::off || std::string(env) == "off") spdlog::set_level(level);
  }
}

class LogObserver : public RunObserver {
 public:
  LogObserver(bool swaps, bool iterations) : swaps_(swaps), iterations_(iterations) {}

  void on_iteration(const IterationRecord& rec, const QueueState&,
                    std::span<const RequestId>) override {
    if (iterations_) iteration_log += to_jsonl(rec) + '\n';
    if (spdlog::should_log(spdlog::level::trace)) {
      spdlog::trace("iteration {} batch {} stall {}us", rec.index, rec.batch_size,
                    rec.stall().us());
    }
  }
  void on_swap_event(const SwapEvent& e) override {
    if (swaps_) swap_log += to_jsonl(e) + '\n';
  }

  std::string swap_log;
  std::string iteration_log;

 private:
  bool swaps_;
  bool iterations_;
};

void write_outputs(const RunConfig& cfg, const MetricsReport& report, const std::string& out) {
  if (!cfg.output.report.empty()) write_file_atomic(cfg.output.report, report.to_json());
  if (!cfg.output.csv.empty()) write_file_atomic(cfg.output.csv, report.to_csv());
  if (!out.empty()) {
    const bool csv = out.size() >= 4 && out.substr(out.size() - 4) == ".csv";
    write_file_atomic(out, csv ? report.to_csv() : report.to_json());
  }
  if (out.empty() && cfg.output.report.empty() && cfg.output.csv.empty()) {
    std::cout << report.to_json();
  }
}

int cmd_run(const std::string& config_path, const std::string& ablation,
            std::optional<std::uint64_t> seed, const std::string& out) {
  nlohmann::json doc = read_config_json(config_path);
  if (!ablation.empty()) set_config_value(doc, "mode", ablation);
  if (seed) set_config_value(doc, "seed", *seed);
  const RunConfig cfg = parse_config(doc);
  spdlog::info("running {} conversations in {} mode", cfg.workload.num_conversations,
               to_string(cfg.engine.mode));
  LogObserver obs(!cfg.output.swap_log.empty(), !cfg.output.iteration_log.empty());
  std::vector<TraceRecord> records;
  const MetricsReport report = execute(cfg, &obs, &records);
  if (!cfg.output.swap_log.empty()) write_file_atomic(cfg.output.swap_log, obs.swap_log);
  if (!cfg.output.iteration_log.empty()) {
    write_file_atomic(cfg.output.iteration_log, obs.iteration_log);
  }
  if (!cfg.output.priority_trace.empty()) {
    std::string text;
    for (const TraceRecord& r : records) {
      nlohmann::ordered_json j;
      j["epoch"] = r.epoch;
      j["request_id"] = r.request.value();
      j["rank"] = r.rank;
      text += j.dump() + '\n';
    }
    write_file_atomic(cfg.output.priority_trace, text);
  }
  write_outputs(cfg, report, out);
  spdlog::info("done: {} iterations, overhead ratio {:.4f}", report.iterations,
               report.overhead_ratio);
  return 0;
}

int cmd_gen_trace(const std::string& config_path, const std::string& out) {
  const RunConfig cfg = load_config(config_path);
  const auto convs = generate(cfg.workload);
  write_file_atomic(out, export_trace(convs));
  spdlog::info("wrote {} conversations to {}", convs.size(), out);
  return 0;
}

nlohmann::json parse_value(const std::string& token) {
  try {
    std::size_t used = 0;
    const long long i = std::stoll(token, &used);
    if (used == token.size()) return i;
  } catch (const std::exception&) {
  }
  try {
    std::size_t used = 0;
    const double d = std::stod(token, &used);
    if (used == token.size()) return d;
  } catch (const std::exception&) {
  }
  return token;
}

int cmd_sweep(const std::string& config_path, const std::string& param, const std::string& values,
              const std::string& out) {
  std::vector<std::string> tokens;
  std::stringstream ss(values);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b != std::string::npos) tokens.push_back(item.substr(b, e - b + 1));
  }
  if (tokens.empty()) throw ConfigError(param, "sweep needs at least one value");

  const nlohmann::json base = read_config_json(config_path);
  std::string csv;
  for (const std::string& token : tokens) {
    nlohmann::json doc = base;
    set_config_value(doc, param, parse_value(token));
    RunConfig cfg = parse_config(doc);
    spdlog::info("sweep {}={}", param, token);
    const MetricsReport report = execute(cfg);
    const std::string rows = report.to_csv();
    std::istringstream lines(rows);
    std::string line;
    std::getline(lines, line);  // header
    std::string header = "param,value";
    std::string row = param + "," + token;
    while (std::getline(lines, line)) {
      const auto comma = line.find(',');
      header += "," + line.substr(0, comma);
      row += "," + line.substr(comma + 1);
    }
    if (csv.empty()) csv = header + "\n";
    csv += row + "\n";
  }
  write_file_atomic(out, csv);
  return 0;
}

}  // namespace

int cli_main(int argc, char** argv) {
  setup_logging();
  CLI::App app{"kvswitch: KV-cache context-switching simulator"};
  app.require_subcommand(1);

  std::string config;
  std::string out;
  std::string ablation;
  std::optional<std::uint64_t> seed;
  std::string param;
  std::string values;

  auto* run = app.add_subcommand("run", "Run one simulation and write its metrics report");
  run->add_option("--config", config, "Run config (JSON)")->required();
  run->add_option("--ablation", ablation, "baseline | blockgroup | blockgroup_reuse | full");
  run->add_option("--seed", seed, "Top-level seed");
  run->add_option("--out", out, "Report path (.csv for CSV, JSON otherwise)");

  auto* gen = app.add_subcommand("gen-trace", "Generate a workload trace (JSONL)");
  gen->add_option("--config", config, "Run config (JSON)")->required();
  gen->add_option("--out", out, "Trace path")->required();

  auto* sweep = app.add_subcommand("sweep", "Run one simulation per value of a parameter");
  sweep->add_option("--config", config, "Run config (JSON)")->required();
  sweep->add_option("--param", param, "Dotted config key or alias")->required();
  sweep->add_option("--values", values, "Comma-separated values")->required();
  sweep->add_option("--out", out, "Combined CSV path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*run) return cmd_run(config, ablation, seed, out);
    if (*gen) return cmd_gen_trace(config, out);
    if (*sweep) return cmd_sweep(config, param, values, out);
  } catch (const ConfigError& e) {
    std::cerr << "kvswitch: invalid config: " << e.what() << '\n';
    return 1;
  } catch (const SimulationAborted& e) {
    std::cerr << "kvswitch: simulation aborted: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "kvswitch: " << e.what() << '\n';
    return 1;
  }
  return 1;
}

}  // namespace kvswitch
