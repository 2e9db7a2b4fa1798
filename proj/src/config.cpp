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

#include "kvswitch/config.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unistd.h>

#include "kvswitch/errors.hpp"
#include "kvswitch/rng.hpp"

namespace kvswitch {

using nlohmann::json;
using nlohmann::ordered_json;

ordered_json default_config_json() {
  ordered_json d;
  d["seed"] = 42;
  d["mode"] = "full";
  d["block"] = {{"block_size_tokens", 16}, {"bytes_per_block", 131072}};
  d["gpu"] = {{"total_blocks", 640}, {"initial_group_blocks", 60}, {"victim_policy", "random"}};
  d["cpu"] = {{"total_blocks", 491520}, {"prealloc_min_blocks", 8}, {"prealloc_max_blocks", 256}};
  d["transfer"] = {{"dispatch_per_op_us", 12},
                   {"bandwidth", 32000},
                   {"per_op_latency_floor_us", 2},
                   {"sync_batch", 8}};
  d["infer"] = {{"decode_base_us", 200}, {"decode_per_token_us", 2}, {"prefill_per_token_us", 4}};
  d["scheduler"] = {{"max_running", nullptr}, {"preemption_mode", "swap"}};
  d["swap"] = {{"sync_threshold_ratio", 0.5}, {"short_request_blocks", 16}, {"r_info_window", 64}};
  d["workload"] = {{"num_conversations", 200},
                   {"arrival_rate", 1.0},
                   {"mean_turns", 5.5},
                   {"input_mean", 120.0},
                   {"input_sigma", 1.0},
                   {"output_mean", 240.0},
                   {"output_sigma", 0.8},
                   {"think_time_mean_s", 10.0},
                   {"max_context_tokens", 4096},
                   {"trace_path", ""}};
  d["priority"] = {{"pattern", "markov"}, {"frequency", 0.02}, {"p_keep", 0.8}, {"replay_path", ""}};
  d["engine"] = {{"expected_output_tokens", 256},
                 {"deadlock_iterations", 10},
                 {"efficiency_interval", 5},
                 {"check_invariants", false}};
  d["output"] = {{"report", ""},
                 {"csv", ""},
                 {"swap_log", ""},
                 {"iteration_log", ""},
                 {"priority_trace", ""}};
  return d;
}

namespace {

std::string join(const std::string& prefix, const std::string& key) {
  return prefix.empty() ? key : prefix + "." + key;
}

void overlay(ordered_json& base, const json& doc, const std::string& prefix) {
  if (!doc.is_object()) throw ConfigError(prefix.empty() ? "<root>" : prefix, "expected an object");
  for (const auto& [key, value] : doc.items()) {
    const std::string path = join(prefix, key);
    if (!base.contains(key)) throw ConfigError(path, "unknown key");
    ordered_json& slot = base[key];
    if (slot.is_object()) {
      overlay(slot, value, path);
    } else if (slot.is_boolean()) {
      if (!value.is_boolean()) throw ConfigError(path, "expected a boolean");
      slot = value;
    } else if (slot.is_string()) {
      if (!value.is_string()) throw ConfigError(path, "expected a string");
      slot = value;
    } else if (slot.is_number_integer()) {
      if (value.is_number_float() && std::floor(value.get<double>()) == value.get<double>()) {
        slot = static_cast<std::int64_t>(value.get<double>());
      } else if (!value.is_number_integer()) {
        throw ConfigError(path, "expected an integer");
      } else {
        slot = value;
      }
    } else if (slot.is_number()) {
      if (!value.is_number()) throw ConfigError(path, "expected a number");
      slot = value.get<double>();
    } else if (slot.is_null()) {
      if (!value.is_null() && !value.is_number_integer()) {
        throw ConfigError(path, "expected an integer or null");
      }
      slot = value;
    }
  }
}

class Reader {
 public:
  explicit Reader(const ordered_json& doc) : doc_(doc) {}

  const ordered_json& at(const std::string& path) const {
    const ordered_json* node = &doc_;
    std::size_t pos = 0;
    while (true) {
      const auto dot = path.find('.', pos);
      node = &node->at(path.substr(pos, dot - pos));
      if (dot == std::string::npos) return *node;
      pos = dot + 1;
    }
  }
  std::int64_t integer(const std::string& path, std::int64_t min) const {
    const auto v = at(path).get<std::int64_t>();
    if (v < min) throw ConfigError(path, "must be >= " + std::to_string(min));
    return v;
  }
  double positive(const std::string& path) const {
    const auto v = at(path).get<double>();
    if (!(v > 0.0)) throw ConfigError(path, "must be > 0");
    return v;
  }
  double nonnegative(const std::string& path) const {
    const auto v = at(path).get<double>();
    if (!(v >= 0.0)) throw ConfigError(path, "must be >= 0");
    return v;
  }
  double unit(const std::string& path) const {
    const auto v = at(path).get<double>();
    if (!(v >= 0.0 && v <= 1.0)) throw ConfigError(path, "must be in [0, 1]");
    return v;
  }
  std::string str(const std::string& path) const { return at(path).get<std::string>(); }
  bool boolean(const std::string& path) const { return at(path).get<bool>(); }

 private:
  const ordered_json& doc_;
};

}  // namespace

RunConfig parse_config(const json& doc) {
  ordered_json merged = default_config_json();
  overlay(merged, doc, "");
  const Reader r(merged);

  RunConfig c;
  c.seed = static_cast<std::uint64_t>(r.integer("seed", 0));
  EngineConfig& e = c.engine;
  const auto mode = parse_ablation(r.str("mode"));
  if (!mode) throw ConfigError("mode", "expected baseline, blockgroup, blockgroup_reuse or full");
  e.mode = *mode;
  e.seed = c.seed;

  e.block.block_size_tokens = r.integer("block.block_size_tokens", 1);
  e.block.bytes_per_block = r.integer("block.bytes_per_block", 1);
  e.gpu_blocks = r.integer("gpu.total_blocks", 1);
  e.initial_group_blocks = r.integer("gpu.initial_group_blocks", 1);
  if (e.initial_group_blocks > e.gpu_blocks) {
    throw ConfigError("gpu.initial_group_blocks", "must not exceed gpu.total_blocks");
  }
  const std::string victim = r.str("gpu.victim_policy");
  if (victim == "random") {
    e.victim_policy = VictimPolicy::Random;
  } else if (victim == "lowest_priority") {
    e.victim_policy = VictimPolicy::LowestPriority;
  } else {
    throw ConfigError("gpu.victim_policy", "expected random or lowest_priority");
  }

  e.cpu.total_blocks = r.integer("cpu.total_blocks", 1);
  e.cpu.prealloc_min_blocks = r.integer("cpu.prealloc_min_blocks", 0);
  e.cpu.prealloc_max_blocks = r.integer("cpu.prealloc_max_blocks", 0);
  if (e.cpu.prealloc_max_blocks < e.cpu.prealloc_min_blocks) {
    throw ConfigError("cpu.prealloc_max_blocks", "must be >= cpu.prealloc_min_blocks");
  }

  e.transfer.dispatch_per_op = SimTime{r.integer("transfer.dispatch_per_op_us", 1)};
  e.transfer.bandwidth_bytes_per_us = r.integer("transfer.bandwidth", 1);
  e.transfer.per_op_latency_floor = SimTime{r.integer("transfer.per_op_latency_floor_us", 1)};
  e.transfer.sync_batch = r.integer("transfer.sync_batch", 1);

  e.infer.decode_base = SimTime{r.integer("infer.decode_base_us", 0)};
  e.infer.decode_per_token = SimTime{r.integer("infer.decode_per_token_us", 0)};
  e.infer.prefill_per_token = SimTime{r.integer("infer.prefill_per_token_us", 0)};
  if (!(e.infer.prefill_per_token > e.infer.decode_per_token)) {
    throw ConfigError("infer.prefill_per_token_us", "must exceed infer.decode_per_token_us");
  }

  if (!r.at("scheduler.max_running").is_null()) {
    e.scheduler.max_running = r.integer("scheduler.max_running", 1);
  }
  const std::string pre = r.str("scheduler.preemption_mode");
  if (pre == "swap") {
    e.scheduler.preemption_mode = PreemptionMode::Swap;
  } else if (pre == "recompute") {
    e.scheduler.preemption_mode = PreemptionMode::Recompute;
  } else {
    throw ConfigError("scheduler.preemption_mode", "expected swap or recompute");
  }

  e.swap.sync_threshold_ratio = r.nonnegative("swap.sync_threshold_ratio");
  e.swap.short_request_blocks = r.integer("swap.short_request_blocks", 0);
  e.swap.r_info_window = static_cast<std::size_t>(r.integer("swap.r_info_window", 1));

  e.expected_output_tokens = r.integer("engine.expected_output_tokens", 1);
  e.deadlock_iterations = r.integer("engine.deadlock_iterations", 1);
  e.efficiency_interval = r.integer("engine.efficiency_interval", 1);
  e.check_invariants = r.boolean("engine.check_invariants");

  WorkloadConfig& w = c.workload;
  w.num_conversations = r.integer("workload.num_conversations", 0);
  w.arrival_rate = r.positive("workload.arrival_rate");
  w.mean_turns = r.positive("workload.mean_turns");
  if (w.mean_turns < 1.0) throw ConfigError("workload.mean_turns", "must be >= 1");
  w.input_mean = r.positive("workload.input_mean");
  w.input_sigma = r.nonnegative("workload.input_sigma");
  w.output_mean = r.positive("workload.output_mean");
  w.output_sigma = r.nonnegative("workload.output_sigma");
  w.think_time_mean_s = r.nonnegative("workload.think_time_mean_s");
  w.max_context_tokens = r.integer("workload.max_context_tokens", 2);
  if (blocks_needed(w.max_context_tokens, e.block) > e.gpu_blocks) {
    throw ConfigError("workload.max_context_tokens", "a full conversation must fit in gpu.total_blocks");
  }
  w.seed = derive_seed(c.seed, "workload");
  c.trace_path = r.str("workload.trace_path");

  PriorityTraceConfig& p = c.priority;
  const auto pattern = parse_priority_pattern(r.str("priority.pattern"));
  if (!pattern) throw ConfigError("priority.pattern", "expected markov, random or replay");
  p.pattern = *pattern;
  p.frequency = r.unit("priority.frequency");
  p.p_keep = r.unit("priority.p_keep");
  p.replay_path = r.str("priority.replay_path");
  if (p.pattern == PriorityPattern::Replay && p.replay_path.empty()) {
    throw ConfigError("priority.replay_path", "required by the replay pattern");
  }
  p.seed = derive_seed(c.seed, "priority");

  c.output.report = r.str("output.report");
  c.output.csv = r.str("output.csv");
  c.output.swap_log = r.str("output.swap_log");
  c.output.iteration_log = r.str("output.iteration_log");
  c.output.priority_trace = r.str("output.priority_trace");
  return c;
}

json read_config_json(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("<file>", "cannot read " + path);
  try {
    return json::parse(is);
  } catch (const json::parse_error& ex) {
    throw ConfigError("<file>", std::string("malformed JSON: ") + ex.what());
  }
}

RunConfig load_config(const std::string& path) { return parse_config(read_config_json(path)); }

void set_config_value(json& doc, const std::string& key, const json& value) {
  std::string path = key;
  json v = value;
  if (key == "frequency") path = "priority.frequency";
  if (key == "pattern") path = "priority.pattern";
  if (key == "initial_group_blocks") path = "gpu.initial_group_blocks";
  if (key == "cpu_blocks") path = "cpu.total_blocks";
  if (key == "gpu_blocks") path = "gpu.total_blocks";
  if (key == "initial_group_tokens") {
    if (!value.is_number()) throw ConfigError(key, "expected a number");
    std::int64_t bs = 16;
    if (doc.contains("block") && doc["block"].contains("block_size_tokens")) {
      bs = doc["block"]["block_size_tokens"].get<std::int64_t>();
    }
    path = "gpu.initial_group_blocks";
    v = static_cast<std::int64_t>(std::ceil(value.get<double>() / static_cast<double>(bs)));
  }

  const ordered_json defaults = default_config_json();
  const ordered_json* def = &defaults;
  json* node = &doc;
  std::size_t pos = 0;
  while (true) {
    const auto dot = path.find('.', pos);
    const std::string part = path.substr(pos, dot - pos);
    if (!def->is_object() || !def->contains(part)) throw ConfigError(key, "unknown key");
    def = &(*def)[part];
    if (!node->is_object()) *node = json::object();
    if (dot == std::string::npos) {
      (*node)[part] = v;
      return;
    }
    node = &(*node)[part];
    pos = dot + 1;
  }
}

std::vector<Conversation> build_workload(const RunConfig& cfg) {
  if (!cfg.trace_path.empty()) return ingest(cfg.trace_path);
  return generate(cfg.workload);
}

MetricsReport execute(const RunConfig& cfg, RunObserver* observer,
                      std::vector<TraceRecord>* priority_records) {
  const auto workload = build_workload(cfg);
  std::vector<RequestId> ids;
  ids.reserve(workload.size());
  for (const Conversation& c : workload) ids.push_back(c.id);
  PriorityTrace trace(cfg.priority, ids);
  MetricsReport report = run(workload, trace, cfg.engine, observer);
  if (priority_records) *priority_records = trace.records();
  return report;
}

void write_file_atomic(const std::string& path, const std::string& content) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  fs::path tmp = target;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + path);
    os << content;
    os.flush();
    if (!os) {
      std::error_code ec;
      fs::remove(tmp, ec);
      throw std::runtime_error("short write to " + path);
    }
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw std::runtime_error("cannot replace " + path);
  }
}

}  // namespace kvswitch
