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

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "kvswitch/engine.hpp"
#include "kvswitch/scheduler.hpp"
#include "kvswitch/workload.hpp"

namespace kvswitch {

struct OutputConfig {
  std::string report;  // JSON report; empty disables
  std::string csv;     // CSV report; empty disables
  std::string swap_log;
  std::string iteration_log;
  std::string priority_trace;
};

struct RunConfig {
  std::uint64_t seed = 42;
  EngineConfig engine;
  WorkloadConfig workload;
  // When set, the workload is ingested from this JSONL file instead of generated.
  std::string trace_path;
  PriorityTraceConfig priority;
  OutputConfig output;
};

// The full document with every key at its default value. Any key absent from
// it is rejected by parse_config.
nlohmann::ordered_json default_config_json();

// Overlays `doc` on the defaults, checks types, ranges and unknown keys, and
// builds the typed config. Throws ConfigError naming the offending key.
RunConfig parse_config(const nlohmann::json& doc);
nlohmann::json read_config_json(const std::string& path);
RunConfig load_config(const std::string& path);

// Sets a dotted key (or one of the sweep aliases) in a config document.
// Aliases: frequency, pattern, initial_group_tokens, initial_group_blocks,
// cpu_blocks, gpu_blocks, seed, mode.
void set_config_value(nlohmann::json& doc, const std::string& key, const nlohmann::json& value);

// Builds the workload and priority trace from `cfg` and runs the engine.
std::vector<Conversation> build_workload(const RunConfig& cfg);
MetricsReport execute(const RunConfig& cfg, RunObserver* observer = nullptr,
                      std::vector<TraceRecord>* priority_records = nullptr);

// Writes through a temporary file in the same directory and renames it over `path`.
void write_file_atomic(const std::string& path, const std::string& content);

}  // namespace kvswitch
