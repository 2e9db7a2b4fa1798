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

#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "kvswitch/config.hpp"
#include "kvswitch/errors.hpp"

using namespace kvswitch;
using nlohmann::json;

namespace {

std::string key_of(const json& doc) {
  try {
    parse_config(doc);
  } catch (const ConfigError& e) {
    return e.key();
  }
  return "";
}

}  // namespace

TEST(Config, DefaultsParse) {
  const RunConfig c = parse_config(json::object());
  EXPECT_EQ(c.seed, 42u);
  EXPECT_EQ(c.engine.mode, AblationMode::Full);
  EXPECT_EQ(c.engine.gpu_blocks, 640);
  EXPECT_EQ(c.engine.transfer.dispatch_per_op.us(), 12);
  EXPECT_EQ(c.engine.transfer.bandwidth_bytes_per_us, 32000);
  EXPECT_EQ(c.priority.pattern, PriorityPattern::Markov);
  EXPECT_DOUBLE_EQ(c.priority.frequency, 0.02);
  EXPECT_FALSE(c.engine.scheduler.max_running.has_value());
  // The full default document parses to the same thing.
  EXPECT_EQ(parse_config(json(default_config_json())).engine.gpu_blocks, 640);
}

TEST(Config, ErrorsNameTheKey) {
  EXPECT_EQ(key_of({{"transfer", {{"bandwidth", -1}}}}), "transfer.bandwidth");
  EXPECT_EQ(key_of({{"transfer", {{"bandwidth", "fast"}}}}), "transfer.bandwidth");
  EXPECT_EQ(key_of({{"gpu", {{"totl_blocks", 10}}}}), "gpu.totl_blocks");
  EXPECT_EQ(key_of({{"mode", "turbo"}}), "mode");
  EXPECT_EQ(key_of({{"priority", {{"frequency", 1.5}}}}), "priority.frequency");
  EXPECT_EQ(key_of({{"priority", {{"pattern", "zipf"}}}}), "priority.pattern");
  EXPECT_EQ(key_of({{"priority", {{"pattern", "replay"}}}}), "priority.replay_path");
  EXPECT_EQ(key_of({{"gpu", {{"initial_group_blocks", 1000}}}}), "gpu.initial_group_blocks");
  EXPECT_EQ(key_of({{"infer", {{"prefill_per_token_us", 1}}}}), "infer.prefill_per_token_us");
  EXPECT_EQ(key_of({{"workload", {{"arrival_rate", 0}}}}), "workload.arrival_rate");
  EXPECT_EQ(key_of({{"workload", {{"max_context_tokens", 100000}}}}), "workload.max_context_tokens");
  EXPECT_EQ(key_of({{"scheduler", {{"max_running", 0}}}}), "scheduler.max_running");
  EXPECT_EQ(key_of({{"engine", {{"check_invariants", 1}}}}), "engine.check_invariants");
  EXPECT_EQ(key_of({{"gpu", 5}}), "gpu");
  EXPECT_EQ(key_of({{"cpu", {{"prealloc_max_blocks", 2}}}}), "cpu.prealloc_max_blocks");
}

TEST(Config, IntegralFloatsAccepted) {
  const RunConfig c = parse_config({{"gpu", {{"total_blocks", 512.0}}}});
  EXPECT_EQ(c.engine.gpu_blocks, 512);
  EXPECT_EQ(key_of({{"gpu", {{"total_blocks", 512.5}}}}), "gpu.total_blocks");
}

TEST(Config, Aliases) {
  json doc = json::object();
  set_config_value(doc, "frequency", 0.1);
  set_config_value(doc, "pattern", "random");
  set_config_value(doc, "gpu_blocks", 800);
  set_config_value(doc, "cpu_blocks", 4096);
  set_config_value(doc, "initial_group_tokens", 100);
  set_config_value(doc, "seed", 7);
  set_config_value(doc, "mode", "baseline");
  set_config_value(doc, "transfer.sync_batch", 4);
  const RunConfig c = parse_config(doc);
  EXPECT_DOUBLE_EQ(c.priority.frequency, 0.1);
  EXPECT_EQ(c.priority.pattern, PriorityPattern::Random);
  EXPECT_EQ(c.engine.gpu_blocks, 800);
  EXPECT_EQ(c.engine.cpu.total_blocks, 4096);
  EXPECT_EQ(c.engine.initial_group_blocks, 7);  // ceil(100 / 16)
  EXPECT_EQ(c.seed, 7u);
  EXPECT_EQ(c.engine.mode, AblationMode::Baseline);
  EXPECT_EQ(c.engine.transfer.sync_batch, 4);
  EXPECT_THROW(set_config_value(doc, "transfer.nope", 1), ConfigError);
  EXPECT_THROW(set_config_value(doc, "nope", 1), ConfigError);
}

TEST(Config, SeedsDerivePerComponent) {
  const RunConfig a = parse_config({{"seed", 1}});
  const RunConfig b = parse_config({{"seed", 2}});
  EXPECT_NE(a.workload.seed, b.workload.seed);
  EXPECT_NE(a.workload.seed, a.priority.seed);
}

TEST(Config, FileErrors) {
  EXPECT_THROW(load_config("/nonexistent/config.json"), ConfigError);
  const auto path = (std::filesystem::temp_directory_path() / "kvswitch_bad.json").string();
  { std::ofstream(path) << "{ nope"; }
  EXPECT_THROW(load_config(path), ConfigError);
  std::remove(path.c_str());
}

TEST(Config, AtomicWrite) {
  const auto path = (std::filesystem::temp_directory_path() / "kvswitch_atomic.txt").string();
  write_file_atomic(path, "one");
  write_file_atomic(path, "two");
  std::ifstream is(path);
  std::string s;
  is >> s;
  EXPECT_EQ(s, "two");
  std::remove(path.c_str());
  EXPECT_THROW(write_file_atomic("/nonexistent/dir/x.txt", "z"), std::runtime_error);
}

TEST(Config, ExecuteSmallRun) {
  json doc = {{"workload", {{"num_conversations", 5}, {"arrival_rate", 50.0}}},
              {"engine", {{"check_invariants", true}}}};
  const RunConfig c = parse_config(doc);
  std::vector<TraceRecord> records;
  const MetricsReport m = execute(c, nullptr, &records);
  EXPECT_EQ(m.conversations, 5);
  EXPECT_EQ(m.tokens_emitted, m.tokens_expected);
}
