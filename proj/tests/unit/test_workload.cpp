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

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "kvswitch/errors.hpp"
#include "kvswitch/workload.hpp"

using namespace kvswitch;

namespace {

WorkloadConfig big() {
  WorkloadConfig c;
  c.num_conversations = 20000;
  c.arrival_rate = 2.0;
  c.max_context_tokens = 1'000'000'000;
  c.seed = 17;
  return c;
}

}  // namespace

TEST(Workload, Moments) {
  const auto convs = generate(big());
  ASSERT_EQ(convs.size(), 20000u);
  double turns = 0, in = 0, out = 0, think = 0;
  std::int64_t n_turns = 0;
  for (const auto& c : convs) {
    turns += static_cast<double>(c.turns.size());
    think += static_cast<double>(c.think_time.us());
    for (const auto& t : c.turns) {
      in += static_cast<double>(t.input_tokens);
      out += static_cast<double>(t.output_tokens);
      ++n_turns;
    }
  }
  const double n = static_cast<double>(convs.size());
  EXPECT_NEAR(turns / n, 5.5, 0.15);
  EXPECT_NEAR(in / static_cast<double>(n_turns), 120.0, 2.5);
  EXPECT_NEAR(out / static_cast<double>(n_turns), 240.0, 3.5);
  EXPECT_NEAR(think / n, 10e6, 3.5e5);
  const double mean_gap = static_cast<double>(convs.back().arrival.us()) / n;
  EXPECT_NEAR(mean_gap, 5e5, 1.8e4);
}

TEST(Workload, ArrivalsSortedAndIdsDense) {
  const auto convs = generate(WorkloadConfig{});
  for (std::size_t i = 0; i < convs.size(); ++i) {
    EXPECT_EQ(convs[i].id.value(), i);
    if (i) EXPECT_GE(convs[i].arrival, convs[i - 1].arrival);
    EXPECT_FALSE(convs[i].turns.empty());
  }
}

TEST(Workload, ContextCapRespected) {
  WorkloadConfig c;
  c.num_conversations = 2000;
  c.max_context_tokens = 300;
  for (const auto& conv : generate(c)) {
    EXPECT_LE(conv.total_tokens(), 300);
    for (const auto& t : conv.turns) {
      EXPECT_GE(t.input_tokens, 1);
      EXPECT_GE(t.output_tokens, 1);
    }
  }
}

TEST(Workload, ZeroSigmaGivesConstantLengths) {
  WorkloadConfig c;
  c.num_conversations = 50;
  c.input_sigma = 0;
  c.output_sigma = 0;
  for (const auto& conv : generate(c)) {
    for (const auto& t : conv.turns) {
      EXPECT_EQ(t.input_tokens, 120);
      EXPECT_EQ(t.output_tokens, 240);
    }
  }
}

TEST(Workload, Deterministic) {
  EXPECT_EQ(generate(big()), generate(big()));
  auto other = big();
  other.seed = 18;
  EXPECT_NE(generate(big()), generate(other));
}

TEST(Workload, PrefixStableAcrossCounts) {
  WorkloadConfig a;
  a.num_conversations = 10;
  WorkloadConfig b = a;
  b.num_conversations = 20;
  const auto x = generate(a);
  const auto y = generate(b);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(x[i], y[i]);
}

TEST(Workload, ExportIngestIdentity) {
  const auto convs = generate(WorkloadConfig{});
  const std::string text = export_trace(convs);
  EXPECT_EQ(parse_trace(text), convs);
  const auto path = (std::filesystem::temp_directory_path() / "kvswitch_trace_test.jsonl").string();
  { std::ofstream(path) << text; }
  EXPECT_EQ(ingest(path), convs);
  EXPECT_EQ(export_trace(ingest(path)), text);
  std::remove(path.c_str());
}

TEST(Workload, EmptyTrace) {
  EXPECT_TRUE(parse_trace("").empty());
  EXPECT_TRUE(parse_trace("\n  \n").empty());
}

TEST(Workload, ParseErrorsCarryLineNumber) {
  const std::string good = R"({"id":0,"arrival_us":0,"turns":[{"in":1,"out":1}],"think_us":0})";
  auto line_of = [](const std::string& text) -> std::size_t {
    try {
      parse_trace(text);
    } catch (const TraceParseError& e) {
      return e.line();
    }
    return 0;
  };
  EXPECT_EQ(line_of(good + "\n{not json"), 2u);
  EXPECT_EQ(line_of(good + "\n" + good), 2u);  // duplicate id
  EXPECT_EQ(line_of(R"({"id":1,"arrival_us":0,"turns":[],"think_us":0})"), 1u);
  EXPECT_EQ(line_of(R"({"id":1,"arrival_us":0,"turns":[{"in":0,"out":1}],"think_us":0})"), 1u);
  EXPECT_EQ(line_of(R"({"id":1,"arrival_us":-5,"turns":[{"in":1,"out":1}],"think_us":0})"), 1u);
  EXPECT_EQ(line_of(R"({"id":1,"turns":[{"in":1,"out":1}],"think_us":0})"), 1u);
  EXPECT_EQ(line_of("[1,2]"), 1u);
  EXPECT_THROW(ingest("/nonexistent/trace.jsonl"), std::runtime_error);
}

TEST(Workload, ConfigValidation) {
  WorkloadConfig c;
  c.arrival_rate = 0;
  EXPECT_THROW(generate(c), std::invalid_argument);
  c = WorkloadConfig{};
  c.mean_turns = 0.5;
  EXPECT_THROW(generate(c), std::invalid_argument);
  c = WorkloadConfig{};
  c.num_conversations = 0;
  EXPECT_TRUE(generate(c).empty());
}
