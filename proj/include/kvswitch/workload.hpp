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

#include "kvswitch/core.hpp"

namespace kvswitch {

struct Turn {
  std::int64_t input_tokens = 1;
  std::int64_t output_tokens = 1;
  friend bool operator==(const Turn&, const Turn&) = default;
};

struct Conversation {
  RequestId id;
  SimTime arrival;
  std::vector<Turn> turns;
  // Gap between one turn's last token and the next turn's arrival.
  SimTime think_time;

  std::int64_t total_tokens() const;
  friend bool operator==(const Conversation&, const Conversation&) = default;
};

struct WorkloadConfig {
  std::int64_t num_conversations = 200;
  double arrival_rate = 1.0;  // conversations per second
  double mean_turns = 5.5;    // shifted geometric, support {1, 2, ...}
  double input_mean = 120.0;
  double input_sigma = 1.0;  // log-space stddev; 0 gives a constant length
  double output_mean = 240.0;
  double output_sigma = 0.8;
  double think_time_mean_s = 10.0;  // exponential, drawn once per conversation
  // A conversation's turns stop once its total tokens would exceed this.
  std::int64_t max_context_tokens = 4096;
  std::uint64_t seed = 0;

  void validate() const;
};

// Throws std::invalid_argument on an invalid config.
std::vector<Conversation> generate(const WorkloadConfig& cfg);

// One JSON object per line: {id, arrival_us, turns:[{in,out}], think_us}.
// Errors carry the offending line number; an empty file yields an empty list.
std::vector<Conversation> ingest(const std::string& path);
std::vector<Conversation> parse_trace(const std::string& text);
std::string export_trace(const std::vector<Conversation>& convs);

void validate(const Conversation& c);

}  // namespace kvswitch
