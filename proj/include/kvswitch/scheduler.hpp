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
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "kvswitch/core.hpp"
#include "kvswitch/swap_manager.hpp"

namespace kvswitch {

enum class PriorityPattern { Random, Markov, Replay };
const char* to_string(PriorityPattern p);
std::optional<PriorityPattern> parse_priority_pattern(const std::string& s);

struct PriorityTraceConfig {
  PriorityPattern pattern = PriorityPattern::Markov;
  // Updates per iteration; 0.02 re-ranks every 50 iterations. 0 disables updates.
  double frequency = 0.02;
  double p_keep = 0.8;
  std::uint64_t seed = 0;
  // JSONL of {epoch, request_id, rank}; used by the Replay pattern.
  std::string replay_path;

  void validate() const;
};

struct TraceRecord {
  std::int64_t epoch = 0;
  RequestId request;
  std::int64_t rank = 0;
};

// Offline priority schedule. Every epoch draws from its own seeded stream over
// the full conversation universe, so the schedule does not depend on how the
// run unfolds; only the live and running sets filter it.
class PriorityTrace {
 public:
  PriorityTrace(const PriorityTraceConfig& cfg, std::vector<RequestId> universe);

  // True when an epoch starts at iteration `i` (0-based): floor(i * f) increases.
  bool epoch_due(std::int64_t iteration) const;
  // Epoch number starting at `iteration`; meaningful when epoch_due.
  std::int64_t epoch_at(std::int64_t iteration) const;

  // Ranks for `live` (arrived, not finished), then `pending` (not yet arrived)
  // in the given order. `running` feeds the Markov keep rule. Records the result.
  std::map<RequestId, Priority> apply(std::int64_t epoch, std::span<const RequestId> live,
                                      const std::set<RequestId>& running,
                                      std::span<const RequestId> pending);

  const std::vector<TraceRecord>& records() const { return records_; }
  void write_jsonl(const std::string& path) const;
  static std::vector<TraceRecord> read_jsonl(const std::string& path);
  const PriorityTraceConfig& config() const { return cfg_; }

 private:
  std::vector<RequestId> base_order(std::int64_t epoch) const;
  bool keeps(std::int64_t epoch, RequestId req) const;

  PriorityTraceConfig cfg_;
  std::vector<RequestId> universe_;
  std::map<std::int64_t, std::vector<TraceRecord>> replay_;
  std::vector<TraceRecord> records_;
};

// Free-function form of PriorityTrace::apply.
std::map<RequestId, Priority> apply_priority_update(std::int64_t epoch, PriorityTrace& trace,
                                                    std::span<const RequestId> live,
                                                    const std::set<RequestId>& running,
                                                    std::span<const RequestId> pending = {});

enum class PreemptionMode { Swap, Recompute };

struct SchedulerConfig {
  std::optional<std::int64_t> max_running;
  PreemptionMode preemption_mode = PreemptionMode::Swap;

  void validate() const;
};

struct Candidate {
  RequestId id;
  QueueKind queue = QueueKind::Waiting;
  Priority priority;
  // GPU blocks the request holds after this iteration if it runs.
  std::int64_t need_blocks = 0;
};

struct SchedulingActions {
  std::vector<RequestId> keep;      // running and staying
  std::vector<RequestId> swap_out;  // running and displaced, lowest priority first
  std::vector<RequestId> swap_in;   // swapped and selected, rank order
  std::vector<RequestId> admit;     // waiting and selected, rank order
  std::int64_t planned_blocks = 0;
};

// Greedy by rank: ongoing swap-ins are committed first, then every other
// candidate in rank order joins when it fits in the remaining blocks and the
// running cap. Whoever is left out and currently running is preempted.
SchedulingActions schedule(std::span<const Candidate> candidates, std::int64_t capacity_blocks,
                           const SchedulerConfig& cfg);

}  // namespace kvswitch
