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
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kvswitch/block_allocator.hpp"
#include "kvswitch/core.hpp"
#include "kvswitch/cost_model.hpp"
#include "kvswitch/cpu_store.hpp"
#include "kvswitch/scheduler.hpp"
#include "kvswitch/swap_manager.hpp"
#include "kvswitch/workload.hpp"

namespace kvswitch {

enum class AblationMode { Baseline, BlockGroup, BlockGroupReuse, Full };
const char* to_string(AblationMode m);
std::optional<AblationMode> parse_ablation(const std::string& s);
// Baseline, BlockGroup, BlockGroupReuse, Full.
std::vector<AblationMode> ablation_modes();

struct ModeSettings {
  std::int64_t max_op_blocks = 0;  // 0: one op per contiguous run
  bool exact_grants = false;
  bool reuse = true;
  bool keep_after_swap_in = true;
  bool async_swap = true;
};
ModeSettings mode_settings(AblationMode m);

struct EngineConfig {
  BlockSpec block;
  std::int64_t gpu_blocks = 1024;
  std::int64_t initial_group_blocks = 60;
  VictimPolicy victim_policy = VictimPolicy::Random;
  TransferParams transfer;
  InferParams infer;
  CpuStoreConfig cpu;
  SchedulerConfig scheduler;
  SwapManagerConfig swap;
  AblationMode mode = AblationMode::Full;
  // Output length assumed when sizing a request's block groups.
  std::int64_t expected_output_tokens = 256;
  std::int64_t deadlock_iterations = 10;
  std::int64_t efficiency_interval = 5;
  std::uint64_t seed = 0;
  // Re-check allocator, CPU store and queue invariants every iteration.
  bool check_invariants = false;

  void validate() const;
};

struct IterationRecord {
  std::int64_t index = 0;
  SimTime start;
  SimTime end;
  std::int64_t batch_size = 0;
  std::int64_t prefill_tokens = 0;
  std::int64_t decode_tokens = 0;
  SimTime stall_sync;
  SimTime stall_conflict;
  SimTime stall_yield;
  SimTime stall_recompute;
  SimTime stall_wait;  // idle while only swap-ins were outstanding
  std::vector<RequestId> emitted;  // one token each

  SimTime stall() const {
    return stall_sync + stall_conflict + stall_yield + stall_recompute + stall_wait;
  }
};

std::string to_jsonl(const IterationRecord& r);

// Nearest rank: sorted[ceil(q * N) - 1]. Throws on empty samples or q outside (0, 1].
double percentile(std::span<const double> samples, double q);

struct MetricsReport {
  std::string mode;
  std::int64_t conversations = 0;
  std::int64_t turns = 0;
  std::int64_t iterations = 0;
  std::int64_t sim_time_us = 0;
  std::int64_t busy_time_us = 0;

  double ttft_p50_ms = 0;
  double ttft_p95_ms = 0;
  double ttft_p99_ms = 0;
  double ttft_p999_ms = 0;
  double tbt_p999_ms = 0;
  double throughput_tokens_per_s = 0;

  double overhead_ratio = 0;
  std::int64_t stall_us = 0;
  std::int64_t stall_sync_us = 0;
  std::int64_t stall_conflict_us = 0;
  std::int64_t stall_yield_us = 0;
  std::int64_t stall_recompute_us = 0;
  std::int64_t stall_wait_us = 0;

  double avg_granularity_blocks = 0;  // 0 when nothing was transferred
  std::int64_t swap_out_blocks = 0;
  std::int64_t swap_out_ops = 0;
  std::int64_t swap_in_blocks = 0;
  std::int64_t swap_in_ops = 0;
  std::int64_t reused_blocks = 0;

  double efficiency_p50 = 0;  // tokens/s over fixed iteration intervals
  double efficiency_p99 = 0;
  double efficiency_p999 = 0;

  std::int64_t peak_gpu_used_blocks = 0;
  std::int64_t peak_cpu_used_blocks = 0;
  std::int64_t peak_footprint_blocks = 0;

  std::int64_t preemptions = 0;
  std::int64_t priority_epochs = 0;
  std::int64_t cpu_oom_drops = 0;
  std::int64_t contaminated_blocks = 0;
  std::int64_t contaminated_swap_ins = 0;
  std::int64_t recompute_tokens = 0;
  std::int64_t conflicts = 0;
  std::int64_t sync_decisions = 0;
  std::int64_t async_decisions = 0;

  std::int64_t tokens_emitted = 0;
  std::int64_t tokens_expected = 0;
  std::int64_t causality_violations = 0;
  std::int64_t conflict_violations = 0;
  std::int64_t invariant_violations = 0;

  std::string to_json() const;
  // metric,value rows in the same order as the JSON.
  std::string to_csv() const;
};

class RunObserver {
 public:
  virtual ~RunObserver() = default;
  virtual void on_iteration(const IterationRecord& /*rec*/, const QueueState& /*qs*/,
                            std::span<const RequestId> /*active*/) {}
  // `tokens` is the KV length captured by this swap-out.
  virtual void on_swap_out(RequestId /*req*/, std::int64_t /*tokens*/, const SwapPlan& /*plan*/) {}
  virtual void on_swap_event(const SwapEvent& /*e*/) {}
};

// Runs `workload` to completion. Throws SimulationAborted when the deadlock
// detector fires.
MetricsReport run(const std::vector<Conversation>& workload, PriorityTrace& trace,
                  const EngineConfig& cfg, RunObserver* observer = nullptr);

}  // namespace kvswitch
