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
#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kvswitch/core.hpp"
#include "kvswitch/cost_model.hpp"
#include "kvswitch/swap_plan.hpp"

namespace kvswitch {

enum class QueueKind { Waiting, Running, Swapped, OngoingSwapIn };
const char* to_string(QueueKind q);

enum class SwapMode { Async, Sync };
enum class DecisionReason { SmallShortRequests, LongTransfers, IdleIO, ForcedSync };
const char* to_string(SwapMode m);
const char* to_string(DecisionReason r);

struct StrategyDecision {
  SwapMode mode = SwapMode::Async;
  DecisionReason reason = DecisionReason::IdleIO;
};

// One dispatched swap of one request in one direction.
struct SwapEvent {
  std::int64_t iteration = 0;
  RequestId request;
  Direction dir = Direction::Out;
  std::int64_t blocks = 0;
  std::int64_t ops = 0;
  SimTime submitted;
  SimTime dispatch_done;
  SimTime exec_done;
  // Ops held back behind an overlapping or same-request transfer.
  std::int64_t conflicts = 0;
};

std::string to_jsonl(const SwapEvent& e);

struct QueueState {
  std::vector<RequestId> waiting;
  std::vector<RequestId> running;
  std::vector<RequestId> swapped;
  std::vector<RequestId> ongoing_swap_in;
  std::deque<SwapEvent> r_info;
  std::size_t r_info_window = 64;

  std::vector<RequestId>& queue(QueueKind q);
  const std::vector<RequestId>& queue(QueueKind q) const;
  std::optional<QueueKind> find(RequestId req) const;
  // Removes `req` from whichever queue holds it and appends it to `to`.
  void move(RequestId req, QueueKind to);
  void remove(RequestId req);
  void record(const SwapEvent& e);
  std::size_t size() const;

  // Empty when every id in `live` sits in exactly one queue and no other id is queued.
  std::string check_partition(std::span<const RequestId> live) const;
};

struct RInfoSummary {
  std::int64_t events = 0;
  std::int64_t ops = 0;
  std::int64_t blocks = 0;
  SimTime mean_exec;
};
RInfoSummary summarize(const QueueState& qs);

struct InFlightSwap {
  RequestId request;
  Direction dir = Direction::Out;
  SwapPlan plan;
  std::vector<OpTiming> timings;  // one per plan op
  SimTime dispatch_done;
  SimTime exec_done;
  std::int64_t iteration = 0;
};

struct Conflict {
  std::size_t grant_index = 0;
  RequestId swap_request;
  Direction dir = Direction::Out;
  std::size_t op_index = 0;
  Extent overlap;
  SimTime blocking_done;
};

// Every (grant, op) pair whose GPU extents intersect while the op is still executing.
std::vector<Conflict> detect_conflict(std::span<const Extent> grants,
                                      std::span<const InFlightSwap> in_flight, SimTime clock);
// Wait until the last conflicting op finishes; zero when all already have.
SimTime resolve_conflict(std::span<const Conflict> conflicts, SimTime clock);

struct SwapManagerConfig {
  double sync_threshold_ratio = 0.5;
  std::int64_t short_request_blocks = 16;
  std::size_t r_info_window = 64;
  // Off: every swap is synchronous on the inference stream.
  bool async_swap = true;

  void validate() const;
};

// Sync iff something is pending, it drains within ratio * iteration, and every
// pending request is short.
StrategyDecision decide_mode(std::span<const std::int64_t> pending_footprints, SimTime drain,
                             SimTime iter_estimate, const SwapManagerConfig& cfg);

struct PlannedSwap {
  RequestId request;
  SwapPlan plan;
  std::int64_t footprint_blocks = 0;
};

struct StepInput {
  std::int64_t iteration = 0;
  std::vector<PlannedSwap> swap_outs;
  // Requests must already sit in `swapped` or `waiting`.
  std::vector<PlannedSwap> swap_ins;
  SimTime iter_estimate;
};

struct StepResult {
  // Requests moved to running by this step, in completion order.
  std::vector<RequestId> completed;
  StrategyDecision decision;
  SimTime sync_stall;
  SimTime yield_stall;
  std::vector<SwapEvent> events;
};

class SwapManager {
 public:
  SwapManager(const SwapManagerConfig& cfg, const TransferParams& transfer, const BlockSpec& spec);

  // Moves every finished swap-in to running in exec_done order and retires
  // finished swap-outs.
  std::vector<RequestId> drain_completed(QueueState& qs, SimTime clock);

  StepResult step(QueueState& qs, const StepInput& in, SimTime clock);

  std::vector<Conflict> conflicts_for(std::span<const Extent> grants, SimTime clock) const {
    return detect_conflict(grants, in_flight_, clock);
  }

  const std::vector<InFlightSwap>& in_flight() const { return in_flight_; }
  // Earliest exec_done of an unfinished swap-in, if any.
  std::optional<SimTime> next_swap_in_completion() const;
  const SwapManagerConfig& config() const { return cfg_; }

  void set_event_sink(std::function<void(const SwapEvent&)> sink) { sink_ = std::move(sink); }

 private:
  SwapEvent make_event(std::int64_t iteration, const InFlightSwap& s, SimTime submitted,
                       std::int64_t conflicts) const;
  void emit(QueueState& qs, StepResult& out, const SwapEvent& e);

  SwapManagerConfig cfg_;
  TransferParams transfer_;
  BlockSpec spec_;
  TransferPipeline pipeline_;
  std::vector<InFlightSwap> in_flight_;
  std::function<void(const SwapEvent&)> sink_;
};

}  // namespace kvswitch
