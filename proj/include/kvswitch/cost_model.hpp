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
#include <span>
#include <vector>

#include "kvswitch/core.hpp"

namespace kvswitch {

// Copy-engine model. Defaults put a 128 KB op at ~6 us of execution against
// 12 us of dispatch, so fine-grained swaps are dispatch-bound.
struct TransferParams {
  SimTime dispatch_per_op{12};
  std::int64_t bandwidth_bytes_per_us = 32000;
  SimTime per_op_latency_floor{2};
  // Swap ops dispatched between forced synchronisations with the inference stream.
  std::int64_t sync_batch = 8;

  void validate() const;
};

// Linear iteration cost. prefill_per_token must exceed decode_per_token.
struct InferParams {
  SimTime decode_base{200};
  SimTime decode_per_token{2};
  SimTime prefill_per_token{4};

  void validate() const;
};

struct TransferEstimate {
  SimTime total;
  SimTime dispatch_busy;
  double dispatch_fraction = 0.0;
};

// floor + bytes / bandwidth, rounded to the nearest microsecond.
SimTime exec_time(std::int64_t bytes, const TransferParams& p);

// Completion time of a batch of copies through a serial dispatcher feeding one
// copy engine: d_i = i * dispatch, finish_i = max(d_i, finish_{i-1}) + exec_i.
TransferEstimate transfer_time(std::span<const std::int64_t> op_bytes, const TransferParams& p);

SimTime iteration_time(std::int64_t prefill_tokens, std::int64_t decode_tokens,
                       const InferParams& p);

// Op counts {b, 2b, ...} <= n_ops after which the swap queue yields.
std::vector<std::int64_t> dispatch_yield_points(std::int64_t n_ops, const TransferParams& p);

enum class Direction { Out, In };  // Out: GPU to CPU; In: CPU to GPU

struct OpTiming {
  SimTime dispatch_done;
  SimTime exec_done;
};

// Persistent dispatcher timeline plus one copy engine per direction. Used when
// swap dispatch runs off the inference thread.
class TransferPipeline {
 public:
  explicit TransferPipeline(const TransferParams& p) : params_(p) {}

  // Dispatches `op_bytes` in order, no earlier than `start`. `not_before[i]`,
  // when given, holds op i's execution until an earlier transfer finishes.
  // With `yield_slots`, one inference dispatch is interleaved at each yield point.
  std::vector<OpTiming> submit(Direction dir, std::span<const std::int64_t> op_bytes,
                               SimTime start, std::span<const SimTime> not_before = {},
                               bool yield_slots = false);

  SimTime dispatcher_free() const { return dispatcher_free_; }
  SimTime engine_free(Direction d) const { return engine_free_[index(d)]; }
  const TransferParams& params() const { return params_; }

 private:
  static std::size_t index(Direction d) { return d == Direction::Out ? 0 : 1; }

  TransferParams params_;
  SimTime dispatcher_free_{};
  SimTime engine_free_[2]{};
};

}  // namespace kvswitch
