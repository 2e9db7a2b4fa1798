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
#include "kvswitch/cost_model.hpp"

namespace kvswitch {

// One contiguous copy between a GPU extent and a CPU extent of equal length.
struct SwapOp {
  Direction dir = Direction::Out;
  std::int64_t gpu_start = 0;
  std::int64_t cpu_start = 0;
  std::int64_t blocks = 0;

  Extent gpu() const { return {gpu_start, blocks}; }
};

struct SwapPlan {
  std::vector<SwapOp> ops;
  std::int64_t total_blocks_moved = 0;
  // Blocks not moved because a valid CPU copy already holds them.
  std::int64_t reused_blocks = 0;

  std::vector<std::int64_t> op_blocks() const;
  std::vector<std::int64_t> op_bytes(const BlockSpec& spec) const;
};

// Physical index of each logical block, in logical order.
std::vector<std::int64_t> flatten(std::span<const Extent> extents);

// Emits maximal runs of the selected logical blocks over which both the GPU
// and the CPU physical index advance by one. `max_op_blocks` caps each op
// (1 reproduces per-block copies); 0 means unbounded.
std::vector<SwapOp> build_ops(Direction dir, std::span<const char> selected,
                              std::span<const std::int64_t> gpu_phys,
                              std::span<const std::int64_t> cpu_phys,
                              std::int64_t max_op_blocks);

}  // namespace kvswitch
