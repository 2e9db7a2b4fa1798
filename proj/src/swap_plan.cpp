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

#include "kvswitch/swap_plan.hpp"

#include <stdexcept>

namespace kvswitch {

std::vector<std::int64_t> SwapPlan::op_blocks() const {
  std::vector<std::int64_t> out;
  out.reserve(ops.size());
  for (const SwapOp& op : ops) out.push_back(op.blocks);
  return out;
}

std::vector<std::int64_t> SwapPlan::op_bytes(const BlockSpec& spec) const {
  std::vector<std::int64_t> out;
  out.reserve(ops.size());
  for (const SwapOp& op : ops) out.push_back(group_bytes(op.blocks, spec));
  return out;
}

std::vector<std::int64_t> flatten(std::span<const Extent> extents) {
  std::vector<std::int64_t> out;
  for (const Extent& e : extents) {
    for (std::int64_t b = e.start; b < e.end(); ++b) out.push_back(b);
  }
  return out;
}

std::vector<SwapOp> build_ops(Direction dir, std::span<const char> selected,
                              std::span<const std::int64_t> gpu_phys,
                              std::span<const std::int64_t> cpu_phys,
                              std::int64_t max_op_blocks) {
  if (gpu_phys.size() < selected.size() || cpu_phys.size() < selected.size()) {
    throw std::invalid_argument("build_ops: physical maps shorter than the block range");
  }
  std::vector<SwapOp> ops;
  for (std::size_t b = 0; b < selected.size(); ++b) {
    if (!selected[b]) continue;
    if (!ops.empty()) {
      SwapOp& last = ops.back();
      const bool contiguous = b > 0 && selected[b - 1] &&
                              gpu_phys[b] == last.gpu_start + last.blocks &&
                              cpu_phys[b] == last.cpu_start + last.blocks;
      if (contiguous && (max_op_blocks <= 0 || last.blocks < max_op_blocks)) {
        ++last.blocks;
        continue;
      }
    }
    ops.push_back({dir, gpu_phys[b], cpu_phys[b], 1});
  }
  return ops;
}

}  // namespace kvswitch
