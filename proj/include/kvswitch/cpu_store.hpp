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
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "kvswitch/block_pool.hpp"
#include "kvswitch/core.hpp"
#include "kvswitch/swap_plan.hpp"

namespace kvswitch {

// A CPU block group holding logical blocks [first_block, first_block + blocks)
// of one request. Contamination is tracked per segment.
struct CpuSegment {
  GroupId group;
  std::int64_t cpu_start = 0;
  std::int64_t first_block = 0;
  std::int64_t blocks = 0;
  bool valid = true;
};

struct CpuCopy {
  RequestId owner;
  std::vector<CpuSegment> segments;  // ordered by first_block
  std::int64_t tokens = 0;           // tokens captured by the latest swap-out
  std::optional<GroupId> prealloc;   // reserved space right after the last segment
  std::int64_t last_increment = 0;   // tail blocks added by the latest swap-out

  bool fully_valid() const;
};

struct CpuStoreConfig {
  // 60 GiB of 128 KiB blocks.
  std::int64_t total_blocks = 491520;
  // Incremental swap-out against retained copies. Off: every swap-out moves
  // the whole footprint and any previous copy is discarded.
  bool reuse = true;
  // Keep the copy as a backup after swap-in (copy semantics) instead of
  // freeing it (move semantics).
  bool keep_after_swap_in = true;
  std::int64_t prealloc_min_blocks = 8;
  std::int64_t prealloc_max_blocks = 256;
};

// CPU-side swap space. Retains per-request copies across turns, tracks which
// segments were contaminated by higher-priority swap-outs, and plans swaps that
// move only what the copy does not already hold.
class CpuStore {
 public:
  CpuStore(const CpuStoreConfig& config, const BlockSpec& spec);

  // Plans (and books CPU space for) the swap-out of `req`'s first
  // blocks_needed(tokens) GPU blocks. Throws CpuOutOfMemory without side
  // effects when space cannot be found even after eviction.
  SwapPlan plan_swap_out(RequestId req, std::int64_t tokens, std::span<const Extent> gpu,
                         Priority priority, std::int64_t max_op_blocks = 0);

  // Moves the whole copy into `gpu`. Throws ContaminatedCopy if any segment is invalid.
  SwapPlan plan_swap_in(RequestId req, std::span<const Extent> gpu,
                        std::int64_t max_op_blocks = 0);
  // Moves only the valid leading prefix (valid_prefix_tokens worth of blocks).
  SwapPlan plan_swap_in_prefix(RequestId req, std::span<const Extent> gpu,
                               std::int64_t max_op_blocks = 0);
  std::int64_t valid_prefix_tokens(RequestId req) const;

  // Frees at least `need` blocks by releasing reservations and invalidating
  // whole segments of strictly lower-priority requests, lowest priority first
  // and largest segment first. Returns the invalidated (owner, group) pairs.
  std::vector<std::pair<RequestId, GroupId>> evict_for(Priority priority, RequestId requester,
                                                       std::int64_t need);

  // Best effort: reserves `blocks` CPU blocks directly after the copy's last segment.
  bool preallocate_increment(RequestId req, std::int64_t blocks);
  // Estimate used for the next turn's reservation.
  std::int64_t prealloc_estimate(RequestId req) const;

  void drop(RequestId req);

  const CpuCopy* copy(RequestId req) const;
  bool has_copy(RequestId req) const { return copies_.contains(req); }
  const BlockPool& pool() const { return pool_; }
  const CpuStoreConfig& config() const { return config_; }
  std::int64_t contaminated_blocks() const { return contaminated_blocks_; }

  void set_priority_lookup(std::function<Priority(RequestId)> lookup) {
    priority_lookup_ = std::move(lookup);
  }

  std::string check_invariants() const;
  // Mirrors the GPU dump; every line is prefixed with `cpu`.
  void dump(std::ostream& os) const;

 private:
  Priority priority_of(RequestId req) const;
  std::int64_t evictable_blocks(Priority priority, RequestId requester) const;
  std::int64_t reserved_blocks() const;
  // Books `count` fresh blocks, appending (cpu_start, len, group) pieces.
  void allocate_pieces(RequestId req, std::int64_t count,
                       std::vector<std::pair<GroupId, std::int64_t>>& pieces);
  void release_reservation(CpuCopy& c);

  CpuStoreConfig config_;
  BlockSpec spec_;
  BlockPool pool_;
  std::map<RequestId, CpuCopy> copies_;
  std::function<Priority(RequestId)> priority_lookup_;
  std::int64_t contaminated_blocks_ = 0;
};

}  // namespace kvswitch
