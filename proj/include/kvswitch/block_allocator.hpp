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
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "kvswitch/block_pool.hpp"
#include "kvswitch/core.hpp"
#include "kvswitch/rng.hpp"

namespace kvswitch {

enum class VictimPolicy { Random, LowestPriority };

struct PoolConfig {
  std::int64_t total_blocks = 0;
  // Size of a request's very first group, before the expected-footprint clamp.
  std::int64_t initial_group_blocks = 60;
  std::uint64_t rng_seed = 0;
  VictimPolicy victim_policy = VictimPolicy::Random;
  // Grant exactly the requested blocks with no look-ahead reservation. Used by
  // the fixed-block baseline.
  bool exact_grants = false;

  void validate() const;
};

struct AllocResult {
  // Groups that received new filled blocks, in logical order. The requester's
  // previously active group appears first when its tail was consumed.
  std::vector<GroupId> groups;
  std::vector<std::pair<RequestId, GroupId>> reclaimed_from;
  std::int64_t granted_blocks = 0;
  // Physical extents whose contents were newly granted by this call.
  std::vector<Extent> new_extents;
};

struct GranularityStats {
  double avg_blocks_per_group = 0.0;
  std::int64_t transfers = 0;
  std::map<std::int64_t, std::int64_t> histogram;  // group size -> count
};

struct ReclaimResult {
  RequestId victim;
  BlockGroup carved;
};

// Blocks kept for a victim beyond its filled prefix when a reclaim can afford it.
inline constexpr std::int64_t kVictimHeadroom = 8;

// GPU KV-cache allocator that hands out contiguous block groups. Free space is
// served best-fit first; when it runs short, the unused tail of another
// request's active group is carved off.
class BlockGroupAllocator {
 public:
  explicit BlockGroupAllocator(const PoolConfig& config);

  // Grants `want` more filled blocks to `req`. `expected_total` is the caller's
  // estimate of the request's eventual footprint in blocks and sizes new groups.
  // Throws OutOfMemory without side effects when supply is insufficient.
  AllocResult allocate(RequestId req, std::int64_t want, std::int64_t expected_total);

  // Throws DoubleFree when `g` is unknown or already free.
  void free_group(GroupId g);
  // Frees every group `req` holds. No-op for unknown requests.
  void release(RequestId req);

  // Carves `need` blocks off the unused tail of some other request's active
  // group and hands them to `beneficiary`. Throws NoVictim when no tail is big
  // enough.
  ReclaimResult reclaim_from_victim(std::int64_t need, RequestId beneficiary);

  bool can_allocate(RequestId req, std::int64_t want) const;
  // Sum of unused active-group tails, excluding `exclude`'s own.
  std::int64_t reclaimable_blocks(std::optional<RequestId> exclude = std::nullopt) const;

  void record_transfer(std::span<const std::int64_t> op_sizes);
  std::optional<GranularityStats> granularity_stats() const;

  // Filled blocks of `req` in logical order, adjacent groups merged.
  std::vector<Extent> filled_extents(RequestId req) const;
  std::int64_t filled_blocks(RequestId req) const;
  std::int64_t held_blocks(RequestId req) const;
  std::optional<GroupId> active_group(RequestId req) const;
  std::vector<GroupId> groups_of(RequestId req) const;

  const BlockPool& pool() const { return pool_; }
  const PoolConfig& config() const { return config_; }
  std::int64_t free_blocks() const { return pool_.free_blocks(); }

  void set_priority_lookup(std::function<Priority(RequestId)> lookup) {
    priority_lookup_ = std::move(lookup);
  }

  std::string check_invariants() const;
  void dump(std::ostream& os) const;

 private:
  struct Holding {
    std::vector<GroupId> groups;
  };

  std::int64_t tail_of(GroupId g) const;
  void set_active(RequestId req);
  GroupId grant_from_free(RequestId req, GroupId free_group, std::int64_t size,
                          std::int64_t fill, AllocResult& out);
  std::optional<RequestId> pick_victim(const std::vector<RequestId>& candidates);

  PoolConfig config_;
  BlockPool pool_;
  Rng rng_;
  std::map<RequestId, Holding> holdings_;
  std::set<RequestId> ever_allocated_;
  std::function<Priority(RequestId)> priority_lookup_;

  std::map<std::int64_t, std::int64_t> transfer_hist_;
  std::int64_t transfer_blocks_ = 0;
  std::int64_t transfer_count_ = 0;
};

}  // namespace kvswitch
