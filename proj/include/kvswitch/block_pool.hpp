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
#include <ostream>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "kvswitch/core.hpp"

namespace kvswitch {

enum class GroupState { Free, Used };

// A contiguous run of KV-cache blocks. `filled` counts the leading blocks that
// hold live KV data; only an owner's active group may have filled < len.
struct BlockGroup {
  GroupId id;
  std::int64_t start = 0;
  std::int64_t len = 0;
  GroupState state = GroupState::Free;
  std::optional<RequestId> owner;
  bool active = false;
  std::int64_t filled = 0;

  Extent extent() const { return {start, len}; }
  std::int64_t end() const { return start + len; }
};

// Partition of a block range into free and used groups. Free neighbours are
// coalesced eagerly, so no two free groups are ever adjacent. Group ids are
// never reused: every split or merge mints a fresh id for the new piece.
class BlockPool {
 public:
  explicit BlockPool(std::int64_t total_blocks);

  std::int64_t total_blocks() const { return total_; }
  std::int64_t free_blocks() const { return free_blocks_; }
  std::int64_t used_blocks() const { return total_ - free_blocks_; }
  std::size_t free_group_count() const { return free_by_size_.size(); }

  bool contains(GroupId id) const { return index_.contains(id); }
  const BlockGroup& group(GroupId id) const;
  BlockGroup& mutable_group(GroupId id);

  // Smallest free group with len >= want; ties go to the lowest start.
  std::optional<GroupId> best_fit(std::int64_t want) const;
  std::optional<GroupId> largest_free() const;
  // Free groups ordered by descending length, then ascending start.
  std::vector<GroupId> free_groups_largest_first() const;
  // The free group that begins exactly at `start`, if any.
  std::optional<GroupId> free_group_starting_at(std::int64_t start) const;

  // Marks [offset, offset+len) of a free group as used by `owner`. The free
  // group splits into up to three pieces; the used piece's id is returned.
  GroupId carve(GroupId free_group, std::int64_t offset, std::int64_t len,
                RequestId owner);

  // Splits a used group at `keep`: the first `keep` blocks retain the id, the
  // remainder becomes a new used group with the same owner and zero fill.
  GroupId split_used(GroupId used, std::int64_t keep);

  // Returns a used group to the free set and merges it with free neighbours.
  // Returns the id of the resulting free group.
  GroupId release(GroupId used);

  // All groups in address order.
  std::vector<BlockGroup> groups() const;

  // Empty when partition and coalescing invariants hold; otherwise a description.
  std::string check_invariants() const;

  // One line per group: `start len state owner active`.
  void dump(std::ostream& os, const std::string& prefix = "") const;

 private:
  GroupId mint();
  void insert(BlockGroup g);
  void erase(GroupId id);

  std::int64_t total_;
  std::int64_t free_blocks_ = 0;
  std::uint64_t next_id_ = 0;
  std::map<std::int64_t, BlockGroup> by_start_;
  std::unordered_map<GroupId, std::int64_t> index_;
  std::set<std::pair<std::int64_t, std::int64_t>> free_by_size_;  // (len, start)
};

}  // namespace kvswitch
