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

#include "kvswitch/block_pool.hpp"

#include <algorithm>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "kvswitch/errors.hpp"

namespace kvswitch {

BlockPool::BlockPool(std::int64_t total_blocks) : total_(total_blocks) {
  if (total_blocks < 1) throw std::invalid_argument("block pool must hold at least one block");
  insert(BlockGroup{mint(), 0, total_blocks, GroupState::Free, std::nullopt, false, 0});
}

GroupId BlockPool::mint() { return GroupId{next_id_++}; }

void BlockPool::insert(BlockGroup g) {
  if (g.state == GroupState::Free) {
    free_by_size_.emplace(g.len, g.start);
    free_blocks_ += g.len;
  }
  index_[g.id] = g.start;
  by_start_.emplace(g.start, std::move(g));
}

void BlockPool::erase(GroupId id) {
  auto it = index_.find(id);
  auto git = by_start_.find(it->second);
  if (git->second.state == GroupState::Free) {
    free_by_size_.erase({git->second.len, git->second.start});
    free_blocks_ -= git->second.len;
  }
  by_start_.erase(git);
  index_.erase(it);
}

const BlockGroup& BlockPool::group(GroupId id) const {
  auto it = index_.find(id);
  if (it == index_.end()) throw std::out_of_range("unknown block group");
  return by_start_.at(it->second);
}

BlockGroup& BlockPool::mutable_group(GroupId id) {
  auto it = index_.find(id);
  if (it == index_.end()) throw std::out_of_range("unknown block group");
  return by_start_.at(it->second);
}

std::optional<GroupId> BlockPool::best_fit(std::int64_t want) const {
  auto it = free_by_size_.lower_bound({want, std::numeric_limits<std::int64_t>::min()});
  if (it == free_by_size_.end()) return std::nullopt;
  return by_start_.at(it->second).id;
}

std::optional<GroupId> BlockPool::largest_free() const {
  if (free_by_size_.empty()) return std::nullopt;
  const auto largest_len = free_by_size_.rbegin()->first;
  auto it = free_by_size_.lower_bound({largest_len, std::numeric_limits<std::int64_t>::min()});
  return by_start_.at(it->second).id;
}

std::vector<GroupId> BlockPool::free_groups_largest_first() const {
  std::vector<std::pair<std::int64_t, std::int64_t>> keys(free_by_size_.begin(),
                                                          free_by_size_.end());
  std::stable_sort(keys.begin(), keys.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  std::vector<GroupId> out;
  out.reserve(keys.size());
  for (const auto& k : keys) out.push_back(by_start_.at(k.second).id);
  return out;
}

std::optional<GroupId> BlockPool::free_group_starting_at(std::int64_t start) const {
  auto it = by_start_.find(start);
  if (it == by_start_.end() || it->second.state != GroupState::Free) return std::nullopt;
  return it->second.id;
}

GroupId BlockPool::carve(GroupId free_group, std::int64_t offset, std::int64_t len,
                         RequestId owner) {
  const BlockGroup g = group(free_group);
  if (g.state != GroupState::Free) throw std::logic_error("carve from a used group");
  if (len < 1 || offset < 0 || offset + len > g.len) {
    throw std::out_of_range("carve outside the free group");
  }
  erase(free_group);
  if (offset > 0) {
    insert(BlockGroup{mint(), g.start, offset, GroupState::Free, std::nullopt, false, 0});
  }
  const GroupId used = mint();
  insert(BlockGroup{used, g.start + offset, len, GroupState::Used, owner, false, 0});
  const std::int64_t right = g.len - offset - len;
  if (right > 0) {
    insert(BlockGroup{mint(), g.start + offset + len, right, GroupState::Free, std::nullopt,
                      false, 0});
  }
  return used;
}

GroupId BlockPool::split_used(GroupId used, std::int64_t keep) {
  BlockGroup& g = mutable_group(used);
  if (g.state != GroupState::Used) throw std::logic_error("split_used on a free group");
  if (keep < 1 || keep >= g.len) throw std::out_of_range("split point outside the group");
  BlockGroup tail{mint(), g.start + keep, g.len - keep, GroupState::Used, g.owner, false, 0};
  if (g.filled > keep) tail.filled = g.filled - keep;
  g.len = keep;
  g.filled = std::min(g.filled, keep);
  const GroupId id = tail.id;
  insert(std::move(tail));
  return id;
}

GroupId BlockPool::release(GroupId used) {
  auto idx = index_.find(used);
  if (idx == index_.end()) throw DoubleFree("release of unknown or already merged group");
  const BlockGroup g = by_start_.at(idx->second);
  if (g.state == GroupState::Free) throw DoubleFree("group is already free");
  std::int64_t start = g.start;
  std::int64_t len = g.len;
  erase(used);

  auto right = by_start_.find(start + len);
  if (right != by_start_.end() && right->second.state == GroupState::Free) {
    len += right->second.len;
    erase(right->second.id);
  }
  auto left = by_start_.lower_bound(start);
  if (left != by_start_.begin()) {
    --left;
    if (left->second.state == GroupState::Free && left->second.end() == start) {
      start = left->second.start;
      len += left->second.len;
      erase(left->second.id);
    }
  }
  const GroupId merged = mint();
  insert(BlockGroup{merged, start, len, GroupState::Free, std::nullopt, false, 0});
  return merged;
}

std::vector<BlockGroup> BlockPool::groups() const {
  std::vector<BlockGroup> out;
  out.reserve(by_start_.size());
  for (const auto& [_, g] : by_start_) out.push_back(g);
  return out;
}

std::string BlockPool::check_invariants() const {
  std::ostringstream err;
  std::int64_t cursor = 0;
  std::int64_t free_sum = 0;
  bool prev_free = false;
  for (const auto& [start, g] : by_start_) {
    if (start != g.start) err << "index key mismatch at " << start << "; ";
    if (g.start != cursor) err << "gap or overlap at " << cursor << "; ";
    if (g.len < 1) err << "empty group at " << g.start << "; ";
    const bool is_free = g.state == GroupState::Free;
    if (is_free && prev_free) err << "adjacent free groups at " << g.start << "; ";
    if (is_free && g.owner) err << "free group with owner at " << g.start << "; ";
    if (!is_free && !g.owner) err << "used group without owner at " << g.start << "; ";
    if (g.filled < 0 || g.filled > g.len) err << "fill out of range at " << g.start << "; ";
    if (is_free) free_sum += g.len;
    prev_free = is_free;
    cursor = g.end();
  }
  if (cursor != total_) err << "groups cover " << cursor << " of " << total_ << " blocks; ";
  if (free_sum != free_blocks_) err << "free counter drift; ";
  if (free_by_size_.size() != static_cast<std::size_t>(std::count_if(
                                  by_start_.begin(), by_start_.end(), [](const auto& kv) {
                                    return kv.second.state == GroupState::Free;
                                  }))) {
    err << "free index drift; ";
  }
  return err.str();
}

void BlockPool::dump(std::ostream& os, const std::string& prefix) const {
  for (const auto& [_, g] : by_start_) {
    if (!prefix.empty()) os << prefix << ' ';
    os << g.start << ' ' << g.len << ' ' << (g.state == GroupState::Free ? "free" : "used")
       << ' ';
    if (g.owner) {
      os << g.owner->value();
    } else {
      os << '-';
    }
    os << ' ' << (g.active ? 1 : 0) << '\n';
  }
}

}  // namespace kvswitch
