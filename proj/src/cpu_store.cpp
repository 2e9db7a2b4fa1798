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

#include "kvswitch/cpu_store.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>

#include "kvswitch/errors.hpp"

namespace kvswitch {

bool CpuCopy::fully_valid() const {
  return std::all_of(segments.begin(), segments.end(),
                     [](const CpuSegment& s) { return s.valid; });
}

CpuStore::CpuStore(const CpuStoreConfig& config, const BlockSpec& spec)
    : config_(config), spec_(spec), pool_(config.total_blocks) {}

Priority CpuStore::priority_of(RequestId req) const {
  return priority_lookup_ ? priority_lookup_(req) : Priority{0};
}

const CpuCopy* CpuStore::copy(RequestId req) const {
  auto it = copies_.find(req);
  return it == copies_.end() ? nullptr : &it->second;
}

std::int64_t CpuStore::reserved_blocks() const {
  std::int64_t n = 0;
  for (const auto& [_, c] : copies_) {
    if (c.prealloc) n += pool_.group(*c.prealloc).len;
  }
  return n;
}

std::int64_t CpuStore::evictable_blocks(Priority priority, RequestId requester) const {
  std::int64_t n = 0;
  for (const auto& [owner, c] : copies_) {
    if (owner == requester || !outranks(priority, requester, priority_of(owner), owner)) continue;
    for (const CpuSegment& s : c.segments) {
      if (s.valid) n += s.blocks;
    }
  }
  return n;
}

void CpuStore::release_reservation(CpuCopy& c) {
  if (!c.prealloc) return;
  pool_.release(*c.prealloc);
  c.prealloc.reset();
}

void CpuStore::allocate_pieces(RequestId req, std::int64_t count,
                               std::vector<std::pair<GroupId, std::int64_t>>& pieces) {
  while (count > 0) {
    std::optional<GroupId> src = pool_.best_fit(count);
    std::int64_t take = count;
    if (!src) {
      src = pool_.largest_free();
      if (!src) throw CpuOutOfMemory("CPU pool exhausted while booking a swap-out");
      take = pool_.group(*src).len;
    }
    const GroupId g = pool_.carve(*src, 0, take, req);
    pieces.emplace_back(g, take);
    count -= take;
  }
}

SwapPlan CpuStore::plan_swap_out(RequestId req, std::int64_t tokens,
                                 std::span<const Extent> gpu, Priority priority,
                                 std::int64_t max_op_blocks) {
  const std::int64_t n = blocks_needed(tokens, spec_);
  const std::vector<std::int64_t> gpu_phys = flatten(gpu);
  if (static_cast<std::int64_t>(gpu_phys.size()) < n) {
    throw std::invalid_argument("plan_swap_out: GPU extents smaller than the footprint");
  }

  auto it = copies_.find(req);
  if (it != copies_.end() && (!config_.reuse || it->second.tokens > tokens)) {
    drop(req);
    it = copies_.end();
  }

  std::vector<std::int64_t> cpu_phys(static_cast<std::size_t>(n), -1);
  std::vector<char> move(static_cast<std::size_t>(n), 1);
  std::int64_t old_blocks = 0;
  if (it != copies_.end()) {
    const CpuCopy& c = it->second;
    old_blocks = blocks_needed(c.tokens, spec_);
    for (const CpuSegment& s : c.segments) {
      if (!s.valid) continue;
      for (std::int64_t b = s.first_block; b < std::min(n, s.first_block + s.blocks); ++b) {
        cpu_phys[b] = s.cpu_start + (b - s.first_block);
        move[b] = 0;
      }
    }
    // A partially filled last block that has since gained tokens is stale; it
    // is rewritten in place.
    if (c.tokens % spec_.block_size_tokens != 0 && tokens > c.tokens) {
      const std::int64_t pb = c.tokens / spec_.block_size_tokens;
      if (pb < n && cpu_phys[pb] >= 0) move[pb] = 1;
    }
  }

  std::vector<std::int64_t> holes;
  std::vector<std::int64_t> tail;
  for (std::int64_t b = 0; b < n; ++b) {
    if (cpu_phys[b] >= 0) continue;
    (b < old_blocks ? holes : tail).push_back(b);
  }
  const auto missing = static_cast<std::int64_t>(holes.size() + tail.size());
  if (missing > 0) {
    const std::int64_t available =
        pool_.free_blocks() + reserved_blocks() + evictable_blocks(priority, req);
    if (available < missing) {
      throw CpuOutOfMemory("swap-out of " + std::to_string(missing) + " blocks exceeds " +
                           std::to_string(available) + " obtainable CPU blocks");
    }
  }

  if (it == copies_.end()) {
    it = copies_.emplace(req, CpuCopy{}).first;
    it->second.owner = req;
  }
  CpuCopy& c = it->second;

  // (group, logical blocks) pieces in the order they are consumed.
  std::vector<std::pair<GroupId, std::vector<std::int64_t>>> placed;
  std::size_t tail_from_prealloc = 0;
  if (c.prealloc && !tail.empty()) {
    const GroupId pre = *c.prealloc;
    const std::int64_t len = pool_.group(pre).len;
    const auto k = static_cast<std::int64_t>(std::min<std::size_t>(tail.size(), len));
    if (k < len) {
      c.prealloc = pool_.split_used(pre, k);
    } else {
      c.prealloc.reset();
    }
    tail_from_prealloc = static_cast<std::size_t>(k);
    placed.emplace_back(pre, std::vector<std::int64_t>(tail.begin(), tail.begin() + k));
  }

  std::vector<std::int64_t> fresh = holes;
  fresh.insert(fresh.end(), tail.begin() + static_cast<std::ptrdiff_t>(tail_from_prealloc),
               tail.end());
  const auto need_fresh = static_cast<std::int64_t>(fresh.size());
  if (need_fresh > pool_.free_blocks()) {
    evict_for(priority, req, need_fresh - pool_.free_blocks());
  }
  std::vector<std::pair<GroupId, std::int64_t>> pieces;
  allocate_pieces(req, need_fresh, pieces);
  std::size_t cursor = 0;
  for (const auto& [g, len] : pieces) {
    placed.emplace_back(g, std::vector<std::int64_t>(
                               fresh.begin() + static_cast<std::ptrdiff_t>(cursor),
                               fresh.begin() + static_cast<std::ptrdiff_t>(cursor + len)));
    cursor += static_cast<std::size_t>(len);
  }

  // Split every placed group wherever its logical blocks stop being consecutive.
  std::vector<CpuSegment> fresh_segments;
  for (auto& [g, blocks] : placed) {
    GroupId current = g;
    std::size_t run_start = 0;
    for (std::size_t i = 1; i <= blocks.size(); ++i) {
      if (i < blocks.size() && blocks[i] == blocks[i - 1] + 1) continue;
      const auto run_len = static_cast<std::int64_t>(i - run_start);
      GroupId next{};
      if (i < blocks.size()) next = pool_.split_used(current, run_len);
      BlockGroup& grp = pool_.mutable_group(current);
      grp.filled = run_len;
      fresh_segments.push_back({current, grp.start, blocks[run_start], run_len, true});
      for (std::int64_t j = 0; j < run_len; ++j) {
        cpu_phys[blocks[run_start + static_cast<std::size_t>(j)]] = grp.start + j;
      }
      current = next;
      run_start = i;
    }
  }

  std::erase_if(c.segments, [](const CpuSegment& s) { return !s.valid; });
  c.segments.insert(c.segments.end(), fresh_segments.begin(), fresh_segments.end());
  std::sort(c.segments.begin(), c.segments.end(),
            [](const CpuSegment& a, const CpuSegment& b) { return a.first_block < b.first_block; });
  c.tokens = tokens;
  c.last_increment = std::max<std::int64_t>(0, n - old_blocks);

  SwapPlan plan;
  plan.ops = build_ops(Direction::Out, move, gpu_phys, cpu_phys, max_op_blocks);
  plan.total_blocks_moved = std::count(move.begin(), move.end(), 1);
  plan.reused_blocks = n - plan.total_blocks_moved;
  return plan;
}

std::int64_t CpuStore::valid_prefix_tokens(RequestId req) const {
  const CpuCopy* c = copy(req);
  if (!c) return 0;
  std::int64_t covered = 0;
  for (const CpuSegment& s : c->segments) {
    if (!s.valid || s.first_block != covered) break;
    covered += s.blocks;
  }
  return std::min(c->tokens, covered * spec_.block_size_tokens);
}

SwapPlan CpuStore::plan_swap_in_prefix(RequestId req, std::span<const Extent> gpu,
                                       std::int64_t max_op_blocks) {
  auto it = copies_.find(req);
  if (it == copies_.end()) throw std::logic_error("plan_swap_in: request has no CPU copy");
  const std::int64_t n = blocks_needed(valid_prefix_tokens(req), spec_);
  const std::vector<std::int64_t> gpu_phys = flatten(gpu);
  if (static_cast<std::int64_t>(gpu_phys.size()) < n) {
    throw std::invalid_argument("plan_swap_in: GPU extents smaller than the copy");
  }
  std::vector<std::int64_t> cpu_phys(static_cast<std::size_t>(n), -1);
  for (const CpuSegment& s : it->second.segments) {
    if (!s.valid) continue;
    for (std::int64_t b = s.first_block; b < std::min(n, s.first_block + s.blocks); ++b) {
      cpu_phys[b] = s.cpu_start + (b - s.first_block);
    }
  }
  const std::vector<char> all(static_cast<std::size_t>(n), 1);
  SwapPlan plan;
  plan.ops = build_ops(Direction::In, all, gpu_phys, cpu_phys, max_op_blocks);
  plan.total_blocks_moved = n;
  if (!config_.keep_after_swap_in) drop(req);
  return plan;
}

SwapPlan CpuStore::plan_swap_in(RequestId req, std::span<const Extent> gpu,
                                std::int64_t max_op_blocks) {
  const CpuCopy* c = copy(req);
  if (!c) throw std::logic_error("plan_swap_in: request has no CPU copy");
  if (valid_prefix_tokens(req) < c->tokens) {
    throw ContaminatedCopy("CPU copy of request " + std::to_string(req.value()) +
                           " has contaminated segments");
  }
  return plan_swap_in_prefix(req, gpu, max_op_blocks);
}

std::vector<std::pair<RequestId, GroupId>> CpuStore::evict_for(Priority priority,
                                                               RequestId requester,
                                                               std::int64_t need) {
  std::vector<std::pair<RequestId, GroupId>> invalidated;
  if (need <= 0) return invalidated;
  if (reserved_blocks() + evictable_blocks(priority, requester) < need) {
    throw InsufficientEviction("lower-priority copies cannot cover " + std::to_string(need) +
                               " blocks");
  }

  // Lowest priority first: sort owners by descending (rank, id).
  std::vector<RequestId> owners;
  for (const auto& [owner, _] : copies_) owners.push_back(owner);
  std::sort(owners.begin(), owners.end(), [&](RequestId a, RequestId b) {
    return outranks(priority_of(b), b, priority_of(a), a);
  });

  std::int64_t freed = 0;
  for (RequestId owner : owners) {
    if (freed >= need) break;
    CpuCopy& c = copies_.at(owner);
    if (!c.prealloc) continue;
    freed += pool_.group(*c.prealloc).len;
    release_reservation(c);
  }
  if (freed >= need) return invalidated;

  struct Candidate {
    RequestId owner;
    std::size_t index;
    std::int64_t blocks;
    std::int64_t cpu_start;
  };
  std::vector<Candidate> candidates;
  for (RequestId owner : owners) {
    if (owner == requester || !outranks(priority, requester, priority_of(owner), owner)) continue;
    const CpuCopy& c = copies_.at(owner);
    std::vector<Candidate> mine;
    for (std::size_t i = 0; i < c.segments.size(); ++i) {
      if (c.segments[i].valid) {
        mine.push_back({owner, i, c.segments[i].blocks, c.segments[i].cpu_start});
      }
    }
    std::stable_sort(mine.begin(), mine.end(), [](const Candidate& a, const Candidate& b) {
      if (a.blocks != b.blocks) return a.blocks > b.blocks;
      return a.cpu_start < b.cpu_start;
    });
    candidates.insert(candidates.end(), mine.begin(), mine.end());
  }
  for (const Candidate& cand : candidates) {
    if (freed >= need) break;
    CpuSegment& s = copies_.at(cand.owner).segments[cand.index];
    invalidated.emplace_back(cand.owner, s.group);
    pool_.release(s.group);
    s.valid = false;
    freed += s.blocks;
    contaminated_blocks_ += s.blocks;
  }
  return invalidated;
}

bool CpuStore::preallocate_increment(RequestId req, std::int64_t blocks) {
  auto it = copies_.find(req);
  if (it == copies_.end() || !it->second.fully_valid() || it->second.segments.empty()) {
    return false;
  }
  if (blocks <= 0) return true;
  CpuCopy& c = it->second;
  if (c.prealloc && pool_.group(*c.prealloc).len >= blocks) return true;
  release_reservation(c);
  const CpuSegment& last = c.segments.back();
  const std::int64_t end = last.cpu_start + last.blocks;
  auto free_group = pool_.free_group_starting_at(end);
  if (!free_group || pool_.group(*free_group).len < blocks) return false;
  c.prealloc = pool_.carve(*free_group, 0, blocks, req);
  return true;
}

std::int64_t CpuStore::prealloc_estimate(RequestId req) const {
  const CpuCopy* c = copy(req);
  const std::int64_t inc = c ? c->last_increment : 0;
  return std::clamp(inc, config_.prealloc_min_blocks, config_.prealloc_max_blocks);
}

void CpuStore::drop(RequestId req) {
  auto it = copies_.find(req);
  if (it == copies_.end()) return;
  for (const CpuSegment& s : it->second.segments) {
    if (s.valid) pool_.release(s.group);
  }
  release_reservation(it->second);
  copies_.erase(it);
}

std::string CpuStore::check_invariants() const {
  std::ostringstream err;
  err << pool_.check_invariants();
  std::int64_t owned = 0;
  for (const auto& [owner, c] : copies_) {
    std::int64_t expect = 0;
    bool all_valid = true;
    for (const CpuSegment& s : c.segments) {
      if (s.first_block < expect) err << "overlapping segments for " << owner << "; ";
      if (s.first_block != expect) all_valid = false;
      expect = s.first_block + s.blocks;
      if (!s.valid) {
        all_valid = false;
        continue;
      }
      const BlockGroup& g = pool_.group(s.group);
      if (g.owner != owner || g.start != s.cpu_start || g.len != s.blocks) {
        err << "segment of " << owner << " disagrees with its pool group; ";
      }
      owned += g.len;
    }
    if (all_valid && expect != blocks_needed(c.tokens, spec_)) {
      err << "valid copy of " << owner << " does not cover its tokens; ";
    }
    if (c.prealloc) {
      const BlockGroup& g = pool_.group(*c.prealloc);
      owned += g.len;
      if (c.segments.empty() || c.segments.back().cpu_start + c.segments.back().blocks != g.start) {
        err << "reservation of " << owner << " is not adjacent to its last segment; ";
      }
    }
  }
  if (owned != pool_.used_blocks()) err << "CPU blocks in use by no copy; ";
  return err.str();
}

void CpuStore::dump(std::ostream& os) const { pool_.dump(os, "cpu"); }

}  // namespace kvswitch
