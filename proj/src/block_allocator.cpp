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

#include "kvswitch/block_allocator.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>

#include "kvswitch/errors.hpp"

namespace kvswitch {

void PoolConfig::validate() const {
  if (total_blocks < 1) throw std::invalid_argument("total_blocks must be >= 1");
  if (initial_group_blocks < 1) throw std::invalid_argument("initial_group_blocks must be >= 1");
  if (total_blocks < initial_group_blocks) {
    throw std::invalid_argument("total_blocks must be >= initial_group_blocks");
  }
}

BlockGroupAllocator::BlockGroupAllocator(const PoolConfig& config)
    : config_(config), pool_(config.total_blocks), rng_(config.rng_seed) {
  config_.validate();
}

std::int64_t BlockGroupAllocator::tail_of(GroupId g) const {
  const BlockGroup& grp = pool_.group(g);
  return grp.len - grp.filled;
}

void BlockGroupAllocator::set_active(RequestId req) {
  auto it = holdings_.find(req);
  if (it == holdings_.end()) return;
  for (GroupId g : it->second.groups) pool_.mutable_group(g).active = false;
  if (!it->second.groups.empty()) pool_.mutable_group(it->second.groups.back()).active = true;
}

std::optional<GroupId> BlockGroupAllocator::active_group(RequestId req) const {
  auto it = holdings_.find(req);
  if (it == holdings_.end() || it->second.groups.empty()) return std::nullopt;
  return it->second.groups.back();
}

std::vector<GroupId> BlockGroupAllocator::groups_of(RequestId req) const {
  auto it = holdings_.find(req);
  if (it == holdings_.end()) return {};
  return it->second.groups;
}

std::int64_t BlockGroupAllocator::reclaimable_blocks(std::optional<RequestId> exclude) const {
  std::int64_t total = 0;
  for (const auto& [req, h] : holdings_) {
    if (exclude && req == *exclude) continue;
    if (!h.groups.empty()) total += tail_of(h.groups.back());
  }
  return total;
}

bool BlockGroupAllocator::can_allocate(RequestId req, std::int64_t want) const {
  std::int64_t own_tail = 0;
  if (auto act = active_group(req)) own_tail = tail_of(*act);
  return own_tail + pool_.free_blocks() + reclaimable_blocks(req) >= want;
}

GroupId BlockGroupAllocator::grant_from_free(RequestId req, GroupId free_group,
                                             std::int64_t size, std::int64_t fill,
                                             AllocResult& out) {
  const GroupId g = pool_.carve(free_group, 0, size, req);
  BlockGroup& grp = pool_.mutable_group(g);
  grp.filled = fill;
  holdings_[req].groups.push_back(g);
  out.groups.push_back(g);
  out.new_extents.push_back({grp.start, fill});
  return g;
}

std::optional<RequestId> BlockGroupAllocator::pick_victim(
    const std::vector<RequestId>& candidates) {
  if (candidates.empty()) return std::nullopt;
  if (config_.victim_policy == VictimPolicy::LowestPriority && priority_lookup_) {
    return *std::max_element(candidates.begin(), candidates.end(),
                             [&](RequestId a, RequestId b) {
                               return outranks(priority_lookup_(a), a, priority_lookup_(b), b);
                             });
  }
  return candidates[rng_.uniform_int(candidates.size())];
}

ReclaimResult BlockGroupAllocator::reclaim_from_victim(std::int64_t need,
                                                       RequestId beneficiary) {
  if (need < 1) throw std::invalid_argument("reclaim_from_victim: need must be >= 1");
  std::vector<RequestId> eligible;
  std::vector<RequestId> comfortable;
  for (const auto& [req, h] : holdings_) {
    if (req == beneficiary || h.groups.empty()) continue;
    const std::int64_t tail = tail_of(h.groups.back());
    if (tail < need) continue;
    eligible.push_back(req);
    if (tail - need >= kVictimHeadroom) comfortable.push_back(req);
  }
  auto victim = pick_victim(comfortable.empty() ? eligible : comfortable);
  if (!victim) throw NoVictim("no active group has " + std::to_string(need) + " unused blocks");

  const GroupId act = holdings_.at(*victim).groups.back();
  const BlockGroup& g = pool_.group(act);
  const GroupId carved = pool_.split_used(act, g.len - need);
  BlockGroup& c = pool_.mutable_group(carved);
  c.owner = beneficiary;
  c.filled = 0;
  c.active = false;
  holdings_[beneficiary].groups.push_back(carved);
  set_active(beneficiary);
  return {*victim, pool_.group(carved)};
}

AllocResult BlockGroupAllocator::allocate(RequestId req, std::int64_t want,
                                          std::int64_t expected_total) {
  if (want < 1) throw std::invalid_argument("allocate: want must be >= 1");
  if (!can_allocate(req, want)) {
    throw OutOfMemory("cannot grant " + std::to_string(want) + " blocks: " +
                      std::to_string(pool_.free_blocks()) + " free, " +
                      std::to_string(reclaimable_blocks(req)) + " reclaimable");
  }
  AllocResult out;
  out.granted_blocks = want;
  std::int64_t remaining = want;

  if (auto act = active_group(req)) {
    BlockGroup& g = pool_.mutable_group(*act);
    const std::int64_t take = std::min(g.len - g.filled, remaining);
    if (take > 0) {
      out.new_extents.push_back({g.start + g.filled, take});
      g.filled += take;
      remaining -= take;
      out.groups.push_back(*act);
    }
  }

  if (remaining > 0) {
    std::int64_t target = remaining;
    if (!config_.exact_grants) {
      if (!ever_allocated_.contains(req)) {
        target = std::min(config_.initial_group_blocks, expected_total);
      } else {
        target = expected_total - held_blocks(req);
      }
    }
    const std::int64_t size = std::max(remaining, target);

    if (auto fit = pool_.best_fit(size)) {
      grant_from_free(req, *fit, size, remaining, out);
      remaining = 0;
    } else if (auto big = pool_.largest_free(); big && pool_.group(*big).len >= remaining) {
      grant_from_free(req, *big, std::min(size, pool_.group(*big).len), remaining, out);
      remaining = 0;
    } else {
      // No single free group fits: take whole free groups largest first, then
      // carve from victims' unused tails.
      for (GroupId id : pool_.free_groups_largest_first()) {
        if (remaining == 0) break;
        if (auto fit = pool_.best_fit(remaining)) {
          grant_from_free(req, *fit, remaining, remaining, out);
          remaining = 0;
          break;
        }
        const std::int64_t len = pool_.group(id).len;
        grant_from_free(req, id, len, len, out);
        remaining -= len;
      }
      while (remaining > 0) {
        bool single = false;
        for (const auto& [other, h] : holdings_) {
          if (other != req && !h.groups.empty() && tail_of(h.groups.back()) >= remaining) {
            single = true;
            break;
          }
        }
        std::int64_t take = remaining;
        if (!single) {
          // Largest tail wins; ties go to the lowest request id.
          std::int64_t best = 0;
          for (const auto& [other, h] : holdings_) {
            if (other == req || h.groups.empty()) continue;
            best = std::max(best, tail_of(h.groups.back()));
          }
          take = best;
        }
        std::optional<RequestId> victim;
        GroupId carved_id;
        if (single) {
          auto r = reclaim_from_victim(take, req);
          victim = r.victim;
          carved_id = r.carved.id;
        } else {
          for (auto& [other, h] : holdings_) {
            if (other == req || h.groups.empty() || tail_of(h.groups.back()) != take) continue;
            const GroupId act = h.groups.back();
            const BlockGroup& g = pool_.group(act);
            carved_id = pool_.split_used(act, g.len - take);
            BlockGroup& c = pool_.mutable_group(carved_id);
            c.owner = req;
            c.active = false;
            holdings_[req].groups.push_back(carved_id);
            victim = other;
            break;
          }
        }
        BlockGroup& c = pool_.mutable_group(carved_id);
        c.filled = take;
        out.groups.push_back(carved_id);
        out.new_extents.push_back({c.start, take});
        out.reclaimed_from.emplace_back(*victim, carved_id);
        remaining -= take;
      }
    }
  }
  ever_allocated_.insert(req);
  set_active(req);
  return out;
}

void BlockGroupAllocator::free_group(GroupId g) {
  if (!pool_.contains(g)) throw DoubleFree("group was already freed");
  const BlockGroup& grp = pool_.group(g);
  if (grp.state != GroupState::Used) throw DoubleFree("group is not in use");
  const RequestId owner = *grp.owner;
  auto& groups = holdings_.at(owner).groups;
  groups.erase(std::find(groups.begin(), groups.end(), g));
  pool_.release(g);
  if (groups.empty()) {
    holdings_.erase(owner);
  } else {
    set_active(owner);
  }
}

void BlockGroupAllocator::release(RequestId req) {
  auto it = holdings_.find(req);
  if (it == holdings_.end()) return;
  for (GroupId g : it->second.groups) pool_.release(g);
  holdings_.erase(it);
}

void BlockGroupAllocator::record_transfer(std::span<const std::int64_t> op_sizes) {
  for (std::int64_t s : op_sizes) {
    ++transfer_hist_[s];
    transfer_blocks_ += s;
    ++transfer_count_;
  }
}

std::optional<GranularityStats> BlockGroupAllocator::granularity_stats() const {
  if (transfer_count_ == 0) return std::nullopt;
  GranularityStats s;
  s.transfers = transfer_count_;
  s.avg_blocks_per_group =
      static_cast<double>(transfer_blocks_) / static_cast<double>(transfer_count_);
  s.histogram = transfer_hist_;
  return s;
}

std::vector<Extent> BlockGroupAllocator::filled_extents(RequestId req) const {
  std::vector<Extent> out;
  auto it = holdings_.find(req);
  if (it == holdings_.end()) return out;
  for (GroupId id : it->second.groups) {
    const BlockGroup& g = pool_.group(id);
    if (g.filled == 0) continue;
    if (!out.empty() && out.back().end() == g.start) {
      out.back().len += g.filled;
    } else {
      out.push_back({g.start, g.filled});
    }
  }
  return out;
}

std::int64_t BlockGroupAllocator::filled_blocks(RequestId req) const {
  std::int64_t n = 0;
  for (GroupId g : groups_of(req)) n += pool_.group(g).filled;
  return n;
}

std::int64_t BlockGroupAllocator::held_blocks(RequestId req) const {
  std::int64_t n = 0;
  for (GroupId g : groups_of(req)) n += pool_.group(g).len;
  return n;
}

std::string BlockGroupAllocator::check_invariants() const {
  std::ostringstream err;
  err << pool_.check_invariants();
  std::int64_t owned = 0;
  for (const auto& [req, h] : holdings_) {
    if (h.groups.empty()) err << "empty holding for " << req << "; ";
    int actives = 0;
    for (std::size_t i = 0; i < h.groups.size(); ++i) {
      const BlockGroup& g = pool_.group(h.groups[i]);
      if (g.state != GroupState::Used || g.owner != req) {
        err << "holding of " << req << " lists a foreign group; ";
      }
      if (g.active) ++actives;
      if (i + 1 < h.groups.size() && g.filled != g.len) {
        err << "non-active group of " << req << " is partially filled; ";
      }
      owned += g.len;
    }
    if (actives != 1) err << req << " has " << actives << " active groups; ";
    if (!h.groups.empty() && !pool_.group(h.groups.back()).active) {
      err << "active group of " << req << " is not its latest; ";
    }
  }
  if (owned != pool_.used_blocks()) err << "used blocks not owned by any holding; ";
  return err.str();
}

void BlockGroupAllocator::dump(std::ostream& os) const { pool_.dump(os); }

}  // namespace kvswitch
