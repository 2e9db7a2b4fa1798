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

#include <gtest/gtest.h>

#include <sstream>
#include <vector>

#include "kvswitch/block_allocator.hpp"
#include "kvswitch/errors.hpp"

using namespace kvswitch;

namespace {

PoolConfig pool(std::int64_t total, std::int64_t initial = 60) {
  PoolConfig c;
  c.total_blocks = total;
  c.initial_group_blocks = std::min(initial, total);
  c.rng_seed = 1;
  return c;
}

std::vector<Extent> free_set(const BlockGroupAllocator& a) {
  std::vector<Extent> out;
  for (const auto& g : a.pool().groups()) {
    if (g.state == GroupState::Free) out.push_back(g.extent());
  }
  return out;
}

const RequestId r0{0}, r1{1}, r2{2}, r3{3}, r4{4};

}  // namespace

TEST(Allocator, FreshPoolSplitsOffFirstGroup) {
  BlockGroupAllocator a(pool(1024));
  const auto res = a.allocate(r1, 60, 60);
  ASSERT_EQ(res.groups.size(), 1u);
  EXPECT_EQ(a.pool().group(res.groups[0]).extent(), (Extent{0, 60}));
  EXPECT_EQ(free_set(a), (std::vector<Extent>{{60, 964}}));
  EXPECT_EQ(res.granted_blocks, 60);
  EXPECT_EQ(a.active_group(r1), res.groups[0]);
}

TEST(Allocator, BestFitThenLowEndSplit) {
  BlockGroupAllocator a(pool(164));
  a.allocate(r1, 32, 32);  // [0,32)
  a.allocate(r2, 68, 68);  // [32,100)
  a.allocate(r3, 64, 64);  // [100,164)
  a.release(r1);
  a.release(r3);
  ASSERT_EQ(free_set(a), (std::vector<Extent>{{0, 32}, {100, 64}}));
  const auto res = a.allocate(r4, 60, 60);
  ASSERT_EQ(res.groups.size(), 1u);
  EXPECT_EQ(a.pool().group(res.groups[0]).extent(), (Extent{100, 60}));
  EXPECT_EQ(free_set(a), (std::vector<Extent>{{0, 32}, {160, 4}}));
}

TEST(Allocator, OutOfMemoryWithoutSideEffects) {
  BlockGroupAllocator a(pool(8));
  EXPECT_THROW(a.allocate(r1, 60, 60), OutOfMemory);
  EXPECT_EQ(free_set(a), (std::vector<Extent>{{0, 8}}));
  EXPECT_TRUE(a.groups_of(r1).empty());
}

TEST(Allocator, FreeCoalescesWithFreeNeighbour) {
  BlockGroupAllocator a(pool(164));
  a.allocate(r2, 68, 68);  // [0,68)
  a.allocate(r3, 32, 32);  // [68,100)
  const auto res = a.allocate(r4, 60, 60);  // [100,160), free [160,4)
  a.free_group(res.groups[0]);
  EXPECT_EQ(free_set(a), (std::vector<Extent>{{100, 64}}));
}

TEST(Allocator, FreeWithoutFreeNeighbourDoesNotMerge) {
  BlockGroupAllocator a(pool(100));
  const auto first = a.allocate(r1, 32, 32);  // [0,32)
  a.allocate(r2, 68, 68);                     // [32,100)
  a.free_group(first.groups[0]);
  EXPECT_EQ(free_set(a), (std::vector<Extent>{{0, 32}}));
}

TEST(Allocator, DoubleFreeRejected) {
  BlockGroupAllocator a(pool(100));
  const auto res = a.allocate(r1, 10, 10);
  a.free_group(res.groups[0]);
  EXPECT_THROW(a.free_group(res.groups[0]), DoubleFree);
}

TEST(Allocator, ReclaimLeavesHeadroomAndCarvesTail) {
  BlockGroupAllocator a(pool(260));
  a.allocate(r0, 200, 200);  // [0,200)
  a.allocate(r1, 40, 60);    // [200,260), 40 filled
  const auto rr = a.reclaim_from_victim(10, r2);
  EXPECT_EQ(rr.victim, r1);
  EXPECT_EQ(rr.carved.extent(), (Extent{250, 10}));
  EXPECT_EQ(a.pool().group(*a.active_group(r1)).extent(), (Extent{200, 50}));
  EXPECT_EQ(a.filled_blocks(r1), 40);
  EXPECT_EQ(a.check_invariants(), "");
}

TEST(Allocator, ReclaimWholeTailLeavesFilledPrefix) {
  BlockGroupAllocator a(pool(260));
  a.allocate(r0, 200, 200);
  a.allocate(r1, 40, 60);
  const auto rr = a.reclaim_from_victim(20, r2);
  EXPECT_EQ(rr.carved.extent(), (Extent{240, 20}));
  EXPECT_EQ(a.pool().group(*a.active_group(r1)).extent(), (Extent{200, 40}));
}

TEST(Allocator, ReclaimWithoutBigEnoughTailThrows) {
  BlockGroupAllocator a(pool(260));
  a.allocate(r0, 200, 200);
  a.allocate(r1, 40, 60);
  EXPECT_THROW(a.reclaim_from_victim(21, r2), NoVictim);
}

TEST(Allocator, AllocateFallsBackToVictimTails) {
  BlockGroupAllocator a(pool(120));
  a.allocate(r1, 10, 60);  // [0,60), 10 filled
  a.allocate(r2, 10, 60);  // [60,120), 10 filled
  EXPECT_EQ(a.free_blocks(), 0);
  const auto res = a.allocate(r3, 30, 30);
  EXPECT_EQ(res.granted_blocks, 30);
  EXPECT_EQ(a.filled_blocks(r3), 30);
  EXPECT_FALSE(res.reclaimed_from.empty());
  EXPECT_EQ(a.filled_blocks(r1), 10);
  EXPECT_EQ(a.filled_blocks(r2), 10);
  EXPECT_EQ(a.check_invariants(), "");
}

TEST(Allocator, GrowthConsumesOwnTailFirst) {
  BlockGroupAllocator a(pool(1024));
  const auto first = a.allocate(r1, 10, 60);
  const auto more = a.allocate(r1, 5, 60);
  ASSERT_EQ(more.groups.size(), 1u);
  EXPECT_EQ(more.groups[0], first.groups[0]);
  EXPECT_EQ(more.new_extents, (std::vector<Extent>{{10, 5}}));
  EXPECT_EQ(a.groups_of(r1).size(), 1u);
}

TEST(Allocator, FirstGroupClampedByExpectedFootprint) {
  BlockGroupAllocator a(pool(1024));
  a.allocate(r1, 5, 12);
  EXPECT_EQ(a.held_blocks(r1), 12);
  a.allocate(r2, 5, 500);
  EXPECT_EQ(a.held_blocks(r2), 60);
}

TEST(Allocator, LaterGroupsTargetRemainingExpectation) {
  BlockGroupAllocator a(pool(1024));
  a.allocate(r1, 60, 60);
  a.allocate(r1, 1, 100);
  EXPECT_EQ(a.held_blocks(r1), 100);
  EXPECT_EQ(a.groups_of(r1).size(), 2u);
}

TEST(Allocator, ExactGrantsGiveOneBlockAtATime) {
  PoolConfig c = pool(64);
  c.exact_grants = true;
  BlockGroupAllocator a(c);
  a.allocate(r1, 1, 60);
  EXPECT_EQ(a.held_blocks(r1), 1);
  a.allocate(r1, 1, 60);
  EXPECT_EQ(a.held_blocks(r1), 2);
}

TEST(Allocator, FilledExtentsMergeAdjacentGroups) {
  PoolConfig c = pool(64);
  c.exact_grants = true;
  BlockGroupAllocator a(c);
  for (int i = 0; i < 4; ++i) a.allocate(r1, 1, 60);
  EXPECT_EQ(a.filled_extents(r1), (std::vector<Extent>{{0, 4}}));
}

TEST(Allocator, ActiveGroupIsLatest) {
  BlockGroupAllocator a(pool(1024));
  a.allocate(r1, 60, 60);
  const auto second = a.allocate(r1, 10, 70);
  EXPECT_EQ(a.active_group(r1), second.groups.back());
  int active = 0;
  for (GroupId g : a.groups_of(r1)) active += a.pool().group(g).active ? 1 : 0;
  EXPECT_EQ(active, 1);
}

TEST(Allocator, GranularityStats) {
  BlockGroupAllocator a(pool(64));
  EXPECT_FALSE(a.granularity_stats().has_value());
  const std::vector<std::int64_t> same{20, 20, 20};
  a.record_transfer(same);
  EXPECT_DOUBLE_EQ(a.granularity_stats()->avg_blocks_per_group, 20.0);
  BlockGroupAllocator b(pool(64));
  const std::vector<std::int64_t> mixed{1, 39};
  b.record_transfer(mixed);
  const auto st = b.granularity_stats();
  EXPECT_DOUBLE_EQ(st->avg_blocks_per_group, 20.0);
  EXPECT_EQ(st->transfers, 2);
  EXPECT_EQ(st->histogram.at(1), 1);
  EXPECT_EQ(st->histogram.at(39), 1);
}

TEST(Allocator, LowestPriorityVictimPolicy) {
  PoolConfig c = pool(120);
  c.victim_policy = VictimPolicy::LowestPriority;
  BlockGroupAllocator a(c);
  a.set_priority_lookup([](RequestId id) { return Priority{id == RequestId{1} ? 5 : 1}; });
  a.allocate(r1, 10, 60);
  a.allocate(r2, 10, 60);
  EXPECT_EQ(a.reclaim_from_victim(10, r3).victim, r1);
}

TEST(Allocator, ConfigValidation) {
  EXPECT_THROW(BlockGroupAllocator(pool(0)), std::invalid_argument);
  PoolConfig c;
  c.total_blocks = 10;
  c.initial_group_blocks = 20;
  EXPECT_THROW(BlockGroupAllocator{c}, std::invalid_argument);
}

TEST(Allocator, DumpFormat) {
  BlockGroupAllocator a(pool(100));
  a.allocate(r1, 10, 10);
  std::ostringstream os;
  a.dump(os);
  EXPECT_NE(os.str().find("0 10 used 1 1"), std::string::npos) << os.str();
  EXPECT_NE(os.str().find("10 90 free - 0"), std::string::npos) << os.str();
}

TEST(Allocator, SameSeedSameLayout) {
  auto layout = [](std::uint64_t seed) {
    PoolConfig c = pool(300);
    c.rng_seed = seed;
    BlockGroupAllocator a(c);
    for (std::uint64_t i = 0; i < 5; ++i) a.allocate(RequestId{i}, 5, 60);
    for (std::uint64_t i = 5; i < 9; ++i) a.allocate(RequestId{i}, 20, 20);
    std::ostringstream os;
    a.dump(os);
    return os.str();
  };
  EXPECT_EQ(layout(3), layout(3));
}
