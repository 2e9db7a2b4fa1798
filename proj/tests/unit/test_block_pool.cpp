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

#include <algorithm>
#include <set>
#include <sstream>

#include "kvswitch/block_pool.hpp"

using namespace kvswitch;

TEST(BlockPool, StartsAsOneFreeGroup) {
  BlockPool p(1024);
  auto gs = p.groups();
  ASSERT_EQ(gs.size(), 1u);
  EXPECT_EQ(gs[0].start, 0);
  EXPECT_EQ(gs[0].len, 1024);
  EXPECT_EQ(gs[0].state, GroupState::Free);
  EXPECT_EQ(p.free_blocks(), 1024);
  EXPECT_EQ(p.check_invariants(), "");
}

TEST(BlockPool, SingleBlockAndEmptyPools) {
  BlockPool p(1);
  EXPECT_EQ(p.groups().size(), 1u);
  EXPECT_THROW(BlockPool(0), std::invalid_argument);
}

TEST(BlockPool, CarveInteriorMakesThreePieces) {
  BlockPool p(100);
  const GroupId g = p.carve(*p.largest_free(), 40, 20, RequestId{1});
  auto gs = p.groups();
  ASSERT_EQ(gs.size(), 3u);
  EXPECT_EQ(gs[0].len, 40);
  EXPECT_EQ(gs[1].start, 40);
  EXPECT_EQ(gs[1].id, g);
  EXPECT_EQ(gs[2].start, 60);
  EXPECT_EQ(p.free_blocks(), 80);
  EXPECT_EQ(p.check_invariants(), "");
}

TEST(BlockPool, ReleaseCoalescesBothSides) {
  BlockPool p(100);
  const GroupId a = p.carve(*p.largest_free(), 0, 30, RequestId{1});
  const GroupId b = p.carve(*p.largest_free(), 0, 30, RequestId{2});
  p.release(a);
  EXPECT_EQ(p.free_group_count(), 2u);
  const GroupId merged = p.release(b);
  EXPECT_EQ(p.free_group_count(), 1u);
  EXPECT_EQ(p.group(merged).len, 100);
  EXPECT_FALSE(p.contains(a));
  EXPECT_EQ(p.check_invariants(), "");
}

TEST(BlockPool, IdsAreNeverReused) {
  BlockPool p(64);
  std::set<std::uint64_t> seen;
  for (const auto& g : p.groups()) seen.insert(g.id.value());
  for (int i = 0; i < 20; ++i) {
    const GroupId g = p.carve(*p.largest_free(), 0, 8, RequestId{1});
    EXPECT_TRUE(seen.insert(g.value()).second);
    const GroupId f = p.release(g);
    EXPECT_TRUE(seen.insert(f.value()).second);
  }
}

TEST(BlockPool, BestFitPrefersSmallestThenLowest) {
  BlockPool p(200);
  const GroupId a = p.carve(*p.largest_free(), 0, 10, RequestId{1});   // [0,10)
  p.carve(*p.largest_free(), 0, 10, RequestId{2});                     // [10,20)
  const GroupId c = p.carve(*p.largest_free(), 0, 10, RequestId{3});   // [20,30)
  p.carve(*p.largest_free(), 0, 10, RequestId{4});                     // [30,40)
  p.release(a);
  p.release(c);
  const auto fit = p.best_fit(8);
  ASSERT_TRUE(fit);
  EXPECT_EQ(p.group(*fit).start, 0);
  EXPECT_EQ(p.group(*p.best_fit(11)).start, 40);
  EXPECT_FALSE(p.best_fit(161));
}

TEST(BlockPool, SplitUsedKeepsIdOnPrefix) {
  BlockPool p(100);
  const GroupId g = p.carve(*p.largest_free(), 0, 60, RequestId{1});
  const GroupId tail = p.split_used(g, 50);
  EXPECT_EQ(p.group(g).len, 50);
  EXPECT_EQ(p.group(tail).start, 50);
  EXPECT_EQ(p.group(tail).len, 10);
  EXPECT_EQ(p.group(tail).owner, RequestId{1});
  EXPECT_EQ(p.check_invariants(), "");
}

TEST(BlockPool, DumpHasOneLinePerGroup) {
  BlockPool p(10);
  p.carve(*p.largest_free(), 0, 4, RequestId{7});
  std::ostringstream os;
  p.dump(os);
  const std::string s = os.str();
  EXPECT_EQ(std::count(s.begin(), s.end(), '\n'), 2);
  EXPECT_NE(s.find("0 4 used 7"), std::string::npos) << s;
}
