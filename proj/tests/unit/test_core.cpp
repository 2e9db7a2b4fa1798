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
#include <vector>

#include "kvswitch/core.hpp"
#include "kvswitch/rng.hpp"

using namespace kvswitch;

TEST(SimTime, SubtractionSaturates) {
  EXPECT_EQ((SimTime{5} - SimTime{9}).us(), 0);
  EXPECT_EQ((SimTime{9} - SimTime{5}).us(), 4);
  EXPECT_EQ(SimTime{-3}.us(), 0);
}

TEST(SimTime, Conversions) {
  EXPECT_DOUBLE_EQ(SimTime{1500}.ms(), 1.5);
  EXPECT_DOUBLE_EQ(SimTime{2'000'000}.seconds(), 2.0);
  EXPECT_EQ(SimTime::from_ms(1.2345).us(), 1235);
  EXPECT_EQ((SimTime{7} * 3).us(), 21);
}

TEST(Priority, LowerRankWinsThenLowerId) {
  EXPECT_TRUE(outranks(Priority{0}, RequestId{9}, Priority{1}, RequestId{0}));
  EXPECT_FALSE(outranks(Priority{1}, RequestId{0}, Priority{0}, RequestId{9}));
  EXPECT_TRUE(outranks(Priority{2}, RequestId{3}, Priority{2}, RequestId{4}));
  EXPECT_FALSE(outranks(Priority{2}, RequestId{4}, Priority{2}, RequestId{4}));
}

TEST(BlockSpec, BlocksNeededRoundsUp) {
  const BlockSpec spec;
  EXPECT_EQ(blocks_needed(0, spec), 0);
  EXPECT_EQ(blocks_needed(1, spec), 1);
  EXPECT_EQ(blocks_needed(16, spec), 1);
  EXPECT_EQ(blocks_needed(17, spec), 2);
  EXPECT_EQ(group_bytes(20, spec), 20 * 131072);
  EXPECT_THROW(blocks_needed(-1, spec), std::invalid_argument);
  EXPECT_THROW((BlockSpec{0, 1}.validate()), std::invalid_argument);
}

TEST(Extent, HalfOpenOverlap) {
  EXPECT_TRUE((Extent{100, 20}.overlaps(Extent{110, 30})));
  EXPECT_FALSE((Extent{100, 20}.overlaps(Extent{120, 10})));
  EXPECT_FALSE((Extent{120, 10}.overlaps(Extent{100, 20})));
}

TEST(Rng, DeriveSeedSeparatesLabelsAndRoots) {
  std::set<std::uint64_t> seen;
  for (std::uint64_t root : {0ULL, 1ULL, 42ULL}) {
    for (const char* label : {"workload", "priority", "alloc/victims"}) {
      EXPECT_TRUE(seen.insert(derive_seed(root, label)).second);
    }
  }
  EXPECT_EQ(derive_seed(42, "workload"), derive_seed(42, "workload"));
}

TEST(Rng, SameSeedSameStream) {
  Rng a(7), b(7);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next(), b.next());
}

TEST(Rng, UniformIntInRangeAndCoversIt) {
  Rng r(3);
  std::vector<int> hits(7, 0);
  for (int i = 0; i < 7000; ++i) {
    const auto x = r.uniform_int(7);
    ASSERT_LT(x, 7u);
    ++hits[x];
  }
  for (int h : hits) EXPECT_GT(h, 800);
  EXPECT_THROW(r.uniform_int(0), std::invalid_argument);
}

TEST(Rng, MomentsMatchParameters) {
  Rng r(11);
  const int n = 200000;
  double e = 0, g = 0, ln = 0, z = 0, z2 = 0;
  for (int i = 0; i < n; ++i) {
    e += r.exponential(3.0);
    g += static_cast<double>(r.geometric(0.25));
    ln += r.lognormal_with_mean(120.0, 1.0);
    const double s = r.standard_normal();
    z += s;
    z2 += s * s;
  }
  EXPECT_NEAR(e / n, 3.0, 0.05);
  EXPECT_NEAR(g / n, 3.0, 0.06);  // (1 - p) / p
  EXPECT_NEAR(ln / n, 120.0, 2.5);
  EXPECT_NEAR(z / n, 0.0, 0.01);
  EXPECT_NEAR(z2 / n, 1.0, 0.02);
}

TEST(Rng, ShuffleIsAPermutation) {
  Rng r(5);
  std::vector<int> v{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  r.shuffle(v.begin(), v.end());
  std::vector<int> sorted = v;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 10; ++i) EXPECT_EQ(sorted[i], i);
}
