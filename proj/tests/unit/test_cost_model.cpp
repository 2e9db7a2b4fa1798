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

#include <vector>

#include "kvswitch/cost_model.hpp"
#include "kvswitch/rng.hpp"
#include "kvswitch/swap_plan.hpp"

using namespace kvswitch;

namespace {

constexpr std::int64_t kBlock = 131072;

std::vector<std::int64_t> singles(std::int64_t k) { return std::vector<std::int64_t>(k, kBlock); }

// Straight recurrence, written out separately from the library.
std::int64_t reference_total(const std::vector<std::int64_t>& bytes, std::int64_t dispatch,
                             std::int64_t bw, std::int64_t floor) {
  std::int64_t finish = 0;
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    const std::int64_t d = static_cast<std::int64_t>(i + 1) * dispatch;
    const std::int64_t exec = floor + (bytes[i] + bw / 2) / bw;
    finish = std::max(d, finish) + exec;
  }
  return finish;
}

}  // namespace

TEST(CostModel, ExecTimeOfOneBlock) {
  TransferParams p;
  EXPECT_EQ(exec_time(kBlock, p).us(), 6);
  EXPECT_EQ(exec_time(20 * kBlock, p).us(), 84);
}

TEST(CostModel, SingleOpAndDispatchBoundBatch) {
  TransferParams p;
  EXPECT_EQ(transfer_time(singles(1), p).total.us(), 18);
  const auto est = transfer_time(singles(100), p);
  EXPECT_EQ(est.total.us(), 1206);
  EXPECT_EQ(est.dispatch_busy.us(), 1200);
  EXPECT_NEAR(est.dispatch_fraction, 1200.0 / 1206.0, 1e-12);
}

TEST(CostModel, MergedOpBeatsSingles) {
  TransferParams p;
  const std::vector<std::int64_t> merged{20 * kBlock};
  EXPECT_EQ(transfer_time(merged, p).total.us(), 96);
  EXPECT_EQ(transfer_time(singles(20), p).total.us(), 246);
}

TEST(CostModel, EmptyBatch) {
  TransferParams p;
  const auto est = transfer_time({}, p);
  EXPECT_EQ(est.total, SimTime::zero());
  EXPECT_EQ(est.dispatch_fraction, 0.0);
}

TEST(CostModel, MatchesReferenceRecurrence) {
  Rng rng(7);
  for (int t = 0; t < 500; ++t) {
    TransferParams p;
    p.dispatch_per_op = SimTime{1 + static_cast<std::int64_t>(rng.uniform_int(40))};
    p.bandwidth_bytes_per_us = 1000 + static_cast<std::int64_t>(rng.uniform_int(100000));
    p.per_op_latency_floor = SimTime{static_cast<std::int64_t>(rng.uniform_int(10))};
    std::vector<std::int64_t> ops(1 + rng.uniform_int(40));
    for (auto& b : ops) b = kBlock * (1 + static_cast<std::int64_t>(rng.uniform_int(64)));
    EXPECT_EQ(transfer_time(ops, p).total.us(),
              reference_total(ops, p.dispatch_per_op.us(), p.bandwidth_bytes_per_us,
                              p.per_op_latency_floor.us()));
  }
}

TEST(CostModel, MonotoneInOpsAndBytes) {
  Rng rng(11);
  TransferParams p;
  for (int t = 0; t < 300; ++t) {
    std::vector<std::int64_t> ops(1 + rng.uniform_int(30));
    for (auto& b : ops) b = kBlock * (1 + static_cast<std::int64_t>(rng.uniform_int(32)));
    const auto base = transfer_time(ops, p).total;
    auto more = ops;
    more.push_back(kBlock);
    EXPECT_GE(transfer_time(more, p).total, base);
    auto bigger = ops;
    bigger[rng.uniform_int(bigger.size())] += kBlock;
    EXPECT_GE(transfer_time(bigger, p).total, base);
  }
}

TEST(CostModel, ConsolidationNeverLoses) {
  // Dominance grid: one K-block op is no slower than K one-block ops. The
  // bandwidths make a block a whole number of microseconds, so no rounding.
  for (std::int64_t dispatch : {1, 4, 12, 30}) {
    for (std::int64_t bw : {4096, 16384, 32768, 131072}) {
      for (std::int64_t floor : {0, 2, 8}) {
        TransferParams p;
        p.dispatch_per_op = SimTime{dispatch};
        p.bandwidth_bytes_per_us = bw;
        p.per_op_latency_floor = SimTime{floor};
        for (std::int64_t k = 2; k <= 64; ++k) {
          const std::vector<std::int64_t> merged{k * kBlock};
          EXPECT_LE(transfer_time(merged, p).total, transfer_time(singles(k), p).total)
              << "dispatch " << dispatch << " bw " << bw << " floor " << floor << " k " << k;
        }
      }
    }
  }
}

TEST(CostModel, ConsolidationLossBoundedByRounding) {
  // With fractional per-block times each single op may round down by up to
  // half a microsecond; nothing beyond that.
  for (std::int64_t dispatch : {1, 4, 12}) {
    for (std::int64_t bw : {5000, 16000, 32000, 100000}) {
      TransferParams p;
      p.dispatch_per_op = SimTime{dispatch};
      p.bandwidth_bytes_per_us = bw;
      for (std::int64_t k = 2; k <= 64; ++k) {
        const std::vector<std::int64_t> merged{k * kBlock};
        const auto m = transfer_time(merged, p).total.us();
        const auto s = transfer_time(singles(k), p).total.us();
        EXPECT_LE(2 * m, 2 * s + k + 1) << "dispatch " << dispatch << " bw " << bw << " k " << k;
      }
    }
  }
}

TEST(CostModel, ConsolidationStrictWithDefaults) {
  TransferParams p;
  for (std::int64_t k = 2; k <= 64; ++k) {
    const std::vector<std::int64_t> merged{k * kBlock};
    EXPECT_LT(transfer_time(merged, p).total, transfer_time(singles(k), p).total);
  }
}

TEST(CostModel, IterationTime) {
  InferParams p;
  p.decode_base = SimTime{3000};
  p.decode_per_token = SimTime{100};
  p.prefill_per_token = SimTime{200};
  EXPECT_EQ(iteration_time(0, 32, p).us(), 6200);
  EXPECT_EQ(iteration_time(10, 0, p).us(), 5000);
  EXPECT_EQ(iteration_time(0, 0, p).us(), 3000);
}

TEST(CostModel, YieldPoints) {
  TransferParams p;
  EXPECT_EQ(dispatch_yield_points(20, p), (std::vector<std::int64_t>{8, 16}));
  EXPECT_EQ(dispatch_yield_points(8, p), (std::vector<std::int64_t>{8}));
  EXPECT_TRUE(dispatch_yield_points(5, p).empty());
  EXPECT_TRUE(dispatch_yield_points(0, p).empty());
}

TEST(CostModel, ParamValidation) {
  TransferParams t;
  t.bandwidth_bytes_per_us = 0;
  EXPECT_THROW(t.validate(), std::invalid_argument);
  t = TransferParams{};
  t.sync_batch = 0;
  EXPECT_THROW(t.validate(), std::invalid_argument);
  InferParams i;
  i.prefill_per_token = SimTime{1};
  EXPECT_THROW(i.validate(), std::invalid_argument);
}

TEST(Pipeline, SerialDispatcherSharedAcrossDirections) {
  TransferParams p;
  TransferPipeline pipe(p);
  const std::vector<std::int64_t> one{kBlock};
  const auto out = pipe.submit(Direction::Out, one, SimTime{0});
  EXPECT_EQ(out[0].dispatch_done.us(), 12);
  EXPECT_EQ(out[0].exec_done.us(), 18);
  const auto in = pipe.submit(Direction::In, one, SimTime{0});
  EXPECT_EQ(in[0].dispatch_done.us(), 24);
  EXPECT_EQ(in[0].exec_done.us(), 30);
  EXPECT_EQ(pipe.engine_free(Direction::Out).us(), 18);
}

TEST(Pipeline, NotBeforeHoldsExecution) {
  TransferParams p;
  TransferPipeline pipe(p);
  const std::vector<std::int64_t> one{kBlock};
  const std::vector<SimTime> gate{SimTime{100}};
  const auto t = pipe.submit(Direction::In, one, SimTime{0}, gate);
  EXPECT_EQ(t[0].dispatch_done.us(), 12);
  EXPECT_EQ(t[0].exec_done.us(), 106);
}

TEST(Pipeline, YieldSlotsDelayLaterOps) {
  TransferParams p;
  TransferPipeline a(p), b(p);
  const auto ops = singles(9);
  const auto plain = a.submit(Direction::Out, ops, SimTime{0});
  const auto yielded = b.submit(Direction::Out, ops, SimTime{0}, {}, true);
  EXPECT_EQ(plain[8].dispatch_done.us(), 108);
  EXPECT_EQ(yielded[8].dispatch_done.us(), 120);
}

TEST(SwapPlanOps, RunsFollowBothAddressSpaces) {
  const std::vector<Extent> gpu{{0, 4}, {10, 4}};
  const std::vector<Extent> cpu{{100, 8}};
  const auto g = flatten(gpu);
  const auto c = flatten(cpu);
  EXPECT_EQ(g, (std::vector<std::int64_t>{0, 1, 2, 3, 10, 11, 12, 13}));
  const std::vector<char> all(8, 1);
  const auto ops = build_ops(Direction::Out, all, g, c, 0);
  ASSERT_EQ(ops.size(), 2u);
  EXPECT_EQ(ops[0].gpu_start, 0);
  EXPECT_EQ(ops[0].cpu_start, 100);
  EXPECT_EQ(ops[0].blocks, 4);
  EXPECT_EQ(ops[1].gpu_start, 10);
  EXPECT_EQ(ops[1].cpu_start, 104);
}

TEST(SwapPlanOps, SelectionAndCap) {
  const std::vector<Extent> gpu{{0, 8}};
  const std::vector<Extent> cpu{{0, 8}};
  const auto g = flatten(gpu);
  const auto c = flatten(cpu);
  std::vector<char> sel(8, 1);
  sel[3] = 0;
  auto ops = build_ops(Direction::In, sel, g, c, 0);
  ASSERT_EQ(ops.size(), 2u);
  EXPECT_EQ(ops[0].blocks, 3);
  EXPECT_EQ(ops[1].blocks, 4);
  ops = build_ops(Direction::In, std::vector<char>(8, 1), g, c, 1);
  EXPECT_EQ(ops.size(), 8u);
  ops = build_ops(Direction::In, std::vector<char>(8, 1), g, c, 3);
  EXPECT_EQ(ops.size(), 3u);
}
