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

#include "kvswitch/cost_model.hpp"

#include <algorithm>
#include <stdexcept>

namespace kvswitch {

void TransferParams::validate() const {
  if (dispatch_per_op <= SimTime::zero()) throw std::invalid_argument("dispatch_per_op must be > 0");
  if (bandwidth_bytes_per_us <= 0) throw std::invalid_argument("bandwidth must be > 0");
  if (per_op_latency_floor <= SimTime::zero()) {
    throw std::invalid_argument("per_op_latency_floor must be > 0");
  }
  if (sync_batch < 1) throw std::invalid_argument("sync_batch must be >= 1");
}

void InferParams::validate() const {
  if (!(prefill_per_token > decode_per_token)) {
    throw std::invalid_argument("prefill_per_token must exceed decode_per_token");
  }
}

SimTime exec_time(std::int64_t bytes, const TransferParams& p) {
  if (bytes < 0) throw std::invalid_argument("negative transfer size");
  const std::int64_t bw = p.bandwidth_bytes_per_us;
  return p.per_op_latency_floor + SimTime{(bytes + bw / 2) / bw};
}

TransferEstimate transfer_time(std::span<const std::int64_t> op_bytes, const TransferParams& p) {
  TransferEstimate est;
  if (op_bytes.empty()) return est;
  SimTime dispatched{};
  SimTime finished{};
  for (std::int64_t bytes : op_bytes) {
    dispatched += p.dispatch_per_op;
    finished = std::max(dispatched, finished) + exec_time(bytes, p);
  }
  est.total = finished;
  est.dispatch_busy = p.dispatch_per_op * static_cast<std::int64_t>(op_bytes.size());
  est.dispatch_fraction = static_cast<double>(est.dispatch_busy.us()) /
                          static_cast<double>(est.total.us());
  return est;
}

SimTime iteration_time(std::int64_t prefill_tokens, std::int64_t decode_tokens,
                       const InferParams& p) {
  if (prefill_tokens < 0 || decode_tokens < 0) {
    throw std::invalid_argument("negative token count");
  }
  return p.decode_base + p.decode_per_token * decode_tokens +
         p.prefill_per_token * prefill_tokens;
}

std::vector<std::int64_t> dispatch_yield_points(std::int64_t n_ops, const TransferParams& p) {
  std::vector<std::int64_t> out;
  for (std::int64_t k = p.sync_batch; k <= n_ops; k += p.sync_batch) out.push_back(k);
  return out;
}

std::vector<OpTiming> TransferPipeline::submit(Direction dir,
                                               std::span<const std::int64_t> op_bytes,
                                               SimTime start,
                                               std::span<const SimTime> not_before,
                                               bool yield_slots) {
  std::vector<OpTiming> out;
  out.reserve(op_bytes.size());
  SimTime d = std::max(start, dispatcher_free_);
  SimTime& engine = engine_free_[index(dir)];
  for (std::size_t i = 0; i < op_bytes.size(); ++i) {
    if (yield_slots && i > 0 && static_cast<std::int64_t>(i) % params_.sync_batch == 0) {
      d += params_.dispatch_per_op;
    }
    d += params_.dispatch_per_op;
    SimTime s = std::max(d, engine);
    if (i < not_before.size()) s = std::max(s, not_before[i]);
    engine = s + exec_time(op_bytes[i], params_);
    out.push_back({d, engine});
  }
  dispatcher_free_ = d;
  return out;
}

}  // namespace kvswitch
