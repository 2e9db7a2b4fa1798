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

#include "kvswitch/swap_manager.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace kvswitch {

const char* to_string(QueueKind q) {
  switch (q) {
    case QueueKind::Waiting: return "waiting";
    case QueueKind::Running: return "running";
    case QueueKind::Swapped: return "swapped";
    case QueueKind::OngoingSwapIn: return "ongoing_swap_in";
  }
  return "?";
}

const char* to_string(SwapMode m) { return m == SwapMode::Sync ? "sync" : "async"; }

const char* to_string(DecisionReason r) {
  switch (r) {
    case DecisionReason::SmallShortRequests: return "small_short_requests";
    case DecisionReason::LongTransfers: return "long_transfers";
    case DecisionReason::IdleIO: return "idle_io";
    case DecisionReason::ForcedSync: return "forced_sync";
  }
  return "?";
}

std::string to_jsonl(const SwapEvent& e) {
  nlohmann::ordered_json j;
  j["iteration"] = e.iteration;
  j["request"] = e.request.value();
  j["direction"] = e.dir == Direction::Out ? "out" : "in";
  j["blocks"] = e.blocks;
  j["ops"] = e.ops;
  j["dispatch_done"] = e.dispatch_done.us();
  j["exec_done"] = e.exec_done.us();
  j["conflicts"] = e.conflicts;
  return j.dump();
}

std::vector<RequestId>& QueueState::queue(QueueKind q) {
  switch (q) {
    case QueueKind::Waiting: return waiting;
    case QueueKind::Running: return running;
    case QueueKind::Swapped: return swapped;
    case QueueKind::OngoingSwapIn: return ongoing_swap_in;
  }
  throw std::logic_error("bad queue kind");
}

const std::vector<RequestId>& QueueState::queue(QueueKind q) const {
  return const_cast<QueueState*>(this)->queue(q);
}

std::optional<QueueKind> QueueState::find(RequestId req) const {
  for (QueueKind q : {QueueKind::Waiting, QueueKind::Running, QueueKind::Swapped,
                      QueueKind::OngoingSwapIn}) {
    const auto& v = queue(q);
    if (std::find(v.begin(), v.end(), req) != v.end()) return q;
  }
  return std::nullopt;
}

void QueueState::remove(RequestId req) {
  for (auto* v : {&waiting, &running, &swapped, &ongoing_swap_in}) {
    std::erase(*v, req);
  }
}

void QueueState::move(RequestId req, QueueKind to) {
  remove(req);
  queue(to).push_back(req);
}

void QueueState::record(const SwapEvent& e) {
  r_info.push_back(e);
  while (r_info.size() > r_info_window) r_info.pop_front();
}

std::size_t QueueState::size() const {
  return waiting.size() + running.size() + swapped.size() + ongoing_swap_in.size();
}

std::string QueueState::check_partition(std::span<const RequestId> live) const {
  std::ostringstream err;
  std::map<RequestId, int> seen;
  for (const auto* v : {&waiting, &running, &swapped, &ongoing_swap_in}) {
    for (RequestId r : *v) ++seen[r];
  }
  std::set<RequestId> want(live.begin(), live.end());
  for (const auto& [r, n] : seen) {
    if (n != 1) err << r << " queued " << n << " times; ";
    if (!want.contains(r)) err << r << " queued but not live; ";
  }
  for (RequestId r : want) {
    if (!seen.contains(r)) err << r << " live but in no queue; ";
  }
  if (r_info.size() > r_info_window) err << "r_info exceeds its window; ";
  return err.str();
}

RInfoSummary summarize(const QueueState& qs) {
  RInfoSummary s;
  std::int64_t exec_sum = 0;
  for (const SwapEvent& e : qs.r_info) {
    ++s.events;
    s.ops += e.ops;
    s.blocks += e.blocks;
    exec_sum += (e.exec_done - e.submitted).us();
  }
  if (s.events > 0) s.mean_exec = SimTime{exec_sum / s.events};
  return s;
}

std::vector<Conflict> detect_conflict(std::span<const Extent> grants,
                                      std::span<const InFlightSwap> in_flight, SimTime clock) {
  std::vector<Conflict> out;
  for (std::size_t g = 0; g < grants.size(); ++g) {
    for (const InFlightSwap& s : in_flight) {
      for (std::size_t i = 0; i < s.plan.ops.size(); ++i) {
        if (s.timings[i].exec_done <= clock) continue;
        const Extent op = s.plan.ops[i].gpu();
        if (!op.overlaps(grants[g])) continue;
        const std::int64_t lo = std::max(op.start, grants[g].start);
        const std::int64_t hi = std::min(op.end(), grants[g].end());
        out.push_back({g, s.request, s.dir, i, {lo, hi - lo}, s.timings[i].exec_done});
      }
    }
  }
  return out;
}

SimTime resolve_conflict(std::span<const Conflict> conflicts, SimTime clock) {
  SimTime latest = clock;
  for (const Conflict& c : conflicts) latest = std::max(latest, c.blocking_done);
  return latest - clock;
}

void SwapManagerConfig::validate() const {
  if (!(sync_threshold_ratio >= 0.0)) throw std::invalid_argument("sync_threshold_ratio must be >= 0");
  if (short_request_blocks < 0) throw std::invalid_argument("short_request_blocks must be >= 0");
  if (r_info_window < 1) throw std::invalid_argument("r_info_window must be >= 1");
}

StrategyDecision decide_mode(std::span<const std::int64_t> pending_footprints, SimTime drain,
                             SimTime iter_estimate, const SwapManagerConfig& cfg) {
  if (!cfg.async_swap) return {SwapMode::Sync, DecisionReason::ForcedSync};
  if (pending_footprints.empty()) return {SwapMode::Async, DecisionReason::IdleIO};
  const bool quick = static_cast<double>(drain.us()) <
                     cfg.sync_threshold_ratio * static_cast<double>(iter_estimate.us());
  const bool short_ones =
      std::all_of(pending_footprints.begin(), pending_footprints.end(),
                  [&](std::int64_t b) { return b < cfg.short_request_blocks; });
  if (quick && short_ones) return {SwapMode::Sync, DecisionReason::SmallShortRequests};
  return {SwapMode::Async, DecisionReason::LongTransfers};
}

SwapManager::SwapManager(const SwapManagerConfig& cfg, const TransferParams& transfer,
                         const BlockSpec& spec)
    : cfg_(cfg), transfer_(transfer), spec_(spec), pipeline_(transfer) {
  cfg_.validate();
  transfer_.validate();
}

std::optional<SimTime> SwapManager::next_swap_in_completion() const {
  std::optional<SimTime> best;
  for (const InFlightSwap& s : in_flight_) {
    if (s.dir != Direction::In) continue;
    if (!best || s.exec_done < *best) best = s.exec_done;
  }
  return best;
}

std::vector<RequestId> SwapManager::drain_completed(QueueState& qs, SimTime clock) {
  std::vector<const InFlightSwap*> done;
  for (const InFlightSwap& s : in_flight_) {
    if (s.dir == Direction::In && s.exec_done <= clock) done.push_back(&s);
  }
  std::stable_sort(done.begin(), done.end(), [](const InFlightSwap* a, const InFlightSwap* b) {
    return a->exec_done < b->exec_done;
  });
  std::vector<RequestId> moved;
  for (const InFlightSwap* s : done) {
    if (qs.find(s->request) == QueueKind::OngoingSwapIn) {
      qs.move(s->request, QueueKind::Running);
      moved.push_back(s->request);
    }
  }
  std::erase_if(in_flight_, [&](const InFlightSwap& s) { return s.exec_done <= clock; });
  return moved;
}

SwapEvent SwapManager::make_event(std::int64_t iteration, const InFlightSwap& s,
                                  SimTime submitted, std::int64_t conflicts) const {
  SwapEvent e;
  e.iteration = iteration;
  e.request = s.request;
  e.dir = s.dir;
  e.blocks = s.plan.total_blocks_moved;
  e.ops = static_cast<std::int64_t>(s.plan.ops.size());
  e.submitted = submitted;
  e.dispatch_done = s.dispatch_done;
  e.exec_done = s.exec_done;
  e.conflicts = conflicts;
  return e;
}

void SwapManager::emit(QueueState& qs, StepResult& out, const SwapEvent& e) {
  qs.record(e);
  out.events.push_back(e);
  if (sink_) sink_(e);
}

StepResult SwapManager::step(QueueState& qs, const StepInput& in, SimTime clock) {
  StepResult out;
  qs.r_info_window = cfg_.r_info_window;
  out.completed = drain_completed(qs, clock);

  if (!cfg_.async_swap) {
    // One cache stream: all swap-outs, then all swap-ins, while inference waits.
    SimTime t = clock;
    for (const auto* batch : {&in.swap_outs, &in.swap_ins}) {
      TransferPipeline local(transfer_);
      const SimTime batch_start = t;
      for (const PlannedSwap& p : *batch) {
        if (p.plan.ops.empty()) continue;
        const Direction dir = p.plan.ops.front().dir;
        const auto bytes = p.plan.op_bytes(spec_);
        InFlightSwap s{p.request, dir, p.plan, local.submit(dir, bytes, batch_start), {}, {},
                       in.iteration};
        s.dispatch_done = s.timings.back().dispatch_done;
        s.exec_done = s.timings.back().exec_done;
        t = std::max(t, s.exec_done);
        emit(qs, out, make_event(in.iteration, s, batch_start, 0));
      }
    }
    out.sync_stall = t - clock;
    for (const PlannedSwap& p : in.swap_ins) {
      qs.move(p.request, QueueKind::Running);
      out.completed.push_back(p.request);
    }
    out.decision = {SwapMode::Sync, DecisionReason::ForcedSync};
    return out;
  }

  std::int64_t yields = 0;
  for (const PlannedSwap& p : in.swap_outs) {
    if (p.plan.ops.empty()) continue;
    const auto bytes = p.plan.op_bytes(spec_);
    InFlightSwap s{p.request, Direction::Out, p.plan,
                   pipeline_.submit(Direction::Out, bytes, clock, {}, true), {}, {},
                   in.iteration};
    s.dispatch_done = s.timings.back().dispatch_done;
    s.exec_done = s.timings.back().exec_done;
    yields += (static_cast<std::int64_t>(bytes.size()) - 1) / transfer_.sync_batch;
    emit(qs, out, make_event(in.iteration, s, clock, 0));
    in_flight_.push_back(std::move(s));
  }

  for (const PlannedSwap& p : in.swap_ins) {
    qs.move(p.request, QueueKind::OngoingSwapIn);
    if (p.plan.ops.empty()) continue;
    // Each op waits for D2H copies over its destination blocks and for the
    // request's own pending swap-out, whose CPU image it reads.
    std::vector<SimTime> not_before(p.plan.ops.size(), SimTime::zero());
    std::int64_t held = 0;
    for (std::size_t i = 0; i < p.plan.ops.size(); ++i) {
      const Extent dst = p.plan.ops[i].gpu();
      for (const InFlightSwap& f : in_flight_) {
        if (f.dir != Direction::Out || f.exec_done <= clock) continue;
        if (f.request == p.request) not_before[i] = std::max(not_before[i], f.exec_done);
        for (std::size_t k = 0; k < f.plan.ops.size(); ++k) {
          if (f.timings[k].exec_done > clock && f.plan.ops[k].gpu().overlaps(dst)) {
            not_before[i] = std::max(not_before[i], f.timings[k].exec_done);
          }
        }
      }
      if (not_before[i] > clock) ++held;
    }
    const auto bytes = p.plan.op_bytes(spec_);
    InFlightSwap s{p.request, Direction::In, p.plan,
                   pipeline_.submit(Direction::In, bytes, clock, not_before, true), {}, {},
                   in.iteration};
    s.dispatch_done = s.timings.back().dispatch_done;
    s.exec_done = s.timings.back().exec_done;
    yields += (static_cast<std::int64_t>(bytes.size()) - 1) / transfer_.sync_batch;
    emit(qs, out, make_event(in.iteration, s, clock, held));
    in_flight_.push_back(std::move(s));
  }
  out.yield_stall = transfer_.dispatch_per_op * yields;

  // Requests with an empty plan have nothing to wait for.
  for (const PlannedSwap& p : in.swap_ins) {
    if (p.plan.ops.empty()) {
      qs.move(p.request, QueueKind::Running);
      out.completed.push_back(p.request);
    }
  }

  std::vector<std::int64_t> footprints;
  std::vector<const InFlightSwap*> pending;
  SimTime last = clock;
  for (const InFlightSwap& s : in_flight_) {
    if (s.dir != Direction::In || s.exec_done <= clock) continue;
    if (qs.find(s.request) != QueueKind::OngoingSwapIn) continue;
    pending.push_back(&s);
    footprints.push_back(s.plan.total_blocks_moved);
    last = std::max(last, s.exec_done);
  }
  out.decision = decide_mode(footprints, last - clock, in.iter_estimate, cfg_);
  if (out.decision.mode == SwapMode::Sync) {
    out.sync_stall = last - clock;
    std::stable_sort(pending.begin(), pending.end(),
                     [](const InFlightSwap* a, const InFlightSwap* b) {
                       return a->exec_done < b->exec_done;
                     });
    for (const InFlightSwap* s : pending) {
      qs.move(s->request, QueueKind::Running);
      out.completed.push_back(s->request);
    }
  }
  return out;
}

}  // namespace kvswitch
