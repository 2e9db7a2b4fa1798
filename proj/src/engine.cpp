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

#include "kvswitch/engine.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "kvswitch/errors.hpp"
#include "kvswitch/rng.hpp"

namespace kvswitch {

const char* to_string(AblationMode m) {
  switch (m) {
    case AblationMode::Baseline: return "baseline";
    case AblationMode::BlockGroup: return "blockgroup";
    case AblationMode::BlockGroupReuse: return "blockgroup_reuse";
    case AblationMode::Full: return "full";
  }
  return "?";
}

std::optional<AblationMode> parse_ablation(const std::string& s) {
  for (AblationMode m : ablation_modes()) {
    if (s == to_string(m)) return m;
  }
  return std::nullopt;
}

std::vector<AblationMode> ablation_modes() {
  return {AblationMode::Baseline, AblationMode::BlockGroup, AblationMode::BlockGroupReuse,
          AblationMode::Full};
}

ModeSettings mode_settings(AblationMode m) {
  switch (m) {
    case AblationMode::Baseline: return {1, true, false, false, false};
    case AblationMode::BlockGroup: return {0, false, false, false, false};
    case AblationMode::BlockGroupReuse: return {0, false, true, true, false};
    case AblationMode::Full: return {0, false, true, true, true};
  }
  throw std::logic_error("bad ablation mode");
}

void EngineConfig::validate() const {
  block.validate();
  transfer.validate();
  infer.validate();
  scheduler.validate();
  swap.validate();
  if (gpu_blocks < 1) throw std::invalid_argument("gpu_blocks must be >= 1");
  if (cpu.total_blocks < 1) throw std::invalid_argument("cpu total_blocks must be >= 1");
  if (initial_group_blocks < 1) throw std::invalid_argument("initial_group_blocks must be >= 1");
  if (expected_output_tokens < 1) throw std::invalid_argument("expected_output_tokens must be >= 1");
  if (deadlock_iterations < 1) throw std::invalid_argument("deadlock_iterations must be >= 1");
  if (efficiency_interval < 1) throw std::invalid_argument("efficiency_interval must be >= 1");
}

std::string to_jsonl(const IterationRecord& r) {
  nlohmann::ordered_json j;
  j["index"] = r.index;
  j["start_us"] = r.start.us();
  j["end_us"] = r.end.us();
  j["batch"] = r.batch_size;
  j["prefill_tokens"] = r.prefill_tokens;
  j["decode_tokens"] = r.decode_tokens;
  j["stall_sync_us"] = r.stall_sync.us();
  j["stall_conflict_us"] = r.stall_conflict.us();
  j["stall_yield_us"] = r.stall_yield.us();
  j["stall_recompute_us"] = r.stall_recompute.us();
  j["stall_wait_us"] = r.stall_wait.us();
  auto emitted = nlohmann::ordered_json::array();
  for (RequestId id : r.emitted) emitted.push_back(id.value());
  j["emitted"] = emitted;
  return j.dump();
}

namespace {

std::size_t nearest_rank(std::size_t n, double q) {
  if (n == 0) throw std::invalid_argument("percentile of an empty sample");
  if (!(q > 0.0 && q <= 1.0)) throw std::invalid_argument("percentile q must be in (0, 1]");
  const auto r = static_cast<std::size_t>(std::ceil(q * static_cast<double>(n) - 1e-9));
  return std::clamp<std::size_t>(r, 1, n);
}

}  // namespace

double percentile(std::span<const double> samples, double q) {
  const std::size_t r = nearest_rank(samples.size(), q);
  std::vector<double> v(samples.begin(), samples.end());
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(r - 1), v.end());
  return v[r - 1];
}

namespace {

template <typename F>
void for_each_field(const MetricsReport& m, F&& f) {
  f("mode", m.mode);
  f("conversations", m.conversations);
  f("turns", m.turns);
  f("iterations", m.iterations);
  f("sim_time_us", m.sim_time_us);
  f("busy_time_us", m.busy_time_us);
  f("ttft_p50_ms", m.ttft_p50_ms);
  f("ttft_p95_ms", m.ttft_p95_ms);
  f("ttft_p99_ms", m.ttft_p99_ms);
  f("ttft_p999_ms", m.ttft_p999_ms);
  f("tbt_p999_ms", m.tbt_p999_ms);
  f("throughput_tokens_per_s", m.throughput_tokens_per_s);
  f("overhead_ratio", m.overhead_ratio);
  f("stall_us", m.stall_us);
  f("stall_sync_us", m.stall_sync_us);
  f("stall_conflict_us", m.stall_conflict_us);
  f("stall_yield_us", m.stall_yield_us);
  f("stall_recompute_us", m.stall_recompute_us);
  f("stall_wait_us", m.stall_wait_us);
  f("avg_granularity_blocks", m.avg_granularity_blocks);
  f("swap_out_blocks", m.swap_out_blocks);
  f("swap_out_ops", m.swap_out_ops);
  f("swap_in_blocks", m.swap_in_blocks);
  f("swap_in_ops", m.swap_in_ops);
  f("reused_blocks", m.reused_blocks);
  f("efficiency_p50", m.efficiency_p50);
  f("efficiency_p99", m.efficiency_p99);
  f("efficiency_p999", m.efficiency_p999);
  f("peak_gpu_used_blocks", m.peak_gpu_used_blocks);
  f("peak_cpu_used_blocks", m.peak_cpu_used_blocks);
  f("peak_footprint_blocks", m.peak_footprint_blocks);
  f("preemptions", m.preemptions);
  f("priority_epochs", m.priority_epochs);
  f("cpu_oom_drops", m.cpu_oom_drops);
  f("contaminated_blocks", m.contaminated_blocks);
  f("contaminated_swap_ins", m.contaminated_swap_ins);
  f("recompute_tokens", m.recompute_tokens);
  f("conflicts", m.conflicts);
  f("sync_decisions", m.sync_decisions);
  f("async_decisions", m.async_decisions);
  f("tokens_emitted", m.tokens_emitted);
  f("tokens_expected", m.tokens_expected);
  f("causality_violations", m.causality_violations);
  f("conflict_violations", m.conflict_violations);
  f("invariant_violations", m.invariant_violations);
}

}  // namespace

std::string MetricsReport::to_json() const {
  nlohmann::ordered_json j;
  for_each_field(*this, [&](const char* k, const auto& v) { j[k] = v; });
  return j.dump(2) + "\n";
}

std::string MetricsReport::to_csv() const {
  std::string out = "metric,value\n";
  for_each_field(*this, [&](const char* k, const auto& v) {
    out += k;
    out += ',';
    out += nlohmann::json(v).dump();
    out += '\n';
  });
  return out;
}

namespace {

enum class Stage { NotArrived, Active, Thinking, Finished };

struct Req {
  const Conversation* conv = nullptr;
  Stage stage = Stage::NotArrived;
  std::size_t turn = 0;
  SimTime next_arrival;
  SimTime turn_arrival;
  std::int64_t tokens_total = 0;  // tokens that exist in the conversation so far
  std::int64_t kv_tokens = 0;     // tokens with a KV image on GPU or CPU
  std::int64_t recompute = 0;     // tokens whose KV was lost and must be rebuilt
  std::int64_t generated = 0;     // output tokens of the current turn
  bool prefilled = false;
  bool on_gpu = false;
  bool turn_end_pending = false;
  SimTime last_emit;
  Priority priority;
};

class Simulation {
 public:
  Simulation(const std::vector<Conversation>& workload, PriorityTrace& trace,
             const EngineConfig& cfg, RunObserver* observer)
      : cfg_(cfg),
        settings_(mode_settings(cfg.mode)),
        trace_(trace),
        observer_(observer),
        gpu_(make_pool(cfg, settings_)),
        cpu_(make_cpu(cfg, settings_), cfg.block),
        swap_(make_swap(cfg, settings_), cfg.transfer, cfg.block) {
    cfg_.validate();
    std::vector<const Conversation*> order;
    for (const Conversation& c : workload) {
      validate(c);
      order.push_back(&c);
    }
    std::stable_sort(order.begin(), order.end(), [](const Conversation* a, const Conversation* b) {
      return a->arrival != b->arrival ? a->arrival < b->arrival : a->id < b->id;
    });
    for (std::size_t i = 0; i < order.size(); ++i) {
      Req r;
      r.conv = order[i];
      r.next_arrival = order[i]->arrival;
      r.priority = Priority{static_cast<std::int64_t>(i)};
      if (!reqs_.emplace(order[i]->id, r).second) {
        throw std::invalid_argument("duplicate conversation id");
      }
      arrival_order_.push_back(order[i]->id);
      for (const Turn& t : order[i]->turns) report_.tokens_expected += t.output_tokens;
      report_.turns += static_cast<std::int64_t>(order[i]->turns.size());
    }
    report_.conversations = static_cast<std::int64_t>(order.size());
    report_.mode = to_string(cfg.mode);
    auto lookup = [this](RequestId id) {
      auto it = reqs_.find(id);
      return it == reqs_.end() ? Priority{0} : it->second.priority;
    };
    gpu_.set_priority_lookup(lookup);
    cpu_.set_priority_lookup(lookup);
    if (observer_) swap_.set_event_sink([this](const SwapEvent& e) { observer_->on_swap_event(e); });
    iter_estimate_ = cfg.infer.decode_base;
  }

  MetricsReport run() {
    while (finished_ < reqs_.size()) {
      activate_arrivals();
      const auto drained = swap_.drain_completed(qs_, clock_);
      if (qs_.size() == 0 && turn_end_.empty()) {
        jump_to_next_arrival();
        continue;
      }
      iterate(!drained.empty());
    }
    return finish();
  }

 private:
  static PoolConfig make_pool(const EngineConfig& cfg, const ModeSettings& s) {
    PoolConfig p;
    p.total_blocks = cfg.gpu_blocks;
    p.initial_group_blocks = std::min(cfg.initial_group_blocks, cfg.gpu_blocks);
    p.rng_seed = derive_seed(cfg.seed, "alloc/victims");
    p.victim_policy = cfg.victim_policy;
    p.exact_grants = s.exact_grants;
    return p;
  }
  static CpuStoreConfig make_cpu(const EngineConfig& cfg, const ModeSettings& s) {
    CpuStoreConfig c = cfg.cpu;
    c.reuse = s.reuse;
    c.keep_after_swap_in = s.keep_after_swap_in;
    return c;
  }
  static SwapManagerConfig make_swap(const EngineConfig& cfg, const ModeSettings& s) {
    SwapManagerConfig c = cfg.swap;
    c.async_swap = s.async_swap;
    return c;
  }

  Req& req(RequestId id) { return reqs_.at(id); }

  std::int64_t blocks(std::int64_t tokens) const { return blocks_needed(tokens, cfg_.block); }

  std::int64_t expected_total_blocks(const Req& r) const {
    const std::int64_t ahead = std::max(cfg_.expected_output_tokens - r.generated,
                                        4 * cfg_.block.block_size_tokens);
    return blocks(r.tokens_total + ahead);
  }

  void activate(RequestId id, Req& r) {
    const Turn& t = r.conv->turns[r.turn];
    r.stage = Stage::Active;
    r.turn_arrival = r.next_arrival;
    r.tokens_total += t.input_tokens;
    r.generated = 0;
    r.prefilled = false;
    if (r.turn_end_pending) {
      // The previous turn's KV never left the GPU.
      r.turn_end_pending = false;
      std::erase(turn_end_, id);
      qs_.running.push_back(id);
    } else if (cpu_.has_copy(id) && cpu_.valid_prefix_tokens(id) > 0) {
      qs_.swapped.push_back(id);
    } else {
      lose_cpu_copy(r, id);
      qs_.waiting.push_back(id);
    }
  }

  void activate_arrivals() {
    std::vector<std::pair<SimTime, RequestId>> due;
    for (auto& [id, r] : reqs_) {
      if ((r.stage == Stage::NotArrived || r.stage == Stage::Thinking) &&
          r.next_arrival <= clock_) {
        due.emplace_back(r.next_arrival, id);
      }
    }
    std::sort(due.begin(), due.end());
    for (const auto& [_, id] : due) activate(id, req(id));
  }

  void jump_to_next_arrival() {
    std::optional<SimTime> next;
    for (const auto& [_, r] : reqs_) {
      if (r.stage != Stage::NotArrived && r.stage != Stage::Thinking) continue;
      if (!next || r.next_arrival < *next) next = r.next_arrival;
    }
    if (!next) throw SimulationAborted("no pending arrivals but conversations remain\n" + dump());
    clock_ = std::max(clock_, *next);
  }

  void lose_cpu_copy(Req& r, RequestId id) {
    if (r.on_gpu) return;
    cpu_.drop(id);
    r.recompute += r.kv_tokens;
    r.kv_tokens = 0;
  }

  void drop_kv(Req& r, RequestId id) {
    if (r.on_gpu) gpu_.release(id);
    r.on_gpu = false;
    cpu_.drop(id);
    r.recompute += r.kv_tokens;
    r.kv_tokens = 0;
  }

  bool swap_out(RequestId id, Req& r, std::vector<PlannedSwap>& outs) {
    if (r.kv_tokens == 0) {
      gpu_.release(id);
      r.on_gpu = false;
      return true;
    }
    const auto extents = gpu_.filled_extents(id);
    SwapPlan plan;
    try {
      plan = cpu_.plan_swap_out(id, r.kv_tokens, extents, r.priority, settings_.max_op_blocks);
    } catch (const CpuOutOfMemory&) {
      ++report_.cpu_oom_drops;
      drop_kv(r, id);
      return false;
    }
    if (observer_) observer_->on_swap_out(id, r.kv_tokens, plan);
    report_.swap_out_blocks += plan.total_blocks_moved;
    report_.swap_out_ops += static_cast<std::int64_t>(plan.ops.size());
    report_.reused_blocks += plan.reused_blocks;
    const auto sizes = plan.op_blocks();
    gpu_.record_transfer(sizes);
    gpu_.release(id);
    r.on_gpu = false;
    outs.push_back({id, std::move(plan), blocks(r.kv_tokens)});
    return true;
  }

  void swap_in(RequestId id, Req& r, std::vector<PlannedSwap>& ins) {
    const std::int64_t prefix = cpu_.valid_prefix_tokens(id);
    const std::int64_t n = blocks(prefix);
    if (n == 0) {
      // This iteration's swap-outs evicted the whole copy.
      lose_cpu_copy(r, id);
      qs_.move(id, QueueKind::Running);
      return;
    }
    gpu_.allocate(id, n, expected_total_blocks(r));
    r.on_gpu = true;
    const auto extents = gpu_.filled_extents(id);
    SwapPlan plan;
    if (prefix < r.kv_tokens) {
      plan = cpu_.plan_swap_in_prefix(id, extents, settings_.max_op_blocks);
      ++report_.contaminated_swap_ins;
      r.recompute += r.kv_tokens - prefix;
      r.kv_tokens = prefix;
    } else {
      plan = cpu_.plan_swap_in(id, extents, settings_.max_op_blocks);
    }
    report_.swap_in_blocks += plan.total_blocks_moved;
    report_.swap_in_ops += static_cast<std::int64_t>(plan.ops.size());
    const auto sizes = plan.op_blocks();
    gpu_.record_transfer(sizes);
    ins.push_back({id, std::move(plan), n});
  }

  void complete_turn(RequestId id, Req& r, SimTime at) {
    qs_.remove(id);
    if (r.turn + 1 == r.conv->turns.size()) {
      if (r.on_gpu) gpu_.release(id);
      r.on_gpu = false;
      cpu_.drop(id);
      r.stage = Stage::Finished;
      ++finished_;
      return;
    }
    r.stage = Stage::Thinking;
    ++r.turn;
    r.next_arrival = at + r.conv->think_time;
    r.turn_end_pending = true;
    turn_end_.push_back(id);
  }

  std::vector<RequestId> active_ids() const {
    std::vector<RequestId> out;
    for (const auto& [id, r] : reqs_) {
      if (r.stage == Stage::Active) out.push_back(id);
    }
    return out;
  }

  void apply_epoch() {
    std::vector<RequestId> live;
    std::vector<RequestId> pending;
    for (const auto& [id, r] : reqs_) {
      if (r.stage == Stage::Active || r.stage == Stage::Thinking) live.push_back(id);
    }
    for (RequestId id : arrival_order_) {
      if (req(id).stage == Stage::NotArrived) pending.push_back(id);
    }
    const std::set<RequestId> running(qs_.running.begin(), qs_.running.end());
    for (const auto& [id, p] : trace_.apply(trace_.epoch_at(iter_), live, running, pending)) {
      req(id).priority = p;
    }
    ++report_.priority_epochs;
  }

  void iterate(bool progressed) {
    IterationRecord rec;
    rec.index = iter_;
    rec.start = clock_;

    if (trace_.epoch_due(iter_)) apply_epoch();

    std::vector<Candidate> candidates;
    for (QueueKind q : {QueueKind::Running, QueueKind::Swapped, QueueKind::Waiting,
                        QueueKind::OngoingSwapIn}) {
      for (RequestId id : std::vector<RequestId>(qs_.queue(q))) {
        Req& r = req(id);
        QueueKind kind = q;
        if (q == QueueKind::Swapped && cpu_.valid_prefix_tokens(id) == 0) {
          lose_cpu_copy(r, id);
          qs_.move(id, QueueKind::Waiting);
          kind = QueueKind::Waiting;
        }
        candidates.push_back({id, kind, r.priority, blocks(r.tokens_total)});
      }
    }
    const SchedulingActions actions = schedule(candidates, cfg_.gpu_blocks, cfg_.scheduler);

    std::vector<PlannedSwap> outs;
    for (RequestId id : std::vector<RequestId>(turn_end_)) {
      Req& r = req(id);
      r.turn_end_pending = false;
      if (swap_out(id, r, outs) && settings_.reuse && cpu_.has_copy(id)) {
        cpu_.preallocate_increment(id, cpu_.prealloc_estimate(id));
      }
    }
    turn_end_.clear();
    for (RequestId id : actions.swap_out) {
      Req& r = req(id);
      ++report_.preemptions;
      if (cfg_.scheduler.preemption_mode == PreemptionMode::Recompute) {
        drop_kv(r, id);
        qs_.move(id, QueueKind::Waiting);
      } else {
        qs_.move(id, swap_out(id, r, outs) ? QueueKind::Swapped : QueueKind::Waiting);
      }
    }

    std::vector<PlannedSwap> ins;
    for (RequestId id : actions.swap_in) swap_in(id, req(id), ins);
    for (RequestId id : actions.admit) qs_.move(id, QueueKind::Running);

    StepInput step_in{iter_, std::move(outs), std::move(ins), iter_estimate_};
    const StepResult step = swap_.step(qs_, step_in, clock_);
    if (step.decision.reason == DecisionReason::SmallShortRequests) ++report_.sync_decisions;
    if (step.decision.reason == DecisionReason::LongTransfers) ++report_.async_decisions;
    rec.stall_sync = step.sync_stall;
    rec.stall_yield = step.yield_stall;
    SimTime t = clock_ + rec.stall_sync + rec.stall_yield;

    std::vector<RequestId> batch = qs_.running;
    std::sort(batch.begin(), batch.end(), [&](RequestId a, RequestId b) {
      return outranks(req(a).priority, a, req(b).priority, b);
    });
    std::vector<Extent> grants;
    std::int64_t recompute_tokens = 0;
    for (RequestId id : batch) {
      Req& r = req(id);
      const std::int64_t p = r.tokens_total - r.kv_tokens;
      if (p < 1) throw std::logic_error("running request has nothing to compute");
      const std::int64_t want = blocks(r.tokens_total) - gpu_.filled_blocks(id);
      if (want > 0) {
        const AllocResult res = gpu_.allocate(id, want, expected_total_blocks(r));
        grants.insert(grants.end(), res.new_extents.begin(), res.new_extents.end());
      }
      r.on_gpu = true;
      if (!r.prefilled) {
        rec.prefill_tokens += p - r.recompute;
      } else {
        rec.decode_tokens += p - r.recompute;
      }
      recompute_tokens += r.recompute;
    }
    const auto conflicts = swap_.conflicts_for(grants, t);
    report_.conflicts += static_cast<std::int64_t>(conflicts.size());
    rec.stall_conflict = resolve_conflict(conflicts, t);
    t += rec.stall_conflict;
    rec.stall_recompute = cfg_.infer.prefill_per_token * recompute_tokens;
    report_.recompute_tokens += recompute_tokens;
    t += rec.stall_recompute;
    shadow_check(batch, t);

    SimTime compute{};
    if (!batch.empty()) {
      compute = iteration_time(rec.prefill_tokens, rec.decode_tokens, cfg_.infer);
      iter_estimate_ = compute;
    } else if (auto next = swap_.next_swap_in_completion(); next && *next > t) {
      rec.stall_wait = *next - t;
      t = *next;
    }
    rec.end = t + compute;
    rec.batch_size = static_cast<std::int64_t>(batch.size());

    for (RequestId id : batch) {
      Req& r = req(id);
      r.kv_tokens = r.tokens_total;
      r.recompute = 0;
      r.tokens_total += 1;
      r.generated += 1;
      rec.emitted.push_back(id);
      if (!r.prefilled) {
        r.prefilled = true;
        const SimTime ttft = rec.end - r.turn_arrival;
        ttft_.push_back(ttft.ms());
        const Turn& turn = r.conv->turns[r.turn];
        if (rec.end < r.turn_arrival + iteration_time(turn.input_tokens, 0, cfg_.infer)) {
          ++report_.causality_violations;
        }
      } else {
        tbt_.push_back((rec.end - r.last_emit).ms());
      }
      r.last_emit = rec.end;
      if (r.generated == r.conv->turns[r.turn].output_tokens) complete_turn(id, r, rec.end);
    }
    report_.tokens_emitted += static_cast<std::int64_t>(rec.emitted.size());

    const bool progress = progressed || !rec.emitted.empty() || !step.completed.empty() ||
                          rec.stall_wait > SimTime::zero();
    no_progress_ = progress ? 0 : no_progress_ + 1;
    if (no_progress_ >= cfg_.deadlock_iterations) {
      throw SimulationAborted("no progress for " + std::to_string(no_progress_) +
                              " iterations at iteration " + std::to_string(iter_) + "\n" + dump());
    }

    if (rec.emitted.empty() && rec.stall_wait > SimTime::zero()) {
      // Idle until a swap-in lands: folded into the next computing iteration.
      absorb(carry_, rec);
    } else {
      absorb(rec, carry_);
      carry_ = IterationRecord{};
      record(rec);
    }
    if (cfg_.check_invariants) check_invariants();
    clock_ = rec.end;
    ++iter_;
  }

  static void absorb(IterationRecord& into, const IterationRecord& from) {
    if (from.end == SimTime::zero() && from.start == SimTime::zero()) return;
    if (into.end == SimTime::zero() && into.start == SimTime::zero()) {
      into = from;
      return;
    }
    into.start = std::min(into.start, from.start);
    into.end = std::max(into.end, from.end);
    into.stall_sync += from.stall_sync;
    into.stall_conflict += from.stall_conflict;
    into.stall_yield += from.stall_yield;
    into.stall_recompute += from.stall_recompute;
    into.stall_wait += from.stall_wait;
  }

  void shadow_check(const std::vector<RequestId>& batch, SimTime t) {
    for (RequestId id : batch) {
      for (const Extent& e : gpu_.filled_extents(id)) {
        for (const InFlightSwap& s : swap_.in_flight()) {
          for (std::size_t i = 0; i < s.plan.ops.size(); ++i) {
            if (s.timings[i].exec_done > t && s.plan.ops[i].gpu().overlaps(e)) {
              ++report_.conflict_violations;
            }
          }
        }
      }
    }
  }

  void record(const IterationRecord& rec) {
    const SimTime dur = rec.end - rec.start;
    report_.busy_time_us += dur.us();
    report_.stall_sync_us += rec.stall_sync.us();
    report_.stall_conflict_us += rec.stall_conflict.us();
    report_.stall_yield_us += rec.stall_yield.us();
    report_.stall_recompute_us += rec.stall_recompute.us();
    report_.stall_wait_us += rec.stall_wait.us();
    report_.stall_us += rec.stall().us();

    interval_tokens_ += static_cast<std::int64_t>(rec.emitted.size());
    interval_time_ += dur;
    if (++interval_len_ == cfg_.efficiency_interval) {
      if (interval_time_ > SimTime::zero()) {
        efficiency_.push_back(static_cast<double>(interval_tokens_) / interval_time_.seconds());
      }
      interval_len_ = 0;
      interval_tokens_ = 0;
      interval_time_ = SimTime::zero();
    }

    report_.peak_gpu_used_blocks =
        std::max(report_.peak_gpu_used_blocks, cfg_.gpu_blocks - gpu_.free_blocks());
    report_.peak_cpu_used_blocks =
        std::max(report_.peak_cpu_used_blocks, cpu_.pool().used_blocks());
    std::int64_t footprint = 0;
    for (const auto& [_, r] : reqs_) {
      if (r.stage == Stage::Active || r.stage == Stage::Thinking) {
        footprint += blocks(r.kv_tokens + r.recompute);
      }
    }
    report_.peak_footprint_blocks = std::max(report_.peak_footprint_blocks, footprint);

    if (observer_) {
      const auto active = active_ids();
      observer_->on_iteration(rec, qs_, active);
    }
  }

  void check_invariants() {
    std::string err = gpu_.check_invariants();
    err += cpu_.check_invariants();
    err += qs_.check_partition(active_ids());
    for (const auto& [id, r] : reqs_) {
      const auto q = qs_.find(id);
      if (r.on_gpu && (q == QueueKind::Running || q == QueueKind::OngoingSwapIn) &&
          gpu_.filled_blocks(id) != blocks(r.kv_tokens)) {
        err += "GPU footprint of " + std::to_string(id.value()) + " disagrees with its KV; ";
      }
      if (!r.on_gpu && !gpu_.groups_of(id).empty()) {
        err += std::to_string(id.value()) + " holds GPU groups while off GPU; ";
      }
    }
    if (!err.empty()) {
      ++report_.invariant_violations;
      throw std::logic_error("invariant violated at iteration " + std::to_string(iter_) + ": " +
                             err);
    }
  }

  std::string dump() const {
    std::ostringstream os;
    os << "clock " << clock_.us() << "us iteration " << iter_ << '\n';
    for (QueueKind q : {QueueKind::Waiting, QueueKind::Running, QueueKind::Swapped,
                        QueueKind::OngoingSwapIn}) {
      os << to_string(q) << ':';
      for (RequestId id : qs_.queue(q)) {
        const Req& r = reqs_.at(id);
        os << ' ' << id << "(rank " << r.priority.rank << ", tokens " << r.tokens_total
           << ", kv " << r.kv_tokens << ')';
      }
      os << '\n';
    }
    gpu_.dump(os);
    return os.str();
  }

  MetricsReport finish() {
    if (carry_.end > SimTime::zero()) record(carry_);
    report_.iterations = iter_;
    report_.sim_time_us = clock_.us();
    if (!ttft_.empty()) {
      report_.ttft_p50_ms = percentile(ttft_, 0.50);
      report_.ttft_p95_ms = percentile(ttft_, 0.95);
      report_.ttft_p99_ms = percentile(ttft_, 0.99);
      report_.ttft_p999_ms = percentile(ttft_, 0.999);
    }
    if (!tbt_.empty()) report_.tbt_p999_ms = percentile(tbt_, 0.999);
    if (!efficiency_.empty()) {
      report_.efficiency_p50 = percentile(efficiency_, 0.50);
      report_.efficiency_p99 = percentile(efficiency_, 0.99);
      report_.efficiency_p999 = percentile(efficiency_, 0.999);
    }
    if (clock_ > SimTime::zero()) {
      report_.throughput_tokens_per_s =
          static_cast<double>(report_.tokens_emitted) / clock_.seconds();
    }
    if (report_.busy_time_us > 0) {
      report_.overhead_ratio =
          static_cast<double>(report_.stall_us) / static_cast<double>(report_.busy_time_us);
    }
    if (auto g = gpu_.granularity_stats()) report_.avg_granularity_blocks = g->avg_blocks_per_group;
    report_.contaminated_blocks = cpu_.contaminated_blocks();
    return report_;
  }

  EngineConfig cfg_;
  ModeSettings settings_;
  PriorityTrace& trace_;
  RunObserver* observer_;
  BlockGroupAllocator gpu_;
  CpuStore cpu_;
  SwapManager swap_;
  QueueState qs_;

  std::map<RequestId, Req> reqs_;
  std::vector<RequestId> arrival_order_;
  std::vector<RequestId> turn_end_;
  std::size_t finished_ = 0;
  SimTime clock_{};
  std::int64_t iter_ = 0;
  std::int64_t no_progress_ = 0;
  SimTime iter_estimate_{};
  IterationRecord carry_;

  std::vector<double> ttft_;
  std::vector<double> tbt_;
  std::vector<double> efficiency_;
  std::int64_t interval_len_ = 0;
  std::int64_t interval_tokens_ = 0;
  SimTime interval_time_{};
  MetricsReport report_;
};

}  // namespace

MetricsReport run(const std::vector<Conversation>& workload, PriorityTrace& trace,
                  const EngineConfig& cfg, RunObserver* observer) {
  Simulation sim(workload, trace, cfg, observer);
  return sim.run();
}

}  // namespace kvswitch
