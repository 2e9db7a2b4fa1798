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

#include "kvswitch/scheduler.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include <json.hpp>

#include "kvswitch/errors.hpp"
#include "kvswitch/rng.hpp"

namespace kvswitch {

namespace {

constexpr double kEpochEps = 1e-9;

std::int64_t floor_epochs(std::int64_t iteration, double f) {
  return static_cast<std::int64_t>(std::floor(static_cast<double>(iteration) * f + kEpochEps));
}

}  // namespace

const char* to_string(PriorityPattern p) {
  switch (p) {
    case PriorityPattern::Random: return "random";
    case PriorityPattern::Markov: return "markov";
    case PriorityPattern::Replay: return "replay";
  }
  return "?";
}

std::optional<PriorityPattern> parse_priority_pattern(const std::string& s) {
  if (s == "random") return PriorityPattern::Random;
  if (s == "markov") return PriorityPattern::Markov;
  if (s == "replay") return PriorityPattern::Replay;
  return std::nullopt;
}

void PriorityTraceConfig::validate() const {
  if (!(frequency >= 0.0 && frequency <= 1.0)) {
    throw std::invalid_argument("frequency must be in [0, 1]");
  }
  if (!(p_keep >= 0.0 && p_keep <= 1.0)) throw std::invalid_argument("p_keep must be in [0, 1]");
  if (pattern == PriorityPattern::Replay && replay_path.empty()) {
    throw std::invalid_argument("replay pattern needs a trace path");
  }
}

PriorityTrace::PriorityTrace(const PriorityTraceConfig& cfg, std::vector<RequestId> universe)
    : cfg_(cfg), universe_(std::move(universe)) {
  cfg_.validate();
  std::sort(universe_.begin(), universe_.end());
  if (cfg_.pattern == PriorityPattern::Replay) {
    for (const TraceRecord& r : read_jsonl(cfg_.replay_path)) replay_[r.epoch].push_back(r);
  }
}

bool PriorityTrace::epoch_due(std::int64_t iteration) const {
  if (cfg_.frequency <= 0.0 || iteration < 1) return false;
  return floor_epochs(iteration, cfg_.frequency) > floor_epochs(iteration - 1, cfg_.frequency);
}

std::int64_t PriorityTrace::epoch_at(std::int64_t iteration) const {
  return floor_epochs(iteration, cfg_.frequency);
}

std::vector<RequestId> PriorityTrace::base_order(std::int64_t epoch) const {
  std::vector<RequestId> order = universe_;
  Rng rng(derive_seed(cfg_.seed, "priority/epoch/" + std::to_string(epoch)));
  rng.shuffle(order.begin(), order.end());
  return order;
}

bool PriorityTrace::keeps(std::int64_t epoch, RequestId req) const {
  const std::uint64_t s = derive_seed(cfg_.seed, "priority/keep/" + std::to_string(epoch));
  Rng rng(derive_seed(s, std::to_string(req.value())));
  return rng.uniform01() < cfg_.p_keep;
}

std::map<RequestId, Priority> PriorityTrace::apply(std::int64_t epoch,
                                                   std::span<const RequestId> live,
                                                   const std::set<RequestId>& running,
                                                   std::span<const RequestId> pending) {
  const std::set<RequestId> live_set(live.begin(), live.end());
  std::vector<RequestId> order;
  order.reserve(live.size() + pending.size());

  if (cfg_.pattern == PriorityPattern::Replay) {
    std::map<RequestId, std::int64_t> recorded;
    if (auto it = replay_.find(epoch); it != replay_.end()) {
      for (const TraceRecord& r : it->second) recorded[r.request] = r.rank;
    }
    order.assign(live_set.begin(), live_set.end());
    std::stable_sort(order.begin(), order.end(), [&](RequestId a, RequestId b) {
      const auto ra = recorded.contains(a) ? recorded[a] : std::numeric_limits<std::int64_t>::max();
      const auto rb = recorded.contains(b) ? recorded[b] : std::numeric_limits<std::int64_t>::max();
      return ra < rb;
    });
  } else {
    std::vector<RequestId> base;
    for (RequestId r : base_order(epoch)) {
      if (live_set.contains(r)) base.push_back(r);
    }
    // Ids outside the universe go last, in id order.
    for (RequestId r : live_set) {
      if (!std::binary_search(universe_.begin(), universe_.end(), r)) base.push_back(r);
    }
    if (cfg_.pattern == PriorityPattern::Markov) {
      std::vector<RequestId> rest;
      for (RequestId r : base) {
        if (running.contains(r) && keeps(epoch, r)) {
          order.push_back(r);
        } else {
          rest.push_back(r);
        }
      }
      order.insert(order.end(), rest.begin(), rest.end());
    } else {
      order = std::move(base);
    }
  }
  for (RequestId r : pending) {
    if (!live_set.contains(r)) order.push_back(r);
  }

  std::map<RequestId, Priority> out;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto rank = static_cast<std::int64_t>(i);
    out[order[i]] = Priority{rank};
    records_.push_back({epoch, order[i], rank});
  }
  return out;
}

void PriorityTrace::write_jsonl(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  for (const TraceRecord& r : records_) {
    nlohmann::ordered_json j;
    j["epoch"] = r.epoch;
    j["request_id"] = r.request.value();
    j["rank"] = r.rank;
    os << j.dump() << '\n';
  }
}

std::vector<TraceRecord> PriorityTrace::read_jsonl(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read priority trace " + path);
  std::vector<TraceRecord> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(is, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      out.push_back({j.at("epoch").get<std::int64_t>(),
                     RequestId{j.at("request_id").get<std::uint64_t>()},
                     j.at("rank").get<std::int64_t>()});
    } catch (const nlohmann::json::exception& e) {
      throw TraceParseError(n, e.what());
    }
  }
  return out;
}

std::map<RequestId, Priority> apply_priority_update(std::int64_t epoch, PriorityTrace& trace,
                                                    std::span<const RequestId> live,
                                                    const std::set<RequestId>& running,
                                                    std::span<const RequestId> pending) {
  return trace.apply(epoch, live, running, pending);
}

void SchedulerConfig::validate() const {
  if (max_running && *max_running < 1) throw std::invalid_argument("max_running must be >= 1");
}

SchedulingActions schedule(std::span<const Candidate> candidates, std::int64_t capacity_blocks,
                           const SchedulerConfig& cfg) {
  std::vector<Candidate> order(candidates.begin(), candidates.end());
  std::sort(order.begin(), order.end(), [](const Candidate& a, const Candidate& b) {
    return outranks(a.priority, a.id, b.priority, b.id);
  });

  SchedulingActions out;
  std::int64_t used = 0;
  std::int64_t count = 0;
  for (const Candidate& c : order) {
    if (c.queue != QueueKind::OngoingSwapIn) continue;
    used += c.need_blocks;
    ++count;
  }
  for (const Candidate& c : order) {
    if (c.queue == QueueKind::OngoingSwapIn) continue;
    const bool fits = used + c.need_blocks <= capacity_blocks &&
                      (!cfg.max_running || count < *cfg.max_running);
    if (fits) {
      used += c.need_blocks;
      ++count;
      switch (c.queue) {
        case QueueKind::Running: out.keep.push_back(c.id); break;
        case QueueKind::Swapped: out.swap_in.push_back(c.id); break;
        case QueueKind::Waiting: out.admit.push_back(c.id); break;
        case QueueKind::OngoingSwapIn: break;
      }
    } else if (c.queue == QueueKind::Running) {
      out.swap_out.push_back(c.id);
    }
  }
  std::reverse(out.swap_out.begin(), out.swap_out.end());
  out.planned_blocks = used;
  return out;
}

}  // namespace kvswitch
