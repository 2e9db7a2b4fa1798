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

#include "kvswitch/workload.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "kvswitch/errors.hpp"
#include "kvswitch/rng.hpp"

namespace kvswitch {

std::int64_t Conversation::total_tokens() const {
  std::int64_t n = 0;
  for (const Turn& t : turns) n += t.input_tokens + t.output_tokens;
  return n;
}

void WorkloadConfig::validate() const {
  if (num_conversations < 0) throw std::invalid_argument("num_conversations must be >= 0");
  if (!(arrival_rate > 0.0)) throw std::invalid_argument("arrival_rate must be > 0");
  if (!(mean_turns >= 1.0)) throw std::invalid_argument("mean_turns must be >= 1");
  if (!(input_mean > 0.0)) throw std::invalid_argument("input_mean must be > 0");
  if (!(output_mean > 0.0)) throw std::invalid_argument("output_mean must be > 0");
  if (!(input_sigma >= 0.0) || !(output_sigma >= 0.0)) {
    throw std::invalid_argument("length sigma must be >= 0");
  }
  if (!(think_time_mean_s >= 0.0)) throw std::invalid_argument("think_time_mean_s must be >= 0");
  if (max_context_tokens < 2) throw std::invalid_argument("max_context_tokens must be >= 2");
}

namespace {

std::int64_t draw_length(Rng& rng, double mean, double sigma) {
  const double x = sigma == 0.0 ? mean : rng.lognormal_with_mean(mean, sigma);
  return std::max<std::int64_t>(1, std::llround(x));
}

}  // namespace

std::vector<Conversation> generate(const WorkloadConfig& cfg) {
  cfg.validate();
  std::vector<Conversation> out;
  out.reserve(static_cast<std::size_t>(cfg.num_conversations));
  Rng arrivals(derive_seed(cfg.seed, "workload/arrivals"));
  const double mean_gap_us = 1e6 / cfg.arrival_rate;
  double t_us = 0.0;
  for (std::int64_t i = 0; i < cfg.num_conversations; ++i) {
    t_us += arrivals.exponential(mean_gap_us);
    Rng rng(derive_seed(cfg.seed, "workload/conversation/" + std::to_string(i)));
    Conversation c;
    c.id = RequestId{static_cast<std::uint64_t>(i)};
    c.arrival = SimTime{std::llround(t_us)};
    const std::int64_t n_turns = 1 + rng.geometric(1.0 / cfg.mean_turns);
    c.think_time = SimTime{std::llround(rng.exponential(cfg.think_time_mean_s * 1e6))};
    std::int64_t total = 0;
    for (std::int64_t k = 0; k < n_turns; ++k) {
      Turn turn{draw_length(rng, cfg.input_mean, cfg.input_sigma),
                draw_length(rng, cfg.output_mean, cfg.output_sigma)};
      if (total + turn.input_tokens + turn.output_tokens > cfg.max_context_tokens) {
        if (k > 0) break;
        const std::int64_t cap = cfg.max_context_tokens;
        turn.input_tokens = std::min(turn.input_tokens, cap / 2);
        turn.output_tokens = std::min(turn.output_tokens, cap - turn.input_tokens);
      }
      total += turn.input_tokens + turn.output_tokens;
      c.turns.push_back(turn);
    }
    out.push_back(std::move(c));
  }
  return out;
}

void validate(const Conversation& c) {
  if (c.turns.empty()) throw std::invalid_argument("conversation has no turns");
  for (const Turn& t : c.turns) {
    if (t.input_tokens < 1 || t.output_tokens < 1) {
      throw std::invalid_argument("turn token counts must be >= 1");
    }
  }
}

std::vector<Conversation> parse_trace(const std::string& text) {
  std::vector<Conversation> out;
  std::set<RequestId> ids;
  std::istringstream is(text);
  std::string line;
  std::size_t n = 0;
  while (std::getline(is, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    Conversation c;
    try {
      const auto j = nlohmann::json::parse(line);
      if (!j.is_object()) throw TraceParseError(n, "expected a JSON object");
      for (const char* key : {"id", "arrival_us", "turns", "think_us"}) {
        if (!j.contains(key)) throw TraceParseError(n, std::string("missing '") + key + "'");
      }
      c.id = RequestId{j.at("id").get<std::uint64_t>()};
      const auto arrival = j.at("arrival_us").get<std::int64_t>();
      const auto think = j.at("think_us").get<std::int64_t>();
      if (arrival < 0 || think < 0) throw TraceParseError(n, "negative time");
      c.arrival = SimTime{arrival};
      c.think_time = SimTime{think};
      if (!j.at("turns").is_array()) throw TraceParseError(n, "'turns' must be an array");
      for (const auto& t : j.at("turns")) {
        c.turns.push_back({t.at("in").get<std::int64_t>(), t.at("out").get<std::int64_t>()});
      }
      validate(c);
    } catch (const TraceParseError&) {
      throw;
    } catch (const std::exception& e) {
      throw TraceParseError(n, e.what());
    }
    if (!ids.insert(c.id).second) throw TraceParseError(n, "duplicate id");
    out.push_back(std::move(c));
  }
  return out;
}

std::vector<Conversation> ingest(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read trace " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_trace(ss.str());
}

std::string export_trace(const std::vector<Conversation>& convs) {
  std::string out;
  for (const Conversation& c : convs) {
    nlohmann::ordered_json j;
    j["id"] = c.id.value();
    j["arrival_us"] = c.arrival.us();
    auto turns = nlohmann::ordered_json::array();
    for (const Turn& t : c.turns) {
      nlohmann::ordered_json tj;
      tj["in"] = t.input_tokens;
      tj["out"] = t.output_tokens;
      turns.push_back(tj);
    }
    j["turns"] = turns;
    j["think_us"] = c.think_time.us();
    out += j.dump();
    out += '\n';
  }
  return out;
}

}  // namespace kvswitch
