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

#pragma once

#include <compare>
#include <cstdint>
#include <functional>
#include <limits>
#include <ostream>

namespace kvswitch {

// Simulated duration in integer microseconds. Subtraction saturates at zero.
class SimTime {
 public:
  constexpr SimTime() = default;
  constexpr explicit SimTime(std::int64_t us) : us_(us < 0 ? 0 : us) {}

  static constexpr SimTime zero() { return SimTime{}; }
  static constexpr SimTime max() {
    return SimTime{std::numeric_limits<std::int64_t>::max()};
  }
  static constexpr SimTime from_ms(double ms) {
    return SimTime{static_cast<std::int64_t>(ms * 1000.0 + 0.5)};
  }

  constexpr std::int64_t us() const { return us_; }
  constexpr double ms() const { return static_cast<double>(us_) / 1000.0; }
  constexpr double seconds() const { return static_cast<double>(us_) / 1e6; }

  constexpr SimTime& operator+=(SimTime o) {
    us_ += o.us_;
    return *this;
  }
  constexpr SimTime& operator-=(SimTime o) {
    us_ = us_ > o.us_ ? us_ - o.us_ : 0;
    return *this;
  }
  friend constexpr SimTime operator+(SimTime a, SimTime b) { return a += b; }
  friend constexpr SimTime operator-(SimTime a, SimTime b) { return a -= b; }
  friend constexpr SimTime operator*(SimTime a, std::int64_t k) {
    return SimTime{a.us_ * k};
  }
  friend constexpr SimTime operator*(std::int64_t k, SimTime a) { return a * k; }
  friend constexpr auto operator<=>(SimTime, SimTime) = default;

  friend std::ostream& operator<<(std::ostream& os, SimTime t) {
    return os << t.us_ << "us";
  }

 private:
  std::int64_t us_ = 0;
};

// Opaque identifier; Tag keeps request, turn, and group ids from mixing.
template <typename Tag>
class StrongId {
 public:
  constexpr StrongId() = default;
  constexpr explicit StrongId(std::uint64_t v) : v_(v) {}
  constexpr std::uint64_t value() const { return v_; }
  friend constexpr auto operator<=>(StrongId, StrongId) = default;
  friend std::ostream& operator<<(std::ostream& os, StrongId id) {
    return os << id.v_;
  }

 private:
  std::uint64_t v_ = 0;
};

using RequestId = StrongId<struct RequestTag>;
using TurnId = StrongId<struct TurnTag>;
using GroupId = StrongId<struct GroupTag>;

// Lower rank means higher priority. Ties resolve by request id ascending.
struct Priority {
  std::int64_t rank = 0;
  friend constexpr auto operator<=>(Priority, Priority) = default;
};

// True when (a_rank, a) is served before (b_rank, b).
constexpr bool outranks(Priority a_pri, RequestId a, Priority b_pri, RequestId b) {
  if (a_pri.rank != b_pri.rank) return a_pri.rank < b_pri.rank;
  return a < b;
}

struct BlockSpec {
  std::int64_t block_size_tokens = 16;
  std::int64_t bytes_per_block = 131072;

  void validate() const;
};

// ceil(tokens / block_size_tokens)
std::int64_t blocks_needed(std::int64_t tokens, const BlockSpec& spec);

std::int64_t group_bytes(std::int64_t num_blocks, const BlockSpec& spec);

// Half-open run of physical block indices [start, start + len).
struct Extent {
  std::int64_t start = 0;
  std::int64_t len = 0;

  constexpr std::int64_t end() const { return start + len; }
  constexpr bool overlaps(const Extent& o) const {
    return start < o.end() && o.start < end();
  }
  friend constexpr bool operator==(const Extent&, const Extent&) = default;
};

}  // namespace kvswitch

template <typename Tag>
struct std::hash<kvswitch::StrongId<Tag>> {
  std::size_t operator()(kvswitch::StrongId<Tag> id) const noexcept {
    return std::hash<std::uint64_t>{}(id.value());
  }
};
