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

#include <algorithm>
#include <cstdint>
#include <random>
#include <string_view>

namespace kvswitch {

// Seed for a named sub-stream of a run. Every module draws from its own label
// so that one module can be replayed without the others.
std::uint64_t derive_seed(std::uint64_t root, std::string_view label);

// mt19937_64 with hand-written variate transforms. The standard library's
// distributions are implementation-defined, which would make pinned golden
// values differ between libstdc++ and libc++.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  // Uniform on [0, n). n must be positive.
  std::uint64_t uniform_int(std::uint64_t n);
  // Uniform on [0, 1) with 53 random bits.
  double uniform01();
  double exponential(double mean);
  double standard_normal();
  // Lognormal parameterised by its arithmetic mean; sigma is the log-space stddev.
  double lognormal_with_mean(double mean, double sigma);
  // Number of failures before the first success.
  std::int64_t geometric(double p);

  template <typename It>
  void shuffle(It first, It last) {
    const auto n = static_cast<std::uint64_t>(last - first);
    for (std::uint64_t i = n; i > 1; --i) {
      const auto j = uniform_int(i);
      std::iter_swap(first + static_cast<std::ptrdiff_t>(i - 1),
                     first + static_cast<std::ptrdiff_t>(j));
    }
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace kvswitch
