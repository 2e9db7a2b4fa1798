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

#include "kvswitch/core.hpp"

#include <stdexcept>

namespace kvswitch {

void BlockSpec::validate() const {
  if (block_size_tokens < 1) {
    throw std::invalid_argument("block_size_tokens must be >= 1");
  }
  if (bytes_per_block < 1) {
    throw std::invalid_argument("bytes_per_block must be >= 1");
  }
}

std::int64_t blocks_needed(std::int64_t tokens, const BlockSpec& spec) {
  if (tokens < 0) throw std::invalid_argument("blocks_needed: negative token count");
  return (tokens + spec.block_size_tokens - 1) / spec.block_size_tokens;
}

std::int64_t group_bytes(std::int64_t num_blocks, const BlockSpec& spec) {
  if (num_blocks < 0) throw std::invalid_argument("group_bytes: negative block count");
  return num_blocks * spec.bytes_per_block;
}

}  // namespace kvswitch
