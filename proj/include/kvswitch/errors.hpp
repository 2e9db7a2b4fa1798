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

#include <cstddef>
#include <stdexcept>
#include <string>

namespace kvswitch {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// GPU free space plus reclaimable victim tails cannot cover the request.
class OutOfMemory : public Error {
 public:
  using Error::Error;
};

class NoVictim : public Error {
 public:
  using Error::Error;
};

class DoubleFree : public Error {
 public:
  using Error::Error;
};

// A swap-in was asked for a CPU copy that has contaminated segments.
class ContaminatedCopy : public Error {
 public:
  using Error::Error;
};

class CpuOutOfMemory : public Error {
 public:
  using Error::Error;
};

class InsufficientEviction : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  ConfigError(std::string key, const std::string& what)
      : Error("config key '" + key + "': " + what), key_(std::move(key)) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

class TraceParseError : public Error {
 public:
  TraceParseError(std::size_t line, const std::string& what)
      : Error("trace line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// Raised by the engine's deadlock detector; what() carries the diagnostic dump.
class SimulationAborted : public Error {
 public:
  using Error::Error;
};

}  // namespace kvswitch
