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

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>
#include <string>
#include <vector>

#include "kvswitch/config.hpp"
#include "kvswitch/cost_model.hpp"
#include "kvswitch/errors.hpp"
#include "kvswitch/workload.hpp"

namespace py = pybind11;
using namespace kvswitch;

namespace {

nlohmann::json parse_doc(const std::string& text) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("", std::string("not valid JSON: ") + e.what());
  }
}

std::string run_json(const std::string& config, const std::optional<std::string>& mode,
                     std::optional<std::uint64_t> seed) {
  nlohmann::json doc = parse_doc(config);
  if (mode) set_config_value(doc, "mode", *mode);
  if (seed) set_config_value(doc, "seed", *seed);
  const RunConfig cfg = parse_config(doc);
  py::gil_scoped_release release;
  return execute(cfg).to_json();
}

std::string trace_jsonl(const std::string& config) {
  const RunConfig cfg = parse_config(parse_doc(config));
  return export_trace(generate(cfg.workload));
}

py::dict transfer(const std::vector<std::int64_t>& op_bytes, std::int64_t dispatch_us,
                  std::int64_t bandwidth, std::int64_t floor_us) {
  TransferParams p;
  p.dispatch_per_op = SimTime{dispatch_us};
  p.bandwidth_bytes_per_us = bandwidth;
  p.per_op_latency_floor = SimTime{floor_us};
  p.validate();
  const TransferEstimate e = transfer_time(op_bytes, p);
  py::dict d;
  d["total_us"] = e.total.us();
  d["dispatch_busy_us"] = e.dispatch_busy.us();
  d["dispatch_fraction"] = e.dispatch_fraction;
  return d;
}

}  // namespace

PYBIND11_MODULE(_kvswitch, m) {
  m.doc() = "KV-cache context-switching simulator";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<SimulationAborted>(m, "SimulationAborted", PyExc_RuntimeError);

  m.def("default_config_json", [] { return default_config_json().dump(); });
  m.def("run_json", &run_json, py::arg("config"), py::arg("mode") = py::none(),
        py::arg("seed") = py::none());
  m.def("trace_jsonl", &trace_jsonl, py::arg("config"));
  m.def("transfer_time", &transfer, py::arg("op_bytes"), py::arg("dispatch_us") = 12,
        py::arg("bandwidth_bytes_per_us") = 32000, py::arg("floor_us") = 2);
  m.def("exec_time_us", [](std::int64_t bytes) { return exec_time(bytes, TransferParams{}).us(); },
        py::arg("bytes"));
}
