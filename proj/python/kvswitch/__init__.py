# Copyright 2026 The kvswitch Authors. All Rights Reserved.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
# ==============================================================================

"""Python front end for the kvswitch simulator."""

import json
import os

from ._kvswitch import (
    ConfigError,
    SimulationAborted,
    exec_time_us,
    transfer_time,
)
from . import _kvswitch

__all__ = [
    "ConfigError",
    "SimulationAborted",
    "default_config",
    "exec_time_us",
    "generate_trace",
    "run",
    "transfer_time",
]

MODES = ("baseline", "blockgroup", "blockgroup_reuse", "full")


def _doc(config):
    if config is None:
        return "{}"
    if isinstance(config, (str, os.PathLike)):
        with open(config, encoding="utf-8") as fh:
            return fh.read()
    return json.dumps(config)


def default_config():
    """The full default config as a dict."""
    return json.loads(_kvswitch.default_config_json())


def run(config=None, mode=None, seed=None):
    """Run one simulation. `config` is a dict, a path, or None for defaults."""
    return json.loads(_kvswitch.run_json(_doc(config), mode, seed))


def generate_trace(config=None):
    """Synthetic conversations as a list of dicts."""
    text = _kvswitch.trace_jsonl(_doc(config))
    return [json.loads(line) for line in text.splitlines() if line]
