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

import pytest

import kvswitch

SMALL = {"workload": {"num_conversations": 20, "arrival_rate": 20.0, "think_time_mean_s": 0.5}}


def test_default_config_shape():
    cfg = kvswitch.default_config()
    assert cfg["gpu"]["total_blocks"] == 640
    assert cfg["mode"] == "full"


def test_run_conserves_tokens():
    r = kvswitch.run(SMALL, mode="blockgroup", seed=7)
    assert r["mode"] == "blockgroup"
    assert r["tokens_emitted"] == r["tokens_expected"]
    assert r["causality_violations"] == 0


def test_run_is_deterministic():
    assert kvswitch.run(SMALL, seed=3) == kvswitch.run(SMALL, seed=3)


def test_modes_differ_in_swap_volume():
    base = kvswitch.run(SMALL, mode="baseline")
    reuse = kvswitch.run(SMALL, mode="blockgroup_reuse")
    assert reuse["swap_out_blocks"] <= base["swap_out_blocks"]


def test_invalid_config_raises_value_error():
    with pytest.raises(kvswitch.ConfigError, match="bandwidth"):
        kvswitch.run({"transfer": {"bandwidth": -1}})
    with pytest.raises(ValueError):
        kvswitch.run(SMALL, mode="turbo")


def test_generate_trace():
    convs = kvswitch.generate_trace(SMALL)
    assert len(convs) == 20
    assert all(len(c["turns"]) >= 1 for c in convs)
    assert convs == kvswitch.generate_trace(SMALL)


def test_transfer_time_matches_hand_computation():
    # 128 KiB at 32000 B/us: 4 us plus the 2 us floor per op.
    assert kvswitch.exec_time_us(131072) == 6
    est = kvswitch.transfer_time([131072] * 100)
    assert est["total_us"] == 1206
    assert est["dispatch_fraction"] == pytest.approx(1200 / 1206)
