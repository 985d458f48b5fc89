from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from core.calibration import capture_layer_inputs
from core.errors import ContainerFormatError
from core.numerics import SplitMix64
from core.plan.planners import compose, plan_attention, plan_uniform
from core.plan.runner import apply_plan
from core.quant import dumps_quantized, is_quantized_file, load_quantized, loads_quantized, save_quantized
from core.quant.container import pack_codes, unpack_codes
from core.model import save_model


@pytest.mark.parametrize("bits", [2, 3, 4, 8])
def test_code_packing_round_trips(bits: int):
    codes = SplitMix64(bits).integers(1 << bits, 37).astype(np.uint8)
    raw = pack_codes(codes, bits)
    assert len(raw) == (37 * bits + 7) // 8
    assert np.array_equal(unpack_codes(raw, 37, bits), codes)


def test_three_bit_codes_pack_little_endian():
    raw = pack_codes(np.array([5, 3, 7], dtype=np.uint8), 3)
    # 101 | 011 | 111 read from bit 0 upward
    assert raw == bytes([0b11011101, 0b00000001])


def test_quantized_container_round_trips_bytes(model, calib, tmp_path: Path):
    captures = capture_layer_inputs(model, calib)
    plan = compose([plan_uniform(model, 3), plan_attention(model, 8)])
    qm = apply_plan(model, plan, captures, group_size=16, runs_dir=tmp_path / "runs")
    path = save_quantized(qm, tmp_path / "m.moeqz")
    assert is_quantized_file(path)
    back = load_quantized(path)
    assert dumps_quantized(back) == path.read_bytes()
    for wid, t in qm.tensors.items():
        assert back.tensors[wid].same_as(t)
    assert back.meta["backend"] == "gptq"
    assert np.array_equal(back.to_model().weights[model.quantizable_ids()[0]], qm.to_model().weights[model.quantizable_ids()[0]])


def test_plain_model_file_is_not_quantized(model, tmp_path: Path):
    path = save_model(model, tmp_path / "m.moeq")
    assert not is_quantized_file(path)


def test_truncated_or_foreign_container_rejected(model, tmp_path: Path):
    qm = apply_plan(model, plan_uniform(model, 2), None, backend="rtn", group_size=16, runs_dir=tmp_path)
    data = dumps_quantized(qm)
    with pytest.raises(ContainerFormatError):
        loads_quantized(data[:-3])
    with pytest.raises(ContainerFormatError):
        loads_quantized(b"XXXXXX" + data[6:])
    with pytest.raises(ContainerFormatError):
        loads_quantized(data + b"\x00")
