from __future__ import annotations

import sys
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from core.calibration import generate_calibration  # noqa: E402
from core.model import MoEModelSpec, build_model  # noqa: E402

from tests.utils import tiny_spec  # noqa: E402


@pytest.fixture()
def spec() -> MoEModelSpec:
    return tiny_spec()


@pytest.fixture()
def model(spec):
    return build_model(spec)


@pytest.fixture()
def calib(spec):
    return generate_calibration(seed=1, n_sequences=4, seq_len=16, vocab_size=spec.vocab_size)


@pytest.fixture(autouse=True)
def _isolated_dirs(tmp_path, monkeypatch):
    monkeypatch.setenv("MOEQ_LOG_DIR", str(tmp_path / "logs"))
    monkeypatch.setenv("MOEQ_RUNS_DIR", str(tmp_path / "runs"))
