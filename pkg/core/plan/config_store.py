from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Any, Dict, List, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field

from core.logging import get_logger

_log = get_logger("config")


class ConfigStore:
    """Configuration namespaces loaded from YAML/JSON files.

    Each file in the config directory (default ``./config``) becomes a
    namespace named after the file stem, e.g. ``defaults.yaml`` ->
    ``defaults``; values are looked up with ``resolve("defaults.quant.group_size")``.
    """

    def __init__(self, root_dir: str | Path | None = None, config_dir: str | Path = "config") -> None:
        cwd = Path.cwd() if root_dir is None else Path(root_dir)
        self.root_dir: Path = cwd
        self.config_dir: Path = (cwd / config_dir).resolve()
        self._data_by_ns: Dict[str, Dict[str, Any]] = {}
        self._loaded: bool = False

    def load_all(self) -> None:
        if self._loaded:
            return
        if not self.config_dir.exists():
            self._loaded = True
            return
        for p in sorted(self.config_dir.iterdir()):
            if not p.is_file() or p.suffix.lower() not in {".yaml", ".yml", ".json"}:
                continue
            try:
                if p.suffix.lower() in {".yaml", ".yml"}:
                    data = yaml.safe_load(p.read_text(encoding="utf-8")) or {}
                else:
                    data = json.loads(p.read_text(encoding="utf-8"))
            except (OSError, ValueError, yaml.YAMLError) as e:
                _log.warning("skipping unreadable config file %s: %s", p, e)
                continue
            if isinstance(data, dict):
                self._data_by_ns[p.stem] = data
        self._loaded = True

    def resolve(self, dotted_path: str, default: Any = None) -> Any:
        """Resolve ``namespace.path.to.key``; ``default`` when any segment is missing."""
        self.load_all()
        if not dotted_path:
            return default
        ns, *rest = dotted_path.split(".")
        obj: Any = self._data_by_ns.get(ns)
        if obj is None:
            return default
        for seg in rest:
            if isinstance(obj, dict) and seg in obj:
                obj = obj[seg]
            else:
                return default
        return obj

    def namespace(self, ns: str) -> Dict[str, Any]:
        self.load_all()
        return dict(self._data_by_ns.get(ns, {}))


_GLOBAL_STORE: ConfigStore | None = None


def get_store() -> ConfigStore:
    global _GLOBAL_STORE
    if _GLOBAL_STORE is None:
        cfg_dir = os.getenv("MOEQ_CONFIG_DIR") or str(Path(__file__).resolve().parents[2] / "config")
        _GLOBAL_STORE = ConfigStore(config_dir=cfg_dir)
    return _GLOBAL_STORE


def reset_store() -> None:
    global _GLOBAL_STORE
    _GLOBAL_STORE = None


# ------------------ Typed settings ------------------
class QuantSettings(BaseModel):
    model_config = ConfigDict(extra="ignore")

    backend: str = "gptq"
    group_size: int = 128
    damp_ratio: float = 0.01
    block_size: int = 128
    damp_retries: int = 2
    damp_growth: float = 10.0
    fallback_to_rtn: bool = True


class CalibrationSettings(BaseModel):
    model_config = ConfigDict(extra="ignore")

    n_sequences: int = 32
    seq_len: int = 256
    seed: int = 0
    concentration: float = 2.0


class EvalSettings(BaseModel):
    model_config = ConfigDict(extra="ignore")

    n_sequences: int = 16
    seq_len: int = 128
    seed: int = 1000
    source: str = "markov"  # markov|model


class PredictorSettings(BaseModel):
    model_config = ConfigDict(extra="ignore")

    hidden: int = 64
    epochs: int = 50
    lr: float = 0.1
    batch_size: int = 64
    seed: int = 0
    train_fraction: float = 0.8


class CompareSettings(BaseModel):
    model_config = ConfigDict(extra="ignore")

    seeds: List[int] = Field(default_factory=lambda: [42, 43, 44])


class RunnerSettings(BaseModel):
    model_config = ConfigDict(extra="ignore")

    max_workers: Optional[int] = 4
    runs_dir: str = "runs"


class Settings(BaseModel):
    """All tunable defaults; built from ``defaults.*`` in the store with built-in fallbacks."""

    model_config = ConfigDict(extra="ignore")

    quant: QuantSettings = Field(default_factory=QuantSettings)
    calibration: CalibrationSettings = Field(default_factory=CalibrationSettings)
    eval: EvalSettings = Field(default_factory=EvalSettings)
    predictor: PredictorSettings = Field(default_factory=PredictorSettings)
    compare: CompareSettings = Field(default_factory=CompareSettings)
    runner: RunnerSettings = Field(default_factory=RunnerSettings)

    @classmethod
    def from_store(cls, store: ConfigStore | None = None, namespace: str = "defaults") -> "Settings":
        data = (store or get_store()).namespace(namespace)
        settings = cls.model_validate(data)
        runs_dir = os.getenv("MOEQ_RUNS_DIR")
        if runs_dir:
            settings.runner.runs_dir = runs_dir
        return settings
