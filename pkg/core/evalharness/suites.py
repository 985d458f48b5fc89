from __future__ import annotations

import os
from pathlib import Path
from typing import Any, Dict, List, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from core.calibration.corpus import CalibrationSet, generate_calibration, sample_from_model
from core.errors import InvalidArgument
from core.model.spec import MoEModelSpec
from core.model.weights import MoEModel, build_model
from core.plan.config_store import CalibrationSettings, EvalSettings, QuantSettings
from core.plan.models import Policy

from .compare import DEFAULT_SEEDS, EvalReport, StrategySpec, compare


class Suite(BaseModel):
    """A comparison declared in YAML (``designs/*.yaml``)."""

    model_config = ConfigDict(populate_by_name=True, extra="forbid")

    apiVersion: str = "v1"
    id: str
    version: str = "0.1.0"
    description: Optional[str] = None
    model: Dict[str, Any]
    calibration: CalibrationSettings = Field(default_factory=CalibrationSettings)
    eval: EvalSettings = Field(default_factory=EvalSettings)
    quant: QuantSettings = Field(default_factory=QuantSettings)
    seeds: List[int] = Field(default_factory=lambda: list(DEFAULT_SEEDS))
    strategies: List[StrategySpec]

    @field_validator("strategies", mode="before")
    @classmethod
    def _coerce_strategies(cls, value: Any) -> Any:
        if isinstance(value, list):
            return [{"strategies": v} if isinstance(v, str) else v for v in value]
        return value

    def model_spec(self) -> MoEModelSpec:
        return MoEModelSpec.from_mapping(self.model)


def load_suite(path: str | Path) -> Suite:
    p = Path(path)
    if not p.exists():
        raise InvalidArgument.build(f"suite file not found: {p}")
    with p.open("r", encoding="utf-8") as f:
        data = yaml.safe_load(f) or {}
    try:
        return Suite.model_validate(data)
    except ValidationError as e:
        raise InvalidArgument.build(
            f"invalid suite '{p.name}'", details={"errors": [err["msg"] for err in e.errors()]}
        ) from e


def calibration_for(model: MoEModel, settings: CalibrationSettings) -> CalibrationSet:
    return generate_calibration(
        settings.seed,
        settings.n_sequences,
        settings.seq_len,
        model.spec.vocab_size,
        concentration=settings.concentration,
    )


def eval_set_for(model: MoEModel, settings: EvalSettings, *, concentration: float = 2.0) -> CalibrationSet:
    """Held-out text: a fresh Markov corpus, or sequences sampled from the model itself."""
    if settings.source == "model":
        return sample_from_model(model, settings.seed, settings.n_sequences, settings.seq_len)
    if settings.source == "markov":
        return generate_calibration(
            settings.seed, settings.n_sequences, settings.seq_len, model.spec.vocab_size, concentration=concentration
        )
    raise InvalidArgument.build(f"unknown eval source '{settings.source}'", details={"allowed": ["markov", "model"]})


def run_suite(
    suite: Suite,
    *,
    model: Optional[MoEModel] = None,
    runs_dir: str | Path | None = None,
    max_workers: Optional[int] = None,
) -> EvalReport:
    model = model or build_model(suite.model_spec())
    calib = calibration_for(model, suite.calibration)
    eval_set = eval_set_for(model, suite.eval, concentration=suite.calibration.concentration)
    policy = Policy(
        retries=suite.quant.damp_retries,
        damp_growth=suite.quant.damp_growth,
        fallback_to_rtn=suite.quant.fallback_to_rtn,
    )
    return compare(
        model,
        suite.strategies,
        calib,
        eval_set,
        suite.seeds,
        backend=suite.quant.backend,
        group_size=suite.quant.group_size,
        damp_ratio=suite.quant.damp_ratio,
        policy=policy,
        runs_dir=runs_dir or Path(os.getenv("MOEQ_RUNS_DIR", "runs")) / "suites" / suite.id,
        max_workers=max_workers,
    )
