"""Strategy comparison: plan, quantize and evaluate every strategy of a list.

Stochastic strategies (any token whose spec is marked ``stochastic``) are
repeated over the seed list and reported as mean and standard deviation;
deterministic ones run once. The report is sorted by average bits, ties in
strategy-list order.
"""

from __future__ import annotations

import re
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field

from core.blocks.base import PlanContext
from core.blocks.registry import BlockRegistry, StrategyCall, get_registry
from core.calibration.capture import UsageProfile, capture_block_io, capture_layer_inputs, profile_usage
from core.calibration.corpus import CalibrationSet
from core.errors import InvalidArgument
from core.logging import get_logger
from core.model.weights import MoEModel, WeightId
from core.plan.logger import log_metric
from core.plan.models import BitPlan, OutlierScoreTable, ParetoPoint, Policy
from core.plan.pareto import pareto_frontier
from core.plan.planners import average_bits
from core.plan.runner import PlanRunner
from core.plan.scorers import outlier_scores
from core.predictor.bsp import PredictorConfig, predict_block_scores, train_block_predictor
from core.quant.codec import DEFAULT_GROUP_SIZE
from core.quant.gptq import DEFAULT_DAMP_RATIO

from .perplexity import perplexity

_log = get_logger("compare")

FULL_PRECISION = "fp"
FULL_PRECISION_BITS = 64.0
DEFAULT_SEEDS = (42, 43, 44)


class StrategySpec(BaseModel):
    """A named strategy list such as ``attn,freq:2``; ``fp`` means no quantization."""

    model_config = ConfigDict(populate_by_name=True)

    strategies: str
    name: Optional[str] = None
    hi_bits: int = 4
    lo_bits: int = 2

    @property
    def label(self) -> str:
        return self.name or self.strategies

    @property
    def is_full_precision(self) -> bool:
        return self.strategies.strip() == FULL_PRECISION


class ReportRow(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    strategy: str
    avg_bits: float
    perplexity: float
    perplexity_std: Optional[float] = None
    seeds: List[int] = Field(default_factory=list)
    per_seed: List[float] = Field(default_factory=list)
    plans: List[BitPlan] = Field(default_factory=list, exclude=True)

    @property
    def runs(self) -> int:
        return len(self.per_seed)


class EvalReport(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    rows: List[ReportRow] = Field(default_factory=list)
    spec_hash: str = ""
    calib_seed: Optional[int] = None
    eval_seed: Optional[int] = None

    def row(self, strategy: str) -> ReportRow:
        for r in self.rows:
            if r.strategy == strategy:
                return r
        raise KeyError(strategy)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [
                {
                    "strategy": r.strategy,
                    "avg_bits": r.avg_bits,
                    "perplexity": r.perplexity,
                    "perplexity_std": r.perplexity_std,
                    "runs": r.runs,
                    "seeds": ";".join(str(s) for s in r.seeds),
                    "per_seed": ";".join(repr(float(v)) for v in r.per_seed),
                }
                for r in self.rows
            ],
            columns=["strategy", "avg_bits", "perplexity", "perplexity_std", "runs", "seeds", "per_seed"],
        )

    def pareto(self) -> List[ParetoPoint]:
        """Rows not dominated in (avg_bits, perplexity)."""
        return pareto_frontier([ParetoPoint(avg_bits=r.avg_bits, metric=r.perplexity, label=r.strategy) for r in self.rows])


def _slug(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9.+-]+", "_", text).strip("_") or "strategy"


def _as_spec(s: StrategySpec | str) -> StrategySpec:
    return s if isinstance(s, StrategySpec) else StrategySpec(strategies=s)


def _summarise(values: Sequence[float]) -> Tuple[float, Optional[float]]:
    series = pd.Series(list(values), dtype=float)
    std = float(series.std()) if len(series) > 1 else None
    return float(series.mean()), std


class _Inputs:
    """Lazily computed planning inputs shared by every strategy of one comparison."""

    def __init__(
        self,
        model: MoEModel,
        calib: CalibrationSet,
        usage: Optional[UsageProfile],
        scores: Optional[OutlierScoreTable],
        block_scores: Optional[Mapping[int, float]],
        predictor_config: Optional[PredictorConfig],
        max_workers: Optional[int],
    ) -> None:
        self.model = model
        self.calib = calib
        self.usage = usage
        self.scores = scores
        self.block_scores = dict(block_scores) if block_scores is not None else None
        self.predictor_config = predictor_config
        self.max_workers = max_workers

    def prepare(self, calls: Sequence[StrategyCall]) -> None:
        needs = {r for c in calls for r in c.spec.requires}
        if "usage" in needs and self.usage is None:
            self.usage = profile_usage(self.model, self.calib, max_workers=self.max_workers)
        if "scores" in needs and self.scores is None:
            self.scores = outlier_scores(self.model)
        if "block_scores" in needs and self.block_scores is None:
            trace = capture_block_io(self.model, self.calib, max_workers=self.max_workers)
            bsp = train_block_predictor(trace, self.predictor_config)
            self.block_scores = predict_block_scores(bsp, {layer: trace.inputs(layer) for layer in trace.layers()})

    def context(self, spec: StrategySpec, seed: int) -> PlanContext:
        return PlanContext(
            model=self.model,
            usage=self.usage,
            scores=self.scores,
            block_scores=self.block_scores,
            hi_bits=spec.hi_bits,
            lo_bits=spec.lo_bits,
            seed=seed,
        )


def compare(
    model: MoEModel,
    strategies: Sequence[StrategySpec | str],
    calib: CalibrationSet,
    eval_set: CalibrationSet,
    seeds: Sequence[int] = DEFAULT_SEEDS,
    *,
    usage: Optional[UsageProfile] = None,
    scores: Optional[OutlierScoreTable] = None,
    block_scores: Optional[Mapping[int, float]] = None,
    predictor_config: Optional[PredictorConfig] = None,
    captures: Optional[Mapping[WeightId, np.ndarray]] = None,
    backend: str = "gptq",
    group_size: int = DEFAULT_GROUP_SIZE,
    damp_ratio: float = DEFAULT_DAMP_RATIO,
    policy: Optional[Policy] = None,
    runs_dir: str | Path | None = None,
    max_workers: Optional[int] = None,
    registry: Optional[BlockRegistry] = None,
) -> EvalReport:
    """Evaluate every strategy on ``eval_set``; the fp row reports 64 bits."""
    specs = [_as_spec(s) for s in strategies]
    if not specs:
        raise InvalidArgument.build("no strategies to compare")
    seeds = [int(s) for s in seeds]
    if not seeds:
        raise InvalidArgument.build("compare needs at least one seed")
    if calib.seed == eval_set.seed and calib.source == eval_set.source:
        _log.warning("calibration and eval sets share seed %d; perplexity is not held out", calib.seed)

    registry = registry or get_registry()
    parsed: List[List[StrategyCall]] = [
        [] if spec.is_full_precision else registry.parse_strategies(spec.strategies) for spec in specs
    ]
    inputs = _Inputs(model, calib, usage, scores, block_scores, predictor_config, max_workers)
    inputs.prepare([c for calls in parsed for c in calls])
    if backend == "gptq" and captures is None and any(parsed):
        captures = capture_layer_inputs(model, calib, max_workers=max_workers)

    jobs: List[Tuple[int, int]] = []
    for i, calls in enumerate(parsed):
        stochastic = any(c.stochastic for c in calls)
        for seed in seeds if stochastic else seeds[:1]:
            jobs.append((i, seed))

    runner_policy = policy or Policy()

    def _run(job: Tuple[int, int]) -> Tuple[float, float, Optional[BitPlan]]:
        i, seed = job
        spec = specs[i]
        if spec.is_full_precision:
            return FULL_PRECISION_BITS, perplexity(model, eval_set, max_workers=1), None
        runner = PlanRunner(policy=runner_policy, runs_dir=runs_dir, max_workers=max_workers)
        plan, _ = registry.build_plan(parsed[i], inputs.context(spec, seed))
        qm = runner.apply_plan(
            model,
            plan,
            captures,
            backend=backend,
            group_size=group_size,
            damp_ratio=damp_ratio,
            label=f"compare/{_slug(spec.label)}/seed{seed}",
        )
        ppl = perplexity(qm, eval_set, max_workers=1)
        bits = average_bits(plan, model)
        tags = {"strategy": spec.label, "seed": seed}
        log_metric("perplexity", ppl, run_id=runner.last_run_id, tags=tags)
        log_metric("average_bits", bits, run_id=runner.last_run_id, tags=tags)
        _log.info("%s (seed %d): %.4f bits, perplexity %.4f", spec.label, seed, bits, ppl)
        return bits, ppl, plan

    with ThreadPoolExecutor(max_workers=max_workers) as ex:
        results = list(ex.map(_run, jobs))

    rows: List[ReportRow] = []
    for i, spec in enumerate(specs):
        mine = [(seed, res) for (j, seed), res in zip(jobs, results) if j == i]
        ppl_mean, ppl_std = _summarise([r[1] for _, r in mine])
        bits_mean, _ = _summarise([r[0] for _, r in mine])
        rows.append(
            ReportRow(
                strategy=spec.label,
                avg_bits=bits_mean,
                perplexity=ppl_mean,
                perplexity_std=ppl_std,
                seeds=[seed for seed, _ in mine],
                per_seed=[r[1] for _, r in mine],
                plans=[r[2] for _, r in mine if r[2] is not None],
            )
        )
    rows.sort(key=lambda r: r.avg_bits)
    return EvalReport(rows=rows, spec_hash=model.spec.spec_hash(), calib_seed=calib.seed, eval_seed=eval_set.seed)
