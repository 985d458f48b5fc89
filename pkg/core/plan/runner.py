from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from time import perf_counter
from typing import Any, Callable, Dict, Mapping, Optional

import numpy as np

from core.errors import (
    EmptyCalibration,
    ErrorCode,
    InvalidArgument,
    NotPositiveDefinite,
    QuantException,
    wrap_exception,
)
from core.logging import clear_context, get_logger, set_context
from core.model.weights import MoEModel, WeightId
from core.quant.codec import BACKENDS, DEFAULT_GROUP_SIZE, GroupedQuantTensor, dequantize, reconstruction_error, rtn_quantize
from core.quant.container import QuantizedModel
from core.quant.gptq import DEFAULT_BLOCK_SIZE, DEFAULT_DAMP_RATIO, gptq_quantize

from .events import (
    ErrorEvent,
    FallbackEvent,
    FinishSummaryEvent,
    StartEvent,
    WeightFinishEvent,
    as_event_dict,
)
from .logger import register_log_path, write_event
from .models import BitPlan, Policy
from .planners import average_bits
from .validator import ensure_valid_plan

UTC = timezone.utc

_log = get_logger("runner")


def _now_ts() -> str:
    return datetime.now(UTC).strftime("%Y-%m-%dT%H-%M-%S-%f")


@dataclass
class _WeightResult:
    wid: WeightId
    tensor: GroupedQuantTensor
    attempts: int
    damp_ratio: float
    elapsed_ms: int
    fallback: bool = False


class PlanRunner:
    """Applies a BitPlan to a model, one independent quantization job per weight.

    Jobs run on a thread pool; results are collected in WeightId order so the
    output does not depend on scheduling. Every run writes a JSONL event log
    under ``runs_dir/<label>/``.
    """

    def __init__(
        self,
        policy: Optional[Policy] = None,
        runs_dir: str | Path | None = None,
        max_workers: Optional[int] = None,
    ) -> None:
        self.policy = policy or Policy()
        self.runs_dir = Path(runs_dir or os.getenv("MOEQ_RUNS_DIR", "runs"))
        self.max_workers = max_workers if max_workers is not None else self.policy.max_workers
        self.last_run_id: Optional[str] = None
        self.last_log_path: Optional[Path] = None

    def _make_run_log_path(self, label: str) -> Path:
        d = self.runs_dir / label
        d.mkdir(parents=True, exist_ok=True)
        return d / f"{_now_ts()}.jsonl"

    def apply_plan(
        self,
        model: MoEModel,
        plan: BitPlan,
        captures: Optional[Mapping[WeightId, np.ndarray]] = None,
        *,
        backend: str = "gptq",
        group_size: int = DEFAULT_GROUP_SIZE,
        damp_ratio: float = DEFAULT_DAMP_RATIO,
        block_size: int = DEFAULT_BLOCK_SIZE,
        label: str = "quantize",
        parent_run_id: Optional[str] = None,
        on_event: Optional[Callable[[Dict[str, Any]], None]] = None,
    ) -> QuantizedModel:
        if backend not in BACKENDS:
            raise InvalidArgument.build(f"unknown backend '{backend}'", details={"allowed": list(BACKENDS)})
        if backend == "gptq" and captures is None:
            raise InvalidArgument.build("the gptq backend needs captured layer inputs", hint="use backend 'rtn' or capture inputs first")
        ensure_valid_plan(plan, model)

        run_id = f"{parent_run_id}#{_now_ts()}" if parent_run_id else _now_ts()
        log_path = self._make_run_log_path(label)
        register_log_path(run_id, label, log_path, parent_run_id=parent_run_id)
        self.last_run_id, self.last_log_path = run_id, log_path

        def emit(event: Dict[str, Any]) -> None:
            write_event(run_id, event)
            if on_event is not None:
                try:
                    on_event(event)
                except Exception:  # noqa: BLE001
                    # observer errors must not break the run
                    pass

        ids = model.quantizable_ids()
        emit(
            as_event_dict(
                StartEvent(
                    run_id=run_id,
                    plan=label,
                    parent_run_id=parent_run_id,
                    backend=backend,
                    group_size=group_size,
                    damp_ratio=damp_ratio,
                    num_weights=len(ids),
                    bit_plan=plan.model_dump(),
                )
            )
        )
        set_context(run_id=run_id)
        _log.info("quantizing %d weights (%s, group %d) -> %s", len(ids), backend, group_size, log_path)
        t0 = perf_counter()

        def _job(wid: WeightId) -> _WeightResult:
            x = captures.get(wid) if captures is not None else None
            set_context(run_id=run_id, weight=str(wid))
            try:
                return self._quantize_one(
                    wid,
                    model.weights[wid],
                    x,
                    plan.bits_for(wid),
                    backend=backend,
                    group_size=group_size,
                    damp_ratio=damp_ratio,
                    block_size=block_size,
                    emit=emit,
                )
            finally:
                clear_context()

        try:
            if self.max_workers == 1 or len(ids) <= 1:
                results = [_job(wid) for wid in ids]
            else:
                with ThreadPoolExecutor(max_workers=self.max_workers) as ex:
                    results = list(ex.map(_job, ids))
        finally:
            clear_context()

        tensors: Dict[WeightId, GroupedQuantTensor] = {}
        for r in results:
            tensors[r.wid] = r.tensor
            x = captures.get(r.wid) if captures is not None else None
            recon = None
            if x is not None and x.shape[0] > 0:
                recon = reconstruction_error(model.weights[r.wid], dequantize(r.tensor), x)
            emit(
                as_event_dict(
                    WeightFinishEvent(
                        weight=str(r.wid),
                        bits=r.tensor.bits,
                        backend=r.tensor.backend,
                        elapsed_ms=r.elapsed_ms,
                        attempts=r.attempts,
                        damp_ratio=r.damp_ratio,
                        calib_rows=0 if x is None else int(x.shape[0]),
                        recon_error=recon,
                    )
                )
            )

        full_precision = {wid: model.weights[wid] for wid in model.weight_ids() if wid.kind == "router"}
        qm = QuantizedModel(
            spec=model.spec,
            embedding=model.embedding,
            head=model.head,
            full_precision=full_precision,
            tensors=tensors,
            meta={
                "backend": backend,
                "group_size": str(group_size),
                "damp_ratio": repr(float(damp_ratio)),
                "default_bits": str(plan.default_bits),
                "provenance": ",".join(plan.provenance),
            },
        )
        emit(
            as_event_dict(
                FinishSummaryEvent(
                    total_weights=len(results),
                    gptq_weights=sum(1 for r in results if r.tensor.backend == "gptq"),
                    rtn_weights=sum(1 for r in results if r.tensor.backend == "rtn"),
                    fallback_weights=sum(1 for r in results if r.fallback),
                    total_retries=sum(r.attempts - 1 for r in results),
                    total_elapsed_ms=int((perf_counter() - t0) * 1000),
                    average_bits=average_bits(plan, model),
                )
            )
        )
        return qm

    def _quantize_one(
        self,
        wid: WeightId,
        w: np.ndarray,
        x: Optional[np.ndarray],
        bits: int,
        *,
        backend: str,
        group_size: int,
        damp_ratio: float,
        block_size: int,
        emit: Callable[[Dict[str, Any]], None],
    ) -> _WeightResult:
        t0 = perf_counter()
        policy = self.policy
        retries = policy.retries if policy.on_error == "retry" else 0
        damp = damp_ratio
        attempt = 0

        def _done(t: GroupedQuantTensor, fallback: bool = False) -> _WeightResult:
            return _WeightResult(wid, t, attempt, damp, int((perf_counter() - t0) * 1000), fallback)

        if backend == "rtn":
            attempt = 1
            return _done(rtn_quantize(w, bits, group_size))

        while True:
            attempt += 1
            try:
                if x is None:
                    raise EmptyCalibration.build("no captured inputs for this weight")
                return _done(gptq_quantize(w, x, bits, group_size, damp, block_size=block_size))
            except EmptyCalibration as e:
                if not policy.fallback_to_rtn:
                    self._emit_error(emit, wid, attempt, e)
                    raise wrap_exception(e, ErrorCode.EMPTY_CALIBRATION, weight_id=str(wid)) from e
                _log.info("%s: no calibration rows, falling back to RTN", wid)
                emit(as_event_dict(FallbackEvent(weight=str(wid), reason=e.error.message)))
                return _done(rtn_quantize(w, bits, group_size), fallback=True)
            except NotPositiveDefinite as e:
                self._emit_error(emit, wid, attempt, e)
                if attempt <= retries:
                    damp *= policy.damp_growth
                    _log.warning("%s: Hessian not positive definite, retrying with damp %g", wid, damp)
                    continue
                raise wrap_exception(e, ErrorCode.NOT_POSITIVE_DEFINITE, weight_id=str(wid)) from e
            except QuantException as e:
                self._emit_error(emit, wid, attempt, e)
                raise wrap_exception(e, e.error.code, weight_id=str(wid)) from e
            except Exception as e:  # noqa: BLE001
                self._emit_error(emit, wid, attempt, e)
                raise wrap_exception(e, ErrorCode.QUANTIZATION_FAILED, weight_id=str(wid), inputs={"bits": bits}) from e

    @staticmethod
    def _emit_error(emit: Callable[[Dict[str, Any]], None], wid: WeightId, attempt: int, e: Exception) -> None:
        if isinstance(e, QuantException):
            code, recoverable = e.error.code, e.error.recoverable
            details: Dict[str, Any] = {"details": e.error.details, "hint": e.error.hint}
        else:
            code, recoverable = type(e).__name__, False
            details = {"exception_type": type(e).__name__, "exception_args": [str(a) for a in e.args]}
        emit(
            as_event_dict(
                ErrorEvent(
                    weight=str(wid),
                    attempt=attempt,
                    message=str(e),
                    error_code=code,
                    recoverable=recoverable,
                    error_details=details,
                )
            )
        )


def apply_plan(
    model: MoEModel,
    plan: BitPlan,
    captures: Optional[Mapping[WeightId, np.ndarray]] = None,
    *,
    backend: str = "gptq",
    group_size: int = DEFAULT_GROUP_SIZE,
    damp_ratio: float = DEFAULT_DAMP_RATIO,
    policy: Optional[Policy] = None,
    runs_dir: str | Path | None = None,
    max_workers: Optional[int] = None,
    label: str = "quantize",
) -> QuantizedModel:
    """Quantize every quantizable weight at its planned width; routers stay full precision."""
    runner = PlanRunner(policy=policy, runs_dir=runs_dir, max_workers=max_workers)
    return runner.apply_plan(
        model, plan, captures, backend=backend, group_size=group_size, damp_ratio=damp_ratio, label=label
    )

