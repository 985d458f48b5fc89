from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Optional


def as_event_dict(obj: Any) -> Dict[str, Any]:
    try:
        return asdict(obj)
    except TypeError:
        return dict(obj)  # type: ignore[arg-type]


@dataclass
class StartEvent:
    type: str = "start"
    run_id: str = ""
    plan: str = ""
    parent_run_id: Optional[str] = None
    backend: str = "gptq"
    group_size: int = 128
    damp_ratio: float = 0.01
    num_weights: int = 0
    bit_plan: Optional[Dict[str, Any]] = None


@dataclass
class WeightFinishEvent:
    type: str = "weight_finish"
    weight: str = ""
    bits: int = 0
    backend: str = "gptq"
    elapsed_ms: int = 0
    attempts: int = 1
    damp_ratio: float = 0.0
    calib_rows: int = 0
    recon_error: Optional[float] = None


@dataclass
class FallbackEvent:
    type: str = "fallback"
    weight: str = ""
    reason: str = ""
    backend: str = "rtn"


@dataclass
class ErrorEvent:
    type: str = "error"
    weight: str = ""
    attempt: int = 1
    message: str = ""
    error_code: str = "Exception"
    recoverable: bool = False
    error_details: Dict[str, Any] = field(default_factory=dict)


@dataclass
class FinishSummaryEvent:
    type: str = "finish_summary"
    total_weights: int = 0
    gptq_weights: int = 0
    rtn_weights: int = 0
    fallback_weights: int = 0
    total_retries: int = 0
    total_elapsed_ms: int = 0
    average_bits: float = 0.0
