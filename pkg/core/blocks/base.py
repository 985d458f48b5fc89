from __future__ import annotations

from abc import ABC, abstractmethod
from typing import Any, Dict, Optional

from pydantic import BaseModel, ConfigDict, Field

from core.calibration.capture import UsageProfile
from core.errors import MissingUsage
from core.model.weights import MoEModel
from core.numerics import SplitMix64
from core.plan.models import BitPlan, OutlierScoreTable


class PlanContext(BaseModel):
    """Inputs shared by every strategy block.

    Attributes
    -----------
    model: The full-precision model being planned.
    usage: Expert usage profile (needed by frequency-based strategies).
    scores: Outlier score table; computed from the model when absent.
    block_scores: Predicted per-block scores (needed by ``predicted``).
    hi_bits / lo_bits: Widths used for "important" and "other" weights.
    seed: Seed of the stochastic baselines; each strategy derives its own stream.
    run_id: Run identifier for JSONL logging.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    model: MoEModel
    usage: Optional[UsageProfile] = None
    scores: Optional[OutlierScoreTable] = None
    block_scores: Optional[Dict[int, float]] = None
    hi_bits: int = 4
    lo_bits: int = 2
    seed: int = 0
    run_id: Optional[str] = None
    vars: Dict[str, Any] = Field(default_factory=dict)

    def rng_for(self, token: str) -> SplitMix64:
        return SplitMix64(self.seed).spawn(token)

    def require_usage(self, token: str) -> UsageProfile:
        if self.usage is None:
            raise MissingUsage.build(
                f"strategy '{token}' needs an expert usage profile",
                hint="run 'profile' first and pass --usage, or give a calibration seed",
            )
        return self.usage


class StrategyBlock(ABC):
    """A bit-allocation strategy addressable by a CLI token such as ``freq:2``.

    Implementations are pure: the same context and arguments give the same
    plan. Stochastic blocks draw only from ``ctx.rng_for(token)``.
    """

    id: str = ""
    version: str = ""
    stochastic: bool = False

    def validate(self, args: Dict[str, Any]) -> None:
        """Optionally check argument ranges before planning."""

    @abstractmethod
    def plan(self, ctx: PlanContext, args: Dict[str, Any]) -> BitPlan:
        """Return the BitPlan of this strategy."""
