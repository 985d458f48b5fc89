from __future__ import annotations

from typing import Any, Dict

from core.blocks.base import PlanContext, StrategyBlock
from core.errors import InvalidAlpha
from core.plan.models import BitPlan
from core.plan.planners import plan_alpha_mix, plan_frequency
from core.plan.scorers import outlier_scores


class FrequencyStrategy(StrategyBlock):
    """Most-used routed experts of every MoE block at hi bits."""

    id = "strategy.frequency"
    version = "0.1.0"

    def plan(self, ctx: PlanContext, args: Dict[str, Any]) -> BitPlan:
        usage = ctx.require_usage("freq")
        return plan_frequency(usage, int(args["k"]), ctx.hi_bits, ctx.lo_bits, model=ctx.model)


class AlphaMixStrategy(StrategyBlock):
    """Budget split between usage frequency (fraction alpha) and outlier score."""

    id = "strategy.alpha_mix"
    version = "0.1.0"

    def validate(self, args: Dict[str, Any]) -> None:
        alpha = float(args["alpha"])
        if not 0.0 <= alpha <= 1.0:
            raise InvalidAlpha.build(f"alpha must be within [0, 1], got {alpha}")

    def plan(self, ctx: PlanContext, args: Dict[str, Any]) -> BitPlan:
        usage = ctx.require_usage("alpha")
        scores = ctx.scores if ctx.scores is not None else outlier_scores(ctx.model)
        return plan_alpha_mix(
            ctx.model,
            usage,
            scores,
            int(args["budget"]),
            float(args["alpha"]),
            hi_bits=ctx.hi_bits,
            lo_bits=ctx.lo_bits,
        )
