from __future__ import annotations

from typing import Any, Dict

from core.blocks.base import PlanContext, StrategyBlock
from core.plan.models import BitPlan
from core.plan.planners import plan_outlier_topk


class OutlierStrategy(StrategyBlock):
    id = "strategy.outlier"
    version = "0.1.0"

    def plan(self, ctx: PlanContext, args: Dict[str, Any]) -> BitPlan:
        return plan_outlier_topk(
            ctx.model,
            fraction=float(args["fraction"]),
            hi_bits=ctx.hi_bits,
            lo_bits=ctx.lo_bits,
            scores=ctx.scores,
        )
