from __future__ import annotations

from typing import Any, Dict

from core.blocks.base import PlanContext, StrategyBlock
from core.errors import MissingUsage
from core.plan.models import BitPlan
from core.predictor.bsp import plan_predicted_blocks


class PredictedBlocksStrategy(StrategyBlock):
    """The k MoE blocks with the lowest predicted score at hi bits."""

    id = "strategy.predicted_blocks"
    version = "0.1.0"

    def plan(self, ctx: PlanContext, args: Dict[str, Any]) -> BitPlan:
        if ctx.block_scores is None:
            raise MissingUsage.build(
                "strategy 'predicted' needs block scores",
                hint="write block scores with 'score --method predictor' and pass them with --scores",
            )
        return plan_predicted_blocks(ctx.model, ctx.block_scores, int(args["k"]), ctx.hi_bits)
