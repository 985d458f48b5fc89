from __future__ import annotations

from typing import Any, Dict

from core.blocks.base import PlanContext, StrategyBlock
from core.plan.models import BitPlan
from core.plan.planners import plan_attention, plan_blocks, plan_shared_experts, plan_uniform


class AttentionStrategy(StrategyBlock):
    id = "strategy.attention"
    version = "0.1.0"

    def plan(self, ctx: PlanContext, args: Dict[str, Any]) -> BitPlan:
        return plan_attention(ctx.model, ctx.hi_bits)


class SharedExpertStrategy(StrategyBlock):
    id = "strategy.shared_experts"
    version = "0.1.0"

    def plan(self, ctx: PlanContext, args: Dict[str, Any]) -> BitPlan:
        return plan_shared_experts(ctx.model, ctx.hi_bits)


class FirstBlocksStrategy(StrategyBlock):
    id = "strategy.first_blocks"
    version = "0.1.0"

    def plan(self, ctx: PlanContext, args: Dict[str, Any]) -> BitPlan:
        return plan_blocks(ctx.model, k=int(args["k"]), which="first", hi_bits=ctx.hi_bits)


class LastBlocksStrategy(StrategyBlock):
    id = "strategy.last_blocks"
    version = "0.1.0"

    def plan(self, ctx: PlanContext, args: Dict[str, Any]) -> BitPlan:
        return plan_blocks(ctx.model, k=int(args["k"]), which="last", hi_bits=ctx.hi_bits)


class ListedBlocksStrategy(StrategyBlock):
    id = "strategy.listed_blocks"
    version = "0.1.0"

    def plan(self, ctx: PlanContext, args: Dict[str, Any]) -> BitPlan:
        return plan_blocks(ctx.model, which="listed", layers=list(args["layers"]), hi_bits=ctx.hi_bits)


class UniformStrategy(StrategyBlock):
    """Every quantizable weight at one width; ``uniform:8`` is the near-lossless reference."""

    id = "strategy.uniform"
    version = "0.1.0"

    def plan(self, ctx: PlanContext, args: Dict[str, Any]) -> BitPlan:
        return plan_uniform(ctx.model, int(args["bits"]))
