from __future__ import annotations

from typing import Any, Dict

from core.blocks.base import PlanContext, StrategyBlock
from core.plan.models import BitPlan
from core.plan.planners import plan_random_blocks, plan_random_experts, plan_random_ffnn, plan_random_layers


class RandomExpertsStrategy(StrategyBlock):
    id = "strategy.random_experts"
    version = "0.1.0"
    stochastic = True

    def plan(self, ctx: PlanContext, args: Dict[str, Any]) -> BitPlan:
        k = int(args["k"])
        return plan_random_experts(ctx.model, k, ctx.rng_for(f"random-experts:{k}"), ctx.hi_bits, ctx.lo_bits)


class RandomBlocksStrategy(StrategyBlock):
    id = "strategy.random_blocks"
    version = "0.1.0"
    stochastic = True

    def plan(self, ctx: PlanContext, args: Dict[str, Any]) -> BitPlan:
        k = int(args["k"])
        return plan_random_blocks(ctx.model, k, ctx.rng_for(f"random-blocks:{k}"), ctx.hi_bits)


class RandomLayersStrategy(StrategyBlock):
    id = "strategy.random_layers"
    version = "0.1.0"
    stochastic = True

    def plan(self, ctx: PlanContext, args: Dict[str, Any]) -> BitPlan:
        p = float(args["fraction"])
        return plan_random_layers(ctx.model, p, ctx.rng_for(f"random-layers:{p:g}"), ctx.hi_bits, ctx.lo_bits)


class RandomFFNNStrategy(StrategyBlock):
    """Random routed-expert projections at hi bits, sized like the attention weights."""

    id = "strategy.random_ffnn"
    version = "0.1.0"
    stochastic = True

    def plan(self, ctx: PlanContext, args: Dict[str, Any]) -> BitPlan:
        return plan_random_ffnn(ctx.model, ctx.rng_for("random-ffnn"), ctx.hi_bits, ctx.lo_bits)
