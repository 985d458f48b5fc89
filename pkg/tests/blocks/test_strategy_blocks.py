from __future__ import annotations

import pytest

from core.blocks.base import PlanContext
from core.blocks.registry import get_registry
from core.calibration import profile_usage
from core.errors import InvalidAlpha, InvalidArgument, MissingUsage
from core.model import build_model
from core.plan.planners import (
    average_bits,
    plan_alpha_mix,
    plan_attention,
    plan_frequency,
    plan_outlier_topk,
    plan_shared_experts,
)
from core.plan.scorers import outlier_scores

from tests.utils import tiny_spec


@pytest.fixture()
def ctx(model, calib) -> PlanContext:
    return PlanContext(model=model, usage=profile_usage(model, calib))


def _plan(token: str, ctx: PlanContext):
    reg = get_registry()
    return reg.run_call(reg.parse_token(token), ctx)


def test_structural_blocks_match_planners(ctx):
    assert _plan("attn", ctx).assignments == plan_attention(ctx.model).assignments
    shared_model = build_model(tiny_spec(num_shared_experts=2))
    shared = _plan("shared", PlanContext(model=shared_model))
    assert shared.assignments == plan_shared_experts(shared_model).assignments
    assert {w.layer for w in _plan("lastl:1", ctx).assigned_ids()} == {1}
    assert {w.layer for w in _plan("blocks:0", ctx).assigned_ids()} == {0}
    assert _plan("uniform:8", ctx).default_bits == 8


def test_provenance_is_the_token_text(ctx):
    assert _plan("firstl:1", ctx).provenance == ["firstl:1"]


def test_hi_and_lo_widths_come_from_context(model, calib):
    c = PlanContext(model=model, usage=profile_usage(model, calib), hi_bits=8, lo_bits=3)
    plan = _plan("freq:2", c)
    assert set(plan.assignments.values()) == {8, 3}


def test_frequency_block_needs_usage(model):
    with pytest.raises(MissingUsage):
        _plan("freq:2", PlanContext(model=model))
    with pytest.raises(MissingUsage):
        _plan("alpha:0.5:4", PlanContext(model=model))


def test_frequency_and_alpha_blocks_match_planners(ctx):
    assert _plan("freq:2", ctx).assignments == plan_frequency(ctx.usage, 2, model=ctx.model).assignments
    expected = plan_alpha_mix(ctx.model, ctx.usage, outlier_scores(ctx.model), 6, 0.5)
    assert _plan("alpha:0.5:6", ctx).assignments == expected.assignments


@pytest.mark.parametrize("alpha", ["-0.1", "1.5"])
def test_alpha_out_of_range(ctx, alpha):
    with pytest.raises(InvalidAlpha):
        _plan(f"alpha:{alpha}:4", ctx)


def test_outlier_block_uses_context_scores(ctx):
    scores = outlier_scores(ctx.model)
    with_scores = ctx.model_copy(update={"scores": scores})
    assert _plan("outlier:0.25", with_scores).assignments == plan_outlier_topk(ctx.model, fraction=0.25).assignments


def test_predicted_block_needs_scores(model):
    with pytest.raises(MissingUsage):
        _plan("predicted:1", PlanContext(model=model))
    plan = _plan("predicted:1", PlanContext(model=model, block_scores={0: 0.9, 1: 0.2}))
    assert {w.layer for w in plan.assigned_ids()} == {1}
    with pytest.raises(InvalidArgument):
        _plan("predicted:3", PlanContext(model=model, block_scores={0: 0.9, 1: 0.2}))


@pytest.mark.parametrize("token", ["random-experts:2", "random-blocks:1", "random-layers:0.25", "random-ffnn"])
def test_random_blocks_are_seeded(model, token):
    a = _plan(token, PlanContext(model=model, seed=42))
    b = _plan(token, PlanContext(model=model, seed=42))
    assert a.assignments == b.assignments
    draws = {tuple(sorted(_plan(token, PlanContext(model=model, seed=s)).assignments.items())) for s in range(42, 52)}
    assert len(draws) > 1


def test_random_ffnn_matches_attention_bits(model):
    rnd = _plan("random-ffnn", PlanContext(model=model, seed=43))
    attn = _plan("attn", PlanContext(model=model))
    assert average_bits(rnd, model) == pytest.approx(average_bits(attn, model), abs=1e-9)
