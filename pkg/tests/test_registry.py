from __future__ import annotations

from pathlib import Path
from typing import List

import pytest

from core.blocks.base import PlanContext, StrategyBlock
from core.blocks.registry import BlockRegistry, BlockSpec
from core.errors import InvalidArgument
from core.model import build_model
from core.plan.planners import compose, plan_attention, plan_blocks

from tests.utils import tiny_spec


@pytest.fixture(scope="session")
def repo_root() -> Path:
    return Path(__file__).resolve().parents[1]


@pytest.fixture(scope="session")
def registry(repo_root: Path) -> BlockRegistry:
    reg = BlockRegistry(project_root=repo_root)
    count = reg.load_specs()
    assert count > 0, "No strategy specs loaded"
    return reg


@pytest.fixture(scope="session")
def all_specs(registry: BlockRegistry) -> List[BlockSpec]:
    specs: List[BlockSpec] = []
    for items in registry.specs_by_id.values():
        specs.extend(items)
    specs.sort(key=lambda s: f"{s.id}@{s.version}")
    return specs


def test_spec_files_count_matches(registry: BlockRegistry, repo_root: Path) -> None:
    yaml_files = sorted((repo_root / "block_specs" / "strategies").rglob("*.yaml"))
    assert sum(len(v) for v in registry.specs_by_id.values()) == len(yaml_files)


def test_every_token_is_registered(registry: BlockRegistry) -> None:
    assert registry.list_tokens() == sorted(
        [
            "alpha", "attn", "blocks", "firstl", "freq", "lastl", "outlier", "predicted",
            "random-blocks", "random-experts", "random-ffnn", "random-layers", "shared", "uniform",
        ]
    )


def test_entrypoints_resolve_to_strategy_blocks(registry: BlockRegistry, all_specs) -> None:
    for s in all_specs:
        block = registry.get(s.id)
        assert isinstance(block, StrategyBlock)
        assert block.id == s.id
        assert block.stochastic == s.stochastic


def test_versioned_lookup(registry: BlockRegistry) -> None:
    assert registry.get("strategy.attention@0.1.0").id == "strategy.attention"
    with pytest.raises(KeyError):
        registry.get("strategy.attention@9.9.9")
    with pytest.raises(KeyError):
        registry.get("strategy.nope")


def test_parse_token_types(registry: BlockRegistry) -> None:
    call = registry.parse_token("alpha:0.5:8")
    assert call.args == {"alpha": 0.5, "budget": 8}
    assert registry.parse_token("blocks:1+3").args == {"layers": [1, 3]}
    assert registry.parse_token("random-layers:0.25").stochastic
    assert not registry.parse_token("attn").stochastic


@pytest.mark.parametrize("text", ["nope:1", "freq", "freq:1:2", "freq:x", "alpha:half:3", "attn:1"])
def test_parse_errors_are_invalid_argument(registry: BlockRegistry, text: str) -> None:
    with pytest.raises(InvalidArgument):
        registry.parse_token(text)


def test_strategy_list_skips_blanks(registry: BlockRegistry) -> None:
    calls = registry.parse_strategies(" attn , ,firstl:1,")
    assert [c.text for c in calls] == ["attn", "firstl:1"]


def test_build_plan_composes_in_list_order(registry: BlockRegistry) -> None:
    model = build_model(tiny_spec())
    ctx = PlanContext(model=model)
    plan, calls = registry.build_plan("attn,firstl:1", ctx)
    expected = compose([plan_attention(model), plan_blocks(model, k=1, which="first")], default_bits=2)
    assert plan.assignments == expected.assignments
    assert plan.provenance == ["attn", "firstl:1"]
    assert len(calls) == 2

    # a later token overrides an earlier one on shared weights
    low, _ = registry.build_plan("uniform:8,uniform:3", ctx)
    assert set(low.assignments.values()) == {3}
    assert low.default_bits == ctx.lo_bits


def test_empty_strategy_list_rejected(registry: BlockRegistry) -> None:
    with pytest.raises(InvalidArgument):
        registry.build_plan(" , ", PlanContext(model=build_model(tiny_spec())))


def test_duplicate_token_rejected(repo_root: Path) -> None:
    reg = BlockRegistry(project_root=repo_root)
    reg.register(BlockSpec(id="a", version="0.1.0", token="t", entrypoint="x:y"))
    with pytest.raises(InvalidArgument):
        reg.register(BlockSpec(id="b", version="0.1.0", token="t", entrypoint="x:y"))
