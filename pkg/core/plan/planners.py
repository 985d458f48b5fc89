"""Bit-allocation planners.

Every planner is a pure function returning a BitPlan. Planners that
allocate a budget (outlier top-k, frequency, alpha mix, random baselines)
assign both the high and the low width explicitly over the weights they
rank; structural planners (attention, shared experts, blocks) only assign
the high width and leave everything else to the default.
"""

from __future__ import annotations

import math
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from core.calibration.capture import UsageProfile
from core.errors import InvalidAlpha, InvalidArgument, MissingUsage
from core.model.weights import FFN_PROJECTIONS, MoEModel, WeightId
from core.numerics import SplitMix64
from core.quant.codec import check_bits

from .models import BitPlan, OutlierScoreTable
from .scorers import outlier_scores

FP_BITS = 64.0


def _check_hi_lo(hi_bits: int, lo_bits: Optional[int] = None) -> None:
    check_bits(hi_bits)
    if lo_bits is not None:
        check_bits(lo_bits)
        if not hi_bits > lo_bits:
            raise InvalidArgument.build(f"hi_bits ({hi_bits}) must exceed lo_bits ({lo_bits})")


def _split_plan(ranked: Sequence[WeightId], chosen: Iterable[WeightId], hi_bits: int, lo_bits: int, name: str) -> BitPlan:
    picked = {str(w) for w in chosen}
    assignments = {str(w): (hi_bits if str(w) in picked else lo_bits) for w in ranked}
    return BitPlan(assignments=assignments, default_bits=lo_bits, provenance=[name])


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def expert_projection_ids(layer: int, kind: str, index: int) -> List[WeightId]:
    return [WeightId(layer, kind, index, p) for p in FFN_PROJECTIONS]


def plan_outlier_topk(
    model: MoEModel,
    *,
    fraction: Optional[float] = None,
    count: Optional[int] = None,
    hi_bits: int = 4,
    lo_bits: int = 2,
    scores: Optional[OutlierScoreTable] = None,
) -> BitPlan:
    """The k expert projections with the largest outlier score get hi_bits, the rest lo_bits."""
    _check_hi_lo(hi_bits, lo_bits)
    table = scores if scores is not None else outlier_scores(model)
    ranking = table.ranking()
    n = len(ranking)
    if (fraction is None) == (count is None):
        raise InvalidArgument.build("give exactly one of fraction or count")
    if fraction is not None:
        if not 0.0 < fraction <= 1.0:
            raise InvalidArgument.build(f"fraction must be in (0, 1], got {fraction}")
        k = max(1, round_half_up(fraction * n))
        name = f"outlier:{fraction:g}"
    else:
        k = int(count)  # type: ignore[arg-type]
        name = f"outlier-count:{k}"
    if not 1 <= k <= n:
        raise InvalidArgument.build(f"outlier top-k must be within [1, {n}], got {k}")
    return _split_plan(sorted(ranking), ranking[:k], hi_bits, lo_bits, name)


def frequent_experts(usage: np.ndarray, top_k_experts: int) -> List[int]:
    """Indices of the most used experts, ties to the lower index."""
    order = np.argsort(-np.asarray(usage, dtype=np.float64), kind="stable")
    return [int(e) for e in order[:top_k_experts]]


def _check_usage(model: Optional[MoEModel], usage: UsageProfile) -> List[int]:
    layers = usage.layers() if model is None else model.moe_layers()
    missing = [layer for layer in layers if layer not in usage.usage]
    if missing:
        raise MissingUsage.build(
            f"usage profile lacks MoE layers {missing}",
            details={"missing": missing, "profiled": usage.layers()},
            hint="profile the model with the same spec before planning",
        )
    if model is not None:
        for layer in layers:
            if usage.usage[layer].shape != (model.spec.num_experts,):
                raise MissingUsage.build(f"usage vector for layer {layer} does not have one entry per expert")
    return layers


def plan_frequency(
    usage: UsageProfile,
    top_k_experts: int,
    hi_bits: int = 4,
    lo_bits: int = 2,
    *,
    model: Optional[MoEModel] = None,
) -> BitPlan:
    """Per MoE block, the most used routed experts get hi_bits on all three projections."""
    _check_hi_lo(hi_bits, lo_bits)
    layers = _check_usage(model, usage)
    assignments: Dict[str, int] = {}
    for layer in layers:
        u = usage.block(layer)
        if not 1 <= top_k_experts <= u.shape[0]:
            raise InvalidArgument.build(f"top_k_experts must be within [1, {u.shape[0]}], got {top_k_experts}")
        chosen = set(frequent_experts(u, top_k_experts))
        for e in range(u.shape[0]):
            for wid in expert_projection_ids(layer, "expert", e):
                assignments[str(wid)] = hi_bits if e in chosen else lo_bits
    return BitPlan(assignments=assignments, default_bits=lo_bits, provenance=[f"freq:{top_k_experts}"])


def plan_attention(model: MoEModel, hi_bits: int = 4) -> BitPlan:
    _check_hi_lo(hi_bits)
    ids = [w for w in model.quantizable_ids() if w.kind == "attention"]
    return BitPlan.from_ids(ids, hi_bits, name="attn")


def plan_shared_experts(model: MoEModel, hi_bits: int = 4) -> BitPlan:
    _check_hi_lo(hi_bits)
    ids = [w for w in model.quantizable_ids() if w.kind == "shared_expert"]
    return BitPlan.from_ids(ids, hi_bits, name="shared")


def block_ids(model: MoEModel, layers: Iterable[int]) -> List[WeightId]:
    """Routed and shared expert projections of the given MoE layers plus the dense first layer."""
    chosen = set(layers)
    return [
        w
        for w in model.quantizable_ids()
        if (w.is_expert and w.layer in chosen) or w.kind == "dense"
    ]


def plan_blocks(
    model: MoEModel,
    *,
    k: Optional[int] = None,
    which: str = "first",
    layers: Optional[Sequence[int]] = None,
    hi_bits: int = 4,
) -> BitPlan:
    """First-k, last-k or listed MoE blocks at hi_bits; a dense first layer is always hi."""
    _check_hi_lo(hi_bits)
    moe = model.moe_layers()
    if which == "listed":
        if not layers:
            raise InvalidArgument.build("listed block plan needs at least one layer")
        bad = [layer for layer in layers if layer not in moe]
        if bad:
            raise InvalidArgument.build(f"layers {bad} are not MoE layers", details={"moe_layers": moe})
        selected = sorted(set(layers))
        name = "blocks:" + "+".join(str(x) for x in selected)
    elif which in ("first", "last"):
        if k is None or not 1 <= k <= model.spec.num_layers:
            raise InvalidArgument.build(f"k must be within [1, {model.spec.num_layers}], got {k}")
        selected = moe[:k] if which == "first" else moe[-k:]
        name = f"{which}l:{k}"
    else:
        raise InvalidArgument.build(f"unknown block selection '{which}'", details={"allowed": ["first", "last", "listed"]})
    return BitPlan.from_ids(block_ids(model, selected), hi_bits, name=name)


def frequency_ranking(usage: UsageProfile, layers: Sequence[int]) -> List[WeightId]:
    """Routed expert projections ordered by usage (descending), ties by layer then expert."""
    entries = []
    for layer in layers:
        for e, u in enumerate(usage.block(layer)):
            entries.append((-float(u), layer, e))
    entries.sort()
    out: List[WeightId] = []
    for _, layer, e in entries:
        out.extend(expert_projection_ids(layer, "expert", e))
    return out


def plan_alpha_mix(
    model: MoEModel,
    usage: UsageProfile,
    scores: OutlierScoreTable,
    budget_count: int,
    alpha: float,
    *,
    hi_bits: int = 4,
    lo_bits: int = 2,
) -> BitPlan:
    """round(alpha * budget) slots by usage frequency, the rest by outlier score."""
    if not 0.0 <= alpha <= 1.0 or math.isnan(alpha):
        raise InvalidAlpha.build(f"alpha must be within [0, 1], got {alpha}")
    _check_hi_lo(hi_bits, lo_bits)
    layers = _check_usage(model, usage)
    outlier_rank = scores.ranking()
    n = len(outlier_rank)
    if not 1 <= budget_count <= n:
        raise InvalidArgument.build(f"budget_count must be within [1, {n}], got {budget_count}")
    n_freq = round_half_up(alpha * budget_count)
    chosen: List[WeightId] = frequency_ranking(usage, layers)[:n_freq]
    seen = {str(w) for w in chosen}
    for wid in outlier_rank:
        if len(chosen) >= budget_count:
            break
        if str(wid) not in seen:
            chosen.append(wid)
            seen.add(str(wid))
    return _split_plan(sorted(outlier_rank), chosen, hi_bits, lo_bits, f"alpha:{alpha:g}:{budget_count}")


def plan_uniform(model: MoEModel, bits: int) -> BitPlan:
    check_bits(bits)
    return BitPlan.from_ids(model.quantizable_ids(), bits, name=f"uniform:{bits}", default_bits=bits)


def plan_random_experts(model: MoEModel, k: int, rng: SplitMix64, hi_bits: int = 4, lo_bits: int = 2) -> BitPlan:
    """k random routed experts per MoE block at hi_bits, the other routed experts at lo_bits."""
    _check_hi_lo(hi_bits, lo_bits)
    e = model.spec.num_experts
    if not 1 <= k <= e:
        raise InvalidArgument.build(f"k must be within [1, {e}], got {k}")
    assignments: Dict[str, int] = {}
    for layer in model.moe_layers():
        chosen = set(rng.choice(list(range(e)), k))
        for idx in range(e):
            for wid in expert_projection_ids(layer, "expert", idx):
                assignments[str(wid)] = hi_bits if idx in chosen else lo_bits
    return BitPlan(assignments=assignments, default_bits=lo_bits, provenance=[f"random-experts:{k}"])


def plan_random_blocks(model: MoEModel, k: int, rng: SplitMix64, hi_bits: int = 4) -> BitPlan:
    moe = model.moe_layers()
    if not 1 <= k <= len(moe):
        raise InvalidArgument.build(f"k must be within [1, {len(moe)}], got {k}")
    selected = sorted(rng.choice(moe, k))
    plan = plan_blocks(model, which="listed", layers=selected, hi_bits=hi_bits)
    return plan.model_copy(update={"provenance": [f"random-blocks:{k}"]})


def plan_random_layers(model: MoEModel, fraction: float, rng: SplitMix64, hi_bits: int = 4, lo_bits: int = 2) -> BitPlan:
    """A random fraction of the expert projections at hi_bits."""
    _check_hi_lo(hi_bits, lo_bits)
    ids = model.ffn_ids()
    if not 0.0 < fraction <= 1.0:
        raise InvalidArgument.build(f"fraction must be in (0, 1], got {fraction}")
    k = max(1, round_half_up(fraction * len(ids)))
    return _split_plan(ids, rng.choice(ids, k), hi_bits, lo_bits, f"random-layers:{fraction:g}")


def plan_random_ffnn(
    model: MoEModel,
    rng: SplitMix64,
    hi_bits: int = 4,
    lo_bits: int = 2,
    *,
    param_budget: Optional[int] = None,
) -> BitPlan:
    """Random routed-expert projections at hi_bits until their parameters reach the budget.

    The default budget is the attention parameter count, which makes this the
    equal-average-bits counterpart of ``plan_attention``.
    """
    _check_hi_lo(hi_bits, lo_bits)
    if param_budget is None:
        param_budget = sum(model.param_count(w) for w in model.quantizable_ids() if w.kind == "attention")
    ids = [w for w in model.ffn_ids() if w.kind == "expert"]
    chosen: List[WeightId] = []
    used = 0
    for i in rng.permutation(len(ids)):
        wid = ids[int(i)]
        size = model.param_count(wid)
        if used + size <= param_budget:
            chosen.append(wid)
            used += size
        if used == param_budget:
            break
    plan = _split_plan(ids, chosen, hi_bits, lo_bits, "random-ffnn")
    return plan


def compose(plans: Sequence[BitPlan], default_bits: Optional[int] = None) -> BitPlan:
    """Later plans override earlier ones on shared WeightIds; provenance keeps the order."""
    assignments: Dict[str, int] = {}
    provenance: List[str] = []
    for p in plans:
        assignments.update(p.assignments)
        provenance.extend(p.provenance)
    if default_bits is None:
        default_bits = plans[-1].default_bits if plans else 2
    check_bits(default_bits)
    return BitPlan(assignments=assignments, default_bits=default_bits, provenance=provenance)


def average_bits(plan: BitPlan, model: MoEModel) -> float:
    """Parameter-weighted mean width over quantizable weights (routers, embedding, head excluded)."""
    total = 0
    weighted = 0
    for wid in model.quantizable_ids():
        n = model.param_count(wid)
        total += n
        weighted += plan.bits_for(wid) * n
    if total == 0:
        return FP_BITS
    return weighted / total
