from __future__ import annotations

from typing import Any, Dict, List

import numpy as np

from core.model import MoEModel, MoEModelSpec, WeightId
from core.model.weights import expected_shape
from core.numerics import SplitMix64


def tiny_spec(**overrides: Any) -> MoEModelSpec:
    """Small enough for every test to run in well under a second."""
    fields: Dict[str, Any] = dict(
        vocab_size=32,
        hidden_dim=16,
        ffnn_dim=32,
        num_layers=2,
        num_experts=8,
        top_k=2,
        seed=7,
    )
    fields.update(overrides)
    return MoEModelSpec(**fields).check()


def correlated_inputs(rng: SplitMix64, n: int, cols: int, *, mix: float = 0.8) -> np.ndarray:
    """Rows share a low-rank component so the Hessian has strong off-diagonals."""
    base = rng.normal((n, max(1, cols // 4)))
    proj = rng.normal((max(1, cols // 4), cols))
    return mix * (base @ proj) + (1.0 - mix) * rng.normal((n, cols))


def zero_experts(model: MoEModel) -> MoEModel:
    """Same model with every routed/shared expert projection set to zero."""
    return model.with_weights({wid: np.zeros(expected_shape(model.spec, wid)) for wid in model.ffn_ids()})


def scale_expert_down(model: MoEModel, factors: Dict[int, float]) -> MoEModel:
    """Multiply each MoE layer's expert down-projections by a per-layer factor."""
    updates = {}
    for wid in model.ffn_ids():
        if wid.projection == "down" and wid.layer in factors:
            updates[wid] = model.weights[wid] * factors[wid.layer]
    return model.with_weights(updates)


def ids_of(model: MoEModel, kind: str) -> List[WeightId]:
    return [wid for wid in model.weight_ids() if wid.kind == kind]
