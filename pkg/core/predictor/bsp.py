"""Per-block importance predictor.

For every MoE block a small network
``s(x) = tanh(w2 . tanh(W1 (x - mean) / std + b1) + b2)`` learns the cosine
similarity between the block's input and output hidden states. Blocks whose
predicted cosine is low change the residual stream the most and are kept at
higher precision.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field

from core.calibration.capture import BlockTrace
from core.errors import EmptyTrace, InvalidArgument
from core.logging import get_logger
from core.model.weights import MoEModel
from core.numerics import SplitMix64, rowwise_cosine
from core.plan.models import BitPlan
from core.plan.planners import block_ids
from core.quant.codec import check_bits

_log = get_logger("predictor")


class PredictorConfig(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    hidden: int = Field(default=64, ge=1)
    epochs: int = Field(default=50, ge=1)
    lr: float = Field(default=0.1, gt=0)
    batch_size: int = Field(default=64, ge=1)
    seed: int = 0
    max_workers: Optional[int] = None


@dataclass(eq=False)
class BlockParams:
    w1: np.ndarray  # (h, d)
    b1: np.ndarray  # (h,)
    w2: np.ndarray  # (h,)
    b2: float = 0.0

    def copy(self) -> "BlockParams":
        return BlockParams(self.w1.copy(), self.b1.copy(), self.w2.copy(), float(self.b2))


@dataclass(eq=False)
class BlockPredictor:
    layer: int
    params: BlockParams
    mean: np.ndarray  # (d,) input standardization
    std: np.ndarray  # (d,)
    initial_mse: float = float("nan")
    log: List[Tuple[int, float]] = field(default_factory=list)

    @property
    def hidden(self) -> int:
        return int(self.params.w1.shape[0])

    @property
    def final_mse(self) -> float:
        return self.log[-1][1] if self.log else self.initial_mse

    def standardize(self, x: np.ndarray) -> np.ndarray:
        return (np.atleast_2d(x) - self.mean) / self.std

    def predict(self, x: np.ndarray) -> np.ndarray:
        return forward_scores(self.params, self.standardize(x))


@dataclass(eq=False)
class BlockScorePredictor:
    blocks: Dict[int, BlockPredictor]

    def layers(self) -> List[int]:
        return sorted(self.blocks)


def feature_scaling(x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Per-feature mean and std; constant features keep unit scale."""
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    return mean, np.where(std > 1e-12, std, 1.0)


def forward_scores(p: BlockParams, x: np.ndarray) -> np.ndarray:
    return np.tanh(np.tanh(x @ p.w1.T + p.b1) @ p.w2 + p.b2)


def loss_and_grad(p: BlockParams, x: np.ndarray, s: np.ndarray) -> Tuple[float, BlockParams]:
    """Mean squared error of the predictor on (x, s) and its gradient, shaped like ``p``."""
    n = x.shape[0]
    z = np.tanh(x @ p.w1.T + p.b1)
    y = np.tanh(z @ p.w2 + p.b2)
    r = y - s
    loss = float(np.mean(r * r))
    d_o = (2.0 / n) * r * (1.0 - y * y)
    d_a = np.outer(d_o, p.w2) * (1.0 - z * z)
    grad = BlockParams(w1=d_a.T @ x, b1=d_a.sum(axis=0), w2=z.T @ d_o, b2=float(d_o.sum()))
    return loss, grad


def _mse(p: BlockParams, x: np.ndarray, s: np.ndarray) -> float:
    r = forward_scores(p, x) - s
    return float(np.mean(r * r))


def _step(p: BlockParams, g: BlockParams, lr: float) -> None:
    p.w1 -= lr * g.w1
    p.b1 -= lr * g.b1
    p.w2 -= lr * g.w2
    p.b2 -= lr * g.b2


def _train_one(layer: int, x: np.ndarray, y: np.ndarray, config: PredictorConfig) -> BlockPredictor:
    if x.shape[0] == 0:
        raise EmptyTrace.build(f"no block inputs captured for MoE layer {layer}", details={"layer": layer})
    s = rowwise_cosine(x, y)
    mean, std = feature_scaling(x)
    xs = (x - mean) / std
    n, d = xs.shape
    rng = SplitMix64(config.seed).spawn(f"block:{layer}")
    # output layer starts at zero: the first steps fit the level through b2
    p = BlockParams(
        w1=rng.normal((config.hidden, d)) / np.sqrt(d),
        b1=np.zeros(config.hidden),
        w2=np.zeros(config.hidden),
        b2=0.0,
    )

    initial = _mse(p, xs, s)
    best = initial
    lr = config.lr
    log: List[Tuple[int, float]] = []
    for epoch in range(1, config.epochs + 1):
        saved = p.copy()
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            _, g = loss_and_grad(p, xs[idx], s[idx])
            _step(p, g, lr)
        mse = _mse(p, xs, s)
        if mse > best:
            # regression: undo the epoch and halve the step
            p = saved
            lr *= 0.5
            mse = best
        best = mse
        log.append((epoch, mse))
    _log.debug("block %d: mse %.3e -> %.3e over %d tokens", layer, initial, best, n)
    return BlockPredictor(layer=layer, params=p, mean=mean, std=std, initial_mse=initial, log=log)

def train_block_predictor(trace: BlockTrace, config: Optional[PredictorConfig] = None) -> BlockScorePredictor:
    """One independent predictor per MoE block, trained on that block's (input, output) pairs."""
    config = config or PredictorConfig()
    layers = trace.layers()
    if not layers:
        raise EmptyTrace.build("block trace holds no MoE blocks")
    jobs = [(layer, *trace.pairs[layer]) for layer in layers]
    if len(jobs) == 1 or config.max_workers == 1:
        trained = [_train_one(layer, x, y, config) for layer, x, y in jobs]
    else:
        with ThreadPoolExecutor(max_workers=config.max_workers) as ex:
            trained = list(ex.map(lambda j: _train_one(j[0], j[1], j[2], config), jobs))
    return BlockScorePredictor(blocks={p.layer: p for p in trained})


def predict_block_scores(bsp: BlockScorePredictor, inputs: Mapping[int, np.ndarray]) -> Dict[int, float]:
    """Mean predicted score over the token inputs of every block."""
    out: Dict[int, float] = {}
    for layer in bsp.layers():
        x = inputs.get(layer)
        if x is None or np.asarray(x).shape[0] == 0:
            raise EmptyTrace.build(f"no inputs to score MoE layer {layer}")
        out[layer] = float(np.mean(bsp.blocks[layer].predict(np.asarray(x, dtype=np.float64))))
    return out


def plan_predicted_blocks(model: MoEModel, scores: Mapping[int, float], k: int, hi_bits: int = 4) -> BitPlan:
    """The k blocks with the lowest score get hi_bits; ties to the lower block index."""
    check_bits(hi_bits)
    moe = model.moe_layers()
    missing = [layer for layer in moe if layer not in scores]
    if missing:
        raise InvalidArgument.build(f"no predicted score for MoE layers {missing}")
    if not 1 <= k <= len(moe):
        raise InvalidArgument.build(f"k must be within [1, {len(moe)}], got {k}")
    ranked = sorted(moe, key=lambda layer: (scores[layer], layer))
    return BitPlan.from_ids(block_ids(model, ranked[:k]), hi_bits, name=f"predicted:{k}")


def spearman(a: Sequence[float], b: Sequence[float]) -> float:
    """Spearman rank correlation (average ranks for ties)."""
    ra = pd.Series(list(a), dtype=float).rank()
    rb = pd.Series(list(b), dtype=float).rank()
    if len(ra) != len(rb) or len(ra) < 2:
        raise InvalidArgument.build("spearman needs two sequences of equal length >= 2")
    return float(ra.corr(rb))
