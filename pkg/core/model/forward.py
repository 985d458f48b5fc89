from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from core.errors import InvalidArgument, TokenOutOfRange

from .weights import ATTENTION_PROJECTIONS, ExpertWeights, MoEBlock, MoEModel, WeightId

_RMS_EPS = 1e-6


def softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    z = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def silu(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        return z / (1.0 + np.exp(-z))


def rmsnorm(x: np.ndarray) -> np.ndarray:
    return x / np.sqrt(np.mean(x * x, axis=-1, keepdims=True) + _RMS_EPS)


def router_logits(block: MoEBlock, x: np.ndarray) -> np.ndarray:
    logits = x @ block.router.T
    if block.router_skew:
        logits[..., 0] += block.router_skew
    return logits


def select_top_k(logits: np.ndarray, k: int) -> Tuple[np.ndarray, np.ndarray]:
    """Top-k of softmax(logits) per row; ties go to the lower expert index.

    Returns (indices, gates), both of shape (T, k), indices in descending
    probability order and gates renormalized over the selection.
    """
    logits = np.atleast_2d(logits)
    e = logits.shape[-1]
    if not 1 <= k <= e:
        raise InvalidArgument.build(f"top-k must be within [1, {e}], got {k}")
    probs = softmax(logits)
    order = np.argsort(-probs, axis=-1, kind="stable")[:, :k]
    picked = np.take_along_axis(probs, order, axis=-1)
    gates = picked / np.sum(picked, axis=-1, keepdims=True)
    return order, gates


def route(router_weights: np.ndarray, hidden: Sequence[float] | np.ndarray, k: int, *, skew: float = 0.0) -> Tuple[np.ndarray, np.ndarray]:
    """Route one hidden vector; returns (selected expert indices, gate values)."""
    h = np.asarray(hidden, dtype=np.float64)
    if h.shape != (router_weights.shape[1],):
        raise InvalidArgument.build(
            "hidden vector length does not match router width",
            details={"hidden": list(h.shape), "router": list(router_weights.shape)},
        )
    logits = router_weights @ h
    if skew:
        logits = logits.copy()
        logits[0] += skew
    idx, gates = select_top_k(logits[None, :], k)
    return idx[0], gates[0]


def route_batch(block: MoEBlock, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    return select_top_k(router_logits(block, x), block.top_k)


def ffn(expert: ExpertWeights, x: np.ndarray) -> np.ndarray:
    """down(silu(gate x) * up x), no biases."""
    return (silu(x @ expert.gate.T) * (x @ expert.up.T)) @ expert.down.T


@dataclass
class TraceSink:
    """Collects what one forward pass saw.

    ``layer_inputs`` maps each quantizable WeightId to the row blocks that
    multiplied it; ``selections`` holds per-MoE-layer (indices, gates);
    ``block_io`` per-MoE-layer (input, output) residual states.
    """

    layer_inputs: Dict[WeightId, List[np.ndarray]] = field(default_factory=dict)
    selections: Dict[int, Tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)
    block_io: Dict[int, Tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)
    capture_inputs: bool = True

    def record_input(self, wid: WeightId, rows: np.ndarray) -> None:
        if self.capture_inputs:
            self.layer_inputs.setdefault(wid, []).append(np.array(rows, dtype=np.float64, copy=True))

    def stacked_inputs(self, wid: WeightId, width: int) -> np.ndarray:
        blocks = self.layer_inputs.get(wid)
        if not blocks:
            return np.zeros((0, width), dtype=np.float64)
        return np.vstack(blocks)


def _record_ffn_inputs(trace: TraceSink, layer: int, kind: str, index: Optional[int], expert: ExpertWeights, x: np.ndarray) -> None:
    trace.record_input(WeightId(layer, kind, index, "gate"), x)
    trace.record_input(WeightId(layer, kind, index, "up"), x)
    inner = silu(x @ expert.gate.T) * (x @ expert.up.T)
    trace.record_input(WeightId(layer, kind, index, "down"), inner)


def moe_block_forward(
    block: MoEBlock,
    x: np.ndarray,
    *,
    trace: Optional[TraceSink] = None,
    layer: int = 0,
) -> np.ndarray:
    """Routed-expert mixture plus unweighted shared experts for every row of x."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    out = np.zeros_like(x)
    idx, gates = route_batch(block, x)
    if trace is not None:
        trace.selections[layer] = (idx.copy(), gates.copy())
    for e, expert in enumerate(block.experts):
        token_rows, slot = np.nonzero(idx == e)
        if token_rows.size == 0:
            continue
        xe = x[token_rows]
        out[token_rows] += gates[token_rows, slot][:, None] * ffn(expert, xe)
        if trace is not None:
            _record_ffn_inputs(trace, layer, "expert", e, expert, xe)
    for s, expert in enumerate(block.shared):
        out += ffn(expert, x)
        if trace is not None:
            _record_ffn_inputs(trace, layer, "shared_expert", s, expert, x)
    return out


def _attention(model: MoEModel, layer: int, h: np.ndarray, trace: Optional[TraceSink]) -> np.ndarray:
    wq, wk, wv, wo = (model.weights[WeightId(layer, "attention", None, p)] for p in ATTENTION_PROJECTIONS)
    a = rmsnorm(h)
    q, k, v = a @ wq.T, a @ wk.T, a @ wv.T
    t = h.shape[0]
    scores = (q @ k.T) / math.sqrt(h.shape[1])
    scores = np.where(np.tril(np.ones((t, t), dtype=bool)), scores, -np.inf)
    ctx = softmax(scores) @ v
    if trace is not None:
        for p in ("q", "k", "v"):
            trace.record_input(WeightId(layer, "attention", None, p), a)
        trace.record_input(WeightId(layer, "attention", None, "o"), ctx)
    return ctx @ wo.T


def check_tokens(tokens: Sequence[int] | np.ndarray, vocab_size: int) -> np.ndarray:
    toks = np.asarray(tokens, dtype=np.int64).ravel()
    if toks.size == 0:
        raise InvalidArgument.build("token sequence is empty")
    bad = (toks < 0) | (toks >= vocab_size)
    if np.any(bad):
        pos = int(np.argmax(bad))
        raise TokenOutOfRange.build(
            f"token id {int(toks[pos])} at position {pos} is outside [0, {vocab_size})",
            details={"position": pos, "token": int(toks[pos]), "vocab_size": vocab_size},
        )
    return toks


def forward(model: MoEModel, tokens: Sequence[int] | np.ndarray, trace: Optional[TraceSink] = None) -> np.ndarray:
    """Logits (T x vocab) of a causal pass over one token sequence."""
    toks = check_tokens(tokens, model.spec.vocab_size)
    h = model.embedding[toks].copy()
    for layer in range(model.spec.num_layers):
        h = h + _attention(model, layer, h, trace)
        f_in = rmsnorm(h)
        if model.spec.is_moe_layer(layer):
            block_out = h + moe_block_forward(model.block(layer), f_in, trace=trace, layer=layer)
            if trace is not None:
                trace.block_io[layer] = (h.copy(), block_out.copy())
            h = block_out
        else:
            dense = model.expert(layer, "dense", None)
            if trace is not None:
                _record_ffn_inputs(trace, layer, "dense", None, dense, f_in)
            h = h + ffn(dense, f_in)
    return rmsnorm(h) @ model.head.T
