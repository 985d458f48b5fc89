from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Mapping, Optional, Tuple

import numpy as np

from core.errors import InvalidArgument, InvalidSpec
from core.numerics import SplitMix64

from .spec import MoEModelSpec

KINDS: Tuple[str, ...] = ("attention", "router", "dense", "expert", "shared_expert")
ATTENTION_PROJECTIONS: Tuple[str, ...] = ("q", "k", "v", "o")
FFN_PROJECTIONS: Tuple[str, ...] = ("gate", "up", "down")
FFN_KINDS = frozenset({"dense", "expert", "shared_expert"})

_KIND_RANK = {k: i for i, k in enumerate(KINDS)}
_PROJ_RANK = {p: i for i, p in enumerate(ATTENTION_PROJECTIONS + FFN_PROJECTIONS + ("",))}
_WID_RE = re.compile(r"^L(\d+)\.(attention|router|dense|expert|shared_expert)(?:\.(\d+))?(?:\.(\w+))?$")

EMBEDDING_NAME = "embedding"
HEAD_NAME = "head"


@dataclass(frozen=True)
class WeightId:
    """Address of one weight matrix: ``L1.expert.3.gate``, ``L0.attention.q``, ``L2.router``."""

    layer: int
    kind: str
    expert_index: Optional[int] = None
    projection: str = ""

    def __post_init__(self) -> None:
        if self.kind not in _KIND_RANK:
            raise InvalidArgument.build(f"unknown weight kind '{self.kind}'")
        if self.projection not in _PROJ_RANK:
            raise InvalidArgument.build(f"unknown projection '{self.projection}'")

    def sort_key(self) -> Tuple[int, int, int, int]:
        idx = -1 if self.expert_index is None else self.expert_index
        return (self.layer, _KIND_RANK[self.kind], idx, _PROJ_RANK[self.projection])

    def __lt__(self, other: "WeightId") -> bool:
        return self.sort_key() < other.sort_key()

    @property
    def is_ffn(self) -> bool:
        return self.kind in FFN_KINDS

    @property
    def is_expert(self) -> bool:
        return self.kind in ("expert", "shared_expert")

    def __str__(self) -> str:
        parts = [f"L{self.layer}", self.kind]
        if self.expert_index is not None:
            parts.append(str(self.expert_index))
        if self.projection:
            parts.append(self.projection)
        return ".".join(parts)

    @classmethod
    def parse(cls, text: str) -> "WeightId":
        m = _WID_RE.match(text.strip())
        if not m:
            raise InvalidArgument.build(f"malformed weight id '{text}'", hint="expected e.g. L1.expert.3.gate")
        layer, kind, idx, proj = m.groups()
        return cls(int(layer), kind, int(idx) if idx is not None else None, proj or "")


@dataclass(frozen=True, eq=False)
class ExpertWeights:
    gate: np.ndarray
    up: np.ndarray
    down: np.ndarray


@dataclass(frozen=True, eq=False)
class MoEBlock:
    router: np.ndarray
    experts: Tuple[ExpertWeights, ...]
    shared: Tuple[ExpertWeights, ...]
    top_k: int
    router_skew: float = 0.0


def expected_shape(spec: MoEModelSpec, wid: WeightId) -> Tuple[int, int]:
    d, f = spec.hidden_dim, spec.ffnn_dim
    if wid.kind == "attention":
        return (d, d)
    if wid.kind == "router":
        return (spec.num_experts, d)
    if wid.projection == "down":
        return (d, f)
    return (f, d)


def enumerate_weight_ids(spec: MoEModelSpec) -> List[WeightId]:
    """Every weight matrix of the model in WeightId order."""
    ids: List[WeightId] = []
    for layer in range(spec.num_layers):
        ids.extend(WeightId(layer, "attention", None, p) for p in ATTENTION_PROJECTIONS)
        if not spec.is_moe_layer(layer):
            ids.extend(WeightId(layer, "dense", None, p) for p in FFN_PROJECTIONS)
            continue
        ids.append(WeightId(layer, "router"))
        for e in range(spec.num_experts):
            ids.extend(WeightId(layer, "expert", e, p) for p in FFN_PROJECTIONS)
        for s in range(spec.num_shared_experts):
            ids.extend(WeightId(layer, "shared_expert", s, p) for p in FFN_PROJECTIONS)
    return ids


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True, order="C")
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class MoEModel:
    spec: MoEModelSpec
    embedding: np.ndarray
    head: np.ndarray
    weights: Mapping[WeightId, np.ndarray] = field(repr=False)

    def iter_weights(self) -> Iterator[Tuple[WeightId, np.ndarray]]:
        for wid in sorted(self.weights):
            yield wid, self.weights[wid]

    def weight_ids(self) -> List[WeightId]:
        return sorted(self.weights)

    def quantizable_ids(self) -> List[WeightId]:
        """Attention and FFN projections; routers, embedding and head stay full precision."""
        return [wid for wid in sorted(self.weights) if wid.kind != "router"]

    def ffn_ids(self) -> List[WeightId]:
        """Routed and shared expert projections (the FFNN linear layers)."""
        return [wid for wid in sorted(self.weights) if wid.is_expert]

    def get_weight(self, wid: WeightId | str) -> np.ndarray:
        key = WeightId.parse(wid) if isinstance(wid, str) else wid
        try:
            return self.weights[key]
        except KeyError:
            raise InvalidArgument.build(f"weight '{key}' does not exist in this model") from None

    def param_count(self, wid: WeightId) -> int:
        rows, cols = self.get_weight(wid).shape
        return rows * cols

    def moe_layers(self) -> List[int]:
        return self.spec.moe_layers()

    def expert(self, layer: int, kind: str, index: Optional[int]) -> ExpertWeights:
        return ExpertWeights(
            *(self.weights[WeightId(layer, kind, index, p)] for p in FFN_PROJECTIONS)
        )

    def block(self, layer: int) -> MoEBlock:
        spec = self.spec
        return MoEBlock(
            router=self.weights[WeightId(layer, "router")],
            experts=tuple(self.expert(layer, "expert", e) for e in range(spec.num_experts)),
            shared=tuple(self.expert(layer, "shared_expert", s) for s in range(spec.num_shared_experts)),
            top_k=spec.top_k,
            router_skew=spec.router_skew,
        )

    def with_weights(self, replacements: Mapping[WeightId, np.ndarray]) -> "MoEModel":
        """New model with some matrices replaced; shapes must match."""
        weights: Dict[WeightId, np.ndarray] = dict(self.weights)
        for wid, w in replacements.items():
            if wid not in weights:
                raise InvalidArgument.build(f"weight '{wid}' does not exist in this model")
            if np.shape(w) != weights[wid].shape:
                raise InvalidArgument.build(
                    f"shape mismatch for '{wid}'",
                    details={"expected": list(weights[wid].shape), "got": list(np.shape(w))},
                )
            weights[wid] = _frozen(w)
        return MoEModel(self.spec, self.embedding, self.head, weights)

    @classmethod
    def from_arrays(
        cls,
        spec: MoEModelSpec,
        embedding: np.ndarray,
        head: np.ndarray,
        weights: Mapping[WeightId, np.ndarray],
    ) -> "MoEModel":
        spec.check()
        expected = enumerate_weight_ids(spec)
        if sorted(weights) != expected:
            missing = sorted(set(expected) - set(weights))
            extra = sorted(set(weights) - set(expected))
            raise InvalidSpec.build(
                "weight set does not match the model spec",
                details={"missing": [str(w) for w in missing][:10], "extra": [str(w) for w in extra][:10]},
            )
        vd = (spec.vocab_size, spec.hidden_dim)
        if np.shape(embedding) != vd or np.shape(head) != vd:
            raise InvalidSpec.build("embedding/head shape does not match the model spec", details={"expected": list(vd)})
        frozen: Dict[WeightId, np.ndarray] = {}
        for wid in expected:
            w = weights[wid]
            if np.shape(w) != expected_shape(spec, wid):
                raise InvalidSpec.build(
                    f"shape mismatch for '{wid}'",
                    details={"expected": list(expected_shape(spec, wid)), "got": list(np.shape(w))},
                )
            frozen[wid] = _frozen(w)
        return cls(spec, _frozen(embedding), _frozen(head), frozen)


def build_model(spec: MoEModelSpec) -> MoEModel:
    """Deterministic random model: every entry uniform(-1/sqrt(d), 1/sqrt(d)).

    Draw order is embedding, then each weight in WeightId order, then head,
    each matrix filled row-major from one SplitMix64 stream seeded by spec.seed.
    """
    spec.check()
    rng = SplitMix64(spec.seed)
    bound = 1.0 / math.sqrt(spec.hidden_dim)
    vd = (spec.vocab_size, spec.hidden_dim)
    embedding = rng.uniform(-bound, bound, vd)
    weights = {wid: rng.uniform(-bound, bound, expected_shape(spec, wid)) for wid in enumerate_weight_ids(spec)}
    head = rng.uniform(-bound, bound, vd)
    return MoEModel.from_arrays(spec, embedding, head, weights)
