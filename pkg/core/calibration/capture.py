from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from core.errors import ContainerFormatError, EmptyCalibration, InvalidArgument
from core.logging import get_logger
from core.model.forward import TraceSink, forward
from core.model.weights import MoEModel, WeightId
from core.numerics import rowwise_cosine

from .corpus import CalibrationSet

_log = get_logger("calibration")

WEIGHTINGS = ("binary", "gate")


def _trace_one(model: MoEModel, tokens: np.ndarray, capture_inputs: bool) -> TraceSink:
    sink = TraceSink(capture_inputs=capture_inputs)
    forward(model, tokens, trace=sink)
    return sink


def run_traces(
    model: MoEModel,
    calib: CalibrationSet,
    *,
    capture_inputs: bool = True,
    max_workers: Optional[int] = None,
) -> List[TraceSink]:
    """One TraceSink per sequence, returned in sequence order."""
    calib.validate_for(model.spec.vocab_size)
    if len(calib.sequences) <= 1 or max_workers == 1:
        return [_trace_one(model, s, capture_inputs) for s in calib.sequences]
    with ThreadPoolExecutor(max_workers=max_workers) as ex:
        return list(ex.map(lambda s: _trace_one(model, s, capture_inputs), calib.sequences))


def capture_layer_inputs(
    model: MoEModel, calib: CalibrationSet, *, max_workers: Optional[int] = None
) -> Dict[WeightId, np.ndarray]:
    """Row-stacked inputs of every quantizable weight; never-routed experts get 0 rows."""
    sinks = run_traces(model, calib, capture_inputs=True, max_workers=max_workers)
    out: Dict[WeightId, np.ndarray] = {}
    for wid in model.quantizable_ids():
        width = model.weights[wid].shape[1]
        blocks = [b for sink in sinks for b in sink.layer_inputs.get(wid, [])]
        out[wid] = np.vstack(blocks) if blocks else np.zeros((0, width), dtype=np.float64)
    _log.debug("captured inputs for %d weights over %d tokens", len(out), calib.num_tokens)
    return out


@dataclass
class UsageProfile:
    """Per-MoE-layer expert selection frequencies, each vector summing to 1."""

    usage: Dict[int, np.ndarray]
    weighting: str = "binary"
    tokens: int = 0

    def block(self, layer: int) -> np.ndarray:
        return self.usage[layer]

    def layers(self) -> List[int]:
        return sorted(self.usage)

    def to_text(self) -> str:
        lines = [f"# usage weighting={self.weighting} tokens={self.tokens}"]
        for layer in self.layers():
            lines.append(f"L{layer} " + " ".join(repr(float(v)) for v in self.usage[layer]))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "UsageProfile":
        weighting, tokens = "binary", 0
        usage: Dict[int, np.ndarray] = {}
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                for part in line[1:].split():
                    key, _, value = part.partition("=")
                    if key == "weighting":
                        weighting = value
                    elif key == "tokens":
                        tokens = int(value)
                continue
            head, *values = line.split()
            if not head.startswith("L"):
                raise ContainerFormatError.build(f"malformed usage line '{line}'")
            usage[int(head[1:])] = np.array([float(v) for v in values], dtype=np.float64)
        return cls(usage=usage, weighting=weighting, tokens=tokens)


def usage_from_traces(model: MoEModel, sinks: List[TraceSink], *, weighting: str = "binary") -> UsageProfile:
    if weighting not in WEIGHTINGS:
        raise InvalidArgument.build(f"unknown usage weighting '{weighting}'", details={"allowed": list(WEIGHTINGS)})
    e = model.spec.num_experts
    totals = {layer: np.zeros(e, dtype=np.float64) for layer in model.moe_layers()}
    tokens = 0
    for sink in sinks:
        for layer, (idx, gates) in sink.selections.items():
            mass = np.ones_like(gates) if weighting == "binary" else gates
            np.add.at(totals[layer], idx.ravel(), mass.ravel())
        if sink.selections:
            tokens += next(iter(sink.selections.values()))[0].shape[0]
    usage = {}
    for layer, counts in totals.items():
        total = counts.sum()
        if total <= 0:
            raise EmptyCalibration.build(f"no routed tokens observed for MoE layer {layer}")
        usage[layer] = counts / total
    return UsageProfile(usage=usage, weighting=weighting, tokens=tokens)


def profile_usage(
    model: MoEModel,
    calib: CalibrationSet,
    *,
    weighting: str = "binary",
    max_workers: Optional[int] = None,
) -> UsageProfile:
    """Normalized top-k selection counts per expert and MoE layer."""
    if calib.num_tokens == 0:
        raise EmptyCalibration.build("calibration set holds no tokens", hint="use more calibration sequences")
    sinks = run_traces(model, calib, capture_inputs=False, max_workers=max_workers)
    return usage_from_traces(model, sinks, weighting=weighting)


@dataclass
class BlockTrace:
    """Per-MoE-layer (inputs, outputs) residual states, one row per token."""

    pairs: Dict[int, Tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)

    def layers(self) -> List[int]:
        return sorted(self.pairs)

    def num_pairs(self) -> int:
        return sum(x.shape[0] for x, _ in self.pairs.values())

    def inputs(self, layer: int) -> np.ndarray:
        return self.pairs[layer][0]

    def cosines(self, layer: int) -> np.ndarray:
        x, y = self.pairs[layer]
        return rowwise_cosine(x, y)

    def mean_cosines(self) -> Dict[int, float]:
        return {layer: float(np.mean(self.cosines(layer))) for layer in self.layers()}

    def split(self, train_fraction: float = 0.8) -> Tuple["BlockTrace", "BlockTrace"]:
        """Train/held-out split by token index (first fraction of rows trains)."""
        if not 0.0 < train_fraction < 1.0:
            raise InvalidArgument.build("train_fraction must be in (0, 1)")
        train: Dict[int, Tuple[np.ndarray, np.ndarray]] = {}
        held: Dict[int, Tuple[np.ndarray, np.ndarray]] = {}
        for layer, (x, y) in self.pairs.items():
            cut = int(round(train_fraction * x.shape[0]))
            train[layer] = (x[:cut], y[:cut])
            held[layer] = (x[cut:], y[cut:])
        return BlockTrace(train), BlockTrace(held)


def block_trace_from_sinks(model: MoEModel, sinks: List[TraceSink]) -> BlockTrace:
    d = model.spec.hidden_dim
    pairs = {}
    for layer in model.moe_layers():
        xs = [s.block_io[layer][0] for s in sinks if layer in s.block_io]
        ys = [s.block_io[layer][1] for s in sinks if layer in s.block_io]
        empty = np.zeros((0, d), dtype=np.float64)
        pairs[layer] = (np.vstack(xs) if xs else empty, np.vstack(ys) if ys else empty)
    return BlockTrace(pairs)


def capture_block_io(
    model: MoEModel, calib: CalibrationSet, *, max_workers: Optional[int] = None
) -> BlockTrace:
    sinks = run_traces(model, calib, capture_inputs=False, max_workers=max_workers)
    return block_trace_from_sinks(model, sinks)


def render_usage(profile: UsageProfile, *, width: int = 40) -> str:
    """Text histogram; the bar values are exactly the profile entries."""
    lines = []
    for layer in profile.layers():
        lines.append(f"MoE layer {layer}")
        for e, v in enumerate(profile.usage[layer]):
            bar = "#" * int(round(v * width))
            lines.append(f"  expert {e:>3} {v:8.4f} {bar}")
    return "\n".join(lines) + ("\n" if lines else "")
