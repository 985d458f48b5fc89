from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Sequence

import numpy as np

from core.binio import ByteReader, ByteWriter, read_bytes, write_bytes
from core.errors import ContainerFormatError, InvalidArgument, TokenOutOfRange
from core.model.forward import forward, softmax
from core.model.weights import MoEModel
from core.numerics import SplitMix64

MAGIC = b"CALQ1"

SOURCE_MARKOV = "synthetic-markov"
SOURCE_FILE = "file"
SOURCE_MODEL = "model-sampled"
SOURCES = (SOURCE_MARKOV, SOURCE_FILE, SOURCE_MODEL)


@dataclass
class CalibrationSet:
    sequences: List[np.ndarray]
    seed: int = 0
    source: str = SOURCE_MARKOV
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.source not in SOURCES:
            raise InvalidArgument.build(f"unknown calibration source '{self.source}'", details={"allowed": list(SOURCES)})
        self.sequences = [np.asarray(s, dtype=np.int64).ravel() for s in self.sequences]
        for i, s in enumerate(self.sequences):
            if s.size == 0:
                raise InvalidArgument.build(f"calibration sequence {i} is empty")

    @property
    def num_tokens(self) -> int:
        return int(sum(s.size for s in self.sequences))

    def __len__(self) -> int:
        return len(self.sequences)

    def validate_for(self, vocab_size: int) -> None:
        for i, s in enumerate(self.sequences):
            if s.min() < 0 or s.max() >= vocab_size:
                raise TokenOutOfRange.build(
                    f"sequence {i} holds token ids outside [0, {vocab_size})",
                    details={"sequence": i, "min": int(s.min()), "max": int(s.max())},
                )

    def equals(self, other: "CalibrationSet") -> bool:
        return (
            self.seed == other.seed
            and self.source == other.source
            and len(self.sequences) == len(other.sequences)
            and all(np.array_equal(a, b) for a, b in zip(self.sequences, other.sequences))
        )


def _check_counts(**counts: int) -> None:
    bad = {k: v for k, v in counts.items() if v < 1}
    if bad:
        raise InvalidArgument.build("corpus counts must be >= 1", details=bad)


def markov_transitions(rng: SplitMix64, vocab_size: int, concentration: float) -> np.ndarray:
    """Row-stochastic matrix with rows proportional to exp(concentration * N(0, 1))."""
    weights = np.exp(concentration * rng.normal((vocab_size, vocab_size)))
    return weights / weights.sum(axis=1, keepdims=True)


def _draw(cdf_rows: np.ndarray, u: np.ndarray) -> np.ndarray:
    # inverse-CDF sampling, one row per draw
    picks = (cdf_rows < u[:, None]).sum(axis=1)
    return np.minimum(picks, cdf_rows.shape[1] - 1)


def generate_calibration(
    seed: int,
    n_sequences: int,
    seq_len: int,
    vocab_size: int,
    *,
    concentration: float = 2.0,
) -> CalibrationSet:
    """Sequences from a seeded order-1 Markov chain whose transition matrix is itself seeded."""
    _check_counts(n_sequences=n_sequences, seq_len=seq_len, vocab_size=vocab_size)
    rng = SplitMix64(seed)
    cdf = np.cumsum(markov_transitions(rng, vocab_size, concentration), axis=1)
    tokens = np.empty((n_sequences, seq_len), dtype=np.int64)
    tokens[:, 0] = rng.integers(vocab_size, n_sequences)
    for t in range(1, seq_len):
        tokens[:, t] = _draw(cdf[tokens[:, t - 1]], rng.random(n_sequences))
    return CalibrationSet(
        sequences=list(tokens),
        seed=seed,
        source=SOURCE_MARKOV,
        meta={"vocab_size": vocab_size, "concentration": concentration},
    )


def sample_from_model(
    model: MoEModel,
    seed: int,
    n_sequences: int,
    seq_len: int,
    *,
    temperature: float = 1.0,
) -> CalibrationSet:
    """Sequences sampled autoregressively from the model itself.

    Perplexity of another model on these sequences measures how far its
    next-token distribution drifts from the sampling model.
    """
    _check_counts(n_sequences=n_sequences, seq_len=seq_len)
    if temperature <= 0:
        raise InvalidArgument.build("temperature must be > 0")
    vocab = model.spec.vocab_size
    rng = SplitMix64(seed)
    tokens = np.empty((n_sequences, seq_len), dtype=np.int64)
    tokens[:, 0] = rng.integers(vocab, n_sequences)
    for i in range(n_sequences):
        for t in range(1, seq_len):
            logits = forward(model, tokens[i, :t])[-1]
            cdf = np.cumsum(softmax(logits / temperature))
            tokens[i, t] = _draw(cdf[None, :], rng.random(1))[0]
    return CalibrationSet(
        sequences=list(tokens),
        seed=seed,
        source=SOURCE_MODEL,
        meta={"spec_hash": model.spec.spec_hash(), "temperature": temperature},
    )


def load_token_file(path: str | Path, *, seed: int = 0) -> CalibrationSet:
    """Whitespace-separated token ids, one sequence per non-empty line."""
    p = Path(path)
    if not p.exists():
        raise InvalidArgument.build(f"token file not found: {p}")
    sequences: List[Sequence[int]] = []
    for lineno, line in enumerate(p.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            sequences.append([int(tok) for tok in line.split()])
        except ValueError as e:
            raise InvalidArgument.build(f"{p}:{lineno}: non-integer token id") from e
    if not sequences:
        raise InvalidArgument.build(f"token file {p} holds no sequences")
    return CalibrationSet(sequences=[np.asarray(s) for s in sequences], seed=seed, source=SOURCE_FILE)


def dumps_calibration(calib: CalibrationSet) -> bytes:
    w = ByteWriter(MAGIC)
    w.text(str(calib.seed))
    w.text(calib.source)
    w.u32(len(calib.sequences))
    for s in calib.sequences:
        w.raw(np.asarray(s, dtype="<i4").tobytes())
    return w.getvalue()


def loads_calibration(data: bytes) -> CalibrationSet:
    r = ByteReader(data, MAGIC, what="calibration")
    try:
        seed = int(r.text())
    except ValueError as e:
        raise ContainerFormatError.build("calibration seed is not an integer") from e
    source = r.text()
    sequences = [np.frombuffer(r.raw(), dtype="<i4").astype(np.int64) for _ in range(r.u32())]
    r.done()
    return CalibrationSet(sequences=sequences, seed=seed, source=source)


def save_calibration(calib: CalibrationSet, path: str | Path) -> Path:
    return write_bytes(path, dumps_calibration(calib))


def load_calibration(path: str | Path) -> CalibrationSet:
    return loads_calibration(read_bytes(path, what="calibration"))
