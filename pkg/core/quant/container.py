from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict

import numpy as np

from core.binio import ByteReader, ByteWriter, read_bytes, write_bytes
from core.errors import ContainerFormatError
from core.model.spec import MoEModelSpec
from core.model.weights import EMBEDDING_NAME, HEAD_NAME, MoEModel, WeightId

from .codec import BACKENDS, GroupedQuantTensor, check_bits, dequantize, num_groups

MAGIC = b"MOEQZ1"
FP_TAG = "fp64"


def pack_codes(codes: np.ndarray, bits: int) -> bytes:
    """Pack codes little-endian: bit 0 of code 0 is bit 0 of byte 0."""
    flat = np.ascontiguousarray(codes, dtype=np.uint8).reshape(-1, 1)
    planes = np.unpackbits(flat, axis=1, bitorder="little")[:, :bits]
    return np.packbits(planes.reshape(-1), bitorder="little").tobytes()


def unpack_codes(raw: bytes, count: int, bits: int) -> np.ndarray:
    planes = np.unpackbits(np.frombuffer(raw, dtype=np.uint8), bitorder="little")
    if planes.size < count * bits:
        raise ContainerFormatError.build("packed code stream is too short", details={"count": count, "bits": bits})
    planes = planes[: count * bits].reshape(count, bits).astype(np.uint16)
    return (planes << np.arange(bits, dtype=np.uint16)).sum(axis=1).astype(np.uint8)


@dataclass(eq=False)
class QuantizedModel:
    """Quantized projections plus the full-precision routers, embedding and head."""

    spec: MoEModelSpec
    embedding: np.ndarray
    head: np.ndarray
    full_precision: Dict[WeightId, np.ndarray]
    tensors: Dict[WeightId, GroupedQuantTensor]
    meta: Dict[str, str] = field(default_factory=dict)

    def to_model(self) -> MoEModel:
        weights: Dict[WeightId, np.ndarray] = dict(self.full_precision)
        weights.update({wid: dequantize(t) for wid, t in self.tensors.items()})
        return MoEModel.from_arrays(self.spec, self.embedding, self.head, weights)

    def bits_by_weight(self) -> Dict[WeightId, int]:
        return {wid: t.bits for wid, t in self.tensors.items()}


def dumps_quantized(qm: QuantizedModel) -> bytes:
    w = ByteWriter(MAGIC)
    w.text(qm.spec.to_text())
    w.u32(len(qm.meta))
    for key in sorted(qm.meta):
        w.text(key)
        w.text(qm.meta[key])

    fp = [(EMBEDDING_NAME, qm.embedding)]
    fp += [(str(wid), qm.full_precision[wid]) for wid in sorted(qm.full_precision)]
    fp.append((HEAD_NAME, qm.head))
    w.u32(len(fp))
    for name, m in fp:
        w.text(name)
        w.text(FP_TAG)
        w.matrix(m)

    w.u32(len(qm.tensors))
    for wid in sorted(qm.tensors):
        t = qm.tensors[wid]
        w.text(str(wid))
        w.text(t.backend)
        w.u8(t.bits)
        w.u32(t.group_size)
        w.u32(t.rows)
        w.u32(t.cols)
        w.f64_array(t.scales)
        w.raw(np.ascontiguousarray(t.zero_points, dtype=np.uint8).tobytes())
        w.raw(pack_codes(t.codes, t.bits))
    return w.getvalue()


def loads_quantized(data: bytes) -> QuantizedModel:
    r = ByteReader(data, MAGIC, what="quantized model")
    spec = MoEModelSpec.from_text(r.text())
    meta = {}
    for _ in range(r.u32()):
        key = r.text()
        meta[key] = r.text()

    fp: Dict[str, np.ndarray] = {}
    for _ in range(r.u32()):
        name = r.text()
        tag = r.text()
        if tag != FP_TAG:
            raise ContainerFormatError.build(f"unknown storage tag '{tag}' for '{name}'")
        fp[name] = r.matrix()
    try:
        embedding = fp.pop(EMBEDDING_NAME)
        head = fp.pop(HEAD_NAME)
    except KeyError as e:
        raise ContainerFormatError.build(f"quantized container lacks '{e.args[0]}'") from e

    tensors: Dict[WeightId, GroupedQuantTensor] = {}
    for _ in range(r.u32()):
        wid = WeightId.parse(r.text())
        backend = r.text()
        if backend not in BACKENDS:
            raise ContainerFormatError.build(f"unknown backend '{backend}' for '{wid}'")
        bits = check_bits(r.u8())
        group_size = r.u32()
        rows = r.u32()
        cols = r.u32()
        g = num_groups(cols, group_size)
        scales = r.f64_array(rows * g).reshape(rows, g)
        zeros = np.frombuffer(r.raw(), dtype=np.uint8).reshape(rows, g).copy()
        codes = unpack_codes(r.raw(), rows * cols, bits).reshape(rows, cols)
        tensors[wid] = GroupedQuantTensor(rows, cols, bits, group_size, scales, zeros, codes, backend)
    r.done()
    return QuantizedModel(
        spec=spec,
        embedding=embedding,
        head=head,
        full_precision={WeightId.parse(n): m for n, m in fp.items()},
        tensors=tensors,
        meta=meta,
    )


def save_quantized(qm: QuantizedModel, path: str | Path) -> Path:
    return write_bytes(path, dumps_quantized(qm))


def load_quantized(path: str | Path) -> QuantizedModel:
    return loads_quantized(read_bytes(path, what="quantized model"))


def is_quantized_file(path: str | Path) -> bool:
    with open(path, "rb") as fh:
        return fh.read(len(MAGIC)) == MAGIC
