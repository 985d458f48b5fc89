from __future__ import annotations

from pathlib import Path
from typing import Dict

import numpy as np

from core.binio import ByteReader, ByteWriter, read_bytes, write_bytes
from core.errors import ContainerFormatError

from .spec import MoEModelSpec
from .weights import EMBEDDING_NAME, HEAD_NAME, MoEModel, WeightId

MAGIC = b"MOEQ1"


def dumps_model(model: MoEModel) -> bytes:
    """MOEQ1: spec text, matrix count, then (name, rows, cols, <f8 data) per matrix."""
    w = ByteWriter(MAGIC)
    w.text(model.spec.to_text())
    entries = [(EMBEDDING_NAME, model.embedding)]
    entries += [(str(wid), m) for wid, m in model.iter_weights()]
    entries.append((HEAD_NAME, model.head))
    w.u32(len(entries))
    for name, m in entries:
        w.text(name)
        w.matrix(m)
    return w.getvalue()


def loads_model(data: bytes) -> MoEModel:
    r = ByteReader(data, MAGIC, what="model")
    spec = MoEModelSpec.from_text(r.text())
    count = r.u32()
    arrays: Dict[str, np.ndarray] = {}
    for _ in range(count):
        name = r.text()
        if name in arrays:
            raise ContainerFormatError.build(f"duplicate matrix '{name}' in model container")
        arrays[name] = r.matrix()
    r.done()
    try:
        embedding = arrays.pop(EMBEDDING_NAME)
        head = arrays.pop(HEAD_NAME)
    except KeyError as e:
        raise ContainerFormatError.build(f"model container lacks '{e.args[0]}'") from e
    weights = {WeightId.parse(name): m for name, m in arrays.items()}
    return MoEModel.from_arrays(spec, embedding, head, weights)


def save_model(model: MoEModel, path: str | Path) -> Path:
    return write_bytes(path, dumps_model(model))


def load_model(path: str | Path) -> MoEModel:
    return loads_model(read_bytes(path, what="model"))
