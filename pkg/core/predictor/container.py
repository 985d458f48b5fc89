from __future__ import annotations

from pathlib import Path

import numpy as np

from core.binio import ByteReader, ByteWriter, read_bytes, write_bytes
from core.errors import ContainerFormatError

from .bsp import BlockParams, BlockPredictor, BlockScorePredictor

MAGIC = b"BSPQ1"


def dumps_predictor(bsp: BlockScorePredictor) -> bytes:
    """Per block: layer, hidden width, input mean/std, W1, b1, w2, b2, initial and final MSE, (epoch, MSE) log."""
    w = ByteWriter(MAGIC)
    w.u32(len(bsp.blocks))
    for layer in bsp.layers():
        p = bsp.blocks[layer]
        w.u32(layer)
        w.u32(p.hidden)
        w.matrix(np.vstack([p.mean, p.std]))
        w.matrix(p.params.w1)
        w.matrix(np.vstack([p.params.b1, p.params.w2]))
        w.f64(p.params.b2)
        w.f64(p.initial_mse)
        w.f64(p.final_mse)
        w.u32(len(p.log))
        for epoch, mse in p.log:
            w.u32(epoch)
            w.f64(mse)
    return w.getvalue()


def loads_predictor(data: bytes) -> BlockScorePredictor:
    r = ByteReader(data, MAGIC, what="block predictor")
    blocks = {}
    for _ in range(r.u32()):
        layer = r.u32()
        hidden = r.u32()
        scaling = r.matrix()
        w1 = r.matrix()
        second = r.matrix()
        d = w1.shape[1]
        if w1.shape[0] != hidden or second.shape != (2, hidden) or scaling.shape != (2, d):
            raise ContainerFormatError.build(
                f"predictor weights for layer {layer} do not match hidden width {hidden}",
                details={"w1": list(w1.shape), "b1_w2": list(second.shape), "scaling": list(scaling.shape)},
            )
        params = BlockParams(
            w1=w1,
            b1=np.ascontiguousarray(second[0]),
            w2=np.ascontiguousarray(second[1]),
            b2=r.f64(),
        )
        initial = r.f64()
        final = r.f64()
        log = []
        for _ in range(r.u32()):
            epoch = r.u32()
            log.append((epoch, r.f64()))
        p = BlockPredictor(
            layer=layer,
            params=params,
            mean=np.ascontiguousarray(scaling[0]),
            std=np.ascontiguousarray(scaling[1]),
            initial_mse=initial,
            log=log,
        )
        if log and p.final_mse != final:
            raise ContainerFormatError.build(f"final MSE of layer {layer} disagrees with its training log")
        blocks[layer] = p
    r.done()
    return BlockScorePredictor(blocks=blocks)


def save_predictor(bsp: BlockScorePredictor, path: str | Path) -> Path:
    return write_bytes(path, dumps_predictor(bsp))


def load_predictor(path: str | Path) -> BlockScorePredictor:
    return loads_predictor(read_bytes(path, what="block predictor"))
