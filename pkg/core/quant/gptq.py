from __future__ import annotations

import math

import numpy as np

from core.errors import EmptyCalibration, InvalidArgument
from core.logging import get_logger
from core.numerics import as_matrix, cholesky, cholesky_inverse

from .codec import (
    DEFAULT_GROUP_SIZE,
    GroupedQuantTensor,
    check_bits,
    check_group_size,
    decode,
    encode,
    group_grid,
    num_groups,
)

_log = get_logger("quant.gptq")

DEFAULT_DAMP_RATIO = 0.01
DEFAULT_BLOCK_SIZE = 128


def hessian(x: np.ndarray) -> np.ndarray:
    """2·XᵀX for X holding one calibration input per row."""
    return 2.0 * (x.T @ x)


def damped_hessian(x: np.ndarray, damp_ratio: float) -> np.ndarray:
    h = hessian(x)
    diag = np.diagonal(h).copy()
    dead = diag == 0.0
    if np.any(dead):
        # inputs that never fire: any value is optimal, keep H invertible
        idx = np.nonzero(dead)[0]
        h[idx, idx] = 1.0
    damp = damp_ratio * float(np.mean(np.diagonal(h)))
    h[np.diag_indices_from(h)] += damp
    return h


def gptq_quantize(
    w: np.ndarray,
    x: np.ndarray,
    bits: int,
    group_size: int = DEFAULT_GROUP_SIZE,
    damp_ratio: float = DEFAULT_DAMP_RATIO,
    *,
    block_size: int = DEFAULT_BLOCK_SIZE,
) -> GroupedQuantTensor:
    """Column-by-column quantization with Hessian-based error compensation.

    ``x`` holds the captured layer inputs, one token per row, so the layer
    computes ``x @ w.T``. Columns are visited in natural order; a group's
    grid is fixed from the current (already compensated) weights when its
    first column is reached. Compensation uses the upper Cholesky factor U
    of H⁻¹: after quantizing column j,
    ``W[:, k] -= (w_j - q_j) / U[j, j] * U[j, k]`` for every k > j.

    Updates are applied lazily in column blocks; blocks are widened to a
    multiple of the group size so every group lies inside one block.
    """
    check_bits(bits)
    check_group_size(group_size)
    if not damp_ratio > 0:
        raise InvalidArgument.build(f"damp_ratio must be > 0, got {damp_ratio}")
    if block_size < 1:
        raise InvalidArgument.build(f"block_size must be >= 1, got {block_size}")
    w = as_matrix(w, name="weight")
    rows, cols = w.shape
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != cols:
        raise InvalidArgument.build(
            "calibration inputs do not match the weight's input width",
            details={"weight": [rows, cols], "inputs": list(x.shape)},
        )
    if x.shape[0] == 0:
        raise EmptyCalibration.build(
            "no calibration rows for this weight",
            hint="fall back to round-to-nearest for never-routed experts",
        )
    x = as_matrix(x, name="calibration inputs")

    h = damped_hessian(x, damp_ratio)
    u = cholesky(cholesky_inverse(h)).T

    work = w.copy()
    g = num_groups(cols, group_size)
    scales = np.empty((rows, g), dtype=np.float64)
    zeros = np.empty((rows, g), dtype=np.float64)
    codes = np.empty((rows, cols), dtype=np.float64)
    step = effective_block_size(block_size, group_size)

    scale = zero = None
    for i1 in range(0, cols, step):
        i2 = min(i1 + step, cols)
        w1 = work[:, i1:i2].copy()
        err1 = np.zeros_like(w1)
        u1 = u[i1:i2, i1:i2]
        for i in range(i2 - i1):
            j = i1 + i
            if j % group_size == 0:
                gi = j // group_size
                scale, zero = group_grid(w1[:, i : min(i + group_size, i2 - i1)], bits)
                scales[:, gi], zeros[:, gi] = scale, zero
            col = w1[:, i]
            c = encode(col, scale, zero, bits)
            codes[:, j] = c
            err = (col - decode(c, scale, zero)) / u1[i, i]
            w1[:, i:] -= np.outer(err, u1[i, i:])
            err1[:, i] = err
        work[:, i2:] -= err1 @ u[i1:i2, i2:]

    _log.debug(
        "gptq %dx%d bits=%d group=%d damp=%g rows_x=%d", rows, cols, bits, group_size, damp_ratio, x.shape[0]
    )
    return GroupedQuantTensor(
        rows=rows,
        cols=cols,
        bits=bits,
        group_size=group_size,
        scales=scales,
        zero_points=zeros.astype(np.uint8),
        codes=codes.astype(np.uint8),
        backend="gptq",
    )


def effective_block_size(block_size: int, group_size: int) -> int:
    return group_size * max(1, math.floor(block_size / group_size))
