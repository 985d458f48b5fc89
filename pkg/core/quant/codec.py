"""Grouped asymmetric affine codec.

Each row is cut into contiguous groups of ``group_size`` columns; a group
stores a positive scale, an unsigned zero point and one code per value:

    value ~= (code - zero_point) * scale

The grid range is widened to include zero so the zero point always lands
inside the code range and the rounding error stays within scale/2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from core.errors import InvalidArgument
from core.numerics import as_matrix

SUPPORTED_BITS = (2, 3, 4, 8)
BACKENDS = ("rtn", "gptq")
DEFAULT_GROUP_SIZE = 128


def check_bits(bits: int) -> int:
    if bits not in SUPPORTED_BITS:
        raise InvalidArgument.build(f"unsupported bit width {bits}", details={"allowed": list(SUPPORTED_BITS)})
    return int(bits)


def check_group_size(group_size: int) -> int:
    if group_size < 1:
        raise InvalidArgument.build(f"group_size must be >= 1, got {group_size}")
    return int(group_size)


def num_groups(cols: int, group_size: int) -> int:
    return math.ceil(cols / group_size)


@dataclass(frozen=True, eq=False)
class GroupedQuantTensor:
    rows: int
    cols: int
    bits: int
    group_size: int
    scales: np.ndarray  # (rows, groups) float64
    zero_points: np.ndarray  # (rows, groups) uint8
    codes: np.ndarray  # (rows, cols) uint8
    backend: str = "rtn"

    @property
    def groups(self) -> int:
        return num_groups(self.cols, self.group_size)

    def dequantize(self) -> np.ndarray:
        return dequantize(self)

    def same_as(self, other: "GroupedQuantTensor") -> bool:
        return (
            (self.rows, self.cols, self.bits, self.group_size, self.backend)
            == (other.rows, other.cols, other.bits, other.group_size, other.backend)
            and np.array_equal(self.scales, other.scales)
            and np.array_equal(self.zero_points, other.zero_points)
            and np.array_equal(self.codes, other.codes)
        )


def affine_params(lo: np.ndarray, hi: np.ndarray, bits: int) -> Tuple[np.ndarray, np.ndarray]:
    """Scale and zero point for groups with value range [lo, hi] (elementwise arrays).

    Constant groups must decode exactly. An all-zero group gets (1, 0); a
    constant v keeps the regular grid when that grid reproduces v bit for
    bit, otherwise v>0 -> (v, 0) with code 1 and v<0 -> (|v|, 1) with code 0.
    """
    maxq = (1 << bits) - 1
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    xmin = np.minimum(lo, 0.0)
    xmax = np.maximum(hi, 0.0)
    span = xmax - xmin
    scale = np.where(span > 0, span, 1.0) / maxq
    zero = np.clip(np.rint(-xmin / scale), 0, maxq)

    constant = hi == lo
    if np.any(constant):
        exact = decode(encode(lo, scale, zero, bits), scale, zero) == lo
        fallback = constant & ~exact
        scale = np.where(fallback, np.abs(lo), scale)
        zero = np.where(fallback & (lo < 0), 1.0, np.where(fallback, 0.0, zero))
        scale = np.where(constant & (lo == 0), 1.0, scale)
    return scale, zero


def encode(values: np.ndarray, scale: np.ndarray, zero: np.ndarray, bits: int) -> np.ndarray:
    maxq = (1 << bits) - 1
    return np.clip(np.rint(values / scale) + zero, 0, maxq)


def decode(codes: np.ndarray, scale: np.ndarray, zero: np.ndarray) -> np.ndarray:
    return (codes - zero) * scale


def quantize_group_affine(values: Sequence[float] | np.ndarray, bits: int) -> Tuple[np.ndarray, float, int]:
    """Codes, scale and zero point of one group."""
    check_bits(bits)
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise InvalidArgument.build("cannot quantize an empty group")
    as_matrix(v, name="group values")
    scale, zero = affine_params(v.min(), v.max(), bits)
    codes = encode(v, scale, zero, bits).astype(np.uint8)
    return codes, float(scale), int(zero)


def group_grid(w: np.ndarray, bits: int) -> Tuple[np.ndarray, np.ndarray]:
    """Per-row (scale, zero) of a (rows, n) slice treated as one group per row."""
    return affine_params(w.min(axis=1), w.max(axis=1), bits)


def rtn_quantize(w: np.ndarray, bits: int, group_size: int = DEFAULT_GROUP_SIZE) -> GroupedQuantTensor:
    """Round-to-nearest: every group gets its own min/max grid, no calibration data."""
    check_bits(bits)
    check_group_size(group_size)
    w = as_matrix(w, name="weight")
    rows, cols = w.shape
    g = num_groups(cols, group_size)
    scales = np.empty((rows, g), dtype=np.float64)
    zeros = np.empty((rows, g), dtype=np.float64)
    codes = np.empty((rows, cols), dtype=np.float64)
    for gi in range(g):
        sl = slice(gi * group_size, min((gi + 1) * group_size, cols))
        s, z = group_grid(w[:, sl], bits)
        scales[:, gi], zeros[:, gi] = s, z
        codes[:, sl] = encode(w[:, sl], s[:, None], z[:, None], bits)
    return GroupedQuantTensor(
        rows=rows,
        cols=cols,
        bits=bits,
        group_size=group_size,
        scales=scales,
        zero_points=zeros.astype(np.uint8),
        codes=codes.astype(np.uint8),
        backend="rtn",
    )


def expand_groups(a: np.ndarray, cols: int, group_size: int) -> np.ndarray:
    return np.repeat(a, group_size, axis=1)[:, :cols]


def dequantize(t: GroupedQuantTensor) -> np.ndarray:
    scale = expand_groups(t.scales, t.cols, t.group_size)
    zero = expand_groups(t.zero_points.astype(np.float64), t.cols, t.group_size)
    return decode(t.codes.astype(np.float64), zero=zero, scale=scale)


def reconstruction_error(w: np.ndarray, w_hat: np.ndarray, x: np.ndarray) -> float:
    """||(W - W_hat) X^T||_F^2 with X holding one input per row."""
    diff = np.asarray(w, dtype=np.float64) - np.asarray(w_hat, dtype=np.float64)
    if x.shape[0] == 0:
        return 0.0
    r = diff @ x.T
    return float(np.sum(r * r))


def hessian_form_error(w: np.ndarray, w_hat: np.ndarray, x: np.ndarray) -> float:
    """Same objective through the Hessian: trace(D XᵀX Dᵀ)."""
    diff = np.asarray(w, dtype=np.float64) - np.asarray(w_hat, dtype=np.float64)
    return float(np.trace(diff @ (x.T @ x) @ diff.T))
