from __future__ import annotations

from typing import Sequence

import numpy as np

from core.errors import NonFinite, NotPositiveDefinite, NotSymmetric, ZeroVector

from .rng import SplitMix64

# A DenseMatrix is a 2-D float64 numpy array (row-major, finite entries).
DenseMatrix = np.ndarray

_SYMMETRY_RTOL = 1e-9


def as_matrix(a: Sequence[Sequence[float]] | np.ndarray, *, name: str = "matrix") -> DenseMatrix:
    """Coerce to a C-contiguous float64 2-D array and reject NaN/Inf."""
    m = np.ascontiguousarray(np.asarray(a, dtype=np.float64))
    if m.ndim == 1:
        m = m.reshape(1, -1)
    if m.ndim != 2:
        raise NonFinite.build(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NonFinite.build(f"{name} contains NaN or Inf", details={"shape": list(m.shape)})
    return m


def identity(n: int) -> DenseMatrix:
    return np.eye(n, dtype=np.float64)


def _check_spd_shape(a: DenseMatrix) -> None:
    if a.shape[0] != a.shape[1]:
        raise NotSymmetric.build(f"expected a square matrix, got {a.shape}")
    scale = float(np.max(np.abs(a))) if a.size else 0.0
    if scale and float(np.max(np.abs(a - a.T))) > _SYMMETRY_RTOL * scale:
        raise NotSymmetric.build(
            "matrix is not symmetric",
            details={"max_asymmetry": float(np.max(np.abs(a - a.T))), "scale": scale},
        )


def cholesky(a: Sequence[Sequence[float]] | np.ndarray) -> DenseMatrix:
    """Lower-triangular L with L @ L.T == a.

    Raises NotPositiveDefinite when a pivot is not strictly positive, which
    for Hessians means the dampening was insufficient.
    """
    m = as_matrix(a, name="cholesky input")
    _check_spd_shape(m)
    try:
        low = np.linalg.cholesky(m)
    except np.linalg.LinAlgError as e:
        raise NotPositiveDefinite.build(
            "matrix is not positive definite",
            details={"size": m.shape[0], "reason": str(e)},
            hint="increase the Hessian dampening (damp_ratio)",
        ) from e
    if not np.all(np.isfinite(low)) or np.any(np.diag(low) <= 0.0):
        raise NotPositiveDefinite.build(
            "non-positive pivot in Cholesky factorization",
            details={"size": m.shape[0]},
            hint="increase the Hessian dampening (damp_ratio)",
        )
    return low


def cholesky_inverse(a: Sequence[Sequence[float]] | np.ndarray) -> DenseMatrix:
    """Inverse of a symmetric positive-definite matrix through its Cholesky factor."""
    low = cholesky(a)
    n = low.shape[0]
    low_inv = np.linalg.solve(low, np.eye(n, dtype=np.float64))
    inv = low_inv.T @ low_inv
    # symmetrize away the last-ulp asymmetry of the product
    return 0.5 * (inv + inv.T)


def cosine(x: Sequence[float] | np.ndarray, y: Sequence[float] | np.ndarray) -> float:
    xv = np.asarray(x, dtype=np.float64).ravel()
    yv = np.asarray(y, dtype=np.float64).ravel()
    if xv.shape != yv.shape:
        raise ValueError(f"cosine of vectors with different lengths {xv.shape} vs {yv.shape}")
    nx = float(np.linalg.norm(xv))
    ny = float(np.linalg.norm(yv))
    if nx == 0.0 or ny == 0.0:
        raise ZeroVector.build("cosine is undefined for a zero vector", details={"norm_x": nx, "norm_y": ny})
    c = float(np.dot(xv / nx, yv / ny))
    return min(1.0, max(-1.0, c))


def rowwise_cosine(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Cosine of each row pair; rows with a zero norm raise ZeroVector."""
    nx = np.linalg.norm(x, axis=1)
    ny = np.linalg.norm(y, axis=1)
    if np.any(nx == 0.0) or np.any(ny == 0.0):
        raise ZeroVector.build("cosine is undefined for a zero vector", details={"rows": int(x.shape[0])})
    c = np.einsum("ij,ij->i", x / nx[:, None], y / ny[:, None])
    return np.clip(c, -1.0, 1.0)


def random_spd(n: int, rng: SplitMix64, eps: float = 0.01) -> DenseMatrix:
    """MᵀM + eps·I with M drawn uniform(-1, 1)."""
    m = rng.uniform(-1.0, 1.0, size=(n, n))
    return m.T @ m + eps * np.eye(n, dtype=np.float64)
