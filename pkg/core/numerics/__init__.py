"""Dense float64 linear algebra and the seeded generator used everywhere."""

from .linalg import (
    DenseMatrix,
    as_matrix,
    cholesky,
    cholesky_inverse,
    cosine,
    identity,
    random_spd,
    rowwise_cosine,
)
from .rng import SplitMix64

__all__ = [
    "DenseMatrix",
    "SplitMix64",
    "as_matrix",
    "cholesky",
    "cholesky_inverse",
    "cosine",
    "identity",
    "random_spd",
    "rowwise_cosine",
]
