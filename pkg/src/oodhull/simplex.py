"""Probability-simplex weights and grids shared by samplers and solvers."""

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .errors import ValidationError

_SUM_TOL = 1e-9


@dataclass(frozen=True)
class SimplexWeights:
    """Mixture coefficients: nonnegative, summing to 1 within 1e-9."""

    alpha: np.ndarray

    def __post_init__(self):
        alpha = np.asarray(self.alpha, dtype=float)
        object.__setattr__(self, "alpha", alpha)
        if alpha.ndim != 1 or alpha.size < 1:
            raise ValidationError("weights must be a non-empty 1-d vector")
        if not np.all(np.isfinite(alpha)):
            raise ValidationError("weights must be finite")
        if np.any(alpha < 0):
            raise ValidationError(f"weights must be nonnegative, got {alpha}")
        if abs(float(alpha.sum()) - 1.0) > _SUM_TOL:
            raise ValidationError(f"weights must sum to 1, got {alpha.sum()!r}")

    def __len__(self) -> int:
        return int(self.alpha.size)

    @staticmethod
    def vertex(i: int, n: int) -> "SimplexWeights":
        alpha = np.zeros(n)
        alpha[i] = 1.0
        return SimplexWeights(alpha)


def as_weights(alpha, expected_len: int | None = None) -> SimplexWeights:
    """Coerce a raw vector or SimplexWeights, optionally checking the length."""
    w = alpha if isinstance(alpha, SimplexWeights) else SimplexWeights(np.asarray(alpha, dtype=float))
    if expected_len is not None and len(w) != expected_len:
        raise ValidationError(f"expected {expected_len} weights, got {len(w)}")
    return w


def simplex_grid(dim: int, resolution: int) -> np.ndarray:
    """All weight vectors with entries k/resolution, as an array (m, dim).

    Enumerates integer compositions of `resolution` into `dim` parts via
    stars-and-bars, in lexicographic order (deterministic).
    """
    if dim < 1 or resolution < 1:
        raise ValidationError("dim and resolution must be >= 1")
    if dim == 1:
        return np.ones((1, 1))
    points = []
    for bars in combinations(range(resolution + dim - 1), dim - 1):
        prev = -1
        comp = []
        for b in bars:
            comp.append(b - prev - 1)
            prev = b
        comp.append(resolution + dim - 2 - prev)
        points.append(comp)
    return np.asarray(points, dtype=float) / float(resolution)
