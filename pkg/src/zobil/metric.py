"""Euclidean geometry of the parameter space under a diagonal SPD map B.

Primal norm  ||y||   = <B y, y>^(1/2)
Dual norm    ||v||_* = <v, B^-1 v>^(1/2)

Points and dual vectors are plain 1-D float arrays; only B carries
structure.  B is restricted to diagonal maps, which keeps B^-1 exact.
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class RieszMap:
    """Diagonal SPD operator B mapping the space to its dual."""

    diag: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.diag, dtype=float)
        if d.ndim != 1 or d.size == 0:
            raise ValueError("diag must be a non-empty 1-D array")
        if not np.all(np.isfinite(d)) or np.any(d <= 0):
            raise ValueError("diagonal entries must be finite and positive")
        object.__setattr__(self, "diag", d)

    @classmethod
    def identity(cls, n: int) -> "RieszMap":
        return cls(np.ones(n))

    @property
    def dim(self) -> int:
        return self.diag.size

    def apply(self, y: np.ndarray) -> np.ndarray:
        """B y (primal -> dual)."""
        return self.diag * y

    def apply_inv(self, v: np.ndarray) -> np.ndarray:
        """B^-1 v (dual -> primal)."""
        return v / self.diag


def _check_dim(B: RieszMap, x: np.ndarray):
    if x.shape[-1] != B.dim:
        raise ValueError(f"dimension mismatch: vector has {x.shape[-1]}, B has {B.dim}")


def norm(B: RieszMap, y: np.ndarray) -> float:
    """<B y, y>^(1/2)."""
    y = np.asarray(y, dtype=float)
    _check_dim(B, y)
    return float(np.sqrt(np.dot(B.diag * y, y)))


def dual_norm(B: RieszMap, v: np.ndarray) -> float:
    """<v, B^-1 v>^(1/2)."""
    v = np.asarray(v, dtype=float)
    _check_dim(B, v)
    return float(np.sqrt(np.dot(v / B.diag, v)))


def pythagoras_residual(B: RieszMap, x: np.ndarray, y: np.ndarray, u: np.ndarray) -> float:
    """2<y-u, B(x-y)> - (||x-u||^2 - ||x-y||^2 - ||y-u||^2).

    Algebraically zero for every x, y, u and SPD B; returned so tests can
    assert it vanishes to round-off.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    u = np.asarray(u, dtype=float)
    lhs = 2.0 * np.dot(y - u, B.apply(x - y))
    rhs = norm(B, x - u) ** 2 - norm(B, x - y) ** 2 - norm(B, y - u) ** 2
    return float(lhs - rhs)
