"""Proximal operators and prox-gradient mappings in the B-metric.

prox_{t r}(w) = argmin_u { r(u) + ||u - w||^2 / (2t) },
P_t(y, v)     = prox_{t r}(y - t B^-1 v),
G_t(y; v)     = (y - P_t(y, v)) / t.

With v the exact smoothed gradient, G is the deterministic prox-gradient
mapping; with v a stochastic estimate it is the stochastic one.  Its
B-norm is the stationarity measure of the composite problem.
"""

from dataclasses import dataclass

import numpy as np

from .metric import RieszMap, norm


class Regularizer:
    """Closed convex proper regularizer with an exact prox.

    Subclasses implement ``value`` and ``prox``; the prox must be computed
    in the B-metric.  For diagonal B all kinds implemented here are
    separable, so their prox is exact componentwise.
    """

    def value(self, y: np.ndarray) -> float:
        raise NotImplementedError

    def prox(self, w: np.ndarray, t: float, B: RieszMap) -> np.ndarray:
        raise NotImplementedError


class Zero(Regularizer):
    """r = 0; prox is the identity."""

    def value(self, y):
        return 0.0

    def prox(self, w, t, B):
        return np.array(w, dtype=float, copy=True)


class Box(Regularizer):
    """Indicator of the box [lo, hi]; prox is the componentwise clamp.

    For diagonal B the B-metric projection is still the plain clamp
    (separable objective), independent of the step size.
    """

    def __init__(self, lo, hi):
        self.lo = np.asarray(lo, dtype=float)
        self.hi = np.asarray(hi, dtype=float)
        if self.lo.shape != self.hi.shape or np.any(self.lo > self.hi):
            raise ValueError("box requires lo <= hi componentwise")

    def value(self, y):
        y = np.asarray(y)
        inside = np.all(y >= self.lo - 1e-12) and np.all(y <= self.hi + 1e-12)
        return 0.0 if inside else np.inf

    def prox(self, w, t, B):
        return np.clip(w, self.lo, self.hi)

    def contains(self, y) -> bool:
        return bool(np.all(y >= self.lo) and np.all(y <= self.hi))


class ScaledSq(Regularizer):
    """r(u) = (c/2) * sum(u_i^2) with weight c >= 0.

    In the B-metric with diagonal B the prox is componentwise
    u_i = b_i w_i / (b_i + t c); for B = I this is w / (1 + t c).
    """

    def __init__(self, weight: float):
        if weight < 0:
            raise ValueError("weight must be >= 0")
        self.weight = weight

    def value(self, y):
        return 0.5 * self.weight * float(np.dot(y, y))

    def prox(self, w, t, B):
        return B.diag * w / (B.diag + t * self.weight)


@dataclass(frozen=True)
class ProxGradSnapshot:
    """One prox-gradient step: target point, mapping vector and its norm."""

    y: np.ndarray
    v: np.ndarray
    t: float
    y_plus: np.ndarray
    map_vec: np.ndarray
    map_norm: float


def prox(r: Regularizer, t: float, w, B: RieszMap) -> np.ndarray:
    """prox_{t r}(w) in the B-metric."""
    if t <= 0:
        raise ValueError("t must be positive")
    return r.prox(np.asarray(w, dtype=float), t, B)


def prox_map_P(y, v, t: float, r: Regularizer, B: RieszMap) -> np.ndarray:
    """P_t(y, v) = prox_{t r}(y - t B^-1 v)."""
    y = np.asarray(y, dtype=float)
    v = np.asarray(v, dtype=float)
    return prox(r, t, y - t * B.apply_inv(v), B)


def grad_mapping(y, v, t: float, r: Regularizer, B: RieszMap) -> ProxGradSnapshot:
    """Prox-gradient mapping G_t(y; v) = (y - P_t(y, v)) / t."""
    y = np.asarray(y, dtype=float)
    v = np.asarray(v, dtype=float)
    y_plus = prox_map_P(y, v, t, r, B)
    map_vec = (y - y_plus) / t
    return ProxGradSnapshot(y=y, v=v, t=t, y_plus=y_plus, map_vec=map_vec,
                            map_norm=norm(B, map_vec))


def phi_monotonicity_check(y, grad_fn, r: Regularizer, B: RieszMap, alphas) -> list:
    """phi_y(a) = ||y - P_a(y, grad_fn(y))|| / a for each step size a.

    For non-stationary y, phi_y is non-increasing in a: a1 > a2 implies
    phi_y(a1) <= phi_y(a2).  Output is paired with the input order.
    """
    y = np.asarray(y, dtype=float)
    v = np.asarray(grad_fn(y), dtype=float)
    out = []
    for a in alphas:
        out.append(grad_mapping(y, v, a, r, B).map_norm)
    return out
