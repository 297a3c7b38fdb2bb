"""Relaxed-stationarity utilities.

The gradient of the Gaussian-smoothed objective lies in an inflated
Goldstein subdifferential once the smoothing radius is below an admissible
threshold eta_bar involving the negative branch of the Lambert W function.
This module provides that threshold, the fixed-step auxiliary points at
which the stationarity surrogate is evaluated, and the surrogate itself.
"""

import math
from dataclasses import dataclass

import numpy as np

from .metric import RieszMap
from .prox import Regularizer, prox_map_P


class DomainError(ValueError):
    """Argument outside the admissible domain."""


@dataclass(frozen=True)
class GoldsteinParams:
    """Target residual eps1, set radius eps2, dimension and lip0(h)."""

    eps1: float
    eps2: float
    n: int
    lip0: float

    def __post_init__(self):
        if min(self.eps1, self.eps2, self.lip0) <= 0 or self.n < 1:
            raise ValueError("all parameters must be positive")


_BRANCH_POINT = -1.0 / math.e


def lambert_w_neg1(x: float) -> float:
    """Negative branch W_-1 of w e^w = x for x in (-1/e, 0).

    Returns the unique w <= -1, accurate to |w e^w - x| <= 1e-12 |x|.
    Halley iterations seeded by the branch-point series near -1/e and the
    double-log asymptotic near 0.
    """
    x = float(x)
    if not (_BRANCH_POINT - 1e-15 <= x < 0.0):
        raise DomainError(f"x={x!r} outside (-1/e, 0)")
    if x <= _BRANCH_POINT + 1e-16:
        return -1.0

    if x > -0.25:
        # asymptotic seed: w ~ ln(-x) - ln(-ln(-x))
        l1 = math.log(-x)
        w = l1 - math.log(-l1)
    else:
        # branch-point series in p = -sqrt(2(1 + e x)); near the branch
        # point the corrector below loses precision (derivative ~ 0), and
        # the series itself is accurate to O(p^4)
        p = -math.sqrt(2.0 * (1.0 + math.e * x))
        w = -1.0 + p - p * p / 3.0 + 11.0 * p ** 3 / 72.0
        if abs(p) < 1e-4:
            return w

    for _ in range(100):
        ew = math.exp(w)
        f = w * ew - x
        if abs(f) <= 1e-13 * abs(x):
            break
        wp1 = w + 1.0
        step = f / (ew * wp1 - (w + 2.0) * f / (2.0 * wp1))
        w -= step
        if abs(step) <= 1e-16 * abs(w):
            break
    return min(w, -1.0)


def eta_bar(params: GoldsteinParams, delta: float) -> float:
    """Largest admissible smoothing radius min{1, delta/Gamma}.

    nu    = min{ eps1 / (4 lip0), (2 pi)^(n/2) - 1/2 }
    Gamma = [ -n W_-1( -nu^(2/n) / (2 pi e) ) ]^(1/2)

    Gamma always exceeds sqrt(n); ``delta`` is the subdifferential radius
    (typically the eps2 field).
    """
    if not (delta > 0):
        raise DomainError("delta must be positive")
    n = params.n
    half_pow = (2.0 * math.pi) ** (n / 2.0) - 0.5 if n <= 500 else math.inf
    nu = min(params.eps1 / (4.0 * params.lip0), half_pow)
    if nu <= 0:
        raise DomainError("nu must be positive")
    arg = -nu ** (2.0 / n) / (2.0 * math.pi * math.e)
    gamma = math.sqrt(-n * lambert_w_neg1(arg))
    return min(1.0, delta / gamma)


def auxiliary_point(y_k, v_hat, alpha1: float, r: Regularizer, B: RieszMap) -> np.ndarray:
    """Fixed-step companion point P_{alpha1}(y_k, v_hat).

    Uses the first-iteration step size regardless of the current schedule
    value, so the whole auxiliary sequence is driven by one step size.
    """
    if not (alpha1 > 0):
        raise ValueError("alpha1 must be positive")
    return prox_map_P(y_k, v_hat, alpha1, r, B)


def goldstein_residual_bound(map_norm_sq: float, deltaW_norm_sq: float,
                             eps1: float) -> float:
    """Surrogate bound 18 ||G||^2 + 21 ||dW||_*^2 + (2/3) eps1^2.

    Upper-bounds the squared distance of 0 to the inflated Goldstein
    subdifferential at the auxiliary point.
    """
    if min(map_norm_sq, deltaW_norm_sq) < 0 or eps1 < 0:
        raise ValueError("inputs must be nonnegative")
    return 18.0 * map_norm_sq + 21.0 * deltaW_norm_sq + (2.0 / 3.0) * eps1 ** 2
