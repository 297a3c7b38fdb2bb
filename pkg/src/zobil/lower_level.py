"""Certified inexact solver for strongly convex inner problems.

(Projected) gradient descent with constant step 1/L on a mu-strongly
convex, L-smooth objective, stopped as soon as a computable bound on the
distance to the minimizer drops below the requested accuracy:

  unconstrained:  ||grad g(x)|| / mu <= beta
  nonnegative:    R = L ||x - proj(x - grad g(x)/L)|| and
                  R/L + 2R/mu <= beta

Both stopping quantities are provable upper bounds on ||x - x*||, so the
returned accuracy is certified, not heuristic.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

ITERATION_CAP = 10 ** 6


class IterationCapExceeded(RuntimeError):
    """The solver ran out of iterations; supplied mu/L are likely wrong."""


class NonFiniteGradient(RuntimeError):
    """The inner gradient produced NaN or infinity."""


@dataclass
class LowerProblem:
    """Smooth part of an inner problem, with certified moduli.

    ``grad(x, y, xi2)`` must be mu-strongly monotone and L_smooth-Lipschitz
    in x; this is a contract on the supplier.  ``value`` is optional and
    only used for diagnostics.
    """

    grad: Callable
    mu: float
    L_smooth: float
    constraint: str = "none"  # "none" | "nonnegative"
    value: Optional[Callable] = None
    dim: Optional[int] = None  # enables the zero cold start

    def __post_init__(self):
        if not (self.mu > 0):
            raise ValueError("mu must be positive")
        if self.L_smooth < self.mu:
            raise ValueError("need L_smooth >= mu")
        if self.constraint not in ("none", "nonnegative"):
            raise ValueError(f"unknown constraint {self.constraint!r}")


@dataclass
class LowerLevelSolve:
    """Inner solution with a certified accuracy bound ||x - x*|| <= beta_certified."""

    x: np.ndarray
    beta_certified: float
    iters: int
    values: Optional[list] = field(default=None, repr=False)


def _certificate(problem: LowerProblem, x: np.ndarray, g: np.ndarray):
    """Computable upper bound on ||x - x*|| at the current iterate."""
    if problem.constraint == "none":
        return float(np.linalg.norm(g)) / problem.mu, None
    step = x - g / problem.L_smooth
    x_proj = np.maximum(step, 0.0)
    residual = problem.L_smooth * float(np.linalg.norm(x - x_proj))
    cert = residual / problem.L_smooth + 2.0 * residual / problem.mu
    return cert, x_proj


def solve(problem: LowerProblem, y, xi2, beta_target: float,
          x0: Optional[np.ndarray] = None, track_values: bool = False) -> LowerLevelSolve:
    """Run (projected) gradient descent until the accuracy certificate holds.

    ``xi2`` is passed through to ``problem.grad``; a warm start ``x0`` that
    already satisfies the certificate returns after zero iterations.
    """
    if not (beta_target > 0):
        raise ValueError("beta_target must be positive")
    if x0 is None:
        if problem.dim is None:
            raise ValueError("need x0 or problem.dim for the cold start")
        x0 = np.zeros(problem.dim)
    x = np.array(x0, dtype=float, copy=True)
    if problem.constraint == "nonnegative":
        x = np.maximum(x, 0.0)
    values = [] if (track_values and problem.value is not None) else None

    it = 0
    while True:
        g = problem.grad(x, y, xi2)
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite inner gradient at iteration {it}")
        cert, x_proj = _certificate(problem, x, g)
        if values is not None:
            values.append(problem.value(x, y, xi2))
        if cert <= beta_target:
            return LowerLevelSolve(x=x, beta_certified=cert, iters=it, values=values)
        if it >= ITERATION_CAP:
            raise IterationCapExceeded(
                f"no certificate <= {beta_target:g} within {ITERATION_CAP} iterations "
                f"(mu={problem.mu:g}, L={problem.L_smooth:g}, cert={cert:g})")
        if problem.constraint == "none":
            x = x - g / problem.L_smooth
        else:
            x = x_proj
        it += 1


def convexity_bounds(lam: float, tau: float, nu: float, K_op_norm_sq: float,
                     L2_max_eig: float, L2_min_eig: float, DtD_norm: float):
    """Generic (mu, L) bounds for the regularized data-misfit inner problem.

    mu = lam * e_min(L^2) and L = ||K^T K|| + tau*||D^T D||/nu + lam*||L^2||.
    The mu bound ignores any curvature of the data term, so it can be very
    loose when K^T K is well conditioned; suppliers may pass a sharper mu
    to the solver.
    """
    if min(lam, nu) <= 0 or tau < 0:
        raise ValueError("lam, nu must be positive and tau nonnegative")
    mu = lam * L2_min_eig
    L = K_op_norm_sq + tau * DtD_norm / nu + lam * L2_max_eig
    return mu, L
