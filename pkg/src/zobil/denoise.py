"""One-dimensional signal denoising as a bilevel learning instance.

Ground truth: a random piecewise-constant block signal on t_i = i/n_x,
corrupted by white noise of variance 0.001.  The inner problem is

    g(x; y, d) = 1/2 ||x - d||^2 + lam/2 <L^2 x, x> + tau * TV_nu(x)

with L^2 = 0.01^2 A^-1, A the SPD (negative, Dirichlet) 1-D Laplacian
scaled by 1/h^2, and (lam, tau, nu) = 10^y for y in the box [-7, 7]^3.
The outer loss per data pair is the squared reconstruction error plus a
small penalty on the inner problem's condition number, which keeps the
inner solves well conditioned.
"""

import csv

import numpy as np
from scipy.linalg import cho_solve_banded, cholesky_banded, eigh_tridiagonal

from . import lower_level
from .lower_level import LowerProblem
from .rng import NoiseSample, substream

SIGMA = np.sqrt(0.001)
L2_WEIGHT = 0.01 ** 2
BOX_LO, BOX_HI = -7.0, 7.0
PENALTY_WEIGHT = 1e-6


class ZeroTruthNorm(ValueError):
    """A validation ground truth has zero norm."""


def tv_nu(x, nu: float) -> float:
    """Smoothed total variation sum_i sqrt((x_{i+1}-x_i)^2 + nu^2)."""
    if not (nu > 0):
        raise ValueError("nu must be positive")
    e = np.diff(np.asarray(x, dtype=float), axis=0)
    return float(np.sum(np.sqrt(e * e + nu * nu)))


def tv_nu_grad(x, nu: float) -> np.ndarray:
    """Exact gradient of tv_nu; supports (n,) vectors and (n, batch) columns."""
    x = np.asarray(x, dtype=float)
    e = np.diff(x, axis=0)
    w = e / np.sqrt(e * e + nu * nu)
    g = np.zeros_like(x)
    g[1:] += w
    g[:-1] -= w
    return g


def hyperparams(y) -> tuple:
    """(lam, tau, nu) = 10^y for the 3-vector y."""
    y = np.asarray(y, dtype=float)
    if y.shape != (3,):
        raise ValueError("y must be a 3-vector")
    lam, tau, nu = 10.0 ** y
    return float(lam), float(tau), float(nu)


def generate_pair(n_x: int, seed: int, sub: tuple = ()) -> tuple:
    """One (x_true, d) pair: block indicator on [C, R] plus noise.

    C ~ U[1/8, 1/4] and R ~ U[3/8, 7/8], evaluated on t_i = i/n_x.
    """
    if n_x < 4:
        raise ValueError("n_x must be >= 4")
    rng = substream(seed, *sub)
    c = rng.uniform(1.0 / 8.0, 1.0 / 4.0)
    r = rng.uniform(3.0 / 8.0, 7.0 / 8.0)
    t = np.arange(1, n_x + 1) / n_x
    x_true = ((t >= c) & (t <= r)).astype(float)
    d = x_true + SIGMA * rng.standard_normal(n_x)
    return x_true, d


def generate_dataset(n_x: int, count: int, seed: int) -> list:
    return [generate_pair(n_x, seed, sub=(i,)) for i in range(count)]


def dump_pairs(path, pairs):
    """CSV dump, one row per sample: x_true entries then d entries."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for x_true, d in pairs:
            w.writerow([repr(float(v)) for v in x_true] + [repr(float(v)) for v in d])


def load_pairs(path) -> list:
    pairs = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            vals = np.array([float(v) for v in row])
            n = vals.size // 2
            pairs.append((vals[:n], vals[n:]))
    return pairs


class DenoiseInstance:
    """Precomputed operators and parameters for one signal length."""

    def __init__(self, n_x: int):
        if n_x < 4:
            raise ValueError("n_x must be >= 4")
        self.n_x = n_x
        h = 1.0 / n_x
        main = np.full(n_x, 2.0) / h ** 2
        off = np.full(n_x - 1, -1.0) / h ** 2
        # banded Cholesky of A (upper form) for repeated A^-1 applications
        ab = np.zeros((2, n_x))
        ab[0, 1:] = off
        ab[1, :] = main
        self._chol = cholesky_banded(ab)
        evals = eigh_tridiagonal(main, off, eigvals_only=True,
                                 select="i", select_range=(0, 0))
        evals_hi = eigh_tridiagonal(main, off, eigvals_only=True,
                                    select="i", select_range=(n_x - 1, n_x - 1))
        self.a_min_eig = float(evals[0])
        self.a_max_eig = float(evals_hi[0])
        self.l2_min_eig = L2_WEIGHT / self.a_max_eig   # e_min(L^2)
        self.l2_norm = L2_WEIGHT / self.a_min_eig      # ||L^2||
        # difference operator D: ||D^T D|| computed numerically
        dtd_main = np.full(n_x, 2.0)
        dtd_main[0] = dtd_main[-1] = 1.0
        dtd_off = np.full(n_x - 1, -1.0)
        top = eigh_tridiagonal(dtd_main, dtd_off, eigvals_only=True,
                               select="i", select_range=(n_x - 1, n_x - 1))
        self.dtd_norm = float(top[0])
        # forward map K = identity
        self.k_norm_sq = 1.0
        self.k_min_eig = 1.0

    def apply_l2(self, x):
        """L^2 x = 0.01^2 A^-1 x; accepts (n,) or (n, batch)."""
        return L2_WEIGHT * cho_solve_banded((self._chol, False), x)

    def moduli(self, y) -> tuple:
        """Certified (mu, L) of the inner objective at hyperparameters 10^y.

        The smoothness bound is the generic one; the strong-convexity bound
        additionally counts the unit curvature of the identity data term,
        without which mu would be loose by many orders of magnitude.
        """
        lam, tau, nu = hyperparams(y)
        mu_generic, L = lower_level.convexity_bounds(
            lam, tau, nu, self.k_norm_sq, self.l2_norm, self.l2_min_eig, self.dtd_norm)
        mu = self.k_min_eig + mu_generic
        return mu, L

    def condition_penalty(self, y) -> float:
        """Penalty 1e-6 (L/mu)^2 discouraging ill-conditioned inner problems."""
        mu, L = self.moduli(y)
        return PENALTY_WEIGHT * (L / mu) ** 2

    def lower_grad(self, x, y, d) -> np.ndarray:
        """(x - d) + lam L^2 x + tau grad TV_nu(x)."""
        lam, tau, nu = hyperparams(y)
        return (x - d) + lam * self.apply_l2(x) + tau * tv_nu_grad(x, nu)

    def lower_value(self, x, y, d) -> float:
        lam, tau, nu = hyperparams(y)
        misfit = 0.5 * float(np.dot(x - d, x - d))
        tik = 0.5 * lam * float(np.dot(self.apply_l2(x), x))
        return misfit + tik + tau * tv_nu(x, nu)

    def lower_problem(self, y) -> LowerProblem:
        mu, L = self.moduli(y)
        return LowerProblem(
            grad=lambda x, yy, d: self.lower_grad(x, yy, d),
            value=lambda x, yy, d: self.lower_value(x, yy, d),
            mu=mu, L_smooth=L, constraint="none", dim=self.n_x)

    def solve_lower(self, y, d, beta: float, x0=None):
        """Inner solve at certified accuracy beta, warm-started at d."""
        problem = self.lower_problem(y)
        return lower_level.solve(problem, y, d, beta, x0=d if x0 is None else x0)

    def _solve_batch(self, y, D, beta: float) -> np.ndarray:
        """Inner solves for all columns of D at once (validation helper).

        Same iteration and stopping rule as lower_level.solve, vectorized
        over samples; runs until every column's certificate holds.
        """
        mu, L = self.moduli(y)
        lam, tau, nu = hyperparams(y)
        x = D.copy()
        for it in range(lower_level.ITERATION_CAP + 1):
            g = (x - D) + lam * self.apply_l2(x) + tau * tv_nu_grad(x, nu)
            certs = np.linalg.norm(g, axis=0) / mu
            if np.all(certs <= beta):
                return x
            x = x - g / L
        raise lower_level.IterationCapExceeded(
            f"batch solve exceeded {lower_level.ITERATION_CAP} iterations")

    def upper_objective(self, y, pairs, beta: float) -> float:
        """Mean squared reconstruction error over pairs plus the penalty."""
        if beta < 0:
            raise ValueError("beta must be >= 0")
        beta = max(beta, 1e-12)
        losses = []
        for x_true, d in pairs:
            sol = self.solve_lower(y, d, beta)
            losses.append(float(np.dot(sol.x - x_true, sol.x - x_true)))
        return float(np.mean(losses)) + self.condition_penalty(y)

    def validation_errors(self, y, val_pairs, beta: float = 1e-7) -> list:
        """Normalized errors ||x*(y, d_i) - x_i|| / ||x_i|| on a held-out set."""
        truths = np.stack([p[0] for p in val_pairs], axis=1)
        norms = np.linalg.norm(truths, axis=0)
        if np.any(norms == 0):
            raise ZeroTruthNorm("validation truth with zero norm")
        data = np.stack([p[1] for p in val_pairs], axis=1)
        x = self._solve_batch(y, data, beta)
        return list(np.linalg.norm(x - truths, axis=0) / norms)


REG_EVAL_BOUND = 4.0    # |log10| clamp on evaluated weights
RATIO_EVAL_BOUND = 3.0  # clamp on log10(tau/nu) at evaluation time


def eval_point(y) -> np.ndarray:
    """Solver-safe version of an evaluation point.

    Smoothing probes (and early large steps) can request tau/nu ratios that
    push the inner smoothness constant past 1e8, where a certified solve no
    longer terminates.  Coordinates are clamped to +-REG_EVAL_BOUND and
    (y2, y3) is projected symmetrically onto log10(tau/nu) <= RATIO_EVAL_BOUND.
    The stochastic loss is simply flat beyond these bounds.
    """
    y = np.clip(np.asarray(y, dtype=float), -REG_EVAL_BOUND, REG_EVAL_BOUND)
    excess = y[1] - y[2] - RATIO_EVAL_BOUND
    if excess > 0:
        y = y.copy()
        y[1] -= excess / 2.0
        y[2] += excess / 2.0
    return y


class DenoiseOracle:
    """Single-sample stochastic loss H(y, xi) over a finite training set.

    The noise token selects one training pair; both evaluations of a
    two-point estimator share the token, hence the pair.  Counters track
    oracle calls and inner-solver iterations for reporting.
    """

    def __init__(self, instance: DenoiseInstance, pairs):
        if not pairs:
            raise ValueError("need at least one training pair")
        self.instance = instance
        self.pairs = pairs
        self.calls = 0
        self.lower_iters = 0

    def __call__(self, y, sample: NoiseSample, beta: float) -> float:
        y = eval_point(y)
        idx = int(sample.rng().integers(len(self.pairs)))
        x_true, d = self.pairs[idx]
        sol = self.instance.solve_lower(y, d, max(beta, 1e-12))
        self.calls += 1
        self.lower_iters += sol.iters
        err = sol.x - x_true
        return float(np.dot(err, err)) + self.instance.condition_penalty(y)
