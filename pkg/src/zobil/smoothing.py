"""Gaussian smoothing and two-point zeroth-order gradient estimators.

For a Lipschitz objective h, the smoothed function is
h_eta(y) = E[h(y + eta*U)] with U standard Gaussian in the B-metric
(coordinate covariance B^-1).  Its gradient admits the finite-difference
representation

    grad h_eta(y) = E[ (h(y + eta*U) - h(y)) / eta * B U ],

which is estimated by mini-batch averages of paired oracle evaluations,
each pair sharing one noise realization xi and one direction U.

Per-sample randomness is addressed by (seed, iteration, sample index), so
estimates are reproducible regardless of evaluation order.
"""

from dataclasses import dataclass

import numpy as np

from .metric import RieszMap
from .rng import NoiseSample, substream


@dataclass(frozen=True)
class SmoothingParams:
    """Smoothing radius eta > 0 on an n-dimensional space."""

    eta: float
    dim: int

    def __post_init__(self):
        if not (self.eta > 0):
            raise ValueError("eta must be positive")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")


@dataclass(frozen=True)
class GradEstimate:
    """Mini-batch two-point gradient estimate (a dual vector)."""

    value: np.ndarray
    batch: int
    seed: int


def _direction(B: RieszMap, rng: np.random.Generator) -> np.ndarray:
    # U ~ N(0, B^-1) so that ||U|| is standard Gaussian under the B-norm;
    # with B = I this is an i.i.d. standard normal vector.
    z = rng.standard_normal(B.dim)
    return z / np.sqrt(B.diag)


def _sample_streams(seed: int, iteration: int, index: int):
    """Direction generator and noise token for one estimator summand."""
    u_rng = substream(seed, iteration, index, 0)
    token = NoiseSample(seed, (iteration, index, 1))
    return u_rng, token


def smoothed_value(oracle, y, params: SmoothingParams, m: int, seed: int,
                   iteration: int = 0, B: RieszMap | None = None) -> float:
    """Monte-Carlo estimate of h_eta(y) from m pairs (U^i, xi^i)."""
    if m < 1:
        raise ValueError("m must be >= 1")
    y = np.asarray(y, dtype=float)
    if B is None:
        B = RieszMap.identity(y.size)
    vals = np.empty(m)
    for i in range(m):
        u_rng, token = _sample_streams(seed, iteration, i)
        u = _direction(B, u_rng)
        vals[i] = oracle(y + params.eta * u, token)
    return float(vals.mean())


def _batch_directions(B, m, seed, iteration, sample_offset):
    dirs = np.empty((m, B.dim))
    tokens = []
    for i in range(m):
        u_rng, token = _sample_streams(seed, iteration, sample_offset + i)
        dirs[i] = _direction(B, u_rng)
        tokens.append(token)
    return dirs, tokens


def _two_point_terms(oracle, y, params, m, seed, iteration, sample_offset, B,
                     pair_batch=None):
    y = np.asarray(y, dtype=float)
    if B is None:
        B = RieszMap.identity(y.size)
    eta = params.eta
    dirs, tokens = _batch_directions(B, m, seed, iteration, sample_offset)
    if pair_batch is not None:
        # oracle evaluates all pairs of one batch together (e.g. to solve
        # the inner problems vectorized); same pairing of (U, xi) as below
        vals_pert, vals_base = pair_batch(y, y + eta * dirs, tokens)
        return ((vals_pert - vals_base) / eta)[:, None] * (B.diag * dirs)
    terms = np.empty((m, y.size))
    for i in range(m):
        u = dirs[i]
        diff = oracle(y + eta * u, tokens[i]) - oracle(y, tokens[i])
        terms[i] = (diff / eta) * B.apply(u)
    return terms


def grad_estimate(oracle, y, params: SmoothingParams, m: int, seed: int,
                  iteration: int = 0, sample_offset: int = 0,
                  B: RieszMap | None = None) -> GradEstimate:
    """Two-point mini-batch estimate of grad h_eta(y).

    ``oracle(y, sample)`` must be deterministic given its arguments; both
    evaluations of each summand share the same noise token.
    ``sample_offset`` shifts the per-sample stream index, which makes an
    m-fold batch the exact average of m single-sample estimates taken at
    offsets 0..m-1.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    terms = _two_point_terms(oracle, y, params, m, seed, iteration, sample_offset, B)
    return GradEstimate(value=terms.mean(axis=0), batch=m, seed=seed)


def grad_estimate_inexact(oracle, y, params: SmoothingParams, m: int, beta: float,
                          seed: int, iteration: int = 0, sample_offset: int = 0,
                          B: RieszMap | None = None) -> GradEstimate:
    """Two-point estimate with an inexact inner solution of accuracy beta.

    ``oracle(y, sample, beta)`` evaluates the inexact objective H^beta; the
    inner solver is invoked at the same accuracy at y and y + eta*U.  With
    beta = 0 the output is bitwise identical to :func:`grad_estimate`.
    """
    if beta < 0:
        raise ValueError("beta must be >= 0")
    if m < 1:
        raise ValueError("m must be >= 1")

    def exact_like(yy, token):
        return oracle(yy, token, beta)

    pair_batch = None
    if hasattr(oracle, "eval_pair_batch"):
        def pair_batch(y_base, y_pert, tokens):
            return oracle.eval_pair_batch(y_base, y_pert, tokens, beta)

    terms = _two_point_terms(exact_like, y, params, m, seed, iteration, sample_offset, B,
                             pair_batch=pair_batch)
    return GradEstimate(value=terms.mean(axis=0), batch=m, seed=seed)


def gaussian_moment_bound(p: float, n: int) -> float:
    """Upper bound on E||U||^p for standard Gaussian U in dimension n.

    Exact values M_0 = 1 and M_2 = n; in general M_p <= n^(p/2) for
    p <= 2 and M_p <= (p+n)^(p/2) for p >= 2.
    """
    if p < 0:
        raise ValueError("p must be >= 0")
    if p <= 2:
        return float(n) ** (p / 2.0)
    return float(p + n) ** (p / 2.0)


def lip1_of_smoothed(lip0: float, eta: float, n: int) -> float:
    """Gradient Lipschitz constant of h_eta: sqrt(n)/eta * lip0(h)."""
    if lip0 <= 0 or eta <= 0:
        raise ValueError("lip0 and eta must be positive")
    return np.sqrt(n) * lip0 / eta


def variance_bound(lip0_l2: float, n: int, m: int) -> float:
    """Bound on E||V||_*^2 - ||grad h_eta||_*^2 for an m-sample estimate.

    Equals (4+n)^2 |lip0(H(., xi))|_2^2 / m.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    return (4.0 + n) ** 2 * lip0_l2 ** 2 / m


def probe_lip0(oracle, lo, hi, n_pairs: int = 256, seed: int = 0,
               B: RieszMap | None = None) -> float:
    """Heuristic estimate of lip0(H(., xi)) over the box [lo, hi].

    Maximum finite-difference quotient over random pairs, each pair sharing
    one noise realization.  A heuristic, not a certified bound; intended to
    set step sizes via :func:`lip1_of_smoothed`.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if B is None:
        B = RieszMap.identity(lo.size)
    rng = substream(seed, 0, 0)  # probe stream; disjoint from estimator paths
    best = 0.0
    for i in range(n_pairs):
        y1 = rng.uniform(lo, hi)
        y2 = rng.uniform(lo, hi)
        token = NoiseSample(seed, (0, i, 2))
        gap = np.sqrt(np.dot(B.diag * (y1 - y2), y1 - y2))
        if gap == 0:
            continue
        quot = abs(oracle(y1, token) - oracle(y2, token)) / gap
        best = max(best, quot)
    return best
