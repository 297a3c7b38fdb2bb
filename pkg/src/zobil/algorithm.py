"""Outer derivative-free proximal-gradient loop.

Starting from y_0 in dom(r1), iteration k = 1..N draws a mini-batch
two-point gradient estimate V_k at y_{k-1} with smoothing eta_k and batch
m_k, then steps

    y_k = P_{alpha_k}(y_{k-1}, V_k) = prox_{alpha_k r1}(y_{k-1} - alpha_k B^-1 V_k).

Schedules follow the 1/sqrt(k) laws: alpha_k = alpha0/sqrt(k),
m_k = ceil(m0 sqrt(k)) and, in inexact mode, beta_k = beta0/sqrt(k).
The reported iterate is y_kappa with kappa drawn from a step-size-weighted
law; when the step sizes violate the law's positivity requirement the last
iterate is reported instead.
"""

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .metric import RieszMap, norm
from .prox import Regularizer, grad_mapping
from .rng import substream
from .smoothing import SmoothingParams, grad_estimate, grad_estimate_inexact, smoothed_value


class DegeneratePMF(ValueError):
    """All index weights vanish, or some weight is negative."""


class StepPolicyViolation(ValueError):
    """Step sizes do not satisfy the convex-case policy conditions."""


class NonFiniteIterate(RuntimeError):
    """An iterate left the finite range; carries the partial record."""

    def __init__(self, msg, record):
        super().__init__(msg)
        self.record = record


@dataclass(frozen=True)
class Schedules:
    """Step, batch, accuracy and smoothing schedules over k = 1..N."""

    alpha0: float
    N: int
    m0: int = 1
    beta0: float = 0.01
    eta_mode: str = "fixed"  # "fixed" | "inv_sqrt"
    eta0: float = 0.01

    def __post_init__(self):
        if self.alpha0 <= 0 or self.m0 < 1 or self.N < 1 or self.eta0 <= 0:
            raise ValueError("invalid schedule parameters")
        if self.beta0 <= 0:
            raise ValueError("beta0 must be positive (ignored in exact mode)")
        if self.eta_mode not in ("fixed", "inv_sqrt"):
            raise ValueError(f"unknown eta_mode {self.eta_mode!r}")

    def alpha(self, k: int) -> float:
        return self.alpha0 / math.sqrt(k)

    def m(self, k: int) -> int:
        return int(math.ceil(self.m0 * math.sqrt(k)))

    def beta(self, k: int) -> float:
        return self.beta0 / math.sqrt(k)

    def eta(self, k: int) -> float:
        if self.eta_mode == "fixed":
            return self.eta0
        # decreasing smoothing; not covered by the fixed-eta analysis, kept
        # as a schedule option for the experimental-design setup
        return self.eta0 / math.sqrt(k)


@dataclass
class OuterConfig:
    """Inputs of the outer loop besides the schedules."""

    mode: str  # "exact" | "inexact"
    lip1: float
    seed: int
    r1: Regularizer
    B: RieszMap
    kappa_delta: float = 2.0  # bias split used by the inexact index law

    def __post_init__(self):
        if self.mode not in ("exact", "inexact"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if not (self.lip1 > 0):
            raise ValueError("lip1 must be positive")


@dataclass
class RunRecord:
    """Per-iteration trace of one outer run."""

    iterates: np.ndarray          # (N+1, n), iterates[0] = y0
    alphas: np.ndarray            # (N,)
    ms: np.ndarray                # (N,) int
    betas: Optional[np.ndarray]   # (N,) or None in exact mode
    etas: np.ndarray              # (N,)
    map_norms: np.ndarray         # (N,)  ||G_k|| in the B-norm
    delta_norms: np.ndarray       # (N,)  ||sum_{s<=k} alpha_s G_s||
    kappa: int
    y_out: np.ndarray
    kappa_rule: str               # "pmf" | "last"
    oracle_pair_evals: int        # sum_k m_k
    oracle_calls: int             # 2 * sum_k m_k
    v_hats: Optional[np.ndarray] = None
    objective_trace: Optional[list] = field(default=None, repr=False)

    @property
    def n_steps(self) -> int:
        return self.alphas.size

    def to_csv(self, path):
        n = self.iterates.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "alpha", "m", "beta", "eta", "map_norm", "delta_norm"]
                       + [f"y{i+1}" for i in range(n)])
            w.writerow([0, 0.0, 0, 0.0, 0.0, 0.0, 0.0]
                       + [repr(float(v)) for v in self.iterates[0]])
            for k in range(1, self.n_steps + 1):
                beta = float(self.betas[k - 1]) if self.betas is not None else 0.0
                w.writerow([k, repr(float(self.alphas[k - 1])), int(self.ms[k - 1]),
                            repr(beta), repr(float(self.etas[k - 1])),
                            repr(float(self.map_norms[k - 1])),
                            repr(float(self.delta_norms[k - 1]))]
                           + [repr(float(v)) for v in self.iterates[k]])

    def summary(self) -> dict:
        return {
            "N": int(self.n_steps),
            "kappa": int(self.kappa),
            "kappa_rule": self.kappa_rule,
            "y_out": [float(v) for v in self.y_out],
            "y_last": [float(v) for v in self.iterates[-1]],
            "oracle_pair_evals": int(self.oracle_pair_evals),
            "oracle_calls": int(self.oracle_calls),
            "final_map_norm": float(self.map_norms[-1]),
            "max_delta_norm": float(self.delta_norms.max()),
        }

    def write_summary(self, path):
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _kappa_weights(alphas, lip1, bias_factor=1.0):
    alphas = np.asarray(alphas, dtype=float)
    w = alphas * bias_factor - 0.5 * lip1 * alphas ** 2
    scale = max(float(np.max(np.abs(w))), 1.0)
    w = np.where(np.abs(w) <= 1e-14 * scale, 0.0, w)
    if np.any(w < 0):
        raise DegeneratePMF("negative index weight: some alpha_k exceeds the admissible range")
    if not np.any(w > 0):
        raise DegeneratePMF("all index weights are zero")
    return w / w.sum()


def sample_kappa(alphas, lip1: float, seed: int) -> int:
    """Draw the output index from p(k) ~ alpha_k - alpha_k^2 lip1 / 2.

    Requires alpha_k <= 2/lip1 for all k with strict inequality for at
    least one k; returns a 1-based index.
    """
    p = _kappa_weights(alphas, lip1)
    rng = substream(seed)
    return int(rng.choice(p.size, p=p)) + 1


def sample_kappa_inexact(alphas, lip1: float, delta_gt1: float, seed: int) -> int:
    """Output index law for biased estimates: p(k) ~ alpha_k (d-1)/d - alpha_k^2 lip1/2.

    As delta -> infinity this recovers the exact-oracle law.
    """
    if not (delta_gt1 > 1):
        raise ValueError("delta must exceed 1")
    p = _kappa_weights(alphas, lip1, bias_factor=(delta_gt1 - 1.0) / delta_gt1)
    rng = substream(seed)
    return int(rng.choice(p.size, p=p)) + 1


def sample_kappa_convex(alphas, lip1: float, seed: int) -> int:
    """Output index law for the convex case: p(k) ~ alpha_k - alpha_k^2 lip1.

    The step policy must be non-increasing with alpha_1 <= 1/lip1 and
    alpha_k + alpha_{k-1} <= 1/lip1; boundary equality is allowed.
    """
    a = np.asarray(alphas, dtype=float)
    tol = 1e-12 / lip1
    if np.any(a <= 0):
        raise StepPolicyViolation("step sizes must be positive")
    if a[0] > 1.0 / lip1 + tol:
        raise StepPolicyViolation("alpha_1 must not exceed 1/lip1")
    if np.any(np.diff(a) > tol):
        raise StepPolicyViolation("step sizes must be non-increasing")
    if a.size > 1 and np.any(a[1:] + a[:-1] > 1.0 / lip1 + tol):
        raise StepPolicyViolation("alpha_k + alpha_{k-1} must not exceed 1/lip1")
    w = a - lip1 * a ** 2
    w = np.maximum(w, 0.0)
    if not np.any(w > 0):
        raise DegeneratePMF("all index weights are zero")
    rng = substream(seed)
    return int(rng.choice(w.size, p=w / w.sum())) + 1


def run(config: OuterConfig, schedules: Schedules, oracle, y0,
        collect_estimates: bool = False, objective_every: int = 0,
        objective_batch: int = 64) -> RunRecord:
    """Run the derivative-free proximal-gradient loop from y0.

    ``oracle(y, sample)`` in exact mode, ``oracle(y, sample, beta)`` in
    inexact mode.  Identical (config, schedules, seed, y0) produce an
    identical record.  Setting ``objective_every`` > 0 additionally records
    Monte-Carlo objective estimates every that many iterations (costly).
    """
    y = np.asarray(y0, dtype=float)
    n = y.size
    if not np.isfinite(config.r1.value(y)):
        raise ValueError("y0 must lie in dom(r1)")
    N = schedules.N

    iterates = np.empty((N + 1, n))
    iterates[0] = y
    alphas = np.empty(N)
    ms = np.empty(N, dtype=int)
    betas = np.empty(N) if config.mode == "inexact" else None
    etas = np.empty(N)
    map_norms = np.empty(N)
    delta_norms = np.empty(N)
    v_hats = np.empty((N, n)) if collect_estimates else None
    objective_trace = [] if objective_every > 0 else None

    delta_vec = np.zeros(n)
    pair_evals = 0
    for k in range(1, N + 1):
        a_k = schedules.alpha(k)
        m_k = schedules.m(k)
        eta_k = schedules.eta(k)
        params = SmoothingParams(eta=eta_k, dim=n)
        if config.mode == "exact":
            est = grad_estimate(oracle, y, params, m_k, config.seed,
                                iteration=k, B=config.B)
        else:
            b_k = schedules.beta(k)
            betas[k - 1] = b_k
            est = grad_estimate_inexact(oracle, y, params, m_k, b_k, config.seed,
                                        iteration=k, B=config.B)
        pair_evals += m_k

        snap = grad_mapping(y, est.value, a_k, config.r1, config.B)
        y = snap.y_plus
        if not np.all(np.isfinite(y)):
            partial = _partial_record(iterates, alphas, ms, betas, etas, map_norms,
                                      delta_norms, k - 1, pair_evals, v_hats)
            raise NonFiniteIterate(f"non-finite iterate at k={k}", partial)

        iterates[k] = y
        alphas[k - 1] = a_k
        ms[k - 1] = m_k
        etas[k - 1] = eta_k
        map_norms[k - 1] = snap.map_norm
        delta_vec += a_k * snap.map_vec
        delta_norms[k - 1] = norm(config.B, delta_vec)
        if v_hats is not None:
            v_hats[k - 1] = est.value
        if objective_trace is not None and k % objective_every == 0:
            params_obj = SmoothingParams(eta=eta_k, dim=n)
            obj_oracle = oracle if config.mode == "exact" else (
                lambda yy, token: oracle(yy, token, schedules.beta(k)))
            h_val = smoothed_value(obj_oracle, y, params_obj, objective_batch,
                                   config.seed, iteration=N + 1 + k, B=config.B)
            objective_trace.append((k, h_val + config.r1.value(y)))

    try:
        if config.mode == "exact":
            kappa = sample_kappa(alphas, config.lip1, config.seed)
        else:
            kappa = sample_kappa_inexact(alphas, config.lip1, config.kappa_delta,
                                         config.seed)
        kappa_rule = "pmf"
    except DegeneratePMF:
        # experiment schedules routinely use alpha_k >> 2/lip1; report the
        # last iterate then, as the experiments do
        kappa, kappa_rule = N, "last"

    return RunRecord(iterates=iterates, alphas=alphas, ms=ms, betas=betas, etas=etas,
                     map_norms=map_norms, delta_norms=delta_norms, kappa=kappa,
                     y_out=iterates[kappa].copy(), kappa_rule=kappa_rule,
                     oracle_pair_evals=pair_evals, oracle_calls=2 * pair_evals,
                     v_hats=v_hats, objective_trace=objective_trace)


def record_from_csv(path, kappa: int = 0, kappa_rule: str = "last") -> RunRecord:
    """Rebuild a RunRecord from its CSV trace (estimates are not stored)."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            rows.append([float(v) for v in row])
    arr = np.asarray(rows)
    N = arr.shape[0] - 1
    betas = arr[1:, 3]
    pair_evals = int(arr[1:, 2].sum())
    kappa = int(kappa) if kappa else N
    return RunRecord(
        iterates=arr[:, 7:], alphas=arr[1:, 1], ms=arr[1:, 2].astype(int),
        betas=betas if np.any(betas > 0) else None, etas=arr[1:, 4],
        map_norms=arr[1:, 5], delta_norms=arr[1:, 6], kappa=kappa,
        y_out=arr[kappa, 7:].copy(), kappa_rule=kappa_rule,
        oracle_pair_evals=pair_evals, oracle_calls=2 * pair_evals)


def _partial_record(iterates, alphas, ms, betas, etas, map_norms, delta_norms,
                    done, pair_evals, v_hats):
    return RunRecord(
        iterates=iterates[:done + 1], alphas=alphas[:done], ms=ms[:done],
        betas=None if betas is None else betas[:done], etas=etas[:done],
        map_norms=map_norms[:done], delta_norms=delta_norms[:done],
        kappa=done, y_out=iterates[done].copy(), kappa_rule="last",
        oracle_pair_evals=pair_evals, oracle_calls=2 * pair_evals,
        v_hats=None if v_hats is None else v_hats[:done])
