"""Experiment orchestration: configuration, training runs, validation.

Three experiments are wired up:

* ``denoise``    - learn (lam, tau, nu) for 1-D signal denoising,
* ``oed``        - learn regularization and an angle-selection policy for
                   small-scale tomography,
* ``toy_convex`` - noise-free h(y) = ||y - y*|| inside a box, used for
                   convergence diagnostics.

A run trains with the derivative-free loop, evaluates validation errors of
the learned parameters and of every configured baseline on a held-out set,
and persists all artifacts (run trace CSV, validation CSV, summary JSON).
"""

import csv
import json
import os
import sys
from dataclasses import asdict, dataclass, field

import numpy as np

from . import denoise as dn
from . import oed as od
from .algorithm import OuterConfig, RunRecord, Schedules, run
from .metric import RieszMap
from .prox import Box
from .smoothing import lip1_of_smoothed, probe_lip0

if sys.version_info >= (3, 11):
    import tomllib as _toml
else:
    import tomli as _toml

EXPERIMENTS = ("denoise", "oed", "toy_convex")


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


@dataclass
class ExperimentConfig:
    experiment: str = "denoise"
    # schedules
    alpha0: float = 1.0
    m0: int = 1
    beta0: float = 0.01
    eta_mode: str = "fixed"
    eta0: float = 0.01
    n_steps: int = 700
    # instance
    n_x: int = 256
    img_side: int = 16
    n_angles: int = 16
    k_pick: int = 3
    toy_dim: int = 5
    # datasets
    n_train: int = 16
    m_val: int = 50
    validation_beta: float = 1e-7
    # seeds
    data_seed: int = 2024
    algo_seed: int = 1
    val_seed: int = 7777
    # initial point and metric
    y0: list = field(default_factory=list)  # empty -> experiment default
    reg_metric_weight: float = 16.0  # oed: B-weight of the reg coordinates
    freeze_policy: bool = False      # oed: keep the uniform policy fixed
    # baselines: rows of log10 (lam, tau, nu)
    baselines: list = field(default_factory=lambda: [
        [-3.0, -3.0, -3.0], [-1.0, -3.0, -3.0], [-3.0, 0.0, -3.0], [-1.0, 0.0, -3.0]])
    # misc
    mode: str = "inexact"
    lip1: float = 0.0  # 0 -> probe lip0 and derive
    out_dir: str = ""

    def validate(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}")
        if min(self.n_steps, self.m0, self.n_train, self.m_val) < 1:
            raise ConfigError("sizes must be >= 1")
        if self.alpha0 <= 0 or self.beta0 <= 0 or self.eta0 <= 0:
            raise ConfigError("alpha0, beta0, eta0 must be positive")
        if self.eta_mode not in ("fixed", "inv_sqrt"):
            raise ConfigError(f"unknown eta_mode {self.eta_mode!r}")
        if self.mode not in ("exact", "inexact"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        for row in self.baselines:
            if len(row) != 3:
                raise ConfigError("baseline rows must be log10 (lam, tau, nu) triples")
        return self


def config_from_toml(path) -> ExperimentConfig:
    with open(path, "rb") as fh:
        raw = _toml.load(fh)
    cfg = ExperimentConfig()
    for key, val in raw.items():
        if not hasattr(cfg, key):
            raise ConfigError(f"unknown config key {key!r}")
        setattr(cfg, key, val)
    return cfg.validate()


def config_to_toml(cfg: ExperimentConfig, path):
    def fmt(v):
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, str):
            return json.dumps(v)
        if isinstance(v, (list, tuple)):
            return "[" + ", ".join(fmt(x) for x in v) + "]"
        return repr(v)

    with open(path, "w") as fh:
        for key, val in asdict(cfg).items():
            fh.write(f"{key} = {fmt(val)}\n")


@dataclass
class ResultBundle:
    config: ExperimentConfig
    record: RunRecord
    y_learned: np.ndarray
    validation: dict            # method name -> list of normalized errors
    counters: dict              # oracle calls, inner iterations, ...
    paths: dict                 # artifact name -> file path
    extras: dict = field(default_factory=dict)


def _toy_box(dim):
    return Box(np.full(dim, dn.BOX_LO), np.full(dim, dn.BOX_HI))


def _oed_box(n_angles, freeze_policy):
    lo = np.concatenate([np.full(od.N_REG, dn.BOX_LO),
                         np.zeros(n_angles) if freeze_policy else np.full(n_angles, -np.inf)])
    hi = np.concatenate([np.full(od.N_REG, dn.BOX_HI),
                         np.zeros(n_angles) if freeze_policy else np.full(n_angles, np.inf)])
    return Box(lo, hi)


def _default_y0(cfg: ExperimentConfig, dim: int) -> np.ndarray:
    if cfg.y0:
        y0 = np.asarray(cfg.y0, dtype=float)
        if y0.size != dim:
            raise ConfigError(f"y0 must have length {dim}")
        return y0
    if cfg.experiment == "denoise":
        return np.zeros(3)
    if cfg.experiment == "oed":
        # mild Tikhonov keeps the inner solves fast; uniform policy
        return np.concatenate([[-0.5, -1.0, -1.5], np.zeros(cfg.n_angles)])
    return np.full(cfg.toy_dim, 3.0)


def _toy_oracle(dim, data_seed):
    y_star = np.zeros(dim)

    def oracle(y, sample):
        return float(np.linalg.norm(np.asarray(y) - y_star))

    return oracle, y_star


def run_experiment(cfg: ExperimentConfig, quiet: bool = True) -> ResultBundle:
    cfg.validate()
    counters = {}
    extras = {}

    if cfg.experiment == "denoise":
        inst = dn.DenoiseInstance(cfg.n_x)
        pairs = dn.generate_dataset(cfg.n_x, cfg.n_train, cfg.data_seed)
        oracle = dn.DenoiseOracle(inst, pairs)
        dim = 3
        B = RieszMap.identity(dim)
        r1 = _toy_box(dim)
        mode = cfg.mode
    elif cfg.experiment == "oed":
        inst = od.OEDInstance(cfg.img_side, cfg.n_angles, cfg.k_pick)
        oracle = od.OEDOracle(inst)
        dim = inst.dim
        diag = np.concatenate([np.full(od.N_REG, cfg.reg_metric_weight),
                               np.ones(cfg.n_angles)])
        B = RieszMap(diag)
        r1 = _oed_box(cfg.n_angles, cfg.freeze_policy)
        mode = cfg.mode
    else:
        oracle, _ = _toy_oracle(cfg.toy_dim, cfg.data_seed)
        dim = cfg.toy_dim
        B = RieszMap.identity(dim)
        r1 = _toy_box(dim)
        mode = "exact"

    y0 = _default_y0(cfg, dim)
    lip1 = cfg.lip1
    if lip1 <= 0:
        lip1 = _derive_lip1(cfg, oracle, dim, B, mode)
    extras["lip1"] = lip1

    schedules = Schedules(alpha0=cfg.alpha0, N=cfg.n_steps, m0=cfg.m0,
                          beta0=cfg.beta0, eta_mode=cfg.eta_mode, eta0=cfg.eta0)
    outer = OuterConfig(mode=mode, lip1=lip1, seed=cfg.algo_seed, r1=r1, B=B)
    record = run(outer, schedules, oracle, y0)
    y_learned = record.y_out

    counters["oracle_pair_evals"] = record.oracle_pair_evals
    counters["oracle_calls"] = record.oracle_calls
    if hasattr(oracle, "calls"):
        counters["oracle_calls_observed"] = oracle.calls
        counters["lower_iterations"] = oracle.lower_iters

    validation = {}
    if cfg.experiment == "denoise":
        val_pairs = dn.generate_dataset(cfg.n_x, cfg.m_val, cfg.val_seed)
        validation["learned"] = inst.validation_errors(y_learned, val_pairs,
                                                       beta=cfg.validation_beta)
        for row in cfg.baselines:
            name = "baseline_lam{:g}_tau{:g}_nu{:g}".format(*[10.0 ** v for v in row])
            validation[name] = inst.validation_errors(np.asarray(row, dtype=float),
                                                      val_pairs, beta=cfg.validation_beta)
        extras["reconstruction_example"] = _denoise_example(inst, y_learned, cfg)
    elif cfg.experiment == "oed":
        validation["learned"] = inst.validation_errors(y_learned, cfg.val_seed, cfg.m_val,
                                                       beta=cfg.validation_beta)
        uniform = y_learned.copy()
        uniform[od.N_REG:] = 0.0
        validation["uniform_policy_same_reg"] = inst.validation_errors(
            uniform, cfg.val_seed, cfg.m_val, beta=cfg.validation_beta)
        extras["policy"] = [float(p) for p in od.softmax(y_learned[od.N_REG:])]

    paths = {}
    if cfg.out_dir:
        paths = _persist(cfg, record, y_learned, validation, counters, extras)
    return ResultBundle(config=cfg, record=record, y_learned=y_learned,
                        validation=validation, counters=counters, paths=paths,
                        extras=extras)


def _derive_lip1(cfg, oracle, dim, B, mode):
    """lip1(h_eta) from a probed lip0; cheap, heuristic, used by the index law."""
    lo = np.full(dim, -1.0)
    hi = np.full(dim, 1.0)
    lo[:min(3, dim)] = -2.0
    hi[:min(3, dim)] = 0.0
    if mode == "inexact":
        probe = lambda y, token: oracle(y, token, 0.05)
        n_pairs = 16
    else:
        probe = oracle
        n_pairs = 64
    lip0 = probe_lip0(probe, lo, hi, n_pairs=n_pairs, seed=cfg.data_seed + 1, B=B)
    lip0 = max(lip0, 1e-6)
    return lip1_of_smoothed(lip0, cfg.eta0, dim)


def _denoise_example(inst, y_learned, cfg):
    """(truth, data, reconstruction) triple for the overlay figure."""
    x_true, d = dn.generate_pair(cfg.n_x, cfg.val_seed, sub=(0,))
    sol = inst.solve_lower(y_learned, d, cfg.validation_beta)
    return {"x_true": [float(v) for v in x_true],
            "d": [float(v) for v in d],
            "recon": [float(v) for v in sol.x]}


def _persist(cfg, record, y_learned, validation, counters, extras):
    out = cfg.out_dir
    os.makedirs(out, exist_ok=True)
    paths = {}

    paths["config"] = os.path.join(out, "config.toml")
    config_to_toml(cfg, paths["config"])

    paths["run_csv"] = os.path.join(out, "run.csv")
    record.to_csv(paths["run_csv"])

    paths["validation_csv"] = os.path.join(out, "validation.csv")
    with open(paths["validation_csv"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "median", "errors..."])
        for name, errs in validation.items():
            w.writerow([name, repr(float(np.median(errs)))] + [repr(float(e)) for e in errs])

    summary = record.summary()
    summary["experiment"] = cfg.experiment
    summary["y_learned"] = [float(v) for v in y_learned]
    summary["counters"] = counters
    summary["validation_medians"] = {
        name: float(np.median(errs)) for name, errs in validation.items()}
    for key, val in extras.items():
        if isinstance(val, (int, float, str, list)):
            summary[key] = val
    paths["summary"] = os.path.join(out, "summary.json")
    with open(paths["summary"], "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")

    if "reconstruction_example" in extras:
        paths["reconstruction_csv"] = os.path.join(out, "reconstruction.csv")
        ex = extras["reconstruction_example"]
        with open(paths["reconstruction_csv"], "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x_true", "d", "recon"])
            for a, b, c in zip(ex["x_true"], ex["d"], ex["recon"]):
                w.writerow([repr(float(a)), repr(float(b)), repr(float(c))])
    return paths


def _oed_arm(args):
    cfg_dict, seed, freeze = args
    cfg = ExperimentConfig(**cfg_dict)
    cfg.algo_seed = seed
    cfg.freeze_policy = freeze
    cfg.out_dir = ""
    bundle = run_experiment(cfg)
    return float(np.median(bundle.validation["learned"]))


def run_oed_comparison(cfg: ExperimentConfig, seeds, workers: int = 1) -> dict:
    """Paired runs: learned policy+regularization vs frozen uniform policy.

    Every seed trains both arms on identical sample streams and validates
    them on the same held-out tokens.  Returns per-seed medians and the
    across-seed medians of both arms.
    """
    base = asdict(cfg)
    jobs = []
    for seed in seeds:
        jobs.append((dict(base), seed, False))
        jobs.append((dict(base), seed, True))
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_oed_arm, jobs))
    else:
        results = [_oed_arm(job) for job in jobs]
    full = results[0::2]
    frozen = results[1::2]
    return {
        "seeds": list(seeds),
        "full_medians": full,
        "frozen_medians": frozen,
        "median_full": float(np.median(full)),
        "median_frozen": float(np.median(frozen)),
    }


def _denoise_seed(args):
    cfg_dict, seed = args
    cfg = ExperimentConfig(**cfg_dict)
    cfg.algo_seed = seed
    cfg.out_dir = ""
    bundle = run_experiment(cfg)
    return {name: float(np.median(errs)) for name, errs in bundle.validation.items()}


def run_denoise_seeds(cfg: ExperimentConfig, seeds, workers: int = 1) -> list:
    """Validation medians (learned + baselines) for several algorithm seeds."""
    base = asdict(cfg)
    jobs = [(dict(base), seed) for seed in seeds]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_denoise_seed, jobs))
    return [_denoise_seed(job) for job in jobs]


def load_bundle(out_dir) -> ResultBundle:
    """Rebuild a bundle from a persisted run directory (for plot/validate)."""
    from .algorithm import record_from_csv

    cfg = config_from_toml(os.path.join(out_dir, "config.toml"))
    cfg.out_dir = out_dir
    with open(os.path.join(out_dir, "summary.json")) as fh:
        summary = json.load(fh)
    record = record_from_csv(os.path.join(out_dir, "run.csv"),
                             kappa=summary.get("kappa", 0),
                             kappa_rule=summary.get("kappa_rule", "last"))
    validation = {}
    val_path = os.path.join(out_dir, "validation.csv")
    if os.path.exists(val_path):
        with open(val_path, newline="") as fh:
            reader = csv.reader(fh)
            next(reader)
            for row in reader:
                validation[row[0]] = [float(v) for v in row[2:]]
    extras = {}
    if "policy" in summary:
        extras["policy"] = summary["policy"]
    rec_path = os.path.join(out_dir, "reconstruction.csv")
    if os.path.exists(rec_path):
        cols = {"x_true": [], "d": [], "recon": []}
        with open(rec_path, newline="") as fh:
            reader = csv.reader(fh)
            next(reader)
            for row in reader:
                cols["x_true"].append(float(row[0]))
                cols["d"].append(float(row[1]))
                cols["recon"].append(float(row[2]))
        extras["reconstruction_example"] = cols
    return ResultBundle(config=cfg, record=record,
                        y_learned=np.asarray(summary["y_learned"]),
                        validation=validation, counters=summary.get("counters", {}),
                        paths={}, extras=extras)
