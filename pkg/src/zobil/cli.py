"""Command-line front end.

Verbs:
  run       train + validate + persist artifacts (+ figures)
  validate  recompute validation errors for a persisted run
  plot      regenerate figures from persisted artifacts
  selftest  quick built-in property checks of every module

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
The default output directory is $ZOBIL_OUT or ./zobil_out.
"""

import argparse
import json
import os
import sys

import numpy as np

from . import experiments
from .experiments import ConfigError, ExperimentConfig

OUT_ENV = "ZOBIL_OUT"


def _build_parser():
    p = argparse.ArgumentParser(prog="zobil")
    p.add_argument("verb", choices=["run", "validate", "plot", "selftest"])
    p.add_argument("--config", help="TOML config file")
    p.add_argument("--seed", type=int, help="override the algorithm seed")
    p.add_argument("--out", help="output directory")
    p.add_argument("--threads", type=int, default=1,
                   help="worker processes for multi-run orchestration")
    p.add_argument("--experiment", choices=list(experiments.EXPERIMENTS),
                   help="experiment preset when no config file is given")
    p.add_argument("--no-plots", action="store_true")
    return p


def _resolve_config(args) -> ExperimentConfig:
    if args.config:
        cfg = experiments.config_from_toml(args.config)
    else:
        cfg = ExperimentConfig()
        if args.experiment:
            cfg.experiment = args.experiment
            if args.experiment == "oed":
                cfg.alpha0, cfg.beta0, cfg.eta_mode, cfg.eta0 = 0.2, 0.1, "inv_sqrt", 1.0
                cfg.n_steps, cfg.m_val = 500, 10
            elif args.experiment == "toy_convex":
                cfg.alpha0, cfg.n_steps, cfg.eta0 = 0.1, 500, 0.1
                cfg.mode = "exact"
        cfg.validate()
    if args.seed is not None:
        cfg.algo_seed = args.seed
    cfg.out_dir = args.out or cfg.out_dir or os.environ.get(OUT_ENV, "") or "zobil_out"
    return cfg


def _cmd_run(args) -> int:
    cfg = _resolve_config(args)
    bundle = experiments.run_experiment(cfg)
    if not args.no_plots:
        from .plots import emit_plots
        emit_plots(bundle)
    summary = {name: float(np.median(errs)) for name, errs in bundle.validation.items()}
    print(json.dumps({"out_dir": cfg.out_dir, "y_learned": list(map(float, bundle.y_learned)),
                      "validation_medians": summary}, indent=2, sort_keys=True))
    return 0


def _cmd_validate(args) -> int:
    out = args.out or os.environ.get(OUT_ENV, "zobil_out")
    bundle = experiments.load_bundle(out)
    cfg = bundle.config
    cfg.out_dir = out
    fresh = experiments.run_experiment(cfg)  # deterministic re-run
    print(json.dumps({name: float(np.median(errs))
                      for name, errs in fresh.validation.items()}, indent=2, sort_keys=True))
    return 0


def _cmd_plot(args) -> int:
    out = args.out or os.environ.get(OUT_ENV, "zobil_out")
    from .plots import emit_plots
    bundle = experiments.load_bundle(out)
    for path in emit_plots(bundle, out):
        print(path)
    return 0


def _selftest() -> int:
    """Fast invariant checks across the modules; prints one line each."""
    from . import denoise, metric, oed, prox, smoothing, stationarity
    from .rng import NoiseSample, substream

    failures = 0

    def check(name, ok):
        nonlocal failures
        print(f"[{'PASS' if ok else 'FAIL'}] {name}")
        failures += 0 if ok else 1

    rng = np.random.default_rng(0)
    B = metric.RieszMap(rng.uniform(0.5, 2.0, 6))
    res = [abs(metric.pythagoras_residual(B, rng.normal(size=6), rng.normal(size=6),
                                          rng.normal(size=6))) for _ in range(200)]
    check("metric: Pythagorean identity", max(res) < 1e-10)
    y = rng.normal(size=6)
    check("metric: dual_norm(By) = norm(y)",
          abs(metric.dual_norm(B, B.apply(y)) - metric.norm(B, y)) < 1e-12)

    box = prox.Box(np.full(4, -1.0), np.full(4, 1.0))
    B4 = metric.RieszMap.identity(4)
    gaps = []
    for _ in range(200):
        w1, w2 = rng.normal(size=4) * 3, rng.normal(size=4) * 3
        p1, p2 = prox.prox(box, 0.7, w1, B4), prox.prox(box, 0.7, w2, B4)
        gaps.append(metric.norm(B4, p1 - p2) - metric.norm(B4, w1 - w2))
    check("prox: non-expansive", max(gaps) < 1e-12)

    a = np.array([2.0, -1.0, 0.5])
    oracle = lambda yy, token: float(np.dot(a, yy))
    params = smoothing.SmoothingParams(eta=0.1, dim=3)
    est = smoothing.grad_estimate(oracle, np.zeros(3), params, 4000, seed=11)
    check("smoothing: linear oracle unbiased",
          np.all(np.abs(est.value - a) < 0.25))

    w = -3.7
    x = w * np.exp(w)
    check("stationarity: Lambert W round trip",
          abs(stationarity.lambert_w_neg1(x) - w) < 1e-10)

    g1 = denoise.tv_nu_grad(rng.normal(size=12), 1e-2)
    xr = rng.normal(size=12)
    fd = np.empty(12)
    for i in range(12):
        e = np.zeros(12)
        e[i] = 1e-6
        fd[i] = (denoise.tv_nu(xr + e, 1e-2) - denoise.tv_nu(xr - e, 1e-2)) / 2e-6
    check("denoise: TV gradient matches finite differences",
          np.max(np.abs(denoise.tv_nu_grad(xr, 1e-2) - fd)) < 1e-5 and g1.shape == (12,))

    blk = oed.radon_block(16, 0.7)
    img = oed.generate_triangle(16, 3)
    check("oed: projection preserves mass",
          abs(blk @ img.ravel() @ np.ones(16) - img.sum()) < 0.01 * max(img.sum(), 1.0))
    tok = NoiseSample(5, (1,))
    J1 = oed.sample_without_replacement(np.full(8, 1 / 8), 3, tok.rng())
    J2 = oed.sample_without_replacement(np.full(8, 1 / 8), 3, tok.rng())
    check("oed: selection deterministic per token", np.array_equal(J1, J2))

    g = substream(123, 4, 5).standard_normal(3)
    h = substream(123, 4, 5).standard_normal(3)
    check("rng: substreams reproducible", np.array_equal(g, h))

    print(f"{'OK' if failures == 0 else 'FAILED'}: {failures} failure(s)")
    return 0 if failures == 0 else 3


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.verb == "run":
            return _cmd_run(args)
        if args.verb == "validate":
            return _cmd_validate(args)
        if args.verb == "plot":
            return _cmd_plot(args)
        return _selftest()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (FloatingPointError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except RuntimeError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
