"""Deterministic SVG figures for experiment bundles.

All figures are static SVG files with fixed hash salts and no timestamps,
so regenerating a bundle reproduces byte-identical output.  Each file
carries an embedded comment with the plotted data, making figures
regenerable without the original arrays.
"""

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .experiments import ResultBundle


class MissingPlotInput(ValueError):
    """The bundle lacks the data required for a figure."""


def _save_svg(fig, path, data_comment: str):
    with matplotlib.rc_context({"svg.hashsalt": "zobil"}):
        fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    with open(path) as fh:
        text = fh.read()
    head, sep, tail = text.partition("\n")
    safe = data_comment.replace("--", "- -")
    with open(path, "w") as fh:
        fh.write(head + sep + f"<!-- data: {safe} -->\n" + tail)


def _params_figure(record, path):
    ys = record.iterates
    if ys.shape[0] < 2:
        raise MissingPlotInput("empty run record")
    fig, ax = plt.subplots(figsize=(6, 4))
    n_show = min(ys.shape[1], 6)
    for j in range(n_show):
        ax.plot(np.arange(ys.shape[0]), ys[:, j], label=f"y{j+1}")
    ax.set_xlabel("iteration k")
    ax.set_ylabel("parameter value")
    ax.legend(loc="best", fontsize=8)
    ax.set_title("parameter trace")
    _save_svg(fig, path, ",".join(repr(v) for v in ys[:, :n_show].ravel()[:2000]))


def _delta_figure(record, path):
    if record.delta_norms.size == 0:
        raise MissingPlotInput("empty run record")
    fig, ax = plt.subplots(figsize=(6, 4))
    ks = np.arange(1, record.delta_norms.size + 1)
    ax.plot(ks, record.delta_norms, label="||Delta_k||")
    ax.plot(ks, record.map_norms, label="||G_k||", alpha=0.6)
    ax.set_xlabel("iteration k")
    ax.set_yscale("log")
    ax.legend(loc="best", fontsize=8)
    ax.set_title("step-weighted mapping sum and mapping norms")
    _save_svg(fig, path, ",".join(repr(v) for v in record.delta_norms))


def _validation_figure(validation, path):
    if not validation:
        raise MissingPlotInput("no validation data")
    fig, ax = plt.subplots(figsize=(7, 4))
    names = list(validation.keys())
    for i, name in enumerate(names):
        errs = np.asarray(validation[name])
        jitter = (np.arange(errs.size) % 7 - 3) * 0.02
        ax.plot(np.full(errs.size, i) + jitter, errs, ".", ms=4)
        ax.plot([i - 0.25, i + 0.25], [np.median(errs)] * 2, "k-", lw=2)
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels([n[:24] for n in names], rotation=20, fontsize=7)
    ax.set_ylabel("normalized validation error")
    ax.set_title("validation errors (bar = median)")
    data = ";".join(name + ":" + ",".join(f"{e:.6g}" for e in validation[name])
                    for name in names)
    _save_svg(fig, path, data)


def _reconstruction_figure(example, path):
    fig, ax = plt.subplots(figsize=(7, 4))
    t = np.arange(1, len(example["x_true"]) + 1)
    ax.plot(t, example["d"], color="0.7", lw=0.8, label="data")
    ax.plot(t, example["x_true"], "k-", lw=1.4, label="truth")
    ax.plot(t, example["recon"], "C1-", lw=1.2, label="reconstruction")
    ax.legend(loc="best", fontsize=8)
    ax.set_title("reconstruction with learned parameters")
    _save_svg(fig, path, ",".join(f"{v:.6g}" for v in example["recon"]))


def _policy_figure(policy, path):
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(np.arange(len(policy)), policy)
    ax.set_xlabel("angle index")
    ax.set_ylabel("selection probability")
    ax.set_title("learned angle policy")
    _save_svg(fig, path, ",".join(f"{p:.6g}" for p in policy))


def emit_plots(bundle: ResultBundle, out_dir=None) -> list:
    """Write the experiment's figures; returns the SVG paths."""
    out = out_dir or bundle.config.out_dir
    if not out:
        raise MissingPlotInput("no output directory")
    os.makedirs(out, exist_ok=True)
    name = bundle.config.experiment
    paths = []

    p = os.path.join(out, f"{name}_params.svg")
    _params_figure(bundle.record, p)
    paths.append(p)

    p = os.path.join(out, f"{name}_delta.svg")
    _delta_figure(bundle.record, p)
    paths.append(p)

    if bundle.validation:
        p = os.path.join(out, f"{name}_validation.svg")
        _validation_figure(bundle.validation, p)
        paths.append(p)

    if "reconstruction_example" in bundle.extras:
        p = os.path.join(out, f"{name}_reconstruction.svg")
        _reconstruction_figure(bundle.extras["reconstruction_example"], p)
        paths.append(p)

    if "policy" in bundle.extras:
        p = os.path.join(out, f"{name}_policy.svg")
        _policy_figure(bundle.extras["policy"], p)
        paths.append(p)
    return paths
