"""Persist result tables as CSV + manifest and render summary figures."""

import json
import os
import time

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from . import __version__
from .config import config_dict


def write_csv(table, path):
    with open(path, "w") as f:
        f.write(table.csv_text())


def write_manifest(cfg, path, experiment, extra=None):
    manifest = {
        "experiment": experiment,
        "config": config_dict(cfg),
        "seed": cfg.seed,
        "generator": "numpy.random.default_rng (PCG64), spawned per task",
        "version": __version__,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    if extra:
        manifest.update(extra)
    with open(path, "w") as f:
        json.dump(manifest, f, indent=1)


def _style(ax, xlabel, ylabel):
    ax.grid(True, which="both", alpha=0.3)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.spines["right"].set_visible(False)
    ax.spines["top"].set_visible(False)


def render_figures(table, outdir, experiment):
    """One log-log summary per experiment: quantity vs mesh size.

    Convergence figures get an h^2 guide line. Returns the written paths.
    """
    series = {}
    for q in table.quantities():
        vals = table.values(q)
        pts = sorted((h, v) for h, v in vals.items() if v > 0)
        if len(pts) >= 2:
            series[q] = pts
    if not series:
        return []

    written = []
    fig, ax = plt.subplots(figsize=(6.0, 4.2))
    for q, pts in sorted(series.items()):
        hs = [p[0] for p in pts]
        vs = [p[1] for p in pts]
        ax.loglog(hs, vs, "o-", label=q, lw=1.4, ms=4)
    if experiment == "convergence" and "maxnorm_error" in series:
        hs = [p[0] for p in series["maxnorm_error"]]
        ref = series["maxnorm_error"][-1][1]
        scale = ref / hs[-1] ** 2
        ax.loglog(hs, [scale * h ** 2 for h in hs], "k--", lw=1,
                  label="h^2 guide")
    _style(ax, "mesh size h", "value")
    ax.legend(fontsize=7, loc="best")
    ax.set_title(experiment)
    path = os.path.join(outdir, f"{experiment}.png")
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    written.append(path)
    return written


def write_report(table, cfg, outdir, experiment, figures=True, extra=None):
    """CSV + manifest (+ figures) for one experiment run."""
    os.makedirs(outdir, exist_ok=True)
    csv_path = os.path.join(outdir, f"{experiment}.csv")
    write_csv(table, csv_path)
    write_manifest(cfg, os.path.join(outdir, f"{experiment}_manifest.json"),
                   experiment, extra)
    paths = [csv_path]
    if figures:
        paths += render_figures(table, outdir, experiment)
    return paths
