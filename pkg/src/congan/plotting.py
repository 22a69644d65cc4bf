"""Figures rendered to files (Agg backend, fixed metadata for byte-stable PNGs)."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

PNG_META = {"Software": None}
LABELS = {"c": "(c) real observed", "d": "(d) synthetic observed", "e": "(e) real CF",
          "f": "(f) synthetic CF", "g": "(g) control variable", "h": "(h) partial means"}


def _save(fig, path):
    fig.savefig(path, dpi=100, metadata=PNG_META)
    plt.close(fig)


def _arr(v):
    return np.array([np.nan if t is None else t for t in v], dtype=float)


def plot_table(table, path):
    """Column means against the quantile level, with +/- one SE bands."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    lv = np.asarray(table.levels, dtype=float)
    for c, label in LABELS.items():
        m, s = _arr(table.mean[c]), _arr(table.se[c])
        if np.all(np.isnan(m)):
            continue
        ax.plot(lv, m, marker="o", ms=3, label=label)
        ax.fill_between(lv, m - s, m + s, alpha=0.15)
    ax.set_xlabel("quantile of X")
    ax.set_ylabel("E[Y | X = x]")
    ax.set_title(f"{table.preset}: {table.n_ok} replicates")
    ax.legend(fontsize=7)
    _save(fig, path)


def plot_traces(losses, path, window=50):
    """Raw and block-averaged K_n traces, one line per replicate."""
    fig, ax = plt.subplots(figsize=(7, 4))
    for k, loss in enumerate(losses):
        loss = np.asarray(loss, dtype=float)
        if loss.size == 0:
            continue
        line, = ax.plot(loss, lw=0.5, alpha=0.4)
        nb = loss.size // window
        if nb:
            blocks = loss[:nb * window].reshape(nb, window).mean(axis=1)
            ax.plot((np.arange(nb) + 0.5) * window, blocks, color=line.get_color(), lw=1.5)
    ax.axhline(2 * np.log(0.5), color="k", ls="--", lw=0.8, label="2 log(1/2)")
    ax.set_xlabel("iteration")
    ax.set_ylabel("K_n")
    ax.legend(fontsize=7)
    _save(fig, path)


def plot_fredholm(report, path):
    """Absolute residual over the (x, y, z) nodes."""
    fig, ax = plt.subplots(figsize=(6, 3.5))
    res = np.array([abs(r[5]) for r in report.rows])
    ax.semilogy(np.maximum(res, 1e-18), marker="o", ls="")
    ax.set_xlabel("node")
    ax.set_ylabel("|residual|")
    ax.set_title(f"{report.n_omega} omega nodes")
    _save(fig, path)
