"""SVG line plots. Output is byte-stable: no dates, fixed hash salt."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

plt.rcParams["svg.hashsalt"] = "tvstergm"
plt.rcParams["svg.fonttype"] = "none"


def _save(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)
    return str(path)


def plot_curves(frame, path, title=""):
    """One panel per term: estimate with a two-standard-error band."""
    terms = list(dict.fromkeys(frame["term"]))
    n = max(len(terms), 1)
    cols = min(n, 3)
    rows = int(np.ceil(n / cols))
    fig, axes = plt.subplots(rows, cols, figsize=(4 * cols, 2.8 * rows), squeeze=False)
    for ax, term in zip(axes.ravel(), terms):
        f = frame[frame["term"] == term]
        x, v, se = f["period"].to_numpy(), f["value"].to_numpy(), f["se"].to_numpy()
        ax.fill_between(x, v - 2 * se, v + 2 * se, color="0.8", linewidth=0)
        ax.plot(x, v, color="k", linewidth=1.2)
        ax.axhline(0.0, color="0.4", linewidth=0.6, linestyle=":")
        ax.set_title(term, fontsize=9)
    for ax in axes.ravel()[len(terms):]:
        ax.set_visible(False)
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    return _save(fig, path)


def plot_perturbation(result, path, components=(1, 2), multiple=2.0):
    from .fpca import perturbation_curves

    comps = [c for c in components if c <= result.eigenfunctions.shape[0]]
    fig, axes = plt.subplots(1, len(comps), figsize=(4 * len(comps), 3), squeeze=False)
    for ax, c in zip(axes.ravel(), comps):
        plus, minus = perturbation_curves(result, c, multiple)
        ax.plot(result.grid, result.mean, color="k", linewidth=1.2)
        ax.plot(result.grid, plus, color="k", linestyle="none", marker="+", markersize=4, markevery=5)
        ax.plot(result.grid, minus, color="k", linestyle="none", marker="_", markersize=4, markevery=5)
        ax.set_title(f"PC {c} ({100 * result.variance_shares[c - 1]:.1f}%)", fontsize=9)
    fig.tight_layout()
    return _save(fig, path)


def plot_series(frame, path, x, y, group, title=""):
    fig, ax = plt.subplots(figsize=(6, 3))
    for name in dict.fromkeys(frame[group]):
        f = frame[frame[group] == name]
        ax.plot(f[x], f[y], label=str(name), linewidth=1)
    ax.set_xlabel(x)
    ax.set_ylabel(y)
    ax.legend(fontsize=7)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    return _save(fig, path)


def plot_gof(frame, path):
    stats = list(dict.fromkeys(frame["statistic"]))
    fig, axes = plt.subplots(2, 3, figsize=(12, 6), squeeze=False)
    for ax, name in zip(axes.ravel(), stats):
        f = frame[frame["statistic"] == name]
        x = f["period"].to_numpy()
        ax.fill_between(x, f["min"], f["max"], color="0.9", linewidth=0)
        ax.fill_between(x, f["q25"], f["q75"], color="0.7", linewidth=0)
        ax.plot(x, f["median"], color="0.3", linewidth=0.8)
        ax.plot(x, f["observed"], color="red", linewidth=1.2)
        ax.set_title(name, fontsize=9)
    fig.tight_layout()
    return _save(fig, path)
