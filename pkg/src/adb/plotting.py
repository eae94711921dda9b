"""Figures (SVG or PNG by file suffix) with their data written as CSV beside them."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .errors import InputError  # noqa: E402
from .grouping import GROUPS  # noqa: E402

GROUP_COLORS = {"Low": "#1b9e77", "Medium": "#7570b3", "High": "#d95f02", "CV": "#666666"}
# Fixed metadata keeps SVG output byte-stable across runs.
_SVG_META = {"Date": None, "Creator": None}


def _save(fig, path):
    path = Path(path)
    if path.suffix not in (".svg", ".png"):
        raise InputError(f"figure path must end in .svg or .png, got {path.name}")
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix == ".svg":
        with matplotlib.rc_context({"svg.hashsalt": "adb", "svg.fonttype": "none"}):
            fig.savefig(path, metadata=_SVG_META)
    else:
        fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)
    return path


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def trajectory_plot(values, path, labels=None, title="Deviation trajectories"):
    """One line per permutation over steps 1..T, coloured by group when given.

    Also writes ``<stem>.csv`` with columns ``permutation, step, value, group``.
    """
    V = np.asarray(values, dtype=np.float64)
    if V.ndim != 2 or V.size == 0:
        raise InputError(f"expected an (M, T) matrix, got shape {V.shape}")
    if labels is not None and len(labels) != V.shape[0]:
        raise InputError("one label per trajectory is required")
    steps = np.arange(1, V.shape[1] + 1)
    fig, ax = plt.subplots(figsize=(6, 4))
    seen = set()
    for m, row in enumerate(V):
        g = labels[m] if labels is not None else None
        ax.plot(steps, row, lw=0.8, alpha=0.7, color=GROUP_COLORS.get(g, "#1f77b4"),
                label=g if g is not None and g not in seen else None)
        seen.add(g)
    ax.set_xlabel("step")
    ax.set_ylabel("debiased distance")
    ax.set_title(title)
    if labels is not None:
        ax.legend(frameon=False)
    path = _save(fig, path)
    rows = [(m, t, repr(float(V[m, t - 1])), labels[m] if labels is not None else "")
            for m in range(V.shape[0]) for t in steps]
    _write_rows(path.with_suffix(".csv"), ["permutation", "step", "value", "group"], rows)
    return path


def scatter_plot(id_mae, ood_mae, groups, path, title="ID vs OOD MAE"):
    """ID MAE against OOD MAE per model; writes ``<stem>.csv`` (id_mae, ood_mae, group)."""
    x = np.asarray(id_mae, dtype=np.float64)
    y = np.asarray(ood_mae, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or len(groups) != x.size:
        raise InputError("id_mae, ood_mae and groups must have equal lengths")
    fig, ax = plt.subplots(figsize=(5, 4))
    for g in (*GROUPS, "CV"):
        mask = np.array([gg == g for gg in groups])
        if mask.any():
            ax.scatter(x[mask], y[mask], s=14, color=GROUP_COLORS[g], label=g)
    ax.set_xlabel("ID MAE")
    ax.set_ylabel("OOD MAE")
    ax.set_title(title)
    ax.legend(frameon=False)
    path = _save(fig, path)
    _write_rows(path.with_suffix(".csv"), ["id_mae", "ood_mae", "group"],
                [(repr(float(a)), repr(float(b)), g) for a, b, g in zip(x, y, groups)])
    return path


def theory_plot(rows, path, title="Correlation of ID and OOD error components"):
    """``rho_TU`` against ``k`` for each ``delta`` from theory sweep rows."""
    rows = list(rows)
    if not rows:
        raise InputError("no sweep rows to plot")
    fig, ax = plt.subplots(figsize=(5, 4))
    for delta in sorted({r[1] for r in rows}):
        pts = sorted((r[0], r[2]) for r in rows if r[1] == delta)
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", ms=3, label=f"delta={delta:g}")
    ax.axhline(0.0, color="#999999", lw=0.6)
    ax.set_xlabel("k")
    ax.set_ylabel("rho")
    ax.set_title(title)
    ax.legend(frameon=False)
    path = _save(fig, path)
    _write_rows(path.with_suffix(".csv"), ["k", "delta", "rho", "rho_mc", "negative_regime"],
                [(repr(r[0]), repr(r[1]), repr(r[2]), repr(r[3]), str(r[4]).lower()) for r in rows])
    return path
