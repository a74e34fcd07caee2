"""Figures rendered next to the CSV reports (ROC curves, skill series, overlays, training history)."""
from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.colors import ListedColormap  # noqa: E402

from . import verify  # noqa: E402

STYLE = {
    "figure.figsize": (5.0, 4.0),
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "savefig.dpi": 120,
}
# fixed metadata keeps PNG bytes identical across reruns
_PNG_META = {"Software": None}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path, metadata=_PNG_META)
    plt.close(fig)
    return path


def _nan(x):
    return np.nan if x is None else x


def plot_roc(curves: Mapping[str, verify.RocCurve], path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for name, c in curves.items():
            ax.plot(c.fpr, c.tpr, label=f"{name} (AUC {c.auc:.3f})")
        ax.plot([0, 1], [0, 1], color="0.6", lw=0.8, ls="--")
        ax.set_xlim(0, 1)
        ax.set_ylim(0, 1.01)
        ax.set_xlabel("false positive rate")
        ax.set_ylabel("true positive rate")
        ax.legend(loc="lower right")
        return _save(fig, path)


def plot_skill_series(series: Sequence[verify.SkillPoint], path, title: str = "") -> Path:
    """CSI, POD and FAR per issue time; undefined scores leave gaps."""
    t = np.array([p.time for p in series], dtype=float)
    minutes = (t - t[0]) / 60.0 if len(t) else t
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for label, attr, marker in (("CSI", "csi", "o"), ("POD", "pod", "s"), ("FAR", "far", "^")):
            ax.plot(minutes, [_nan(getattr(p, attr)) for p in series], marker=marker, label=label)
        ax.set_ylim(0, 1)
        ax.set_xlabel("minutes since first issue time")
        ax.set_ylabel("score")
        if title:
            ax.set_title(title)
        ax.legend()
        return _save(fig, path)


_OVERLAY_CMAP = ListedColormap(["black", "tab:blue", "tab:red", "white"])


def plot_overlay(grid: verify.OverlayGrid, path, title: str = "") -> Path:
    """Hits black, misses blue, false alarms red, correct nulls white."""
    codes = {c: i for i, c in enumerate(verify.CLASS_CODES)}
    idx = np.vectorize(codes.get)(grid.classes)
    hist = grid.histogram()
    with plt.rc_context({**STYLE, "axes.grid": False}):
        fig, ax = plt.subplots(figsize=(6.0, 5.0))
        ax.imshow(idx, cmap=_OVERLAY_CMAP, vmin=-0.5, vmax=3.5, interpolation="nearest")
        ax.set_xlabel("cell column")
        ax.set_ylabel("cell row")
        ax.set_title(title or "  ".join(f"{k}={v}" for k, v in hist.items()))
        return _save(fig, path)


def plot_history(rows: Sequence[Sequence], path) -> Path:
    """Held-out loss and skill against iteration; ``rows`` as (iteration, loss, csi, pod, far)."""
    it = [r[0] for r in rows]
    with plt.rc_context(STYLE):
        fig, (ax1, ax2) = plt.subplots(2, 1, sharex=True, figsize=(5.0, 5.5))
        ax1.plot(it, [r[1] for r in rows], marker="o")
        ax1.set_ylabel("held-out loss")
        for j, label in ((2, "CSI"), (3, "POD"), (4, "FAR")):
            ax2.plot(it, [_nan(r[j]) for r in rows], marker="o", label=label)
        ax2.set_ylim(0, 1)
        ax2.set_xlabel("iteration")
        ax2.legend()
        return _save(fig, path)
