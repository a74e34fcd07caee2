"""Forecast verification: contingency tables, POD/FAR/CSI, ROC/AUC, skill series, overlays.

Scores whose denominator is zero are *undefined* and reported as ``None``
(written as ``undefined`` in CSV files), never silently as 0.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

UNDEFINED = "undefined"
HIT, MISS, FALSE_ALARM, CORRECT_NULL = "H", "M", "F", "N"
CLASS_CODES = (HIT, MISS, FALSE_ALARM, CORRECT_NULL)
# gray levels for PGM overlays: hits black, nulls white
PGM_LEVELS = {HIT: 0, MISS: 85, FALSE_ALARM: 170, CORRECT_NULL: 255}


@dataclass(frozen=True)
class ContingencyTable:
    hits: int = 0
    misses: int = 0
    false_alarms: int = 0
    correct_nulls: int = 0

    def __post_init__(self):
        if min(self.hits, self.misses, self.false_alarms, self.correct_nulls) < 0:
            raise ValueError("contingency counts must be non-negative")

    @property
    def total(self) -> int:
        return self.hits + self.misses + self.false_alarms + self.correct_nulls

    def __add__(self, other: "ContingencyTable") -> "ContingencyTable":
        return ContingencyTable(self.hits + other.hits, self.misses + other.misses,
                                self.false_alarms + other.false_alarms,
                                self.correct_nulls + other.correct_nulls)

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.hits, self.misses, self.false_alarms, self.correct_nulls)


def _binary(a, name) -> np.ndarray:
    arr = np.asarray(a).astype(np.int64).ravel()
    if not np.isin(arr, (0, 1)).all():
        raise ValueError(f"{name} must contain only 0 and 1")
    return arr


def contingency(pred, truth) -> ContingencyTable:
    p, t = _binary(pred, "pred"), _binary(truth, "truth")
    if p.shape != t.shape:
        raise ValueError(f"length mismatch: {p.size} predictions vs {t.size} truths")
    return ContingencyTable(
        hits=int(np.sum((p == 1) & (t == 1))),
        misses=int(np.sum((p == 0) & (t == 1))),
        false_alarms=int(np.sum((p == 1) & (t == 0))),
        correct_nulls=int(np.sum((p == 0) & (t == 0))),
    )


def pod(t: ContingencyTable) -> Optional[float]:
    """hits / (hits + misses); None when nothing was observed."""
    d = t.hits + t.misses
    return t.hits / d if d else None


def far(t: ContingencyTable) -> Optional[float]:
    """false alarms / (hits + false alarms); None when nothing was forecast."""
    d = t.hits + t.false_alarms
    return t.false_alarms / d if d else None


def csi(t: ContingencyTable) -> Optional[float]:
    d = t.hits + t.misses + t.false_alarms
    return t.hits / d if d else None


def exact_scores(t: ContingencyTable) -> tuple[Optional[Fraction], ...]:
    """POD, FAR, CSI as exact fractions (None where undefined)."""
    def frac(n, d):
        return Fraction(n, d) if d else None
    return (frac(t.hits, t.hits + t.misses),
            frac(t.false_alarms, t.hits + t.false_alarms),
            frac(t.hits, t.hits + t.misses + t.false_alarms))


def csi_from_pod_far(pod_value: float, far_value: float) -> float:
    """CSI implied by POD and FAR: 1/CSI = 1/POD + 1/(1 - FAR) - 1."""
    return 1.0 / (1.0 / pod_value + 1.0 / (1.0 - far_value) - 1.0)


def fmt_score(x) -> str:
    return UNDEFINED if x is None else f"{x:.6f}"


# ---------------------------------------------------------------------------
# ROC


@dataclass(frozen=True)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))


def roc(scores, truth) -> RocCurve:
    """Descending sweep over distinct scores with trapezoidal area.

    Tied scores form a single step, so the area equals the probability that a
    random positive outranks a random negative with ties counted 1/2.
    """
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = _binary(truth, "truth")
    if s.shape != y.shape:
        raise ValueError("scores and truth differ in length")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs at least one positive and one negative")
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    tp = np.cumsum(y)
    fp = np.cumsum(1 - y)
    last = np.r_[np.flatnonzero(np.diff(s) != 0), s.size - 1]
    tpr = np.r_[0.0, tp[last] / n_pos]
    fpr = np.r_[0.0, fp[last] / n_neg]
    thresholds = np.r_[np.inf, s[last]]
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))
    return RocCurve(fpr, tpr, thresholds, auc)


# ---------------------------------------------------------------------------
# skill series and overlays


@dataclass(frozen=True)
class SkillPoint:
    time: int
    pod: Optional[float]
    far: Optional[float]
    csi: Optional[float]
    table: ContingencyTable


def skill_series(tables: Iterable[tuple[int, ContingencyTable]]) -> list[SkillPoint]:
    return [SkillPoint(int(t), pod(tab), far(tab), csi(tab), tab) for t, tab in tables]


def aggregate(tables: Iterable[ContingencyTable]) -> ContingencyTable:
    total = ContingencyTable()
    for t in tables:
        total = total + t
    return total


@dataclass(frozen=True)
class OverlayGrid:
    classes: np.ndarray  # (rows, cols) array of single-character class codes

    @property
    def shape(self) -> tuple[int, int]:
        return self.classes.shape

    def histogram(self) -> dict[str, int]:
        return {c: int(np.sum(self.classes == c)) for c in CLASS_CODES}

    def table(self) -> ContingencyTable:
        h = self.histogram()
        return ContingencyTable(h[HIT], h[MISS], h[FALSE_ALARM], h[CORRECT_NULL])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            for row in self.classes:
                w.writerow(row.tolist())

    def write_pgm(self, path, scale: int = 1) -> None:
        """Binary PGM (P5) with one gray level per class."""
        levels = np.vectorize(PGM_LEVELS.get, otypes=[np.uint8])(self.classes)
        if scale > 1:
            levels = np.kron(levels, np.ones((scale, scale), dtype=np.uint8))
        rows, cols = levels.shape
        with open(path, "wb") as fh:
            fh.write(f"P5\n{cols} {rows}\n255\n".encode("ascii"))
            fh.write(levels.tobytes())


def overlay(pred_grid, truth_grid) -> OverlayGrid:
    p = np.asarray(pred_grid).astype(np.int64)
    t = np.asarray(truth_grid).astype(np.int64)
    if p.shape != t.shape:
        raise ValueError(f"grid dims differ: {p.shape} vs {t.shape}")
    _binary(p, "pred")
    _binary(t, "truth")
    out = np.full(p.shape, CORRECT_NULL, dtype="<U1")
    out[(p == 1) & (t == 1)] = HIT
    out[(p == 0) & (t == 1)] = MISS
    out[(p == 1) & (t == 0)] = FALSE_ALARM
    return OverlayGrid(out)


def read_overlay_csv(path) -> OverlayGrid:
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    return OverlayGrid(np.array(rows, dtype="<U1"))


# ---------------------------------------------------------------------------
# CSV outputs

SCORES_COLUMNS = ("event", "hits", "misses", "false_alarms", "correct_nulls",
                  "pod", "far", "csi", "auc")
SKILL_COLUMNS = ("event", "time", "hits", "misses", "false_alarms", "correct_nulls",
                 "pod", "far", "csi")
ROC_COLUMNS = ("event", "threshold", "fpr", "tpr")


def scores_row(event: str, table: ContingencyTable, auc: Optional[float]) -> list[str]:
    return [event, *map(str, table.as_tuple()), fmt_score(pod(table)), fmt_score(far(table)),
            fmt_score(csi(table)), fmt_score(auc)]


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow(r)
    return path


def skill_rows(event: str, series: Sequence[SkillPoint]) -> list[list[str]]:
    return [[event, str(p.time), *map(str, p.table.as_tuple()), fmt_score(p.pod),
             fmt_score(p.far), fmt_score(p.csi)] for p in series]


def roc_rows(event: str, curve: RocCurve) -> list[list[str]]:
    return [[event, "inf" if np.isinf(th) else f"{th:.9g}", f"{x:.9g}", f"{y:.9g}"]
            for th, x, y in zip(curve.thresholds, curve.fpr, curve.tpr)]


def read_csv(path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
