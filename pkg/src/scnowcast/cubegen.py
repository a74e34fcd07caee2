"""Six-channel 3D cube samples built from event series.

Channel order is fixed: ``(w, dw, byc, dbyc, R, dR)``.  A cube covers the
18x18 pixel window centred on a cell (the cell's 6x6 block plus a 6-pixel
border) over every level; pixels outside the domain are zero.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence, Union

import numpy as np

from .gridstore import (
    CADENCE,
    STORM_THRESHOLD_DBZ,
    DomainGrid,
    EventSeries,
    GriddedField,
)

CHANNELS = ("w", "dw", "byc", "dbyc", "R", "dR")
N_CHANNELS = len(CHANNELS)
LEAD_FRAMES = 2  # label verification at t + 30 min
WINDOW_CELLS = 3


def window_side(grid: DomainGrid) -> int:
    return WINDOW_CELLS * grid.pixels_per_cell_side


@dataclass(eq=False)
class SampleCube:
    data: np.ndarray
    label: int
    cell: tuple[int, int]
    issue_time: int
    event_id: str = ""

    def __post_init__(self):
        if self.data.ndim != 4 or self.data.shape[0] != N_CHANNELS:
            raise ValueError(f"cube must be (6, levels, side, side), got {self.data.shape}")
        if self.label not in (0, 1):
            raise ValueError("label must be 0 or 1")


@dataclass
class NormStats:
    mean: np.ndarray
    std: np.ndarray
    degenerate: tuple[bool, ...] = field(default=(False,) * N_CHANNELS)

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64).reshape(N_CHANNELS)
        self.std = np.asarray(self.std, dtype=np.float64).reshape(N_CHANNELS)
        bad = ~(self.std > 0) | ~np.isfinite(self.std)
        if bad.any():
            self.std = np.where(bad, 1.0, self.std)
            self.degenerate = tuple(bool(b) or d for b, d in zip(bad, self.degenerate))

    @classmethod
    def identity(cls) -> "NormStats":
        return cls(np.zeros(N_CHANNELS), np.ones(N_CHANNELS))

    def is_identity(self) -> bool:
        return bool((self.mean == 0).all() and (self.std == 1).all())

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Standardise a ``(n, 6, ...)`` or ``(6, ...)`` array channel-wise."""
        x = np.asarray(x)
        ch_axis = 1 if x.ndim == 5 else 0
        shape = [1] * x.ndim
        shape[ch_axis] = N_CHANNELS
        m = self.mean.astype(x.dtype).reshape(shape)
        s = self.std.astype(x.dtype).reshape(shape)
        return (x - m) / s


# ---------------------------------------------------------------------------
# primitive operations


def temporal_diff(curr: GriddedField, prev: GriddedField) -> GriddedField:
    if curr.variable != prev.variable:
        raise ValueError(f"variable mismatch: {curr.variable} vs {prev.variable}")
    if curr.values.shape != prev.values.shape:
        raise ValueError("field dims differ")
    if curr.timestamp - prev.timestamp != CADENCE:
        raise ValueError(f"fields must be {CADENCE} s apart, got {curr.timestamp - prev.timestamp}")
    return GriddedField(curr.variable, curr.timestamp, curr.values - prev.values)


def _check_cell(grid_rows: int, grid_cols: int, cell) -> tuple[int, int]:
    r, c = int(cell[0]), int(cell[1])
    if not (0 <= r < grid_rows and 0 <= c < grid_cols):
        raise IndexError(f"cell {cell} outside {grid_rows}x{grid_cols} grid")
    return r, c


def _grid_of(values: np.ndarray, p: int = 6) -> tuple[int, int]:
    _, rows, cols = values.shape
    return rows // p, cols // p


def extract_window(field_: GriddedField, cell, pixels_per_cell: int = 6) -> np.ndarray:
    """The ``levels x 18 x 18`` window centred on ``cell``, zero-filled off-domain."""
    p = pixels_per_cell
    v = field_.values
    r, c = _check_cell(*_grid_of(v, p), cell)
    side = WINDOW_CELLS * p
    out = np.zeros((v.shape[0], side, side), dtype=v.dtype)
    r0, c0 = (r - 1) * p, (c - 1) * p
    rs, re = max(r0, 0), min(r0 + side, v.shape[1])
    cs, ce = max(c0, 0), min(c0 + side, v.shape[2])
    out[:, rs - r0:re - r0, cs - c0:ce - c0] = v[:, rs:re, cs:ce]
    return out


def label_cell(future_r: GriddedField, cell, pixels_per_cell: int = 6) -> int:
    """1 iff any pixel of the cell, at any level, strictly exceeds 35 dBZ."""
    p = pixels_per_cell
    r, c = _check_cell(*_grid_of(future_r.values, p), cell)
    block = future_r.values[:, r * p:(r + 1) * p, c * p:(c + 1) * p]
    return int((block > STORM_THRESHOLD_DBZ).any())


def cell_labels(future_r: GriddedField, grid: DomainGrid) -> np.ndarray:
    """Labels of every cell at once, shape ``(cell_rows, cell_cols)``."""
    p = grid.pixels_per_cell_side
    peak = future_r.values.max(axis=0).reshape(grid.cell_rows, p, grid.cell_cols, p)
    return (peak.max(axis=(1, 3)) > STORM_THRESHOLD_DBZ).astype(np.int8)


def eligible_times(series: EventSeries) -> list[int]:
    """Frame indices with a predecessor and a +30 min successor."""
    return list(range(1, len(series.frames) - LEAD_FRAMES))


# ---------------------------------------------------------------------------
# sample sets


class CubeBank:
    """Lazily materialised samples over one or more event series.

    Only zero-padded copies of the raw fields are held; cube payloads are cut
    out on demand, so memory is linear in fields rather than samples.
    Sample order is event-major, then issue time, then row-major cells.
    """

    def __init__(self, series: Sequence[EventSeries], _index=None, _store=None):
        self.series = list(series)
        if _store is None:
            _store = self._pad_fields(self.series)
        self._store = _store
        if _index is None:
            _index = self._enumerate(self.series)
        self.event_idx, self.time_idx, self.rows, self.cols, self.labels = _index

    @staticmethod
    def _pad_fields(series):
        store = []
        for s in series:
            pad = s.grid.pixels_per_cell_side
            frames = []
            for fr in s.frames:
                stack = np.stack([fr["W"].values, fr["BYC"].values, fr["R"].values])
                frames.append(np.pad(stack, ((0, 0), (0, 0), (pad, pad), (pad, pad))))
            store.append(frames)
        return store

    @staticmethod
    def _enumerate(series):
        parts = [[], [], [], [], []]
        for e, s in enumerate(series):
            if len(s.frames) < 4:
                raise ValueError(f"series {s.event_id!r} has {len(s.frames)} frames; need >= 4")
            g = s.grid
            rr, cc = np.divmod(np.arange(g.n_cells), g.cell_cols)
            for t in eligible_times(s):
                lab = cell_labels(s.frames[t + LEAD_FRAMES]["R"], g).ravel()
                parts[0].append(np.full(g.n_cells, e))
                parts[1].append(np.full(g.n_cells, t))
                parts[2].append(rr)
                parts[3].append(cc)
                parts[4].append(lab)
        return tuple(np.concatenate(p).astype(np.int64) for p in parts)

    def __len__(self):
        return len(self.labels)

    @property
    def levels(self) -> int:
        return self.series[0].grid.levels if self.series else 0

    @property
    def event_ids(self) -> np.ndarray:
        names = np.array([s.event_id for s in self.series], dtype=object)
        return names[self.event_idx]

    @property
    def issue_times(self) -> np.ndarray:
        return np.array([self.series[e].frames[t]["R"].timestamp
                         for e, t in zip(self.event_idx, self.time_idx)], dtype=np.int64)

    def subset(self, indices) -> "CubeBank":
        idx = np.asarray(indices, dtype=np.int64)
        cols = (self.event_idx[idx], self.time_idx[idx], self.rows[idx], self.cols[idx],
                self.labels[idx])
        return CubeBank(self.series, _index=cols, _store=self._store)

    def batch(self, indices) -> np.ndarray:
        """Cube payloads for ``indices`` as ``(n, 6, levels, 18, 18)`` float32."""
        idx = np.asarray(indices, dtype=np.int64)
        out = None
        for n, i in enumerate(idx):
            e, t = self.event_idx[i], self.time_idx[i]
            p = self.series[e].grid.pixels_per_cell_side
            side = WINDOW_CELLS * p
            r0, c0 = self.rows[i] * p, self.cols[i] * p
            cur = self._store[e][t][:, :, r0:r0 + side, c0:c0 + side]
            prev = self._store[e][t - 1][:, :, r0:r0 + side, c0:c0 + side]
            if out is None:
                out = np.empty((len(idx), N_CHANNELS) + cur.shape[1:], dtype=np.float32)
            out[n, 0::2] = cur
            out[n, 1::2] = cur - prev
        if out is None:
            return np.empty((0, N_CHANNELS, self.levels, 18, 18), dtype=np.float32)
        return out

    def iter_chunks(self, chunk: int = 256) -> Iterable[tuple[np.ndarray, np.ndarray]]:
        for start in range(0, len(self), chunk):
            idx = np.arange(start, min(start + chunk, len(self)))
            yield self.batch(idx), self.labels[idx]

    def cube(self, i: int) -> SampleCube:
        e, t = int(self.event_idx[i]), int(self.time_idx[i])
        return SampleCube(
            data=self.batch([i])[0],
            label=int(self.labels[i]),
            cell=(int(self.rows[i]), int(self.cols[i])),
            issue_time=self.series[e].frames[t]["R"].timestamp,
            event_id=self.series[e].event_id,
        )

    def manifest_lines(self) -> list[str]:
        ts = self.issue_times
        ev = self.event_ids
        return [f"{ev[i]},{ts[i]},{self.rows[i]},{self.cols[i]},{self.labels[i]}"
                for i in range(len(self))]


class CubeArray:
    """In-memory counterpart of :class:`CubeBank` built from explicit cubes."""

    def __init__(self, data: np.ndarray, labels, event_ids=None):
        self.data = np.asarray(data, dtype=np.float32)
        self.labels = np.asarray(labels, dtype=np.int64)
        if event_ids is None:
            event_ids = [""] * len(self.labels)
        self._event_ids = np.asarray(event_ids, dtype=object)

    @classmethod
    def from_samples(cls, samples: Sequence[SampleCube]) -> "CubeArray":
        return cls(np.stack([s.data for s in samples]), [s.label for s in samples],
                   [s.event_id for s in samples])

    def __len__(self):
        return len(self.labels)

    @property
    def levels(self) -> int:
        return self.data.shape[2]

    @property
    def event_ids(self) -> np.ndarray:
        return self._event_ids

    def subset(self, indices) -> "CubeArray":
        idx = np.asarray(indices, dtype=np.int64)
        return CubeArray(self.data[idx], self.labels[idx], self._event_ids[idx])

    def batch(self, indices) -> np.ndarray:
        return self.data[np.asarray(indices, dtype=np.int64)]

    def iter_chunks(self, chunk: int = 256):
        for start in range(0, len(self), chunk):
            sl = slice(start, start + chunk)
            yield self.data[sl], self.labels[sl]


Dataset = Union[CubeBank, CubeArray]


def build_samples(series: EventSeries) -> list[SampleCube]:
    """Every labelled cube of ``series`` (time-major, then row-major cells)."""
    if len(series.frames) < 4:
        raise ValueError(f"series has {len(series.frames)} frames; need >= 4")
    bank = CubeBank([series])
    return [bank.cube(i) for i in range(len(bank))]


def write_samples_manifest(bank: CubeBank, path) -> None:
    Path(path).write_text("".join(line + "\n" for line in bank.manifest_lines()))


def read_samples_manifest(path) -> list[tuple[str, int, int, int, int]]:
    rows = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            ev, ts, r, c, lab = line.split(",")
            rows.append((ev, int(ts), int(r), int(c), int(lab)))
    return rows


# ---------------------------------------------------------------------------
# normalisation


def _chunks_of(train) -> Iterable[np.ndarray]:
    if isinstance(train, (CubeBank, CubeArray)):
        for x, _ in train.iter_chunks():
            yield x
    else:
        for start in range(0, len(train), 256):
            yield np.stack([s.data for s in train[start:start + 256]])


def fit_norm(train) -> NormStats:
    """Per-channel mean and standard deviation over every voxel of ``train``.

    Accepts a list of :class:`SampleCube` or a dataset.  Two passes in float64.
    """
    if len(train) == 0:
        raise ValueError("cannot fit normalisation on an empty training set")
    total = np.zeros(N_CHANNELS)
    count = 0
    for x in _chunks_of(train):
        total += x.sum(axis=(0, 2, 3, 4), dtype=np.float64)
        count += x.shape[0] * x[0, 0].size
    mean = total / count
    sq = np.zeros(N_CHANNELS)
    for x in _chunks_of(train):
        d = x.astype(np.float64) - mean[None, :, None, None, None]
        sq += np.einsum("nclhw,nclhw->c", d, d)
    std = np.sqrt(sq / count)
    return NormStats(mean, std)


def apply_norm(samples, stats: NormStats):
    """Standardise samples; labels and metadata are carried through untouched."""
    if isinstance(samples, CubeArray):
        return CubeArray(stats.apply(samples.data), samples.labels, samples.event_ids)
    return [SampleCube(stats.apply(s.data).astype(np.float32), s.label, s.cell,
                       s.issue_time, s.event_id) for s in samples]


# ---------------------------------------------------------------------------
# splitting


@dataclass(frozen=True)
class KFold:
    k: int = 5
    seed: int = 0


@dataclass(frozen=True)
class EventHoldout:
    train_events: tuple[str, ...]
    test_events: tuple[str, ...]

    def __post_init__(self):
        overlap = set(self.train_events) & set(self.test_events)
        if overlap:
            raise ValueError(f"events in both train and test: {sorted(overlap)}")


SplitPlan = Union[KFold, EventHoldout]


def split_indices(n_or_events, plan: SplitPlan) -> list[tuple[np.ndarray, np.ndarray]]:
    """(train, test) index arrays per fold or partition."""
    if isinstance(plan, KFold):
        n = n_or_events if isinstance(n_or_events, (int, np.integer)) else len(n_or_events)
        if plan.k < 2:
            raise ValueError("k must be >= 2")
        if n < plan.k:
            raise ValueError(f"cannot make {plan.k} folds from {n} samples")
        perm = np.random.default_rng(plan.seed).permutation(n)
        folds = np.array_split(perm, plan.k)
        out = []
        for i, test in enumerate(folds):
            train = np.concatenate([f for j, f in enumerate(folds) if j != i])
            out.append((train, test))
        return out
    if isinstance(plan, EventHoldout):
        events = np.asarray(n_or_events, dtype=object)
        known = set(events.tolist())
        unknown = (set(plan.train_events) | set(plan.test_events)) - known
        if unknown:
            raise ValueError(f"unknown event ids: {sorted(unknown)}")
        train = np.flatnonzero(np.isin(events, list(plan.train_events)))
        test = np.flatnonzero(np.isin(events, list(plan.test_events)))
        return [(train, test)]
    raise TypeError(f"unsupported split plan {plan!r}")


def split(samples, plan: SplitPlan):
    """Partition ``samples`` (a list of cubes or a dataset) according to ``plan``."""
    if isinstance(samples, (CubeBank, CubeArray)):
        key = len(samples) if isinstance(plan, KFold) else samples.event_ids
        return [(samples.subset(tr), samples.subset(te)) for tr, te in split_indices(key, plan)]
    key = len(samples) if isinstance(plan, KFold) else [s.event_id for s in samples]
    return [([samples[i] for i in tr], [samples[i] for i in te])
            for tr, te in split_indices(key, plan)]
