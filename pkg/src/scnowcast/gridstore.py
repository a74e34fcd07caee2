"""Gridded 3D meteorological fields, SGF1 persistence and a synthetic storm generator.

A field holds one variable (vertical velocity ``W``, buoyancy ``BYC`` or
reflectivity ``R``) on a ``levels x pixel_rows x pixel_cols`` grid at a single
timestamp.  Pixels are 1 km; every forecast cell is a 6x6 pixel block.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.ndimage import gaussian_filter

VARIABLES = ("W", "BYC", "R")
CADENCE = 900
STORM_THRESHOLD_DBZ = 35.0

SGF_MAGIC = b"SGF1"
SGF_HEADER = struct.Struct("<4s8sQ3I")
MANIFEST_NAME = "manifest.txt"


class FieldFormatError(ValueError):
    """Raised when an SGF1 file is malformed."""


@dataclass(frozen=True)
class DomainGrid:
    cell_rows: int = 31
    cell_cols: int = 39
    pixels_per_cell_side: int = 6
    levels: int = 20

    def __post_init__(self):
        for name in ("cell_rows", "cell_cols", "pixels_per_cell_side", "levels"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")

    @property
    def pixel_rows(self) -> int:
        return self.cell_rows * self.pixels_per_cell_side

    @property
    def pixel_cols(self) -> int:
        return self.cell_cols * self.pixels_per_cell_side

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.levels, self.pixel_rows, self.pixel_cols)

    @property
    def n_cells(self) -> int:
        return self.cell_rows * self.cell_cols


@dataclass(eq=False)
class GriddedField:
    variable: str
    timestamp: int
    values: np.ndarray

    def __post_init__(self):
        if self.variable not in VARIABLES:
            raise ValueError(f"unknown variable {self.variable!r}")
        self.values = np.ascontiguousarray(self.values, dtype=np.float32)
        if self.values.ndim != 3:
            raise ValueError("field values must be 3D (levels, rows, cols)")
        if not np.isfinite(self.values).all():
            raise ValueError("field contains non-finite values")
        self.timestamp = int(self.timestamp)

    def __eq__(self, other):
        if not isinstance(other, GriddedField):
            return NotImplemented
        return (
            self.variable == other.variable
            and self.timestamp == other.timestamp
            and self.values.shape == other.values.shape
            and self.values.tobytes() == other.values.tobytes()
        )

    def matches(self, grid: DomainGrid) -> bool:
        return self.values.shape == grid.shape


@dataclass
class EventSeries:
    grid: DomainGrid
    frames: list[dict[str, GriddedField]]
    cadence: int = CADENCE
    event_id: str = "event"

    def __post_init__(self):
        prev = None
        for frame in self.frames:
            if set(frame) != set(VARIABLES):
                raise ValueError("each frame needs exactly one W, BYC and R field")
            stamps = {f.timestamp for f in frame.values()}
            if len(stamps) != 1:
                raise ValueError("fields within a frame disagree on timestamp")
            for f in frame.values():
                if not f.matches(self.grid):
                    raise ValueError(f"field shape {f.values.shape} != grid {self.grid.shape}")
            ts = stamps.pop()
            if prev is not None and ts - prev != self.cadence:
                raise ValueError(f"frame timestamps must step by {self.cadence} s")
            prev = ts

    def __len__(self):
        return len(self.frames)

    @property
    def timestamps(self) -> list[int]:
        return [fr["R"].timestamp for fr in self.frames]


# ---------------------------------------------------------------------------
# SGF1 files


def _encode_header(field_: GriddedField) -> bytes:
    name = field_.variable.encode("ascii")
    lv, nr, nc = field_.values.shape
    return SGF_HEADER.pack(SGF_MAGIC, name, field_.timestamp, lv, nr, nc)


def write_field(field_: GriddedField, path) -> None:
    """Write ``field_`` as an SGF1 file (32-byte header, little-endian float32 payload)."""
    if not np.isfinite(field_.values).all():
        raise ValueError("refusing to write non-finite values")
    payload = field_.values.astype("<f4", copy=False).tobytes(order="C")
    with open(path, "wb") as fh:
        fh.write(_encode_header(field_))
        fh.write(payload)


def read_field(path) -> GriddedField:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < SGF_HEADER.size:
        raise FieldFormatError(f"{path}: truncated header")
    magic, name, ts, lv, nr, nc = SGF_HEADER.unpack_from(raw)
    if magic != SGF_MAGIC:
        raise FieldFormatError(f"{path}: bad magic {magic!r}")
    variable = name.rstrip(b"\0").decode("ascii", errors="replace")
    expected = lv * nr * nc * 4
    got = len(raw) - SGF_HEADER.size
    if got < expected:
        raise FieldFormatError(f"{path}: truncated payload ({got} of {expected} bytes)")
    if got > expected:
        raise FieldFormatError(f"{path}: dims {lv}x{nr}x{nc} inconsistent with payload of {got} bytes")
    values = np.frombuffer(raw, dtype="<f4", offset=SGF_HEADER.size).reshape(lv, nr, nc)
    if not np.isfinite(values).all():
        raise FieldFormatError(f"{path}: non-finite values in payload")
    return GriddedField(variable, ts, values.astype(np.float32))


def field_filename(variable: str, timestamp: int) -> str:
    return f"{variable}_{timestamp}.sgf"


def write_event(series: EventSeries, directory) -> list[Path]:
    """Write every frame of ``series`` plus a manifest; returns the paths written."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    g = series.grid
    lines = [
        f"event {series.event_id}",
        f"grid {g.cell_rows} {g.cell_cols} {g.pixels_per_cell_side} {g.levels}",
        f"cadence {series.cadence}",
    ]
    written = []
    for frame in series.frames:
        names = []
        for var in VARIABLES:
            f = frame[var]
            name = field_filename(var, f.timestamp)
            write_field(f, directory / name)
            written.append(directory / name)
            names.append(name)
        lines.append("frame " + str(frame["R"].timestamp) + " " + " ".join(names))
    manifest = directory / MANIFEST_NAME
    manifest.write_text("\n".join(lines) + "\n")
    written.append(manifest)
    return written


def read_event(directory) -> EventSeries:
    directory = Path(directory)
    event_id = directory.name
    grid = DomainGrid()
    cadence = CADENCE
    frames = []
    for line in (directory / MANIFEST_NAME).read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        key = parts[0]
        if key == "event":
            event_id = parts[1]
        elif key == "grid":
            grid = DomainGrid(*map(int, parts[1:5]))
        elif key == "cadence":
            cadence = int(parts[1])
        elif key == "frame":
            fields = [read_field(directory / name) for name in parts[2:]]
            frames.append({f.variable: f for f in fields})
        else:
            raise FieldFormatError(f"unknown manifest entry {key!r}")
    return EventSeries(grid=grid, frames=frames, cadence=cadence, event_id=event_id)


# ---------------------------------------------------------------------------
# Synthetic events


@dataclass(frozen=True)
class SynthParams:
    """Knobs of the synthetic storm generator.

    ``n_storms`` bounds the number of concurrently active storms.  Storms are
    spawned until the projected fraction of cells exceeding 35 dBZ two frames
    ahead reaches ``target_positive_fraction``.
    """

    n_frames: int = 8
    n_storms: tuple[int, int] = (0, 40)
    storm_scale_km: tuple[float, float] = (4.0, 9.0)
    advection_km_per_frame: tuple[float, float] = (1.5, 4.0)
    peak_dbz: tuple[float, float] = (40.0, 55.0)
    growth_dbz_per_frame: tuple[float, float] = (8.0, 14.0)
    decay_dbz_per_frame: tuple[float, float] = (4.0, 8.0)
    mature_frames: tuple[int, int] = (1, 4)
    target_positive_fraction: float = 0.05
    seed: int = 1

    def __post_init__(self):
        if not 0.0 < self.target_positive_fraction < 0.5:
            raise ValueError("target_positive_fraction must lie in (0, 0.5)")
        if self.n_frames < 1:
            raise ValueError("n_frames must be >= 1")
        for name in ("n_storms", "storm_scale_km", "advection_km_per_frame", "peak_dbz",
                     "growth_dbz_per_frame", "decay_dbz_per_frame", "mature_frames"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name}: empty range {lo}..{hi}")
        if self.n_storms[0] < 0 or self.mature_frames[0] < 0:
            raise ValueError("counts must be non-negative")
        if self.storm_scale_km[0] <= 0:
            raise ValueError("storm scale must be > 0")
        if self.growth_dbz_per_frame[0] <= 0 or self.decay_dbz_per_frame[0] <= 0:
            raise ValueError("growth and decay rates must be > 0")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in 64 unsigned bits")


_INITIAL_DBZ = 6.0
_BACKGROUND_DBZ = 5.0
_BACKGROUND_STD = 3.0


@dataclass
class _Storm:
    y: float
    x: float
    vy: float
    vx: float
    sy: float
    sx: float
    theta: float
    peak: float
    growth: float
    decay: float
    mature: int
    age: int = 0
    level_center: float = 0.0
    level_width: float = 1.0
    envelope: list[float] = field(default_factory=list)

    def __post_init__(self):
        env, a = [], _INITIAL_DBZ
        while a < self.peak:
            env.append(a)
            a += self.growth
        env.extend([self.peak] * (self.mature + 1))
        a = self.peak - self.decay
        while a > _INITIAL_DBZ:
            env.append(a)
            a -= self.decay
        self.envelope = env

    def amplitude(self, age: int) -> float:
        if 0 <= age < len(self.envelope):
            return self.envelope[age]
        return 0.0

    def growth_ahead(self, age: int) -> float:
        return max(self.amplitude(age + 1) - self.amplitude(age), 0.0)

    def alive(self, age: int | None = None) -> bool:
        age = self.age if age is None else age
        return age < len(self.envelope)

    def position(self, frames_ahead: int = 0) -> tuple[float, float]:
        return self.y + self.vy * frames_ahead, self.x + self.vx * frames_ahead

    def footprint(self, yy, xx, frames_ahead: int = 0) -> np.ndarray:
        """Unit-peak horizontal Gaussian footprint on pixel-centre coordinates."""
        cy, cx = self.position(frames_ahead)
        dy, dx = yy - cy, xx - cx
        c, s = math.cos(self.theta), math.sin(self.theta)
        u = c * dx + s * dy
        v = -s * dx + c * dy
        return np.exp(-0.5 * ((u / self.sx) ** 2 + (v / self.sy) ** 2))


def _smooth_noise(rng: np.random.Generator, shape, sigma) -> np.ndarray:
    noise = gaussian_filter(rng.standard_normal(shape), sigma=sigma, mode="wrap")
    return noise / max(noise.std(), 1e-12)


def _cells_over(r2d: np.ndarray, grid: DomainGrid) -> np.ndarray:
    p = grid.pixels_per_cell_side
    blocks = r2d.reshape(grid.cell_rows, p, grid.cell_cols, p)
    return blocks.max(axis=(1, 3)) > STORM_THRESHOLD_DBZ


def synth_event(grid: DomainGrid, params: SynthParams, event_id: str = "event",
                start_time: int = 0) -> EventSeries:
    """Generate a deterministic storm event on ``grid``.

    Reflectivity is a smooth low-amplitude background plus advecting anisotropic
    Gaussian storms with a grow/mature/decay lifecycle.  Vertical velocity and
    buoyancy carry bumps proportional to the storm's growth over the next frame,
    so they lead reflectivity intensification by one frame.
    """
    rng = np.random.default_rng(params.seed)
    L, H, W = grid.shape
    n_frames = params.n_frames
    yy, xx = np.mgrid[0:H, 0:W].astype(np.float64) + 0.5

    lev = np.arange(L, dtype=np.float64)
    # R peaks mid-column, W in the upper half, BYC near the surface
    w_profile = np.exp(-0.5 * ((lev - 0.6 * L) / (0.25 * L)) ** 2)
    b_profile = np.exp(-lev / (0.3 * L))

    # background fields for all frames, AR(1) in time
    def background(sigma, std, offset):
        frames, prev, rho = [], None, 0.8
        for _ in range(n_frames + 2):
            n = _smooth_noise(rng, (L, H, W), sigma)
            prev = n if prev is None else rho * prev + math.sqrt(1 - rho**2) * n
            frames.append(offset + std * prev)
        return frames

    bg_r = background((2.0, 8.0, 8.0), _BACKGROUND_STD, _BACKGROUND_DBZ)
    bg_w = background((2.0, 6.0, 6.0), 0.15, 0.0)
    bg_b = background((2.0, 6.0, 6.0), 0.002, 0.0)

    heading = rng.uniform(0.0, 2 * math.pi)
    speed = rng.uniform(*params.advection_km_per_frame)
    lo_s, hi_s = params.n_storms

    def new_storm(initial_age: int) -> _Storm:
        sp = speed + rng.uniform(-0.5, 0.5)
        hd = heading + rng.uniform(-0.3, 0.3)
        st = _Storm(
            y=rng.uniform(0, H), x=rng.uniform(0, W),
            vy=sp * math.sin(hd), vx=sp * math.cos(hd),
            sy=rng.uniform(*params.storm_scale_km), sx=rng.uniform(*params.storm_scale_km),
            theta=rng.uniform(0, math.pi),
            peak=rng.uniform(*params.peak_dbz),
            growth=rng.uniform(*params.growth_dbz_per_frame),
            decay=rng.uniform(*params.decay_dbz_per_frame),
            mature=int(rng.integers(params.mature_frames[0], params.mature_frames[1] + 1)),
            level_center=rng.uniform(0.3 * L, 0.6 * L),
            level_width=rng.uniform(0.25 * L, 0.45 * L),
        )
        if initial_age:
            st.age = int(rng.integers(0, len(st.envelope)))
        return st

    def storm_r2d(st: _Storm, frames_ahead: int) -> np.ndarray:
        return st.amplitude(st.age + frames_ahead) * st.footprint(yy, xx, frames_ahead)

    storms: list[_Storm] = []
    r_fields, w_fields, b_fields = [], [], []
    for t in range(n_frames):
        storms = [s for s in storms if s.alive()]
        # controller: spawn until projected coverage at t+2 reaches the target
        if hi_s > 0:
            horizon = bg_r[t + 2].max(axis=0)
            proj = horizon.copy()
            for st in storms:
                proj += storm_r2d(st, 2)
            while len(storms) < hi_s:
                covered = _cells_over(proj, grid).mean()
                if covered >= params.target_positive_fraction and len(storms) >= lo_s:
                    break
                st = new_storm(initial_age=(t == 0))
                storms.append(st)
                proj += storm_r2d(st, 2)

        r = bg_r[t].copy()
        w = bg_w[t].copy()
        b = bg_b[t].copy()
        for st in storms:
            fp = st.footprint(yy, xx)
            r_prof = np.exp(-0.5 * ((lev - st.level_center) / st.level_width) ** 2)
            r += st.amplitude(st.age) * r_prof[:, None, None] * fp[None]
            lead = st.growth_ahead(st.age) / params.growth_dbz_per_frame[1]
            mature = st.amplitude(st.age + 1) / params.peak_dbz[1]
            w += (4.0 * lead + 1.0 * mature) * w_profile[:, None, None] * fp[None]
            b += (0.04 * lead + 0.005 * mature) * b_profile[:, None, None] * fp[None]
        r_fields.append(r)
        w_fields.append(w)
        b_fields.append(b)
        for st in storms:
            st.age += 1
            st.y += st.vy
            st.x += st.vx

    frames = []
    for t in range(n_frames):
        ts = start_time + t * CADENCE
        frames.append({
            "W": GriddedField("W", ts, w_fields[t]),
            "BYC": GriddedField("BYC", ts, b_fields[t]),
            "R": GriddedField("R", ts, r_fields[t]),
        })
    return EventSeries(grid=grid, frames=frames, cadence=CADENCE, event_id=event_id)


def event_seeds(base_seed: int, n_events: int) -> list[int]:
    """Independent 64-bit seeds for ``n_events`` events derived from ``base_seed``."""
    ss = np.random.SeedSequence(base_seed)
    return [int(c.generate_state(1, dtype=np.uint64)[0]) for c in ss.spawn(n_events)]


def label_fraction(series: EventSeries) -> float:
    """Fraction of (cell, issue time) samples that will be labelled positive."""
    from .cubegen import eligible_times

    times = eligible_times(series)
    if not times:
        return 0.0
    hits = [_cells_over(series.frames[t + 2]["R"].values.max(axis=0), series.grid).mean()
            for t in times]
    return float(np.mean(hits))


__all__: Sequence[str] = (
    "DomainGrid", "GriddedField", "EventSeries", "SynthParams", "FieldFormatError",
    "write_field", "read_field", "write_event", "read_event", "synth_event",
    "event_seeds", "label_fraction", "VARIABLES", "CADENCE", "STORM_THRESHOLD_DBZ",
)
