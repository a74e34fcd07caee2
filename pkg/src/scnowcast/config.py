"""Run configuration: flat ``section.key = value`` text files.

Example::

    # desk-scale holdout run
    paths.out_dir = runs/demo
    gen.n_events = 7
    synth.n_frames = 6
    net.iterations = 600
    net.eval_every = 200
    split.mode = holdout
    split.train_events = event_00,event_01,event_02,event_03,event_04
    split.test_events = event_05,event_06

Blank lines and ``#`` comments are ignored.  Ranges and lists are comma
separated.  Unknown keys are rejected.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

from .cubegen import EventHoldout, KFold
from .gridstore import DomainGrid, SynthParams
from .net.model import CONV2D, CROSS3D, DEFAULT_LAYERS, LayerSpec, ScnConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    out_dir: Path = Path("out")
    data_dir: Optional[Path] = None
    model_path: Optional[Path] = None
    grid: DomainGrid = field(default_factory=DomainGrid)
    synth: SynthParams = field(default_factory=SynthParams)
    n_events: int = 7
    net: ScnConfig = field(default_factory=ScnConfig)
    split_mode: str = "holdout"
    k: int = 5
    split_seed: int = 0
    train_events: tuple[str, ...] = ()
    test_events: tuple[str, ...] = ()
    threshold: float = 0.5
    threads: Optional[int] = None

    @property
    def events_dir(self) -> Path:
        return self.data_dir if self.data_dir is not None else self.out_dir / "events"

    @property
    def model_file(self) -> Path:
        return self.model_path if self.model_path is not None else self.out_dir / "model.scn"

    def event_names(self) -> list[str]:
        return [f"event_{i:02d}" for i in range(self.n_events)]

    def holdout_plan(self) -> EventHoldout:
        names = self.event_names()
        train = self.train_events or tuple(names[:max(len(names) - 2, 1)])
        test = self.test_events or tuple(n for n in names if n not in train)
        return EventHoldout(tuple(train), tuple(test))

    def kfold_plan(self) -> KFold:
        return KFold(self.k, self.split_seed)

    def validate(self) -> None:
        if self.split_mode not in ("holdout", "kfold"):
            raise ConfigError(f"split.mode must be holdout or kfold, not {self.split_mode!r}")
        if self.n_events < 1:
            raise ConfigError("gen.n_events must be >= 1")
        if not 0.0 < self.threshold < 1.0:
            raise ConfigError("eval.threshold must lie in (0, 1)")
        if self.split_mode == "kfold" and self.k < 2:
            raise ConfigError("split.k must be >= 2")

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, synth=replace(self.synth, seed=seed),
                       net=replace(self.net, seed=seed), split_seed=seed)


def _pair(cast):
    def parse(v: str):
        parts = [p.strip() for p in v.split(",")]
        if len(parts) != 2:
            raise ValueError(f"expected two comma-separated values, got {v!r}")
        return (cast(parts[0]), cast(parts[1]))
    return parse


def _names(v: str) -> tuple[str, ...]:
    return tuple(p.strip() for p in v.split(",") if p.strip())


def parse_layers(v: str) -> tuple[LayerSpec, ...]:
    """``kind:maps:KHxKW:stride`` entries separated by commas."""
    out = []
    for item in _names(v):
        kind, maps, kernel, stride = item.split(":")
        if kind not in (CROSS3D, CONV2D):
            raise ValueError(f"unknown layer kind {kind!r}")
        kh, kw = (int(s) for s in kernel.lower().split("x"))
        out.append(LayerSpec(kind, int(maps), (kh, kw), int(stride)))
    return tuple(out)


def format_layers(layers) -> str:
    return ",".join(f"{l.kind}:{l.out_maps}:{l.kernel[0]}x{l.kernel[1]}:{l.stride}" for l in layers)


_GRID = {f.name: int for f in fields(DomainGrid)}
_SYNTH = {
    "n_frames": int, "n_storms": _pair(int), "storm_scale_km": _pair(float),
    "advection_km_per_frame": _pair(float), "peak_dbz": _pair(float),
    "growth_dbz_per_frame": _pair(float), "decay_dbz_per_frame": _pair(float),
    "mature_frames": _pair(int), "target_positive_fraction": float, "seed": int,
}
_NET = {
    "layers": parse_layers, "channels": int, "slices": int, "learning_rate": float,
    "momentum": float, "batch_size": int, "iterations": int, "eval_every": int, "seed": int,
    "class_weights": _pair(float),
}


def parse_text(text: str, base: RunConfig | None = None) -> RunConfig:
    cfg = base or RunConfig()
    grid_kw, synth_kw, net_kw = {}, {}, {}
    top = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        section, _, name = key.partition(".")
        try:
            if section == "grid" and name in _GRID:
                grid_kw[name] = _GRID[name](value)
            elif section == "synth" and name in _SYNTH:
                synth_kw[name] = _SYNTH[name](value)
            elif section == "net" and name in _NET:
                net_kw[name] = _NET[name](value)
            elif key == "paths.out_dir":
                top["out_dir"] = Path(value)
            elif key == "paths.data_dir":
                top["data_dir"] = Path(value)
            elif key == "paths.model":
                top["model_path"] = Path(value)
            elif key == "gen.n_events":
                top["n_events"] = int(value)
            elif key == "split.mode":
                top["split_mode"] = value
            elif key == "split.k":
                top["k"] = int(value)
            elif key == "split.seed":
                top["split_seed"] = int(value)
            elif key == "split.train_events":
                top["train_events"] = _names(value)
            elif key == "split.test_events":
                top["test_events"] = _names(value)
            elif key == "eval.threshold":
                top["threshold"] = float(value)
            elif key == "run.threads":
                top["threads"] = int(value)
            else:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from exc
    try:
        cfg = replace(cfg, grid=replace(cfg.grid, **grid_kw), synth=replace(cfg.synth, **synth_kw),
                      net=replace(cfg.net, **net_kw), **top)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    cfg.validate()
    return cfg


def load_config(path) -> RunConfig:
    return parse_text(Path(path).read_text())


def dump_config(cfg: RunConfig) -> str:
    s, n, g = cfg.synth, cfg.net, cfg.grid
    lines = [
        f"paths.out_dir = {cfg.out_dir}",
        *( [f"paths.data_dir = {cfg.data_dir}"] if cfg.data_dir else []),
        *( [f"paths.model = {cfg.model_path}"] if cfg.model_path else []),
        *(f"grid.{f.name} = {getattr(g, f.name)}" for f in fields(g)),
        f"gen.n_events = {cfg.n_events}",
    ]
    for f in fields(s):
        v = getattr(s, f.name)
        lines.append(f"synth.{f.name} = " + (",".join(map(str, v)) if isinstance(v, tuple) else str(v)))
    lines.append(f"net.layers = {format_layers(n.layers)}")
    for name in ("channels", "slices", "learning_rate", "momentum", "batch_size", "iterations",
                 "eval_every", "seed"):
        lines.append(f"net.{name} = {getattr(n, name)}")
    lines.append("net.class_weights = " + ",".join(map(str, n.class_weights)))
    lines += [f"split.mode = {cfg.split_mode}", f"split.k = {cfg.k}", f"split.seed = {cfg.split_seed}"]
    if cfg.train_events:
        lines.append("split.train_events = " + ",".join(cfg.train_events))
    if cfg.test_events:
        lines.append("split.test_events = " + ",".join(cfg.test_events))
    lines.append(f"eval.threshold = {cfg.threshold}")
    return "\n".join(lines) + "\n"


__all__ = ["RunConfig", "ConfigError", "parse_text", "load_config", "dump_config",
           "parse_layers", "format_layers", "DEFAULT_LAYERS"]
