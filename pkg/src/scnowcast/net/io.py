"""SCN1 model files.

Little-endian layout::

    "SCN1"  version:u32  channels:u32  slices:u32  n_layers:u32
    n_layers x (kind:u8  out_maps:u32  kh:u32  kw:u32  stride:u32)
    6 x (mean:f64  std:f64)
    per layer: weights then biases, float32, C order
        (cross-channel layer: kernel, channel, slice, row, col;
         2D layers: output map, input map, row, col)
    trailer_len:u32  trailer (UTF-8 "key=value" lines of training settings)
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..cubegen import N_CHANNELS, NormStats
from .model import CONV2D, CROSS3D, LayerSpec, ScnConfig, ScnModel

MAGIC = b"SCN1"
VERSION = 1
_HEAD = struct.Struct("<4sIIII")
_LAYER = struct.Struct("<BIIII")
_KINDS = {CROSS3D: 0, CONV2D: 1}
_KIND_NAMES = {v: k for k, v in _KINDS.items()}
_STATS_BYTES = N_CHANNELS * 2 * 8


class ModelFormatError(ValueError):
    pass


def _trailer(config: ScnConfig) -> bytes:
    items = {
        "learning_rate": repr(config.learning_rate),
        "momentum": repr(config.momentum),
        "batch_size": str(config.batch_size),
        "iterations": str(config.iterations),
        "eval_every": str(config.eval_every),
        "seed": str(config.seed),
        "class_weights": ",".join(repr(w) for w in config.class_weights),
    }
    return "".join(f"{k}={v}\n" for k, v in items.items()).encode("utf-8")


def expected_size(config: ScnConfig) -> int:
    n_params = sum(int(np.prod(s)) + s[0] for s in config.weight_shapes())
    return (_HEAD.size + _LAYER.size * len(config.layers) + _STATS_BYTES
            + 4 * n_params + 4 + len(_trailer(config)))


def to_bytes(model: ScnModel) -> bytes:
    cfg = model.config
    parts = [_HEAD.pack(MAGIC, VERSION, cfg.channels, cfg.slices, len(cfg.layers))]
    for spec in cfg.layers:
        parts.append(_LAYER.pack(_KINDS[spec.kind], spec.out_maps, *spec.kernel, spec.stride))
    stats = np.empty((N_CHANNELS, 2), dtype="<f8")
    stats[:, 0] = model.norm_stats.mean
    stats[:, 1] = model.norm_stats.std
    parts.append(stats.tobytes())
    for w, b in zip(model.weights, model.biases):
        parts.append(np.ascontiguousarray(w, dtype="<f4").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f4").tobytes())
    trailer = _trailer(cfg)
    parts.append(struct.pack("<I", len(trailer)))
    parts.append(trailer)
    return b"".join(parts)


def save_model(model: ScnModel, path) -> Path:
    path = Path(path)
    path.write_bytes(to_bytes(model))
    return path


def _parse_trailer(text: str) -> dict:
    out = {}
    for line in text.splitlines():
        if line:
            k, _, v = line.partition("=")
            out[k] = v
    kw = {}
    conv = {"learning_rate": float, "momentum": float, "batch_size": int, "iterations": int,
            "eval_every": int, "seed": int}
    for k, fn in conv.items():
        if k in out:
            kw[k] = fn(out[k])
    if "class_weights" in out:
        kw["class_weights"] = tuple(float(x) for x in out["class_weights"].split(","))
    return kw


def from_bytes(raw: bytes) -> ScnModel:
    if len(raw) < _HEAD.size:
        raise ModelFormatError("truncated header")
    magic, version, channels, slices, n_layers = _HEAD.unpack_from(raw)
    if magic != MAGIC:
        raise ModelFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise ModelFormatError(f"unsupported version {version}")
    pos = _HEAD.size
    if len(raw) < pos + n_layers * _LAYER.size + _STATS_BYTES:
        raise ModelFormatError("truncated layer table")
    layers = []
    try:
        for _ in range(n_layers):
            kind, out_maps, kh, kw, stride = _LAYER.unpack_from(raw, pos)
            pos += _LAYER.size
            if kind not in _KIND_NAMES:
                raise ModelFormatError(f"unknown layer kind {kind}")
            layers.append(LayerSpec(_KIND_NAMES[kind], out_maps, (kh, kw), stride))
        stats = np.frombuffer(raw, dtype="<f8", count=2 * N_CHANNELS, offset=pos).reshape(-1, 2)
        pos += _STATS_BYTES
        config = ScnConfig(layers=tuple(layers), channels=channels, slices=slices)
    except ModelFormatError:
        raise
    except ValueError as exc:
        raise ModelFormatError(f"invalid layer table: {exc}") from exc

    weights, biases = [], []
    for shape in config.weight_shapes():
        for arr_shape, dest in ((shape, weights), ((shape[0],), biases)):
            count = int(np.prod(arr_shape))
            if len(raw) < pos + 4 * count:
                raise ModelFormatError("truncated parameter block")
            dest.append(np.frombuffer(raw, dtype="<f4", count=count, offset=pos)
                        .reshape(arr_shape).astype(np.float32))
            pos += 4 * count
    if len(raw) < pos + 4:
        raise ModelFormatError("missing trailer")
    (tlen,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    if len(raw) != pos + tlen:
        raise ModelFormatError(f"file length {len(raw)} inconsistent with declared contents")
    try:
        extra = _parse_trailer(raw[pos:].decode("utf-8"))
        config = config.with_(**extra)
    except (UnicodeDecodeError, ValueError) as exc:
        raise ModelFormatError(f"bad trailer: {exc}") from exc
    norm = NormStats(stats[:, 0].copy(), stats[:, 1].copy())
    return ScnModel(config, weights, biases, norm)


def load_model(path) -> ScnModel:
    return from_bytes(Path(path).read_bytes())
