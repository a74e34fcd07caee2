"""Finite-difference gradient checks and the conv/pool fusion demonstration."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .analysis import fuse_conv_pool, fused_savings
from .model import CONV2D, CROSS3D, LayerSpec, ScnConfig, ScnModel, init_model, loss_and_grad, loss_only

EPSILON = 1e-5
GRAD_TOLERANCE = 1e-4
FUSION_TOLERANCE = 1e-6
_TINY = 1e-8


@dataclass(frozen=True)
class GradCase:
    name: str
    config: ScnConfig
    side: int
    batch: int = 3


def small_cases() -> list[GradCase]:
    """Small random architectures, each opening with a cross-channel 3D layer."""
    c3, c2 = CROSS3D, CONV2D
    return [
        GradCase("tiny-3layer", ScnConfig(
            layers=(LayerSpec(c3, 2, (3, 3), 1), LayerSpec(c2, 4, (3, 3), 2),
                    LayerSpec(c2, 2, (3, 3), 1)), slices=2), side=4),
        GradCase("two-layer-5x5", ScnConfig(
            layers=(LayerSpec(c3, 3, (5, 5), 1), LayerSpec(c2, 2, (3, 3), 1)), slices=2), side=5),
        GradCase("strided-first", ScnConfig(
            layers=(LayerSpec(c3, 2, (3, 3), 2), LayerSpec(c2, 3, (1, 1), 1),
                    LayerSpec(c2, 2, (3, 3), 2)), slices=3), side=6),
        GradCase("weighted-classes", ScnConfig(
            layers=(LayerSpec(c3, 2, (3, 3), 1), LayerSpec(c2, 3, (3, 3), 2),
                    LayerSpec(c2, 2, (1, 1), 1)), slices=2, class_weights=(1.0, 3.0)), side=5),
        GradCase("mini-default", ScnConfig(
            layers=(LayerSpec(c3, 2, (5, 5), 1), LayerSpec(c2, 3, (5, 5), 2),
                    LayerSpec(c2, 3, (5, 5), 1), LayerSpec(c2, 3, (5, 5), 2),
                    LayerSpec(c2, 2, (3, 3), 1)), slices=2), side=6, batch=2),
    ]


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    """|a - n| / max(|a|, |n|); entries where both are below 1e-8 use the absolute difference."""
    a, n = np.abs(analytic), np.abs(numeric)
    scale = np.maximum(a, n)
    diff = np.abs(analytic - numeric)
    return np.where(scale > _TINY, diff / np.maximum(scale, _TINY), diff)


def numeric_gradients(model: ScnModel, x, y, eps: float = EPSILON) -> list[np.ndarray]:
    out = []
    for p in model.parameters():
        g = np.zeros_like(p)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + eps
            up = loss_only(model, x, y)
            flat[i] = old - eps
            down = loss_only(model, x, y)
            flat[i] = old
            gflat[i] = (up - down) / (2 * eps)
        out.append(g)
    return out


def random_case_inputs(case: GradCase, rng: np.random.Generator):
    cfg = case.config
    model = init_model(cfg, seed=int(rng.integers(2**32)), dtype=np.float64)
    for i, b in enumerate(model.biases):
        # keep units alive so every gradient is exercised
        b[:] = rng.uniform(0.05, 0.5, size=b.shape)
    x = rng.standard_normal((case.batch, cfg.channels, cfg.slices, case.side, case.side))
    y = np.arange(case.batch) % 2
    return model, x, y


def check_case(case: GradCase, seed: int = 0) -> dict:
    rng = np.random.default_rng(seed)
    model, x, y = random_case_inputs(case, rng)
    _, grads = loss_and_grad(model, x, y)
    analytic = []
    for dw, db in grads:
        analytic.extend((dw, db))
    numeric = numeric_gradients(model, x, y)
    per_param = [float(relative_error(a, n).max()) for a, n in zip(analytic, numeric)]
    nonzero = [int(np.count_nonzero(np.abs(a) > _TINY)) for a in analytic]
    return {"name": case.name, "max_rel_error": max(per_param), "per_param": per_param,
            "nonzero": nonzero, "n_params": int(sum(a.size for a in analytic)),
            "passed": max(per_param) < GRAD_TOLERANCE}


def run_gradcheck(seed: int = 0) -> list[dict]:
    return [check_case(case, seed + i) for i, case in enumerate(small_cases())]


def conv_pool_pipeline(x, w4):
    """Reference: 4x4 valid stride-1 convolution (no bias, no nonlinearity), then 2x2 average pool."""
    y = ops.conv2d(x, w4, np.zeros(w4.shape[0], dtype=w4.dtype), stride=1, padding="valid")
    return ops.avg_pool2d(y, 2)


def fused_pipeline(x, w4):
    w5 = fuse_conv_pool(w4)
    return ops.conv2d(x, w5, np.zeros(w5.shape[0], dtype=w5.dtype), stride=2, padding="valid")


def run_fuse_demo(seed: int = 0, trials: int = 100, maps: tuple[int, int] = (3, 4),
                  side: int = 18) -> dict:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        w4 = rng.standard_normal((maps[1], maps[0], 4, 4))
        x = rng.standard_normal((2, maps[0], side, side))
        diff = np.abs(conv_pool_pipeline(x, w4) - fused_pipeline(x, w4)).max()
        worst = max(worst, float(diff))
    saving = fused_savings(4, 128, 128, side, side)
    return {"max_abs_diff": worst, "savings": saving, "trials": trials,
            "passed": worst < FUSION_TOLERANCE and saving >= 0.60}
