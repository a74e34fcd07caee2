"""Architecture arithmetic: parameter counts, multiply-accumulate counts and conv/pool fusion."""
from __future__ import annotations

import math

import numpy as np

from .model import CROSS3D, LayerSpec, ScnConfig

# reported total for the published network, used only for comparison
PUBLISHED_PARAMS = 1_360_000
# reported saving of the fused 5x5 stride-2 convolution over 4x4 conv + 2x2 pooling
PUBLISHED_FUSED_SAVING = 0.63


def layer_params(spec: LayerSpec, in_planes: int) -> int:
    kh, kw = spec.kernel
    return spec.out_maps * in_planes * kh * kw + spec.out_maps


def param_count(config: ScnConfig) -> int:
    total, maps_in = 0, None
    for spec in config.layers:
        planes = config.channels * config.slices if spec.kind == CROSS3D else maps_in
        total += layer_params(spec, planes)
        maps_in = spec.out_maps
    return total


def param_breakdown(config: ScnConfig) -> list[int]:
    out, maps_in = [], None
    for spec in config.layers:
        planes = config.channels * config.slices if spec.kind == CROSS3D else maps_in
        out.append(layer_params(spec, planes))
        maps_in = spec.out_maps
    return out


def flop_count(spec: LayerSpec, in_planes: int, height: int, width: int) -> int:
    """Multiply-accumulates of one layer: output positions x maps x input planes x kernel area."""
    kh, kw = spec.kernel
    out_h, out_w = math.ceil(height / spec.stride), math.ceil(width / spec.stride)
    return out_h * out_w * spec.out_maps * in_planes * kh * kw


def network_flops(config: ScnConfig, side: int = 18) -> list[int]:
    out, maps_in, h = [], None, side
    for spec in config.layers:
        planes = config.channels * config.slices if spec.kind == CROSS3D else maps_in
        out.append(flop_count(spec, planes, h, h))
        h = math.ceil(h / spec.stride)
        maps_in = spec.out_maps
    return out


def fused_savings(n: int, c_in: int, c_out: int, height: int, width: int) -> float:
    """Fraction of operations saved by a fused (n+1)x(n+1) stride-2 convolution.

    The baseline is an n x n stride-1 convolution evaluated at the four
    positions of every 2x2 pooling window plus the pooling itself (4 ops per
    pooled output).  Both pipelines produce ``ceil(H/2) x ceil(W/2)`` outputs.
    With n=4 and 128 maps in and out this gives about 61%, a little below
    the ~63% quoted for the published network.
    """
    pooled = math.ceil(height / 2) * math.ceil(width / 2)
    conv_pool = pooled * (4 * n * n * c_in * c_out + 4 * c_out)
    fused = pooled * (n + 1) ** 2 * c_in * c_out
    return 1.0 - fused / conv_pool


def fuse_conv_pool(w4: np.ndarray, n: int = 4) -> np.ndarray:
    """Kernels of the stride-2 (n+1)x(n+1) convolution equal to n x n conv + 2x2 average pool.

    ``w5[u, v] = 1/4 * sum_{a,b in {0,1}} w4[u - a, v - b]`` (out-of-range terms dropped).
    Works on any leading axes, e.g. ``(Q, P, n, n)``.
    """
    w4 = np.asarray(w4)
    if w4.shape[-2:] != (n, n):
        raise ValueError(f"expected {n}x{n} kernels, got {w4.shape[-2:]}")
    w5 = np.zeros(w4.shape[:-2] + (n + 1, n + 1), dtype=np.result_type(w4.dtype, np.float32))
    for a in (0, 1):
        for b in (0, 1):
            w5[..., a:a + n, b:b + n] += w4
    return w5 / 4
