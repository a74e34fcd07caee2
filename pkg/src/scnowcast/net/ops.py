"""Layer primitives with hand-written backward passes.

All convolutions are cross-correlations (no kernel flip) with "same" zero
padding and ceil-mode output size, ``out = ceil(in / stride)``.

The ``*_forward``/``*_backward`` pairs work on channel-major batches,
``(C, N, H, W)``: im2col then copies contiguous rows and the convolution is a
single ``W @ cols`` product whose result is already channel-major.  The public
:func:`conv2d` and :func:`conv3d_cross_channel` take the usual ``(N, C, H, W)``
layout.  dtype follows the input, so the same code serves float32 training and
float64 gradient checks.
"""
from __future__ import annotations

import math

import numpy as np


def same_padding(size: int, k: int, stride: int) -> tuple[int, int, int]:
    """(pad_before, pad_after, out_size) for "same" padding along one axis."""
    out = math.ceil(size / stride)
    total = max((out - 1) * stride + k - size, 0)
    return total // 2, total - total // 2, out


def _resolve_padding(h, w, kh, kw, stride, padding):
    if padding == "same":
        pt, pb, ho = same_padding(h, kh, stride)
        pl, pr, wo = same_padding(w, kw, stride)
    elif padding == "valid":
        pt = pb = pl = pr = 0
        ho = (h - kh) // stride + 1
        wo = (w - kw) // stride + 1
    else:
        p = int(padding)
        pt = pb = pl = pr = p
        ho = (h + 2 * p - kh) // stride + 1
        wo = (w + 2 * p - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ValueError(f"kernel {kh}x{kw} does not fit input {h}x{w}")
    return (pt, pb, pl, pr), ho, wo


def _pad(x, pads):
    pt, pb, pl, pr = pads
    if not any(pads):
        return x
    width = [(0, 0)] * (x.ndim - 2) + [(pt, pb), (pl, pr)]
    return np.pad(x, width)


def _im2col(xp, kh, kw, stride, ho, wo):
    """``(C, N, Hp, Wp)`` -> ``(C*kh*kw, N*ho*wo)``."""
    c, n = xp.shape[:2]
    cols = np.empty((c, kh, kw, n, ho, wo), dtype=xp.dtype)
    span_h, span_w = stride * (ho - 1) + 1, stride * (wo - 1) + 1
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = xp[:, :, i:i + span_h:stride, j:j + span_w:stride]
    return cols.reshape(c * kh * kw, n * ho * wo)


def _col2im(dcols, xp_shape, kh, kw, stride, ho, wo):
    c, n = xp_shape[:2]
    d = dcols.reshape(c, kh, kw, n, ho, wo)
    dxp = np.zeros(xp_shape, dtype=dcols.dtype)
    span_h, span_w = stride * (ho - 1) + 1, stride * (wo - 1) + 1
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i:i + span_h:stride, j:j + span_w:stride] += d[:, i, j]
    return dxp


def _crop(dxp, pads):
    pt, pb, pl, pr = pads
    return dxp[..., pt:dxp.shape[-2] - pb, pl:dxp.shape[-1] - pr]


def conv2d_forward(x, w, b, stride=1, padding="same"):
    """Channel-major 2D convolution, ``out[q] = sum_p w[q,p] * x[p] + b[q]``.

    ``x`` is ``(P, N, H, W)``, ``w`` is ``(Q, P, kh, kw)``; returns ``(Q, N, H', W')``
    and a cache for :func:`conv2d_backward`.
    """
    c, n, h, wd = x.shape
    q, cw, kh, kw = w.shape
    if cw != c:
        raise ValueError(f"input has {c} maps, weights expect {cw}")
    if b.shape != (q,):
        raise ValueError(f"bias shape {b.shape} != ({q},)")
    pads, ho, wo = _resolve_padding(h, wd, kh, kw, stride, padding)
    xp = _pad(x, pads)
    cols = _im2col(xp, kh, kw, stride, ho, wo)
    out = w.reshape(q, -1) @ cols
    out += b[:, None]
    cache = (cols, xp.shape, pads, stride, ho, wo, w)
    return out.reshape(q, n, ho, wo), cache


def conv2d_backward(dout, cache, need_dx=True):
    cols, xp_shape, pads, stride, ho, wo, w = cache
    q, c, kh, kw = w.shape
    dmat = dout.reshape(q, -1)
    dw = (dmat @ cols.T).reshape(w.shape)
    db = dmat.sum(axis=1)
    dx = None
    if need_dx:
        dcols = w.reshape(q, -1).T @ dmat
        dx = np.ascontiguousarray(_crop(_col2im(dcols, xp_shape, kh, kw, stride, ho, wo), pads))
    return dx, dw, db


def conv3d_cross_channel_forward(x, w, b, stride=1, padding="same"):
    """Channel-major cross-channel 3D convolution.

    ``x`` is ``(I, J, N, H, W)`` (channel, slice, batch, rows, cols) and ``w``
    is ``(K, I, J, kh, kw)``.  Every (channel, slice) plane is correlated with
    its own kernel and the I*J results are summed into each of the K maps:
    ``out[k] = sum_j sum_i w[k,i,j] * x[i,j] + b[k]``.
    """
    ci, cj, n, h, wd = x.shape
    k, wi, wj, kh, kw = w.shape
    if (wi, wj) != (ci, cj):
        raise ValueError(f"input planes {ci}x{cj} do not match weights {wi}x{wj}")
    if b.shape != (k,):
        raise ValueError(f"bias shape {b.shape} != ({k},)")
    pads, ho, wo = _resolve_padding(h, wd, kh, kw, stride, padding)
    xp = _pad(x, pads)
    # patches[i, j, u, v, n, y, x] = xp[i, j, n, y*stride + u, x*stride + v]
    patches = np.empty((ci, cj, kh, kw, n, ho, wo), dtype=xp.dtype)
    span_h, span_w = stride * (ho - 1) + 1, stride * (wo - 1) + 1
    for u in range(kh):
        for v in range(kw):
            patches[:, :, u, v] = xp[:, :, :, u:u + span_h:stride, v:v + span_w:stride]
    patches = patches.reshape(ci * cj * kh * kw, n * ho * wo)
    out = w.reshape(k, -1) @ patches
    out += b[:, None]
    cache = (patches, xp.shape, pads, stride, ho, wo, w)
    return out.reshape(k, n, ho, wo), cache


def conv3d_cross_channel_backward(dout, cache, need_dx=False):
    patches, xp_shape, pads, stride, ho, wo, w = cache
    k, ci, cj, kh, kw = w.shape
    dmat = dout.reshape(k, -1)
    dw = (dmat @ patches.T).reshape(w.shape)
    db = dmat.sum(axis=1)
    dx = None
    if need_dx:
        dcols = w.reshape(k, -1).T @ dmat
        flat_shape = (ci * cj,) + xp_shape[2:]
        dxp = _crop(_col2im(dcols, flat_shape, kh, kw, stride, ho, wo), pads)
        dx = np.ascontiguousarray(dxp).reshape((ci, cj) + dxp.shape[1:])
    return dx, dw, db


def to_channel_major(x, lead: int = 1):
    """Move the batch axis behind the ``lead`` channel axes: ``(N, *C, H, W) -> (*C, N, H, W)``."""
    order = tuple(range(1, lead + 1)) + (0,) + tuple(range(lead + 1, x.ndim))
    return np.ascontiguousarray(x.transpose(order))


def from_channel_major(x):
    """``(C, N, H, W) -> (N, C, H, W)``."""
    return np.ascontiguousarray(x.transpose(1, 0, 2, 3))


def conv2d(x, weights, bias, stride=1, padding="same"):
    """Convolve ``(C, H, W)`` or ``(N, C, H, W)`` input with ``(Q, C, kh, kw)`` weights."""
    single = x.ndim == 3
    xb = x[None] if single else x
    out, _ = conv2d_forward(to_channel_major(xb), weights, bias, stride, padding)
    out = from_channel_major(out)
    return out[0] if single else out


def conv3d_cross_channel(x, weights, bias, stride=1, padding="same"):
    """Cross-channel 3D convolution (linear part, no ReLU).

    Input ``(I, J, H, W)`` or ``(N, I, J, H, W)``; weights ``(K, I, J, kh, kw)``.
    """
    single = x.ndim == 4
    xb = x[None] if single else x
    out, _ = conv3d_cross_channel_forward(to_channel_major(xb, lead=2), weights, bias,
                                          stride, padding)
    out = from_channel_major(out)
    return out[0] if single else out


def flatten_planes(x):
    """Merge the channel and slice axes: ``(..., I, J, H, W) -> (..., I*J, H, W)``."""
    return x.reshape(x.shape[:-4] + (x.shape[-4] * x.shape[-3],) + x.shape[-2:])


def relu(t):
    return np.maximum(t, 0)


def relu_backward(t, grad_out):
    """Pass ``grad_out`` where the forward input ``t`` was positive (0 at t == 0)."""
    return np.where(t > 0, grad_out, 0).astype(grad_out.dtype, copy=False)


def global_avg_pool(t):
    """Mean over the two trailing spatial axes."""
    return t.mean(axis=(-2, -1))


def global_avg_pool_backward(grad, spatial_shape):
    h, w = spatial_shape
    g = np.asarray(grad) / (h * w)
    return np.broadcast_to(g[..., None, None], g.shape + (h, w)).copy()


def softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def avg_pool2d(x, size=2):
    """Non-overlapping ``size x size`` average pooling (floor mode) on ``(..., H, W)``."""
    h, w = x.shape[-2:]
    ho, wo = h // size, w // size
    x = x[..., :ho * size, :wo * size].reshape(x.shape[:-2] + (ho, size, wo, size))
    return x.mean(axis=(-3, -1))
