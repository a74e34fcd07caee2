"""The successive-convolution network: configuration, parameters, forward and backward."""
from __future__ import annotations

import copy
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from ..cubegen import NormStats
from . import ops

CROSS3D = "cross3d"
CONV2D = "conv2d"
N_CLASSES = 2


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    out_maps: int
    kernel: tuple[int, int] = (5, 5)
    stride: int = 1
    padding: str = "same"

    def __post_init__(self):
        if self.kind not in (CROSS3D, CONV2D):
            raise ValueError(f"unknown layer kind {self.kind!r}")
        kh, kw = self.kernel
        if kh % 2 == 0 or kw % 2 == 0 or kh < 1 or kw < 1:
            raise ValueError(f"kernel sides must be odd, got {self.kernel}")
        if self.stride not in (1, 2):
            raise ValueError("stride must be 1 or 2")
        if self.out_maps < 1:
            raise ValueError("out_maps must be >= 1")
        if self.padding != "same":
            raise ValueError("only 'same' padding is supported")


DEFAULT_LAYERS = (
    LayerSpec(CROSS3D, 80, (5, 5), 1),
    LayerSpec(CONV2D, 128, (5, 5), 2),
    LayerSpec(CONV2D, 128, (5, 5), 1),
    LayerSpec(CONV2D, 128, (5, 5), 2),
    LayerSpec(CONV2D, N_CLASSES, (3, 3), 1),
)


@dataclass(frozen=True)
class ScnConfig:
    layers: tuple[LayerSpec, ...] = DEFAULT_LAYERS
    channels: int = 6
    slices: int = 20
    learning_rate: float = 0.001
    momentum: float = 0.0
    batch_size: int = 64
    iterations: int = 1000
    eval_every: int = 1000
    seed: int = 0
    class_weights: tuple[float, float] = (1.0, 1.0)

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "class_weights", tuple(float(w) for w in self.class_weights))
        self.validate()

    def validate(self) -> None:
        kinds = [l.kind for l in self.layers]
        if not kinds or kinds[0] != CROSS3D or kinds.count(CROSS3D) != 1:
            raise ValueError("exactly one cross-channel 3D layer is required, and it must be first")
        if self.layers[-1].out_maps != N_CLASSES:
            raise ValueError(f"last layer must have {N_CLASSES} maps (one per class)")
        if self.batch_size < 1 or self.iterations < 0 or self.eval_every < 1:
            raise ValueError("batch_size and eval_every must be >= 1, iterations >= 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.channels < 1 or self.slices < 1:
            raise ValueError("channels and slices must be >= 1")

    def with_(self, **kw) -> "ScnConfig":
        return replace(self, **kw)

    def weight_shapes(self) -> list[tuple[int, ...]]:
        shapes, maps_in = [], None
        for spec in self.layers:
            kh, kw = spec.kernel
            if spec.kind == CROSS3D:
                shapes.append((spec.out_maps, self.channels, self.slices, kh, kw))
            else:
                shapes.append((spec.out_maps, maps_in, kh, kw))
            maps_in = spec.out_maps
        return shapes


@dataclass
class ScnModel:
    config: ScnConfig
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    norm_stats: NormStats = field(default_factory=NormStats.identity)

    def __post_init__(self):
        expected = self.config.weight_shapes()
        if [w.shape for w in self.weights] != expected:
            raise ValueError(f"weight shapes {[w.shape for w in self.weights]} != {expected}")
        if [b.shape for b in self.biases] != [(s[0],) for s in expected]:
            raise ValueError("bias shapes inconsistent with config")

    @property
    def dtype(self):
        return self.weights[0].dtype

    def astype(self, dtype) -> "ScnModel":
        return ScnModel(self.config, [w.astype(dtype) for w in self.weights],
                        [b.astype(dtype) for b in self.biases], copy.deepcopy(self.norm_stats))

    def copy(self) -> "ScnModel":
        return self.astype(self.dtype)

    def parameters(self) -> list[np.ndarray]:
        """Weights and biases interleaved per layer: ``[W1, b1, W2, b2, ...]``."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out


def init_model(config: ScnConfig, seed: int | None = None, dtype=np.float32,
               norm_stats: NormStats | None = None) -> ScnModel:
    """Fan-in scaled uniform weights (He bound), zero biases."""
    rng = np.random.default_rng(config.seed if seed is None else seed)
    weights, biases = [], []
    for shape in config.weight_shapes():
        fan_in = int(np.prod(shape[1:]))
        bound = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=shape).astype(dtype))
        biases.append(np.zeros(shape[0], dtype=dtype))
    return ScnModel(config, weights, biases, norm_stats or NormStats.identity())


def zero_model(config: ScnConfig, dtype=np.float32) -> ScnModel:
    shapes = config.weight_shapes()
    return ScnModel(config, [np.zeros(s, dtype=dtype) for s in shapes],
                    [np.zeros(s[0], dtype=dtype) for s in shapes])


def spatial_trace(config: ScnConfig, side: int = 18) -> list[int]:
    """Output side length after each layer under "same" padding."""
    out = []
    for spec in config.layers:
        side = -(-side // spec.stride)
        out.append(side)
    return out


# ---------------------------------------------------------------------------
# forward / backward


def forward_batch(model: ScnModel, x: np.ndarray, keep_cache: bool = False):
    """Logits ``(N, 2)`` for normalised cubes ``x`` of shape ``(N, C, S, H, W)``."""
    if x.ndim != 5 or x.shape[1:3] != (model.config.channels, model.config.slices):
        raise ValueError(f"expected cubes (N, {model.config.channels}, {model.config.slices}, H, W), "
                         f"got {x.shape}")
    h = ops.to_channel_major(x.astype(model.dtype, copy=False), lead=2)
    caches = []
    for spec, w, b in zip(model.config.layers, model.weights, model.biases):
        if spec.kind == CROSS3D:
            pre, cache = ops.conv3d_cross_channel_forward(h, w, b, spec.stride, spec.padding)
        else:
            pre, cache = ops.conv2d_forward(h, w, b, spec.stride, spec.padding)
        h = ops.relu(pre)
        if keep_cache:
            caches.append((cache, pre))
    logits = ops.global_avg_pool(h).T
    return (logits, caches, h.shape[2:]) if keep_cache else logits


def predict_batch(model: ScnModel, x: np.ndarray) -> np.ndarray:
    return ops.softmax(forward_batch(model, x))


def forward(model: ScnModel, cube) -> tuple[float, float]:
    """Class probabilities ``(p0, p1)`` for one normalised cube (array or SampleCube)."""
    data = getattr(cube, "data", cube)
    p = predict_batch(model, np.asarray(data)[None])[0]
    return float(p[0]), float(p[1])


def _class_weights(model, class_weights):
    cw = model.config.class_weights if class_weights is None else class_weights
    return np.asarray(cw, dtype=np.float64)


def loss_only(model: ScnModel, x: np.ndarray, y, class_weights=None) -> float:
    y = np.asarray(y, dtype=np.int64)
    logp = ops.log_softmax(forward_batch(model, x).astype(np.float64))
    wts = _class_weights(model, class_weights)[y]
    return float(-(wts * logp[np.arange(len(y)), y]).mean())


def loss_and_grad(model: ScnModel, x: np.ndarray, y, class_weights=None):
    """Mean class-weighted softmax cross-entropy and its gradient.

    Returns ``(loss, grads)`` with ``grads`` a list of ``(dW, db)`` per layer.
    """
    y = np.asarray(y, dtype=np.int64)
    if len(y) == 0:
        raise ValueError("empty batch")
    logits, caches, last_hw = forward_batch(model, x, keep_cache=True)
    n = len(y)
    wts = _class_weights(model, class_weights)[y]
    logp = ops.log_softmax(logits.astype(np.float64))
    loss = float(-(wts * logp[np.arange(n), y]).mean())

    dz = np.exp(logp)
    dz[np.arange(n), y] -= 1.0
    dz *= (wts / n)[:, None]
    grad = ops.global_avg_pool_backward(dz.T.astype(model.dtype), last_hw)

    grads = [None] * len(model.weights)
    for li in range(len(model.weights) - 1, -1, -1):
        spec = model.config.layers[li]
        cache, pre = caches[li]
        grad = ops.relu_backward(pre, grad)
        if spec.kind == CROSS3D:
            dx, dw, db = ops.conv3d_cross_channel_backward(grad, cache, need_dx=False)
        else:
            dx, dw, db = ops.conv2d_backward(grad, cache, need_dx=li > 0)
        grads[li] = (dw, db)
        grad = dx
    return loss, grads


def sgd_step(model: ScnModel, grads, lr: float, velocity=None, momentum: float = 0.0) -> ScnModel:
    """In-place update ``w <- w - lr * g`` (optionally with heavy-ball momentum)."""
    if len(grads) != len(model.weights):
        raise ValueError("gradient list does not match model layers")
    for li, (dw, db) in enumerate(grads):
        if dw.shape != model.weights[li].shape or db.shape != model.biases[li].shape:
            raise ValueError(f"gradient shape mismatch in layer {li}")
    for li, (dw, db) in enumerate(grads):
        if velocity is not None and momentum:
            vw, vb = velocity[li]
            vw *= momentum
            vw += dw
            vb *= momentum
            vb += db
            dw, db = vw, vb
        model.weights[li] -= np.asarray(lr * dw, dtype=model.dtype)
        model.biases[li] -= np.asarray(lr * db, dtype=model.dtype)
    return model


def zero_velocity(model: ScnModel):
    return [(np.zeros_like(w), np.zeros_like(b)) for w, b in zip(model.weights, model.biases)]


def flat_grads(grads: Sequence) -> list[np.ndarray]:
    out = []
    for dw, db in grads:
        out.extend((dw, db))
    return out
