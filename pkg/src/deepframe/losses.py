"""Training objective: pixel MSE, feature-space distance and image-gradient MAD.

Every loss accepts a single (h, w, c) patch or an (n, h, w, c) batch; batch
losses are the mean of the per-sample losses. Each ``*_grad`` function
returns the gradient of the matching loss with respect to ``pred``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import AvgPool2x2, Conv2d, ReLU, ShapeError


@dataclass(frozen=True)
class LossWeights:
    lambda_n: float = 2.0
    lambda_f: float = 2.0
    lambda_g: float = 1.0

    def __post_init__(self):
        for name in ("lambda_n", "lambda_f", "lambda_g"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")


# Sobel compass masks, rotated in 45 degree steps starting from "north".
COMPASS_MASKS = np.array(
    [
        [[1, 2, 1], [0, 0, 0], [-1, -2, -1]],
        [[2, 1, 0], [1, 0, -1], [0, -1, -2]],
        [[1, 0, -1], [2, 0, -2], [1, 0, -1]],
        [[0, -1, -2], [1, 0, -1], [2, 1, 0]],
        [[-1, -2, -1], [0, 0, 0], [1, 2, 1]],
        [[-2, -1, 0], [-1, 0, 1], [0, 1, 2]],
        [[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]],
        [[0, 1, 2], [-1, 0, 1], [-2, -1, 0]],
    ],
    dtype=np.float64,
) / 8.0
N_ORIENT = len(COMPASS_MASKS)


def _expand_weights(c_in):
    # stage 1: every colour channel gets all 8 orientations -> 8 * c_in outputs
    w = np.zeros((3, 3, c_in, c_in * N_ORIENT))
    for c in range(c_in):
        for o in range(N_ORIENT):
            w[:, :, c, c * N_ORIENT + o] = COMPASS_MASKS[o]
    return w


def _matched_weights(channels):
    # later stages: channel k is filtered only by its own orientation
    w = np.zeros((3, 3, channels, channels))
    for k in range(channels):
        w[:, :, k, k] = COMPASS_MASKS[k % N_ORIENT]
    return w


class FeatureExtractor:
    """Fixed, differentiable map from image patches to feature tensors."""

    name = "base"

    def forward(self, x, train=False):
        raise NotImplementedError

    def backward(self, d_feat):
        raise NotImplementedError


class IdentityFeatures(FeatureExtractor):
    name = "identity"

    def forward(self, x, train=False):
        return np.asarray(x, dtype=np.float64)

    def backward(self, d_feat):
        return d_feat


class EdgeBank(FeatureExtractor):
    """Three stages of (oriented derivative filters -> ReLU -> 2x2 average pool)."""

    name = "edgebank-v1"

    def __init__(self, channels=3, stages=3):
        width = channels * N_ORIENT
        self.layers = []
        for s in range(stages):
            w = _expand_weights(channels) if s == 0 else _matched_weights(width)
            self.layers += [Conv2d(w, np.zeros(width)), ReLU(), AvgPool2x2()]
        self.divisor = 2 ** stages

    def forward(self, x, train=False):
        z = np.asarray(x, dtype=np.float64)
        if z.shape[-3] % self.divisor or z.shape[-2] % self.divisor:
            raise ShapeError(f"edgebank-v1 needs extents divisible by {self.divisor}, got {z.shape}")
        squeeze = z.ndim == 3
        if squeeze:
            z = z[None]
        for layer in self.layers:
            z = layer.forward(z, train)
        self._squeeze = squeeze
        return z[0] if squeeze else z

    def backward(self, d_feat):
        d = d_feat[None] if self._squeeze else d_feat
        for layer in reversed(self.layers):
            d = layer.backward(d).d_input
        return d[0] if self._squeeze else d


FEATURE_PRESETS = {"edgebank-v1": EdgeBank, "identity": IdentityFeatures}


def feature_extractor(name: str) -> FeatureExtractor:
    try:
        return FEATURE_PRESETS[name]()
    except KeyError:
        raise ValueError(f"unknown feature extractor {name!r}; known: {sorted(FEATURE_PRESETS)}") from None


def _pair(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction shape {pred.shape} does not match target {target.shape}")
    if pred.ndim not in (3, 4):
        raise ShapeError(f"expected (h, w, c) or (n, h, w, c), got {pred.shape}")
    return pred, target


def _batch_count(x):
    return x.shape[0] if x.ndim == 4 else 1


def _sample_size(x):
    return int(np.prod(x.shape[-3:]))


def loss_mse(pred, target) -> float:
    pred, target = _pair(pred, target)
    return float(np.sum((pred - target) ** 2) / (_sample_size(pred) * _batch_count(pred)))


def loss_mse_grad(pred, target):
    pred, target = _pair(pred, target)
    return 2.0 * (pred - target) / (_sample_size(pred) * _batch_count(pred))


def loss_feature(pred, target, fx: FeatureExtractor) -> float:
    pred, target = _pair(pred, target)
    diff = fx.forward(pred) - fx.forward(target)
    return float(np.sum(diff**2) / _batch_count(pred))


def _feature_value_grad(pred, target, fx):
    ft = fx.forward(target, train=False)
    fp = fx.forward(pred, train=True)
    diff = fp - ft
    n = _batch_count(pred)
    return float(np.sum(diff**2) / n), fx.backward(2.0 * diff / n)


def loss_feature_grad(pred, target, fx: FeatureExtractor):
    pred, target = _pair(pred, target)
    return _feature_value_grad(pred, target, fx)[1]


def _diffs(a):
    return a[..., :, 1:, :] - a[..., :, :-1, :], a[..., 1:, :, :] - a[..., :-1, :, :]


def loss_gradient(pred, target) -> tuple[float, float]:
    """(horizontal, vertical) MAD between forward-difference image gradients."""
    pred, target = _pair(pred, target)
    norm = _sample_size(pred) * _batch_count(pred)
    px, py = _diffs(pred)
    tx, ty = _diffs(target)
    return float(np.abs(px - tx).sum() / norm), float(np.abs(py - ty).sum() / norm)


def loss_gradient_grad(pred, target):
    """Gradient of the sum of both terms; the kink of |x| at 0 contributes 0."""
    pred, target = _pair(pred, target)
    norm = _sample_size(pred) * _batch_count(pred)
    px, py = _diffs(pred)
    tx, ty = _diffs(target)
    sx = np.sign(px - tx) / norm
    sy = np.sign(py - ty) / norm
    g = np.zeros_like(pred)
    g[..., :, 1:, :] += sx
    g[..., :, :-1, :] -= sx
    g[..., 1:, :, :] += sy
    g[..., :-1, :, :] -= sy
    return g


def loss_terms(pred, target, fx: FeatureExtractor) -> dict[str, float]:
    gx, gy = loss_gradient(pred, target)
    return {"mse": loss_mse(pred, target), "feature": loss_feature(pred, target, fx), "grad_x": gx, "grad_y": gy}


def loss_total(pred, target, w: LossWeights | None = None, fx: FeatureExtractor | None = None) -> float:
    value, _ = loss_total_and_grad(pred, target, w, fx, need_grad=False)
    return value


def loss_total_and_grad(pred, target, w: LossWeights | None = None, fx: FeatureExtractor | None = None,
                        need_grad: bool = True):
    w = w or LossWeights()
    fx = fx or EdgeBank()
    pred, target = _pair(pred, target)
    value = w.lambda_n * loss_mse(pred, target)
    grad = w.lambda_n * loss_mse_grad(pred, target) if need_grad else None
    if w.lambda_f and need_grad:
        f_value, f_grad = _feature_value_grad(pred, target, fx)
        value += w.lambda_f * f_value
        grad += w.lambda_f * f_grad
    elif w.lambda_f:
        value += w.lambda_f * loss_feature(pred, target, fx)
    if w.lambda_g:
        value += w.lambda_g * sum(loss_gradient(pred, target))
        if need_grad:
            grad += w.lambda_g * loss_gradient_grad(pred, target)
    return value, grad
