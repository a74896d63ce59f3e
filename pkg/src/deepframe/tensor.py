"""Dense float64 tensor ops with forward/backward passes.

Activations are NumPy arrays in (n, h, w, c) layout; the single-image
(h, w, c) layout is accepted by the functional ops and returned unchanged
in rank. Convolution weights are (k, k, c_in, c_out).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import kernels


class ShapeError(ValueError):
    pass


@dataclass
class LayerGrad:
    d_input: np.ndarray
    d_params: list[np.ndarray] = field(default_factory=list)


def as_tensor(x) -> np.ndarray:
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.ndim == 0 or arr.ndim > 4:
        raise ShapeError(f"tensor rank must be 1..4, got {arr.ndim}")
    if any(d < 1 for d in arr.shape):
        raise ShapeError(f"all extents must be >= 1, got {arr.shape}")
    return arr


def _batched(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        return x[None], True
    if x.ndim != 4:
        raise ShapeError(f"expected (h, w, c) or (n, h, w, c) activations, got shape {x.shape}")
    return x, False


def _unbatch(y, squeeze):
    return y[0] if squeeze else y


def _check_conv(x, weights, bias):
    k = weights.shape[0]
    if weights.ndim != 4 or weights.shape[1] != k or k % 2 != 1:
        raise ShapeError(f"weights must be (k, k, c_in, c_out) with odd k, got {weights.shape}")
    if x.shape[-1] != weights.shape[2]:
        raise ShapeError(
            f"input channel dimension {x.shape[-1]} does not match weights c_in {weights.shape[2]}"
        )
    if bias.shape != (weights.shape[3],):
        raise ShapeError(f"bias length {bias.shape} does not match weights c_out {weights.shape[3]}")


def conv2d(x, weights, bias):
    """Stride-1 convolution with zero padding that preserves h and w."""
    xb, squeeze = _batched(x)
    weights = np.asarray(weights, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    _check_conv(xb, weights, bias)
    y, _ = _conv_forward(xb, weights, bias)
    return _unbatch(y, squeeze)


def conv2d_3x3(x, weights, bias):
    weights = np.asarray(weights)
    if weights.shape[:2] != (3, 3):
        raise ShapeError(f"conv2d_3x3 expects (3, 3, c_in, c_out) weights, got {weights.shape}")
    return conv2d(x, weights, bias)


def _conv_forward(xb, weights, bias):
    # columns ordered (ky, kx, c_in) to match weights.reshape(-1, c_out)
    n, h, w, cin = xb.shape
    k = weights.shape[0]
    if k == 1:
        cols = xb.reshape(n * h * w, cin)
    else:
        cols = kernels.im2col(np.ascontiguousarray(xb), k)
    y = cols @ weights.reshape(k * k * cin, -1) + bias
    return y.reshape(n, h, w, -1), cols


def _conv_backward(cols, x_shape, weights, g):
    n, h, w, cin = x_shape
    k = weights.shape[0]
    cout = weights.shape[3]
    g2 = g.reshape(-1, cout)
    d_w = (cols.T @ g2).reshape(weights.shape)
    d_b = g2.sum(axis=0)
    d_cols = g2 @ weights.reshape(-1, cout).T
    if k == 1:
        return d_cols.reshape(x_shape), d_w, d_b
    return kernels.col2im(d_cols, n, h, w, cin, k), d_w, d_b


def relu(x):
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def avg_pool_2x2(x):
    xb, squeeze = _batched(x)
    n, h, w, c = xb.shape
    if h % 2 or w % 2:
        raise ShapeError(f"avg_pool_2x2 needs even extents, got h={h}, w={w}")
    y = xb.reshape(n, h // 2, 2, w // 2, 2, c).mean(axis=(2, 4))
    return _unbatch(y, squeeze)


@lru_cache(maxsize=64)
def upsample_matrix(n: int) -> np.ndarray:
    """(2n, n) linear map for 2x bilinear upsampling along one axis.

    Half-pixel centres (align_corners=False): output i samples the input at
    (i + 0.5) / 2 - 0.5, clamped to [0, n - 1].
    """
    m = np.zeros((2 * n, n))
    for i in range(2 * n):
        src = min(max((i + 0.5) / 2.0 - 0.5, 0.0), n - 1.0)
        lo = int(np.floor(src))
        hi = min(lo + 1, n - 1)
        frac = src - lo
        m[i, lo] += 1.0 - frac
        m[i, hi] += frac
    m.setflags(write=False)
    return m


def _upsample(xb):
    n, h, w, c = xb.shape
    uh, uw = upsample_matrix(h), upsample_matrix(w)
    y = np.matmul(uh, xb.reshape(n, h, w * c)).reshape(n, 2 * h, w, c)
    y = np.matmul(uw, y.transpose(0, 2, 1, 3).reshape(n, w, 2 * h * c))
    return y.reshape(n, 2 * w, 2 * h, c).transpose(0, 2, 1, 3)


def _upsample_backward(g):
    n, h2, w2, c = g.shape
    h, w = h2 // 2, w2 // 2
    uh, uw = upsample_matrix(h), upsample_matrix(w)
    d = np.matmul(uh.T, g.reshape(n, h2, w2 * c)).reshape(n, h, w2, c)
    d = np.matmul(uw.T, d.transpose(0, 2, 1, 3).reshape(n, w2, h * c))
    return d.reshape(n, w, h, c).transpose(0, 2, 1, 3)


def bilinear_upsample_2x(x):
    xb, squeeze = _batched(x)
    return _unbatch(np.ascontiguousarray(_upsample(xb)), squeeze)


def concat_channels(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[:-1] != b.shape[:-1]:
        raise ShapeError(f"spatial mismatch in concat: {a.shape[:-1]} vs {b.shape[:-1]}")
    return np.concatenate([a, b], axis=-1)


class Layer:
    """Base layer: caches what backward needs when called with ``train=True``."""

    def __init__(self):
        self._cache = None

    @property
    def params(self) -> list[np.ndarray]:
        return []

    def _require_cache(self):
        if self._cache is None:
            raise RuntimeError(f"{type(self).__name__}.backward called before forward(train=True)")
        return self._cache

    def backward(self, upstream) -> LayerGrad:
        raise NotImplementedError


class Conv2d(Layer):
    def __init__(self, weights, bias):
        super().__init__()
        self.weights = weights
        self.bias = bias

    @classmethod
    def init(cls, k, c_in, c_out, rng):
        # He-uniform over fan-in
        bound = np.sqrt(6.0 / (k * k * c_in))
        w = rng.uniform(-bound, bound, size=(k, k, c_in, c_out))
        return cls(w, np.zeros(c_out))

    @property
    def params(self):
        return [self.weights, self.bias]

    def forward(self, x, train=True):
        _check_conv(x, self.weights, self.bias)
        y, cols = _conv_forward(x, self.weights, self.bias)
        self._cache = (cols, x.shape) if train else None
        return y

    def backward(self, upstream):
        cols, x_shape = self._require_cache()
        d_x, d_w, d_b = _conv_backward(cols, x_shape, self.weights, upstream)
        return LayerGrad(d_x, [d_w, d_b])


class ReLU(Layer):
    def forward(self, x, train=True):
        mask = x > 0
        self._cache = mask if train else None
        return np.where(mask, x, 0.0)

    def backward(self, upstream):
        mask = self._require_cache()
        return LayerGrad(np.where(mask, upstream, 0.0))


class AvgPool2x2(Layer):
    def forward(self, x, train=True):
        self._cache = x.shape if train else None
        return avg_pool_2x2(x)

    def backward(self, upstream):
        self._require_cache()
        d = np.repeat(np.repeat(upstream, 2, axis=1), 2, axis=2) * 0.25
        return LayerGrad(d)


class Upsample2x(Layer):
    def forward(self, x, train=True):
        self._cache = x.shape if train else None
        return np.ascontiguousarray(_upsample(x))

    def backward(self, upstream):
        self._require_cache()
        return LayerGrad(np.ascontiguousarray(_upsample_backward(upstream)))


# ---------------------------------------------------------------------------
# DFPW weight files

DFPW_MAGIC = b"DFPW"
DFPW_VERSION = 1


def save_weights(path, tensors: dict[str, np.ndarray]) -> None:
    """Write named tensors as DFPW v1 (little-endian, float32 payload)."""
    Path(path).write_bytes(dump_weights(tensors))


def dump_weights(tensors: dict[str, np.ndarray]) -> bytes:
    parts = [DFPW_MAGIC, struct.pack("<II", DFPW_VERSION, len(tensors))]
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def load_weights(path) -> dict[str, np.ndarray]:
    return parse_weights(Path(path).read_bytes())


def parse_weights(data: bytes) -> dict[str, np.ndarray]:
    if data[:4] != DFPW_MAGIC:
        raise ValueError("not a DFPW weight file (bad magic)")
    version, count = struct.unpack_from("<II", data, 4)
    if version != DFPW_VERSION:
        raise ValueError(f"unsupported DFPW version {version}")
    pos = 12
    out: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", data, pos)
            pos += 2
            name = data[pos:pos + name_len].decode("utf-8")
            pos += name_len
            (rank,) = struct.unpack_from("<B", data, pos)
            pos += 1
            dims = struct.unpack_from(f"<{rank}I", data, pos)
            pos += 4 * rank
            size = int(np.prod(dims)) if rank else 1
            payload = np.frombuffer(data, dtype="<f4", count=size, offset=pos)
            pos += 4 * size
            out[name] = payload.astype(np.float64).reshape(dims)
    except (struct.error, ValueError) as exc:
        raise ValueError(f"truncated DFPW file at byte {pos}") from exc
    return out
