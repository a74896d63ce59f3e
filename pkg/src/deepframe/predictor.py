"""Deep frame predictor: kernel-estimation network and local separable synthesis.

Two reference patches, each with an appended temporal-index plane, go
through per-reference adaptation blocks (B1), a depth-4 U-Net (B2-B9) and
four output heads (B10). The heads emit a vertical and a horizontal 1-D
filter per pixel and per reference; the predicted pixel is the sum over
both references of the C x C window weighted by the outer product of the
two filters.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, replace

import numpy as np

from . import kernels
from .tensor import AvgPool2x2, Conv2d, ReLU, ShapeError, Upsample2x, load_weights, save_weights
from .video_io import Frame, yuv420_to_444, yuv444_to_420

BI_CONSTANTS = (-10.0, 10.0)
UNI_CONSTANTS = (-20.0, -10.0)
DUMMY_CONSTANT = 0.0
HEADS = ("fv1", "fh1", "fv2", "fh2")
ALIGN = 16
HEAD_INIT_SCALE = 0.1


def temporal_index_constants(t1: int, t2: int, t: int) -> tuple[float, float]:
    """Index-plane constants for references at POCs t1 < t2 predicting POC t."""
    if not t1 < t2:
        raise ValueError(f"reference POCs must satisfy t1 < t2, got t1={t1}, t2={t2}")
    if t1 < t < t2:
        return BI_CONSTANTS
    if t2 < t:
        return UNI_CONSTANTS
    raise ValueError(
        f"target POC {t} must lie between the references or after both (t1={t1}, t2={t2})"
    )


def make_input_tensor(patch, c: float) -> np.ndarray:
    patch = np.asarray(patch, dtype=np.float64)
    if patch.shape[-1] != 3:
        raise ShapeError(f"reference patch must have 3 colour channels, got {patch.shape[-1]}")
    plane = np.full(patch.shape[:-1] + (1,), float(c))
    return np.concatenate([patch, plane], axis=-1)


@dataclass(frozen=True)
class NetConfig:
    b1_width: int = 16
    encoder: tuple[int, ...] = (64, 128, 256, 512)
    decoder: tuple[int, ...] = (512, 256, 128, 64)
    kernel_size: int = 51
    use_b1: bool = True
    use_b2_b10_skips: bool = True
    dummy_index: bool = False

    @classmethod
    def production(cls) -> "NetConfig":
        return cls()

    @classmethod
    def reduced(cls, kernel_size: int = 5) -> "NetConfig":
        """Channel widths scaled by 1/8, used for gradient checks and desk training."""
        return cls(b1_width=2, encoder=(8, 16, 32, 64), decoder=(64, 32, 16, 8), kernel_size=kernel_size)

    def with_ablation(self, name: str | None) -> "NetConfig":
        if name in (None, "", "none", "no_geometric_loss"):
            return self
        if name == "no_temporal_index":
            return replace(self, dummy_index=True)
        if name == "no_b1":
            return replace(self, use_b1=False)
        if name == "no_b2_b10_skips":
            return replace(self, use_b2_b10_skips=False)
        raise ValueError(f"unknown ablation {name!r}")

    @property
    def merge_width(self) -> int:
        return 2 * self.b1_width if self.use_b1 else 8

    def validate(self):
        if self.kernel_size % 2 != 1:
            raise ValueError("kernel_size must be odd so the kernel has a centre tap")
        if len(self.encoder) != 4 or len(self.decoder) != 4:
            raise ValueError("the network is a depth-4 U-Net")
        if self.decoder[0] != self.encoder[3] or self.decoder[1:] != tuple(reversed(self.encoder[:3])):
            raise ValueError("decoder widths must mirror encoder widths for additive skips")
        return self


@dataclass
class KernelField:
    fv1: np.ndarray
    fh1: np.ndarray
    fv2: np.ndarray
    fh2: np.ndarray

    def as_tuple(self):
        return (self.fv1, self.fh1, self.fv2, self.fh2)


@dataclass
class ReferencePatchPair:
    p1: np.ndarray
    p2: np.ndarray
    t1: int
    t2: int
    t: int

    def constants(self) -> tuple[float, float]:
        return temporal_index_constants(self.t1, self.t2, self.t)


class _ConvBlock:
    """(conv3x3 -> ReLU) x 2, then optional 2x2 average pool or 2x bilinear upsample."""

    def __init__(self, prefix, c_in, c_out, rng, post=None):
        self.prefix = prefix
        self.conv1 = Conv2d.init(3, c_in, c_out, rng)
        self.relu1 = ReLU()
        self.conv2 = Conv2d.init(3, c_out, c_out, rng)
        self.relu2 = ReLU()
        self.post = {"pool": AvgPool2x2, "up": Upsample2x, None: None}[post]
        self.post = self.post() if self.post else None

    def named_params(self):
        yield f"{self.prefix}.conv1.w", self.conv1, "weights"
        yield f"{self.prefix}.conv1.b", self.conv1, "bias"
        yield f"{self.prefix}.conv2.w", self.conv2, "weights"
        yield f"{self.prefix}.conv2.b", self.conv2, "bias"

    def forward(self, x, train):
        pre = self.relu2.forward(
            self.conv2.forward(self.relu1.forward(self.conv1.forward(x, train), train), train), train
        )
        out = self.post.forward(pre, train) if self.post else pre
        return pre, out

    def backward(self, d_out, grads, d_pre=None):
        d = self.post.backward(d_out).d_input if self.post else d_out
        if d_pre is not None:
            d = d + d_pre
        d = self.relu2.backward(d).d_input
        g = self.conv2.backward(d)
        grads[f"{self.prefix}.conv2.w"], grads[f"{self.prefix}.conv2.b"] = g.d_params
        d = self.relu1.backward(g.d_input).d_input
        g = self.conv1.backward(d)
        grads[f"{self.prefix}.conv1.w"], grads[f"{self.prefix}.conv1.b"] = g.d_params
        return g.d_input


class _Head:
    """B10 output path: optional 1x1 projection of [decoder, merge] features, conv-ReLU-conv."""

    def __init__(self, prefix, width, merge_width, k, rng, skip):
        self.prefix = prefix
        self.proj = Conv2d.init(1, width + merge_width, width, rng) if skip else None
        self.conv1 = Conv2d.init(3, width, width, rng)
        self.relu1 = ReLU()
        self.conv2 = Conv2d.init(3, width, k, rng)
        # start near a centred averaging kernel: each 1-D tap pair multiplies to 1/2
        self.conv2.weights *= HEAD_INIT_SCALE
        self.conv2.bias[k // 2] = np.sqrt(0.5)

    def named_params(self):
        if self.proj is not None:
            yield f"{self.prefix}.conv0.w", self.proj, "weights"
            yield f"{self.prefix}.conv0.b", self.proj, "bias"
        yield f"{self.prefix}.conv1.w", self.conv1, "weights"
        yield f"{self.prefix}.conv1.b", self.conv1, "bias"
        yield f"{self.prefix}.conv2.w", self.conv2, "weights"
        yield f"{self.prefix}.conv2.b", self.conv2, "bias"

    def forward(self, feats, merged, train):
        z = feats
        if self.proj is not None:
            z = self.proj.forward(np.concatenate([feats, merged], axis=-1), train)
        z = self.relu1.forward(self.conv1.forward(z, train), train)
        return self.conv2.forward(z, train)

    def backward(self, d_out, grads):
        g = self.conv2.backward(d_out)
        grads[f"{self.prefix}.conv2.w"], grads[f"{self.prefix}.conv2.b"] = g.d_params
        d = self.relu1.backward(g.d_input).d_input
        g = self.conv1.backward(d)
        grads[f"{self.prefix}.conv1.w"], grads[f"{self.prefix}.conv1.b"] = g.d_params
        if self.proj is None:
            return g.d_input, None
        g = self.proj.backward(g.d_input)
        grads[f"{self.prefix}.conv0.w"], grads[f"{self.prefix}.conv0.b"] = g.d_params
        width = self.conv1.weights.shape[2]
        return g.d_input[..., :width], g.d_input[..., width:]


class FramePredictor:
    """Kernel-estimation network. ``params`` maps canonical names to live arrays."""

    def __init__(self, config: NetConfig | None = None, seed: int = 0):
        self.config = (config or NetConfig.production()).validate()
        cfg = self.config
        rng = np.random.default_rng(seed)
        if cfg.use_b1:
            self.b1 = [_ConvBlock(f"b1.p{i}", 4, cfg.b1_width, rng) for i in (1, 2)]
        else:
            self.b1 = None
        widths_in = (cfg.merge_width,) + cfg.encoder[:3]
        self.encoder = [
            _ConvBlock(f"b{n}.main", c_in, c_out, rng, "pool")
            for n, c_in, c_out in zip(range(2, 6), widths_in, cfg.encoder)
        ]
        dec_in = (cfg.encoder[3],) + cfg.decoder[:3]
        self.decoder = [
            _ConvBlock(f"b{n}.main", c_in, c_out, rng, "up")
            for n, c_in, c_out in zip(range(6, 10), dec_in, cfg.decoder)
        ]
        self.heads = [
            _Head(f"b10.{name}", cfg.decoder[3], cfg.merge_width, cfg.kernel_size, rng, cfg.use_b2_b10_skips)
            for name in HEADS
        ]
        self._merged_shape = None

    def _modules(self):
        yield from self.b1 or []
        yield from self.encoder
        yield from self.decoder
        yield from self.heads

    def _named(self):
        for m in self._modules():
            yield from m.named_params()

    @property
    def params(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((name, getattr(layer, attr)) for name, layer, attr in self._named())

    def load_params(self, tensors: dict[str, np.ndarray]) -> None:
        expected = {name: (layer, attr) for name, layer, attr in self._named()}
        missing = sorted(set(expected) - set(tensors))
        extra = sorted(set(tensors) - set(expected))
        if missing or extra:
            raise ValueError(f"weight names do not match network: missing={missing[:4]} extra={extra[:4]}")
        for name, (layer, attr) in expected.items():
            cur = getattr(layer, attr)
            arr = np.asarray(tensors[name], dtype=np.float64)
            if arr.shape != cur.shape:
                raise ValueError(f"{name}: shape {arr.shape} does not match network {cur.shape}")
            cur[...] = arr

    @classmethod
    def from_tensors(cls, tensors: dict[str, np.ndarray], dummy_index: bool = False) -> "FramePredictor":
        cfg = infer_config(tensors, dummy_index)
        model = cls(cfg)
        model.load_params(tensors)
        return model

    @classmethod
    def load(cls, path) -> "FramePredictor":
        return cls.from_tensors(load_weights(path))

    def save(self, path) -> None:
        save_weights(path, self.params)

    def index_constants(self, t1, t2, t):
        if self.config.dummy_index:
            return DUMMY_CONSTANT, DUMMY_CONSTANT
        return temporal_index_constants(t1, t2, t)

    def forward(self, x1, x2, train: bool = False) -> KernelField:
        """x1, x2: (n, h, w, 4) inputs with temporal-index planes; h, w multiples of 16."""
        for x in (x1, x2):
            if x.ndim != 4 or x.shape[-1] != 4:
                raise ShapeError(f"network inputs must be (n, h, w, 4), got {x.shape}")
        if x1.shape != x2.shape:
            raise ShapeError(f"input shape mismatch {x1.shape} vs {x2.shape}")
        h, w = x1.shape[1:3]
        if h % ALIGN or w % ALIGN:
            raise ShapeError(
                f"input extents {h}x{w} must be multiples of {ALIGN}; pad the patches first"
            )
        if self.b1:
            _, a = self.b1[0].forward(x1, train)
            _, b = self.b1[1].forward(x2, train)
            merged = np.concatenate([a, b], axis=-1)
        else:
            merged = np.concatenate([x1, x2], axis=-1)
        skips = []
        z = merged
        for blk in self.encoder:
            pre, z = blk.forward(z, train)
            skips.append(pre)
        for blk, skip in zip(self.decoder, reversed(skips)):
            _, z = blk.forward(z, train)
            z = z + skip
        self._merged_shape = merged.shape
        outs = [head.forward(z, merged, train) for head in self.heads]
        return KernelField(*outs)

    def backward(self, d_field: KernelField) -> "OrderedDict[str, np.ndarray]":
        grads: dict[str, np.ndarray] = {}
        d_z = 0.0
        d_merged = np.zeros(self._merged_shape)
        for head, d_out in zip(self.heads, d_field.as_tuple()):
            d_feat, d_m = head.backward(d_out, grads)
            d_z = d_z + d_feat
            if d_m is not None:
                d_merged += d_m
        d_skips = []
        for blk in reversed(self.decoder):
            d_skips.append(d_z)
            d_z = blk.backward(d_z, grads)
        for blk, d_pre in zip(reversed(self.encoder), reversed(d_skips)):
            d_z = blk.backward(d_z, grads, d_pre=d_pre)
        d_merged += d_z
        if self.b1:
            w = self.config.b1_width
            self.b1[0].backward(d_merged[..., :w], grads)
            self.b1[1].backward(d_merged[..., w:], grads)
        return OrderedDict((name, grads[name]) for name in self.params)

    def predict_field(self, pair: ReferencePatchPair) -> KernelField:
        c1, c2 = self.index_constants(pair.t1, pair.t2, pair.t)
        x1 = make_input_tensor(pair.p1, c1)[None]
        x2 = make_input_tensor(pair.p2, c2)[None]
        f = self.forward(x1, x2, train=False)
        return KernelField(*(a[0] for a in f.as_tuple()))


def infer_config(tensors: dict[str, np.ndarray], dummy_index: bool = False) -> NetConfig:
    try:
        kernel_size = tensors["b10.fv1.conv2.w"].shape[-1]
        encoder = tuple(tensors[f"b{n}.main.conv2.w"].shape[-1] for n in range(2, 6))
        decoder = tuple(tensors[f"b{n}.main.conv2.w"].shape[-1] for n in range(6, 10))
    except KeyError as exc:
        raise ValueError(f"weight set lacks canonical tensor {exc}") from None
    use_b1 = "b1.p1.conv1.w" in tensors
    b1_width = tensors["b1.p1.conv2.w"].shape[-1] if use_b1 else 2
    return NetConfig(
        b1_width=b1_width,
        encoder=encoder,
        decoder=decoder,
        kernel_size=kernel_size,
        use_b1=use_b1,
        use_b2_b10_skips="b10.fv1.conv0.w" in tensors,
        dummy_index=dummy_index,
    ).validate()


def build_kernel(field: KernelField, ref_index: int, x: int, y: int) -> np.ndarray:
    """C x C kernel at pixel (x, y): outer product of the vertical and horizontal filters."""
    if ref_index not in (1, 2):
        raise ValueError("ref_index must be 1 or 2")
    fv = field.fv1 if ref_index == 1 else field.fv2
    fh = field.fh1 if ref_index == 1 else field.fh2
    h, w = fv.shape[-3:-1]
    if not (0 <= x < w and 0 <= y < h):
        raise IndexError(f"pixel ({x}, {y}) outside {w}x{h} field")
    return np.outer(fv[..., y, x, :], fh[..., y, x, :])


def _as_batch(a):
    a = np.ascontiguousarray(a, dtype=np.float64)
    return (a[None], True) if a.ndim == 3 else (a, False)


def _pad_edge(p, r):
    return np.pad(p, ((0, 0), (r, r), (r, r), (0, 0)), mode="edge")


def _check_field(p1, p2, field):
    if p1.shape != p2.shape:
        raise ShapeError(f"reference patches differ in shape: {p1.shape} vs {p2.shape}")
    for name, f in zip(HEADS, field):
        if f.shape[:-1] != p1.shape[:-1]:
            raise ShapeError(f"{name} spatial shape {f.shape[:-1]} does not match patches {p1.shape[:-1]}")
        if f.shape[-1] % 2 != 1:
            raise ShapeError(f"{name} filter length {f.shape[-1]} must be odd")


def synthesize(p1, p2, field: KernelField) -> np.ndarray:
    """Predicted patch: sum over both references of the local separable convolution.

    The same per-pixel kernel applies to every colour channel; windows
    that cross the patch border are filled by edge replication.
    """
    (p1, squeeze), (p2, _) = _as_batch(p1), _as_batch(p2)
    f = tuple(_as_batch(a)[0] for a in field.as_tuple())
    _check_field(p1, p2, f)
    r = f[0].shape[-1] // 2
    out = kernels.local_conv_forward(_pad_edge(p1, r), f[0], f[1])
    out += kernels.local_conv_forward(_pad_edge(p2, r), f[2], f[3])
    return out[0] if squeeze else out


def synthesize_backward(p1, p2, field: KernelField, grad) -> KernelField:
    """Gradient of a scalar w.r.t. the four filter fields, given d(scalar)/d(output)."""
    (p1, squeeze), (p2, _) = _as_batch(p1), _as_batch(p2)
    g, _ = _as_batch(grad)
    f = tuple(_as_batch(a)[0] for a in field.as_tuple())
    r = f[0].shape[-1] // 2
    d_fv1, d_fh1 = kernels.local_conv_backward(_pad_edge(p1, r), f[0], f[1], g)
    d_fv2, d_fh2 = kernels.local_conv_backward(_pad_edge(p2, r), f[2], f[3], g)
    out = (d_fv1, d_fh1, d_fv2, d_fh2)
    return KernelField(*(a[0] for a in out)) if squeeze else KernelField(*out)


def pad_to_multiple(t: np.ndarray, multiple: int = ALIGN) -> np.ndarray:
    h, w = t.shape[:2]
    ph, pw = (-h) % multiple, (-w) % multiple
    if not ph and not pw:
        return t
    return np.pad(t, ((0, ph), (0, pw), (0, 0)), mode="edge")


def predict_frame(ref1: Frame, ref2: Frame, t1: int, t2: int, t: int, model: FramePredictor) -> Frame:
    """Deep frame for POC ``t`` from two decoded YUV420 frames."""
    if (ref1.width, ref1.height) != (ref2.width, ref2.height):
        raise ValueError(
            f"reference frames differ in size: {ref1.width}x{ref1.height} vs {ref2.width}x{ref2.height}"
        )
    h, w = ref1.height, ref1.width
    a = pad_to_multiple(yuv420_to_444(ref1) / 255.0)
    b = pad_to_multiple(yuv420_to_444(ref2) / 255.0)
    field = model.predict_field(ReferencePatchPair(a, b, t1, t2, t))
    out = synthesize(a, b, field)[:h, :w]
    return yuv444_to_420(np.clip(out, 0.0, 1.0) * 255.0, poc=t)
