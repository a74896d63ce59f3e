"""Planar YUV420 frames, raw I/O, chroma conversion and synthetic test sequences."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .kvconfig import ConfigError, format_kv, parse_kv, parse_pair, require


@dataclass
class Frame:
    y: np.ndarray
    u: np.ndarray
    v: np.ndarray
    poc: int = 0

    def __post_init__(self):
        h, w = self.y.shape
        if h % 2 or w % 2:
            raise ValueError(f"frame dimensions must be even, got {w}x{h}")
        if self.u.shape != (h // 2, w // 2) or self.v.shape != (h // 2, w // 2):
            raise ValueError("chroma planes must be half the luma size in each dimension")

    @property
    def width(self) -> int:
        return self.y.shape[1]

    @property
    def height(self) -> int:
        return self.y.shape[0]

    @property
    def planes(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.y, self.u, self.v

    @classmethod
    def blank(cls, width, height, poc=0, value=128):
        return cls(
            np.full((height, width), value, np.uint8),
            np.full((height // 2, width // 2), value, np.uint8),
            np.full((height // 2, width // 2), value, np.uint8),
            poc,
        )

    def copy(self, poc=None) -> "Frame":
        return Frame(self.y.copy(), self.u.copy(), self.v.copy(), self.poc if poc is None else poc)

    def tobytes(self) -> bytes:
        return self.y.tobytes() + self.u.tobytes() + self.v.tobytes()

    def same_pixels(self, other: "Frame") -> bool:
        return all(np.array_equal(a, b) for a, b in zip(self.planes, other.planes))


def frame_bytes(width: int, height: int) -> int:
    return width * height * 3 // 2


def read_yuv(path, width: int, height: int) -> list[Frame]:
    data = Path(path).read_bytes()
    size = frame_bytes(width, height)
    if len(data) % size:
        idx = len(data) // size
        raise ValueError(
            f"{path}: size {len(data)} is not a multiple of the {width}x{height} frame size "
            f"{size}; frame {idx} is truncated ({len(data) - idx * size} of {size} bytes)"
        )
    frames = []
    cw, ch = width // 2, height // 2
    for i in range(len(data) // size):
        buf = np.frombuffer(data, np.uint8, count=size, offset=i * size)
        y = buf[: width * height].reshape(height, width)
        u = buf[width * height: width * height + cw * ch].reshape(ch, cw)
        v = buf[width * height + cw * ch:].reshape(ch, cw)
        frames.append(Frame(y.copy(), u.copy(), v.copy(), i))
    return frames


def write_yuv(path, frames) -> None:
    with open(path, "wb") as fh:
        for f in frames:
            fh.write(f.tobytes())


def round_half_away(x):
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def to_uint8(x) -> np.ndarray:
    return np.clip(round_half_away(x), 0, 255).astype(np.uint8)


def yuv420_to_444(frame: Frame) -> np.ndarray:
    """(h, w, 3) float64 in the 0..255 range; chroma upsampled by pixel replication."""
    up = lambda p: np.repeat(np.repeat(p, 2, axis=0), 2, axis=1)  # noqa: E731
    return np.stack([frame.y, up(frame.u), up(frame.v)], axis=-1).astype(np.float64)


def yuv444_to_420(tensor, poc: int = 0) -> Frame:
    """Inverse of :func:`yuv420_to_444`: chroma by 2x2 mean, then rounded to 8 bits."""
    t = np.asarray(tensor, dtype=np.float64)
    h, w, _ = t.shape

    def down(p):
        return p.reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))

    return Frame(to_uint8(t[..., 0]), to_uint8(down(t[..., 1])), to_uint8(down(t[..., 2])), poc)


def extract_patch(tensor: np.ndarray, x: int, y: int, width: int, height: int) -> np.ndarray:
    if x < 0 or y < 0 or y + height > tensor.shape[0] or x + width > tensor.shape[1]:
        raise ValueError(f"patch ({x},{y},{width}x{height}) exceeds tensor of shape {tensor.shape}")
    return tensor[y:y + height, x:x + width].copy()


def tile_patches(tensor: np.ndarray, size: int):
    """Non-overlapping (x, y, patch) tiles covering the tensor; edge tiles may be smaller."""
    h, w = tensor.shape[:2]
    return [
        (x, y, tensor[y:y + size, x:x + size].copy())
        for y in range(0, h, size)
        for x in range(0, w, size)
    ]


def assemble_patches(tiles, shape) -> np.ndarray:
    out = None
    for x, y, patch in tiles:
        if out is None:
            out = np.zeros(shape, dtype=patch.dtype)
        out[y:y + patch.shape[0], x:x + patch.shape[1]] = patch
    return out


# ---------------------------------------------------------------------------
# synthetic sequences

MAX_VELOCITY = 25.0


@dataclass
class SyntheticSpec:
    """Procedural textured sequence with known motion.

    ``motion`` is ``global`` (whole frame translates at ``velocity``) or
    ``local`` (background at ``velocity`` plus a rectangular object moving at
    ``object_velocity``). Velocities are in pixels per frame.
    """

    seed: int = 0
    motion: str = "global"
    velocity: tuple[float, float] = (0.0, 0.0)
    object_velocity: tuple[float, float] = (0.0, 0.0)
    object_size: tuple[int, int] = (96, 64)
    frames: int = 8
    width: int = 416
    height: int = 240
    smoothness: float = 2.0
    noise: float = 0.0
    extras: dict = field(default_factory=dict)

    def validate(self):
        if self.motion not in ("global", "local"):
            raise ConfigError(f"motion must be 'global' or 'local', got {self.motion!r}")
        for name, (vx, vy) in (("velocity", self.velocity), ("object_velocity", self.object_velocity)):
            if max(abs(vx), abs(vy)) > MAX_VELOCITY:
                raise ConfigError(f"{name} component exceeds {MAX_VELOCITY} px/frame: {(vx, vy)}")
        if self.width % 2 or self.height % 2 or self.frames < 1:
            raise ConfigError("width and height must be even and frames >= 1")
        return self

    @classmethod
    def from_kv(cls, values: dict[str, str]) -> "SyntheticSpec":
        w, h = parse_pair(require(values, "size"), int)
        spec = cls(
            seed=int(require(values, "seed")),
            motion=values.get("motion", "global"),
            velocity=parse_pair(require(values, "velocity")),
            object_velocity=parse_pair(values.get("object_velocity", "0,0")),
            object_size=parse_pair(values.get("object_size", "96,64"), int),
            frames=int(require(values, "frames")),
            width=w,
            height=h,
            smoothness=float(values.get("smoothness", 2.0)),
            noise=float(values.get("noise", 0.0)),
        )
        return spec.validate()

    @classmethod
    def from_text(cls, text: str) -> "SyntheticSpec":
        return cls.from_kv(parse_kv(text))

    def to_text(self) -> str:
        return format_kv(
            {
                "seed": self.seed,
                "motion": self.motion,
                "velocity": self.velocity,
                "object_velocity": self.object_velocity,
                "object_size": self.object_size,
                "frames": self.frames,
                "size": (self.width, self.height),
                "smoothness": self.smoothness,
                "noise": self.noise,
            }
        )


def periodic_texture(rng, height, width, smoothness, lo=16.0, hi=235.0):
    """Band-limited, periodic texture built in the Fourier domain."""
    spectrum = rng.standard_normal((height, width)) + 1j * rng.standard_normal((height, width))
    fy = np.fft.fftfreq(height)[:, None]
    fx = np.fft.fftfreq(width)[None, :]
    radius = np.sqrt(fx**2 + fy**2)
    # 1/f-like falloff with a Gaussian cut so bilinear resampling stays accurate
    envelope = np.exp(-((radius * smoothness * 6.0) ** 2)) / (radius + 1.0 / max(height, width))
    tex = np.real(np.fft.ifft2(spectrum * envelope))
    tex -= tex.mean()
    tex /= np.abs(tex).max() + 1e-12
    return (lo + hi) / 2 + tex * (hi - lo) / 2


def _sample(tex, ys, xs):
    """Bilinear sample of a periodic texture at float coordinates."""
    h, w = tex.shape
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    fy = ys - y0
    fx = xs - x0
    y0 %= h
    x0 %= w
    y1 = (y0 + 1) % h
    x1 = (x0 + 1) % w
    top = tex[y0][:, x0] * (1 - fx) + tex[y0][:, x1] * fx
    bot = tex[y1][:, x0] * (1 - fx) + tex[y1][:, x1] * fx
    return top * (1 - fy)[:, None] + bot * fy[:, None]


def _texture_set(rng, height, width, smoothness):
    # luma at full size; chroma at half size, lower contrast
    th, tw = 2 * height, 2 * width
    y = periodic_texture(rng, th, tw, smoothness)
    u = periodic_texture(rng, th // 2, tw // 2, smoothness, 96, 160)
    v = periodic_texture(rng, th // 2, tw // 2, smoothness, 96, 160)
    return y, u, v


def _render(textures, shift, width, height):
    """Planes of the texture set translated by ``shift`` = (dx, dy) luma pixels."""
    dx, dy = shift
    ty, tu, tv = textures
    ys = np.arange(height, dtype=np.float64) - dy
    xs = np.arange(width, dtype=np.float64) - dx
    y = _sample(ty, ys, xs)
    cys = np.arange(height // 2, dtype=np.float64) - dy / 2
    cxs = np.arange(width // 2, dtype=np.float64) - dx / 2
    return y, _sample(tu, cys, cxs), _sample(tv, cys, cxs)


def generate_synthetic(spec: SyntheticSpec) -> tuple[list[Frame], list[tuple[int, float, float]]]:
    """Render ``spec``; returns frames and per-frame background displacement rows."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    w, h = spec.width, spec.height
    bg = _texture_set(rng, h, w, spec.smoothness)
    fg = _texture_set(rng, h, w, spec.smoothness * 0.6) if spec.motion == "local" else None
    noise_rng = np.random.default_rng(spec.seed + 7919)
    ow, oh = spec.object_size
    ox0, oy0 = (w - ow) / 2.0, (h - oh) / 2.0
    frames = []
    motion = []
    for t in range(spec.frames):
        shift = (spec.velocity[0] * t, spec.velocity[1] * t)
        planes = list(_render(bg, shift, w, h))
        if fg is not None:
            oshift = (spec.object_velocity[0] * t, spec.object_velocity[1] * t)
            fplanes = _render(fg, oshift, w, h)
            # object rectangle snapped to even luma coordinates so chroma stays aligned
            x0 = int(2 * np.floor((ox0 + oshift[0]) / 2)) % w
            y0 = int(2 * np.floor((oy0 + oshift[1]) / 2)) % h
            ys = (np.arange(oh) + y0) % h
            xs = (np.arange(ow) + x0) % w
            planes[0][np.ix_(ys, xs)] = fplanes[0][np.ix_(ys, xs)]
            cys, cxs = ys[::2] // 2, xs[::2] // 2
            planes[1][np.ix_(cys, cxs)] = fplanes[1][np.ix_(cys, cxs)]
            planes[2][np.ix_(cys, cxs)] = fplanes[2][np.ix_(cys, cxs)]
        if spec.noise > 0:
            planes = [p + noise_rng.normal(0.0, spec.noise, p.shape) for p in planes]
        frames.append(Frame(*(to_uint8(p) for p in planes), poc=t))
        motion.append((t, 0.0, 0.0) if t == 0 else (t, float(spec.velocity[0]), float(spec.velocity[1])))
    return frames, motion


def write_motion_sidecar(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["poc", "dx", "dy"])
        for poc, dx, dy in rows:
            writer.writerow([poc, f"{dx:g}", f"{dy:g}"])


def read_motion_sidecar(path) -> list[tuple[int, float, float]]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return [(int(r["poc"]), float(r["dx"]), float(r["dy"])) for r in reader]


def load_synthetic_spec(path) -> SyntheticSpec:
    return SyntheticSpec.from_text(Path(path).read_text())


def parse_size(text: str) -> tuple[int, int]:
    w, h = parse_pair(text.lower(), int)
    return w, h


__all__ = [
    "Frame",
    "SyntheticSpec",
    "assemble_patches",
    "extract_patch",
    "frame_bytes",
    "generate_synthetic",
    "parse_size",
    "read_motion_sidecar",
    "read_yuv",
    "round_half_away",
    "tile_patches",
    "to_uint8",
    "write_motion_sidecar",
    "write_yuv",
    "yuv420_to_444",
    "yuv444_to_420",
]
