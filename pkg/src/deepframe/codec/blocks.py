"""Pieces shared by encoder and decoder so both reconstruct identically."""

from __future__ import annotations

import hashlib
import math
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..predictor import FramePredictor, predict_frame
from ..tensor import dump_weights, parse_weights
from ..video_io import Frame
from . import intra
from .motion import RefPlanes, bi_average, median_predictor
from .syntax import BlockDecision, Mode
from .transform import dequantize_inverse

NO_WEIGHTS = bytes(8)


def lagrangian(qp: int) -> float:
    return 0.85 * 2.0 ** ((qp - 12) / 3.0)


@dataclass
class RDContext:
    """Per-frame coding state shared by all block decisions."""

    qp: int
    refs: list = field(default_factory=list)
    dfp_refs: tuple | None = None
    deep_frame: Frame | None = None
    bi_allowed: bool = False

    @property
    def lam(self) -> float:
        return lagrangian(self.qp)

    @property
    def lam_sad(self) -> float:
        # SAD-domain multiplier: square root of the squared-error lambda
        return math.sqrt(self.lam)

    @property
    def dfp_available(self) -> bool:
        return self.dfp_refs is not None

    @property
    def ref_pocs(self) -> list[int]:
        return [r.poc for r in self.refs]


class DeepModel:
    """Predictor weights as both sides see them: the float32 DFPW image and its hash."""

    def __init__(self, blob: bytes):
        self.blob = blob
        self.hash = hashlib.sha256(blob).digest()[:8]
        self.predictor = FramePredictor.from_tensors(parse_weights(blob))

    @classmethod
    def coerce(cls, model) -> "DeepModel | None":
        if model is None or isinstance(model, DeepModel):
            return model
        if isinstance(model, FramePredictor):
            return cls(dump_weights(model.params))
        if isinstance(model, (bytes, bytearray)):
            return cls(bytes(model))
        return cls(Path(model).read_bytes())

    def deep_frame(self, frames: dict, t1: int, t2: int, t: int) -> Frame:
        return predict_frame(frames[t1], frames[t2], t1, t2, t, self.predictor)


class FrameState:
    """Reconstruction planes and per-block motion field of the frame being coded."""

    def __init__(self, width: int, height: int, block: int, poc: int):
        self.block = block
        self.poc = poc
        self.y = np.zeros((height, width), np.uint8)
        self.u = np.zeros((height // 2, width // 2), np.uint8)
        self.v = np.zeros((height // 2, width // 2), np.uint8)
        self.nby, self.nbx = height // block, width // block
        # motion[by][bx] is None (intra/DFP) or a 2-tuple of per-reference MVs (or None)
        self.motion = [[None] * self.nbx for _ in range(self.nby)]
        self.modes = np.full((self.nby, self.nbx), -1, np.int8)

    def mv_predictors(self, by: int, bx: int) -> tuple:
        def at(y, x):
            if 0 <= y < self.nby and 0 <= x < self.nbx:
                return self.motion[y][x]
            return None

        corner = at(by - 1, bx + 1) if bx + 1 < self.nbx else at(by - 1, bx - 1)
        neigh = (at(by, bx - 1), at(by - 1, bx), corner)
        return tuple(
            median_predictor([n[r] if n is not None else None for n in neigh]) for r in (0, 1)
        )

    def intra_prediction(self, by: int, bx: int, mode: int):
        b = self.block
        y, x = by * b, bx * b
        return (
            intra.predict(self.y, y, x, b, mode),
            intra.predict(self.u, y // 2, x // 2, b // 2, mode),
            intra.predict(self.v, y // 2, x // 2, b // 2, mode),
        )

    def store(self, by: int, bx: int, planes, decision: BlockDecision) -> None:
        b = self.block
        y, x, c = by * b, bx * b, b // 2
        self.y[y:y + b, x:x + b] = planes[0]
        self.u[y // 2:y // 2 + c, x // 2:x // 2 + c] = planes[1]
        self.v[y // 2:y // 2 + c, x // 2:x // 2 + c] = planes[2]
        self.modes[by, bx] = int(decision.mode)
        if decision.mode == Mode.SKIP:
            self.motion[by][bx] = (tuple(decision.mvs[0]), None)
        elif decision.mode == Mode.INTER_UNI:
            mv = tuple(decision.mvs[0])
            self.motion[by][bx] = (mv, None) if decision.ref_idx == 0 else (None, mv)
        elif decision.mode == Mode.INTER_BI:
            self.motion[by][bx] = (tuple(decision.mvs[0]), tuple(decision.mvs[1]))

    def frame(self) -> Frame:
        return Frame(self.y, self.u, self.v, self.poc)


def deep_block(deep: Frame, by: int, bx: int, block: int):
    y, x, c = by * block, bx * block, block // 2
    return (
        deep.y[y:y + block, x:x + block].astype(np.int32),
        deep.u[y // 2:y // 2 + c, x // 2:x // 2 + c].astype(np.int32),
        deep.v[y // 2:y // 2 + c, x // 2:x // 2 + c].astype(np.int32),
    )


def inter_prediction(refs: list[RefPlanes], by: int, bx: int, block: int, decision: BlockDecision):
    y, x = by * block, bx * block
    if decision.mode in (Mode.SKIP, Mode.INTER_UNI):
        ref = refs[decision.ref_idx if decision.mode == Mode.INTER_UNI else 0]
        return ref.predict(y, x, block, decision.mvs[0])
    p0 = refs[0].predict(y, x, block, decision.mvs[0])
    p1 = refs[1].predict(y, x, block, decision.mvs[1])
    return bi_average(p0, p1)


def reconstruct(pred, levels, qp: int):
    """Prediction plus dequantised residual, rounded and clipped to 8 bits."""
    out = []
    for p, lv in zip(pred, levels):
        if lv is None:
            out.append(np.clip(p, 0, 255).astype(np.uint8))
            continue
        res = dequantize_inverse(lv, qp)
        val = p + np.sign(res) * np.floor(np.abs(res) + 0.5)
        out.append(np.clip(val, 0, 255).astype(np.uint8))
    return out


def frame_checksum(frame: Frame) -> int:
    return zlib.crc32(frame.tobytes()) & 0xFFFFFFFF
