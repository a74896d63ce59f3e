"""Decoder: parses DFC1 streams and rebuilds frames with the encoder's exact arithmetic."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from ..video_io import Frame
from . import gop
from .bitstream import iter_frames, parse_header
from .blocks import NO_WEIGHTS, DeepModel, FrameState, deep_block, frame_checksum, inter_prediction, reconstruct
from .entropy import CATEGORIES, DecodeError, SyntaxReader
from .motion import LUMA_MARGIN, RefPlanes
from .syntax import BlockContext, Mode, decode_block_syntax


class WeightsMismatch(ValueError):
    pass


@dataclass
class DecodedFrame:
    poc: int
    frame_type: int
    bits: dict
    modes: np.ndarray
    dfp_refs: tuple | None


@dataclass
class DecodeResult:
    frames: list
    header: object
    stats: list = field(default_factory=list)
    elapsed: float = 0.0

    def category_bits(self) -> dict:
        total = dict.fromkeys(CATEGORIES, 0)
        for f in self.stats:
            for k, v in f.bits.items():
                total[k] += v
        return total


def _mv_in_range(mv, block_limit):
    return abs(mv[0]) <= block_limit and abs(mv[1]) <= block_limit


def decode(stream: bytes, model=None) -> DecodeResult:
    t0 = time.perf_counter()
    header = parse_header(stream)
    deep = None
    if header.weights_hash != NO_WEIGHTS:
        if model is None:
            raise WeightsMismatch("stream uses deep prediction but no weights were provided")
        deep = DeepModel.coerce(model)
        if deep.hash != header.weights_hash:
            raise WeightsMismatch(
                f"weights hash {deep.hash.hex()} does not match stream header {header.weights_hash.hex()}"
            )
    order = gop.coding_order(header.profile, header.frames)
    decoded: dict[int, Frame] = {}
    stats = []
    b = header.block
    mv_limit = 2 * (LUMA_MARGIN - 2)
    for k, (ftype, payload, offset) in enumerate(iter_frames(stream, header.frames)):
        poc = order[k]
        expected = gop.frame_type(header.profile, k)
        if ftype != expected:
            raise DecodeError(f"frame {k} has type {ftype}, expected {expected}", offset - 5)
        refs, bi_ok, dfp_refs = [], False, None
        if ftype != gop.FRAME_I:
            ref_pocs = gop.reference_pocs(header.profile, poc, decoded)
            refs = [RefPlanes(decoded[p]) for p in ref_pocs]
            bi_ok = gop.bi_allowed(header.profile, poc, ref_pocs)
            if deep is not None:
                dfp_refs = gop.select_dfp_references(poc, decoded)
        deep_frame = None
        reader = SyntaxReader(payload, offset)
        st = FrameState(header.width, header.height, b, poc)
        for by in range(st.nby):
            for bx in range(st.nbx):
                bctx = BlockContext(ftype, dfp_refs is not None, len(refs), bi_ok, st.mv_predictors(by, bx), b)
                d = decode_block_syntax(reader, bctx)
                if d.mode == Mode.INTRA:
                    pred = st.intra_prediction(by, bx, d.intra_dir)
                elif d.mode == Mode.DFP:
                    if deep_frame is None:
                        deep_frame = deep.deep_frame(decoded, *dfp_refs, poc)
                    pred = deep_block(deep_frame, by, bx, b)
                else:
                    if not all(_mv_in_range(mv, mv_limit) for mv in d.mvs):
                        raise reader.error(f"motion vector out of range in block ({bx}, {by})")
                    pred = inter_prediction(refs, by, bx, b, d)
                st.store(by, bx, reconstruct(pred, d.levels, header.qp), d)
        recon = st.frame()
        checksum = reader.fixed(32, "Blk")
        reader.finish()
        if checksum != frame_checksum(recon):
            raise DecodeError(f"reconstruction checksum mismatch in frame {k} (poc {poc})", offset)
        decoded[poc] = recon
        stats.append(DecodedFrame(poc, ftype, dict(reader.bits), st.modes.copy(), dfp_refs))
    frames = [decoded[p] for p in range(header.frames)]
    return DecodeResult(frames, header, stats, time.perf_counter() - t0)
