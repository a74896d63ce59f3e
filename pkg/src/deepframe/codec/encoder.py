"""Encoder: per-block rate-distortion mode decision and closed-loop reconstruction.

Every candidate (intra, skip, uni/bi inter, deep prediction) is trial-coded:
its residual is transformed, quantised and reconstructed, and the cost is
J = SAD(source, reconstruction) + sqrt(lambda) * bits, with bits estimated
from the live context states. The cheapest candidate is written.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from ..video_io import Frame
from . import gop
from .bitstream import StreamHeader, pack_frame
from .blocks import (
    NO_WEIGHTS,
    DeepModel,
    FrameState,
    RDContext,
    deep_block,
    frame_checksum,
    inter_prediction,
    reconstruct,
)
from .entropy import CATEGORIES, SyntaxWriter
from .intra import INTRA_MODES
from .motion import LUMA_MARGIN, RefPlanes, best_integer_mv, refine_half_pel, sad_surfaces
from .syntax import BlockContext, BlockDecision, Mode, encode_block_syntax, header_rate, residual_rate
from .transform import LOSSLESS_QP, transform_quantize

log = logging.getLogger(__name__)


@dataclass
class CodingConfig:
    profile: str = "LP"
    qp: int = 32
    block: int = 16
    search: int = 24
    half_pel: bool = True
    dfp: bool = True
    threads: int = 1

    def validate(self) -> "CodingConfig":
        gop.profile_id(self.profile)
        if not 0 <= self.qp <= 51:
            raise ValueError(f"QP must be in 0..51, got {self.qp}")
        if self.block not in (8, 16, 32):
            raise ValueError(f"block size must be 8, 16 or 32, got {self.block}")
        if not 0 < self.search <= LUMA_MARGIN - 2:
            raise ValueError(f"search range must be in 1..{LUMA_MARGIN - 2}, got {self.search}")
        return self


@dataclass
class FrameStats:
    poc: int
    frame_type: int
    bits: dict
    modes: np.ndarray
    dfp_refs: tuple | None = None
    payload_bytes: int = 0
    best_cost: np.ndarray | None = None
    cost_without_dfp: np.ndarray | None = None


@dataclass
class EncodeResult:
    stream: bytes
    recon: list
    header: StreamHeader
    frames: list = field(default_factory=list)
    elapsed: float = 0.0

    def category_bits(self) -> dict:
        total = dict.fromkeys(CATEGORIES, 0)
        for f in self.frames:
            for k, v in f.bits.items():
                total[k] += v
        return total

    @property
    def payload_bits(self) -> int:
        return 8 * sum(f.payload_bytes for f in self.frames)


def _as_int(planes):
    return tuple(np.asarray(p, dtype=np.int32) for p in planes)


def _source_block(src: Frame, by: int, bx: int, b: int):
    y, x, c = by * b, bx * b, b // 2
    return (
        src.y[y:y + b, x:x + b].astype(np.int32),
        src.u[y // 2:y // 2 + c, x // 2:x // 2 + c].astype(np.int32),
        src.v[y // 2:y // 2 + c, x // 2:x // 2 + c].astype(np.int32),
    )


def _trial(cur, pred, qp: int):
    levels = []
    for c, p in zip(cur, pred):
        lv = transform_quantize(c - p, qp)
        levels.append(lv if lv.any() else None)
    levels = tuple(levels)
    rec = reconstruct(pred, levels, qp)
    dist = sum(int(np.abs(c - r.astype(np.int32)).sum()) for c, r in zip(cur, rec))
    return levels, rec, dist


class FrameEncoder:
    def __init__(self, src: Frame, ctx: RDContext, cfg: CodingConfig, frame_type: int):
        self.src = src
        self.ctx = ctx
        self.cfg = cfg
        self.frame_type = frame_type
        self.state = FrameState(src.width, src.height, cfg.block, src.poc)
        self.writer = SyntaxWriter()
        self.surfaces = [
            sad_surfaces(src.y, ref.y, LUMA_MARGIN, cfg.block, cfg.search, cfg.threads) for ref in ctx.refs
        ]
        n = self.state.nby, self.state.nbx
        self.best_cost = np.zeros(n)
        self.cost_without_dfp = np.full(n, np.inf)

    def _candidate(self, decision, cur, pred, bctx, skip=False):
        w = self.writer
        if skip:
            levels = (None, None, None)
            rec = reconstruct(pred, levels, self.ctx.qp)
            dist = sum(int(np.abs(c - r.astype(np.int32)).sum()) for c, r in zip(cur, rec))
        else:
            levels, rec, dist = _trial(cur, pred, self.ctx.qp)
        decision.levels = levels
        rate = header_rate(w, decision, bctx)
        if not skip:
            rate += residual_rate(w, levels)
        cost = dist + self.ctx.lam_sad * rate
        decision.cost = {"D": dist, "R": rate, "J": cost}
        return decision, rec

    def _motion_search(self, cur, by, bx, ref_idx, pred_mv):
        cfg, ctx = self.cfg, self.ctx
        b = cfg.block
        mv, _, _ = best_integer_mv(self.surfaces[ref_idx][by, bx], pred_mv, ctx.lam_sad, cfg.search)
        if cfg.half_pel:
            mv, _ = refine_half_pel(cur[0], ctx.refs[ref_idx], by * b, bx * b, b, mv, pred_mv,
                                    ctx.lam_sad, cfg.search)
        return mv

    def candidates(self, by, bx, bctx):
        cfg, ctx, st = self.cfg, self.ctx, self.state
        b = cfg.block
        cur = _source_block(self.src, by, bx, b)
        out = []
        if self.frame_type != gop.FRAME_I:
            preds = bctx.mv_preds
            d = BlockDecision(Mode.SKIP, mvs=(preds[0],))
            skip = self._candidate(d, cur, inter_prediction(ctx.refs, by, bx, b, d), bctx, skip=True)
            # skip carries no residual, so lossless coding only allows it when it is exact
            if ctx.qp != LOSSLESS_QP or skip[0].cost["D"] == 0:
                out.append(skip)
            uni = []
            for r in range(len(ctx.refs)):
                mv = self._motion_search(cur, by, bx, r, preds[r])
                uni.append(mv)
                d = BlockDecision(Mode.INTER_UNI, ref_idx=r, mvs=(mv,))
                out.append(self._candidate(d, cur, inter_prediction(ctx.refs, by, bx, b, d), bctx))
            if bctx.bi_allowed:
                d = BlockDecision(Mode.INTER_BI, mvs=(uni[0], uni[1]))
                out.append(self._candidate(d, cur, inter_prediction(ctx.refs, by, bx, b, d), bctx))
            if ctx.dfp_available:
                d = BlockDecision(Mode.DFP)
                out.append(self._candidate(d, cur, _as_int(deep_block(ctx.deep_frame, by, bx, b)), bctx))
        # intra: direction chosen by luma prediction SAD, then trial-coded
        best_dir, best_pred, best_sad = None, None, None
        for mode in INTRA_MODES:
            pred = st.intra_prediction(by, bx, mode)
            s = int(np.abs(cur[0] - pred[0]).sum())
            if best_sad is None or s < best_sad:
                best_dir, best_pred, best_sad = mode, pred, s
        out.append(self._candidate(BlockDecision(Mode.INTRA, intra_dir=best_dir), cur, best_pred, bctx))
        return out

    def run(self) -> tuple[Frame, bytes, dict]:
        st, ctx = self.state, self.ctx
        for by in range(st.nby):
            for bx in range(st.nbx):
                bctx = BlockContext(
                    self.frame_type,
                    ctx.dfp_available,
                    len(ctx.refs),
                    ctx.bi_allowed,
                    st.mv_predictors(by, bx),
                    self.cfg.block,
                )
                cands = self.candidates(by, bx, bctx)
                best = min(range(len(cands)), key=lambda i: (cands[i][0].cost["J"], i))
                decision, rec = cands[best]
                self.best_cost[by, bx] = decision.cost["J"]
                rest = [c[0].cost["J"] for c in cands if c[0].mode != Mode.DFP]
                self.cost_without_dfp[by, bx] = min(rest)
                encode_block_syntax(self.writer, decision, bctx)
                st.store(by, bx, rec, decision)
        recon = st.frame()
        self.writer.fixed(frame_checksum(recon), 32, "Blk")
        payload = self.writer.finish()
        return recon, payload, dict(self.writer.bits)


def _check_frames(frames, block):
    if not frames:
        raise ValueError("no frames to encode")
    w, h = frames[0].width, frames[0].height
    for i, f in enumerate(frames):
        if (f.width, f.height) != (w, h):
            raise ValueError(f"frame {i} is {f.width}x{f.height}, expected {w}x{h}")
    if w % block or h % block:
        raise ValueError(f"frame size {w}x{h} must be a multiple of the {block}x{block} block")
    return w, h


def encode(frames, config: CodingConfig | None = None, model=None) -> EncodeResult:
    """Code ``frames`` (display order); ``model`` enables deep prediction when ``config.dfp``."""
    cfg = (config or CodingConfig()).validate()
    t0 = time.perf_counter()
    w, h = _check_frames(frames, cfg.block)
    deep = DeepModel.coerce(model) if cfg.dfp else None
    header = StreamHeader(w, h, len(frames), cfg.profile, cfg.qp, cfg.block, deep.hash if deep else NO_WEIGHTS)
    parts = [header.pack()]
    decoded: dict[int, Frame] = {}
    stats = []
    for k, poc in enumerate(gop.coding_order(cfg.profile, len(frames))):
        ftype = gop.frame_type(cfg.profile, k)
        src = frames[poc].copy(poc=poc)
        ctx = RDContext(cfg.qp)
        if ftype != gop.FRAME_I:
            ref_pocs = gop.reference_pocs(cfg.profile, poc, decoded)
            ctx.refs = [RefPlanes(decoded[p]) for p in ref_pocs]
            ctx.bi_allowed = gop.bi_allowed(cfg.profile, poc, ref_pocs)
            if deep is not None:
                ctx.dfp_refs = gop.select_dfp_references(poc, decoded)
                if ctx.dfp_refs:
                    ctx.deep_frame = deep.deep_frame(decoded, *ctx.dfp_refs, poc)
        fe = FrameEncoder(src, ctx, cfg, ftype)
        recon, payload, bits = fe.run()
        decoded[poc] = recon
        parts.append(pack_frame(ftype, payload))
        stats.append(
            FrameStats(poc, ftype, bits, fe.state.modes.copy(), ctx.dfp_refs, len(payload),
                       fe.best_cost, fe.cost_without_dfp)
        )
        log.debug("poc %d type %d bytes %d", poc, ftype, len(payload))
    recon = [decoded[p] for p in range(len(frames))]
    return EncodeResult(b"".join(parts), recon, header, stats, time.perf_counter() - t0)
