"""Block-level syntax: decision records, writer/parser pair and rate estimates.

Inter-frame block layout, in parse order::

    skip_flag                                  (Skip)
    pred_mode: inter | intra                   (Blk)
    intra:  intra_dir                          (Intra), residual
    inter:  dfp_flag, only if deep prediction is available for the frame (DNN)
            dfp:  residual
            else: inter_dir if bi allowed (Blk), ref_idx if two refs (Inter),
                  one MVD per used reference (Inter), residual

Intra frames carry intra_dir and residual only. The residual is, per colour
component, a coded-block flag followed by ue(count - 1) and (ue(run), se(level))
pairs in zigzag order (Resi).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .entropy import Ctx, SyntaxReader, SyntaxWriter, se_len, ue_len
from .gop import FRAME_I
from .intra import DC, HORIZONTAL, VERTICAL
from .transform import from_run_levels, run_levels


class Mode(IntEnum):
    INTRA = 0
    INTER_UNI = 1
    INTER_BI = 2
    SKIP = 3
    DFP = 4


CBF_CTX = (Ctx.CBF_Y, Ctx.CBF_U, Ctx.CBF_V)


@dataclass
class BlockDecision:
    mode: Mode
    intra_dir: int = DC
    ref_idx: int = 0
    mvs: tuple = ()
    levels: tuple = (None, None, None)
    cost: dict = field(default_factory=dict, compare=False)

    def normalized(self) -> "BlockDecision":
        levels = tuple(
            None if lv is None or not np.any(lv) else np.asarray(lv, dtype=np.int64) for lv in self.levels
        )
        return BlockDecision(self.mode, self.intra_dir, self.ref_idx, tuple(tuple(m) for m in self.mvs), levels)

    def same_as(self, other: "BlockDecision") -> bool:
        a, b = self.normalized(), other.normalized()
        if (a.mode, a.mvs) != (b.mode, b.mvs):
            return False
        if a.mode == Mode.INTRA and a.intra_dir != b.intra_dir:
            return False
        if a.mode == Mode.INTER_UNI and a.ref_idx != b.ref_idx:
            return False
        for x, y in zip(a.levels, b.levels):
            if (x is None) != (y is None) or (x is not None and not np.array_equal(x, y)):
                return False
        return True


@dataclass
class BlockContext:
    """What the parser knows before reading a block."""

    frame_type: int
    dfp_available: bool = False
    n_refs: int = 0
    bi_allowed: bool = False
    mv_preds: tuple = ((0, 0), (0, 0))
    block: int = 16

    @property
    def component_sizes(self):
        return (self.block, self.block // 2, self.block // 2)


def _write_intra_dir(w: SyntaxWriter, d: int):
    w.flag(Ctx.INTRA_DIR0, 0 if d == DC else 1, "Intra")
    if d != DC:
        w.flag(Ctx.INTRA_DIR1, 0 if d == HORIZONTAL else 1, "Intra")


def _read_intra_dir(r: SyntaxReader) -> int:
    if r.flag(Ctx.INTRA_DIR0, "Intra") == 0:
        return DC
    return HORIZONTAL if r.flag(Ctx.INTRA_DIR1, "Intra") == 0 else VERTICAL


def write_residual(w: SyntaxWriter, levels, sizes) -> None:
    for c, size in enumerate(sizes):
        lv = levels[c]
        pairs = run_levels(np.asarray(lv)) if lv is not None else []
        w.flag(CBF_CTX[c], 1 if pairs else 0, "Resi")
        if not pairs:
            continue
        w.ue(len(pairs) - 1, "Resi")
        for run, level in pairs:
            w.ue(run, "Resi")
            w.se(level, "Resi")


def read_residual(r: SyntaxReader, sizes) -> tuple:
    out = []
    for c, size in enumerate(sizes):
        if not r.flag(CBF_CTX[c], "Resi"):
            out.append(None)
            continue
        count = r.ue("Resi") + 1
        if count > size * size:
            raise r.error(f"coefficient count {count} exceeds a {size}x{size} block")
        pairs = []
        for _ in range(count):
            run = r.ue("Resi")
            level = r.se("Resi")
            if level == 0:
                raise r.error("zero level in run-level pair")
            pairs.append((run, level))
        try:
            out.append(from_run_levels(pairs, size))
        except ValueError as exc:
            raise r.error(str(exc)) from None
    return tuple(out)


def encode_block_syntax(w: SyntaxWriter, d: BlockDecision, ctx: BlockContext) -> None:
    if ctx.frame_type == FRAME_I:
        if d.mode != Mode.INTRA:
            raise ValueError("intra frames hold intra blocks only")
        _write_intra_dir(w, d.intra_dir)
        write_residual(w, d.levels, ctx.component_sizes)
        return
    w.flag(Ctx.SKIP, 1 if d.mode == Mode.SKIP else 0, "Skip")
    if d.mode == Mode.SKIP:
        if d.mvs and tuple(d.mvs[0]) != tuple(ctx.mv_preds[0]):
            raise ValueError("skip blocks use the predicted motion vector")
        return
    w.flag(Ctx.PRED_MODE, 1 if d.mode == Mode.INTRA else 0, "Blk")
    if d.mode == Mode.INTRA:
        _write_intra_dir(w, d.intra_dir)
        write_residual(w, d.levels, ctx.component_sizes)
        return
    if ctx.dfp_available:
        w.flag(Ctx.DFP, 1 if d.mode == Mode.DFP else 0, "DNN")
    else:
        assert d.mode != Mode.DFP, "DFP flag written without available deep-prediction references"
    if d.mode == Mode.DFP:
        write_residual(w, d.levels, ctx.component_sizes)
        return
    if ctx.n_refs < 1:
        raise ValueError("inter block without reference frames")
    if ctx.bi_allowed:
        w.flag(Ctx.INTER_DIR, 1 if d.mode == Mode.INTER_BI else 0, "Blk")
    elif d.mode == Mode.INTER_BI:
        raise ValueError("bi-prediction is not allowed in this frame")
    if d.mode == Mode.INTER_UNI:
        if ctx.n_refs == 2:
            w.flag(Ctx.REF_IDX, d.ref_idx, "Inter")
        refs = (d.ref_idx,)
    else:
        refs = (0, 1)
    for mv, ref in zip(d.mvs, refs):
        pred = ctx.mv_preds[ref]
        w.se(mv[0] - pred[0], "Inter")
        w.se(mv[1] - pred[1], "Inter")
    write_residual(w, d.levels, ctx.component_sizes)


def decode_block_syntax(r: SyntaxReader, ctx: BlockContext) -> BlockDecision:
    sizes = ctx.component_sizes
    if ctx.frame_type == FRAME_I:
        d = _read_intra_dir(r)
        return BlockDecision(Mode.INTRA, intra_dir=d, levels=read_residual(r, sizes))
    if r.flag(Ctx.SKIP, "Skip"):
        if ctx.n_refs < 1:
            raise r.error("skip block without reference frames")
        return BlockDecision(Mode.SKIP, mvs=(tuple(ctx.mv_preds[0]),))
    if r.flag(Ctx.PRED_MODE, "Blk"):
        d = _read_intra_dir(r)
        return BlockDecision(Mode.INTRA, intra_dir=d, levels=read_residual(r, sizes))
    if ctx.dfp_available and r.flag(Ctx.DFP, "DNN"):
        return BlockDecision(Mode.DFP, levels=read_residual(r, sizes))
    if ctx.n_refs < 1:
        raise r.error("inter block without reference frames")
    bi = bool(ctx.bi_allowed and r.flag(Ctx.INTER_DIR, "Blk"))
    ref_idx = 0
    if not bi and ctx.n_refs == 2:
        ref_idx = r.flag(Ctx.REF_IDX, "Inter")
    refs = (0, 1) if bi else (ref_idx,)
    mvs = []
    for ref in refs:
        pred = ctx.mv_preds[ref]
        mvs.append((pred[0] + r.se("Inter"), pred[1] + r.se("Inter")))
    levels = read_residual(r, sizes)
    return BlockDecision(Mode.INTER_BI if bi else Mode.INTER_UNI, ref_idx=ref_idx, mvs=tuple(mvs), levels=levels)


# ---------------------------------------------------------------------------
# rate estimates from the live context states


def residual_rate(w: SyntaxWriter, levels) -> float:
    bits = 0.0
    for c, lv in enumerate(levels):
        pairs = run_levels(lv) if lv is not None else []
        bits += w.flag_cost(CBF_CTX[c], 1 if pairs else 0)
        if pairs:
            bits += ue_len(len(pairs) - 1)
            bits += sum(ue_len(run) + se_len(level) for run, level in pairs)
    return bits


def header_rate(w: SyntaxWriter, d: BlockDecision, ctx: BlockContext) -> float:
    """Bits of everything but the residual for decision ``d``."""
    if ctx.frame_type == FRAME_I:
        bits = w.flag_cost(Ctx.INTRA_DIR0, 0 if d.intra_dir == DC else 1)
        if d.intra_dir != DC:
            bits += w.flag_cost(Ctx.INTRA_DIR1, 0 if d.intra_dir == HORIZONTAL else 1)
        return bits
    bits = w.flag_cost(Ctx.SKIP, 1 if d.mode == Mode.SKIP else 0)
    if d.mode == Mode.SKIP:
        return bits
    bits += w.flag_cost(Ctx.PRED_MODE, 1 if d.mode == Mode.INTRA else 0)
    if d.mode == Mode.INTRA:
        bits += w.flag_cost(Ctx.INTRA_DIR0, 0 if d.intra_dir == DC else 1)
        if d.intra_dir != DC:
            bits += w.flag_cost(Ctx.INTRA_DIR1, 0 if d.intra_dir == HORIZONTAL else 1)
        return bits
    if ctx.dfp_available:
        bits += w.flag_cost(Ctx.DFP, 1 if d.mode == Mode.DFP else 0)
    if d.mode == Mode.DFP:
        return bits
    if ctx.bi_allowed:
        bits += w.flag_cost(Ctx.INTER_DIR, 1 if d.mode == Mode.INTER_BI else 0)
    refs = (0, 1) if d.mode == Mode.INTER_BI else (d.ref_idx,)
    if d.mode == Mode.INTER_UNI and ctx.n_refs == 2:
        bits += w.flag_cost(Ctx.REF_IDX, d.ref_idx)
    for mv, ref in zip(d.mvs, refs):
        pred = ctx.mv_preds[ref]
        bits += se_len(mv[0] - pred[0]) + se_len(mv[1] - pred[1])
    return bits
