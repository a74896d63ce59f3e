"""Block motion: SAD search surfaces, MV cost, sub-pel interpolation, MV prediction.

Motion vectors are stored in half-pel luma units as (mvx, mvy); the
prediction for a block at (x, y) reads the reference at (x + mvx/2, y + mvy/2).
Chroma uses the same vector at quarter-pel chroma precision.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .. import kernels
from .entropy import se_len

LUMA_MARGIN = 32
CHROMA_MARGIN = LUMA_MARGIN // 2


def pad_plane(plane: np.ndarray, margin: int) -> np.ndarray:
    return np.ascontiguousarray(np.pad(plane, margin, mode="edge"))


def sad(a, b) -> int:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"SAD operands differ in shape: {a.shape} vs {b.shape}")
    return int(np.abs(a.astype(np.int32) - b).sum())


def sad_surfaces(cur: np.ndarray, ref_padded: np.ndarray, margin: int, block: int, search: int,
                 threads: int = 1) -> np.ndarray:
    """SAD for every block and integer displacement, block rows split across threads."""
    cur = np.ascontiguousarray(cur, dtype=np.uint8)
    ref_padded = np.ascontiguousarray(ref_padded, dtype=np.uint8)
    nby = cur.shape[0] // block
    if threads <= 1 or nby < 2:
        return kernels.sad_surface(cur, ref_padded, margin, block, search)
    bounds = np.linspace(0, nby, min(threads, nby) + 1).astype(int)
    with ThreadPoolExecutor(max_workers=len(bounds) - 1) as pool:
        parts = list(
            pool.map(
                lambda r: kernels.sad_surface(cur, ref_padded, margin, block, search, r[0], r[1]),
                zip(bounds[:-1], bounds[1:]),
            )
        )
    out = parts[0]
    for (lo, hi), part in zip(zip(bounds[1:-1], bounds[2:]), parts[1:]):
        out[lo:hi] = part[lo:hi]
    return out


def mv_bits(mvx: int, mvy: int, pred) -> int:
    return se_len(mvx - pred[0]) + se_len(mvy - pred[1])


_SE_LEN_CACHE: dict[int, np.ndarray] = {}


def _se_len_table(limit: int) -> np.ndarray:
    tab = _SE_LEN_CACHE.get(limit)
    if tab is None:
        v = np.arange(-limit, limit + 1)
        k = np.where(v > 0, 2 * v - 1, -2 * v)
        tab = 2 * np.floor(np.log2(k + 1)).astype(np.int64) + 1
        _SE_LEN_CACHE[limit] = tab
    return tab


def best_integer_mv(surface: np.ndarray, pred, lam: float, search: int):
    """Integer MV (in half-pel units) minimising SAD + lam * MVD bits; ties go to the raster-first offset."""
    span = 2 * search + 1
    off = 2 * np.arange(-search, search + 1)
    limit = 2 * search + max(abs(int(pred[0])), abs(int(pred[1]))) + 2
    tab = _se_len_table(limit)
    bx = tab[off - int(pred[0]) + limit]
    by = tab[off - int(pred[1]) + limit]
    cost = surface + lam * (by[:, None] + bx[None, :])
    idx = int(np.argmin(cost))
    dy, dx = divmod(idx, span)
    return (2 * (dx - search), 2 * (dy - search)), float(cost.flat[idx]), int(surface.flat[idx])


def interp_block(padded: np.ndarray, margin: int, y: int, x: int, size: int, mvx: int, mvy: int,
                 frac_bits: int) -> np.ndarray:
    """Bilinear integer interpolation at 1/2**frac_bits sample precision, rounded to nearest."""
    one = 1 << frac_bits
    ix, fx = mvx >> frac_bits, mvx & (one - 1)
    iy, fy = mvy >> frac_bits, mvy & (one - 1)
    y0 = y + margin + iy
    x0 = x + margin + ix
    if y0 < 0 or x0 < 0 or y0 + size + 1 > padded.shape[0] or x0 + size + 1 > padded.shape[1]:
        raise ValueError(f"motion vector ({mvx}, {mvy}) reaches outside the padded reference")
    win = padded[y0:y0 + size + 1, x0:x0 + size + 1].astype(np.int32)
    if fx == 0 and fy == 0:
        return win[:size, :size].copy()
    a = win[:size, :size]
    b = win[:size, 1:]
    c = win[1:, :size]
    d = win[1:, 1:]
    total = (one - fx) * (one - fy) * a + fx * (one - fy) * b + (one - fx) * fy * c + fx * fy * d
    return (total + (1 << (2 * frac_bits - 1))) >> (2 * frac_bits)


def phase_planes(padded: np.ndarray, frac_bits: int) -> dict:
    """Every sub-sample phase of a padded plane, interpolated as in :func:`interp_block`.

    ``phases[(fy, fx)][r, c]`` is the sample at (r + fy / 2**frac_bits, c + fx / 2**frac_bits).
    """
    one = 1 << frac_bits
    p = padded.astype(np.int32)
    a, b, c, d = p[:-1, :-1], p[:-1, 1:], p[1:, :-1], p[1:, 1:]
    rnd = 1 << (2 * frac_bits - 1)
    out = {}
    for fy in range(one):
        for fx in range(one):
            if fx == 0 and fy == 0:
                out[(0, 0)] = p
                continue
            total = (one - fx) * (one - fy) * a + fx * (one - fy) * b + (one - fx) * fy * c + fx * fy * d
            out[(fy, fx)] = (total + rnd) >> (2 * frac_bits)
    return out


class RefPlanes:
    """Edge-padded planes of one reference frame with all sub-pel phases precomputed."""

    def __init__(self, frame):
        self.frame = frame
        self.poc = frame.poc
        self.y = pad_plane(frame.y, LUMA_MARGIN)
        self.u = pad_plane(frame.u, CHROMA_MARGIN)
        self.v = pad_plane(frame.v, CHROMA_MARGIN)
        self._y = phase_planes(self.y, 1)
        self._u = phase_planes(self.u, 2)
        self._v = phase_planes(self.v, 2)

    @staticmethod
    def _fetch(phases, margin, y, x, size, mvx, mvy, frac_bits):
        one = 1 << frac_bits
        plane = phases[(mvy & (one - 1), mvx & (one - 1))]
        y0 = y + margin + (mvy >> frac_bits)
        x0 = x + margin + (mvx >> frac_bits)
        if y0 < 0 or x0 < 0 or y0 + size >= plane.shape[0] or x0 + size >= plane.shape[1]:
            raise ValueError(f"motion vector ({mvx}, {mvy}) reaches outside the padded reference")
        return plane[y0:y0 + size, x0:x0 + size]

    def predict(self, y: int, x: int, block: int, mv) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        mvx, mvy = mv
        cb = block // 2
        return (
            self._fetch(self._y, LUMA_MARGIN, y, x, block, mvx, mvy, 1),
            self._fetch(self._u, CHROMA_MARGIN, y // 2, x // 2, cb, mvx, mvy, 2),
            self._fetch(self._v, CHROMA_MARGIN, y // 2, x // 2, cb, mvx, mvy, 2),
        )

    def predict_luma(self, y, x, block, mv):
        return self._fetch(self._y, LUMA_MARGIN, y, x, block, mv[0], mv[1], 1)


def refine_half_pel(cur_block, ref: RefPlanes, y, x, block, mv, pred, lam, search):
    """Test the eight half-pel neighbours of an integer MV; returns (mv, cost)."""
    best = mv
    best_cost = sad(cur_block, ref.predict_luma(y, x, block, mv)) + lam * mv_bits(*mv, pred)
    limit = 2 * search + 1
    for ddy in (-1, 0, 1):
        for ddx in (-1, 0, 1):
            if not ddx and not ddy:
                continue
            cand = (mv[0] + ddx, mv[1] + ddy)
            if abs(cand[0]) > limit or abs(cand[1]) > limit:
                continue
            cost = sad(cur_block, ref.predict_luma(y, x, block, cand)) + lam * mv_bits(*cand, pred)
            if cost < best_cost:
                best, best_cost = cand, cost
    return best, best_cost


def bi_average(p0, p1):
    return [(a + b + 1) >> 1 for a, b in zip(p0, p1)]


def median_predictor(candidates) -> tuple[int, int]:
    """Component-wise median of up to three neighbour MVs (None = unavailable).

    With exactly one available neighbour its vector is used as is; otherwise
    unavailable entries count as zero vectors.
    """
    avail = [c for c in candidates if c is not None]
    if not avail:
        return (0, 0)
    if len(avail) == 1:
        return tuple(avail[0])
    vals = [c if c is not None else (0, 0) for c in candidates]
    while len(vals) < 3:
        vals.append((0, 0))
    return (int(np.median([v[0] for v in vals])), int(np.median([v[1] for v in vals])))


def _parabolic(s_minus, s0, s_plus) -> float:
    den = s_minus - 2 * s0 + s_plus
    if den <= 0:
        return 0.0
    return float(np.clip(0.5 * (s_minus - s_plus) / den, -0.5, 0.5))


def block_flow(a: np.ndarray, b: np.ndarray, block: int = 16, search: int = 24) -> np.ndarray:
    """Displacement of each full ``block`` x ``block`` tile of ``a`` found in ``b``.

    Exhaustive integer search, ties resolved toward the smaller displacement,
    followed by a parabolic sub-pixel fit of the SAD surface on each axis.
    Returns (rows, cols, 2) float (dx, dy).
    """
    a = np.ascontiguousarray(a, dtype=np.uint8)
    nby, nbx = a.shape[0] // block, a.shape[1] // block
    out = np.zeros((nby, nbx, 2))
    if nby == 0 or nbx == 0:
        return out
    ref = pad_plane(np.asarray(b, dtype=np.uint8), search + 1)
    surf = kernels.sad_surface(a, ref, search + 1, block, search)
    span = 2 * search + 1
    off = np.arange(span) - search
    dist = np.abs(off)[:, None] + np.abs(off)[None, :]
    for by in range(nby):
        for bx in range(nbx):
            s = surf[by, bx].astype(np.int64)
            key = s * (4 * span) + dist
            dy, dx = np.unravel_index(int(np.argmin(key)), s.shape)
            fx = _parabolic(s[dy, dx - 1], s[dy, dx], s[dy, dx + 1]) if 0 < dx < span - 1 else 0.0
            fy = _parabolic(s[dy - 1, dx], s[dy, dx], s[dy + 1, dx]) if 0 < dy < span - 1 else 0.0
            out[by, bx] = (dx - search + fx, dy - search + fy)
    return out
