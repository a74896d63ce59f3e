"""Evaluation metrics and reports: PSNR, MS-SSIM, BD-rate, bit accounting, mode area, timing.

All functions are pure. Reports are produced as CSV or as aligned text tables.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve

from .codec.entropy import CATEGORIES
from .codec.syntax import Mode

PSNR_INF = math.inf
MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
AREA_MODES = ("Intra", "Inter", "Skip", "DFP")
_AREA_OF_MODE = {
    Mode.INTRA: "Intra",
    Mode.INTER_UNI: "Inter",
    Mode.INTER_BI: "Inter",
    Mode.SKIP: "Skip",
    Mode.DFP: "DFP",
}


def _luma(x) -> np.ndarray:
    return np.asarray(x.y if hasattr(x, "y") else x, dtype=np.float64)


def psnr(ref, test, peak: float = 255.0) -> float:
    """PSNR in dB of two planes (or the luma of two frames); +inf when identical."""
    a, b = _luma(ref), _luma(test)
    if a.shape != b.shape:
        raise ValueError(f"PSNR operands differ in shape: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_INF
    return 10.0 * math.log10(peak * peak / mse)


def psnr_yuv(ref, test) -> tuple[float, float, float]:
    return tuple(psnr(a, b) for a, b in zip(ref.planes, test.planes))


def mean_psnr(refs, tests) -> float:
    """Average luma PSNR over frame pairs; infinite entries are left out of the mean."""
    vals = [psnr(a, b) for a, b in zip(refs, tests)]
    finite = [v for v in vals if math.isfinite(v)]
    if not finite:
        return PSNR_INF
    return float(np.mean(finite))


def _gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r ** 2) / (2 * sigma ** 2))
    g /= g.sum()
    return np.outer(g, g)


def _ssim_terms(a, b, win, peak):
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2

    def filt(x):
        return fftconvolve(x, win, mode="valid")

    mu_a, mu_b = filt(a), filt(b)
    s_aa = filt(a * a) - mu_a * mu_a
    s_bb = filt(b * b) - mu_b * mu_b
    s_ab = filt(a * b) - mu_a * mu_b
    cs = (2 * s_ab + c2) / (s_aa + s_bb + c2)
    lum = (2 * mu_a * mu_b + c1) / (mu_a * mu_a + mu_b * mu_b + c1)
    return float(np.mean(lum * cs)), float(np.mean(cs))


def _downsample(x: np.ndarray) -> np.ndarray:
    h, w = x.shape[0] // 2 * 2, x.shape[1] // 2 * 2
    x = x[:h, :w]
    return 0.25 * (x[0::2, 0::2] + x[1::2, 0::2] + x[0::2, 1::2] + x[1::2, 1::2])


def ms_ssim(ref, test, scales: int = 5, peak: float = 255.0) -> float:
    """Multi-scale SSIM on luma with an 11-tap Gaussian window (sigma 1.5).

    Fewer than five scales use the leading weights renormalised to sum to one.
    Negative contrast-structure terms are clamped to zero so the score stays in [0, 1].
    """
    a, b = _luma(ref), _luma(test)
    if a.shape != b.shape:
        raise ValueError(f"MS-SSIM operands differ in shape: {a.shape} vs {b.shape}")
    if not 1 <= scales <= len(MS_SSIM_WEIGHTS):
        raise ValueError(f"scales must be in 1..{len(MS_SSIM_WEIGHTS)}, got {scales}")
    need = SSIM_WINDOW * 2 ** (scales - 1)
    if min(a.shape) < need:
        fit = max(1, int(math.floor(math.log2(min(a.shape) / SSIM_WINDOW))) + 1) if min(a.shape) >= SSIM_WINDOW else 0
        hint = f"; use scales={fit}" if fit else ""
        raise ValueError(f"frame {a.shape[1]}x{a.shape[0]} is too small for {scales} scales (needs {need}){hint}")
    weights = np.array(MS_SSIM_WEIGHTS[:scales])
    weights /= weights.sum()
    win = _gaussian_window()
    result = 1.0
    for s in range(scales):
        ssim, cs = _ssim_terms(a, b, win, peak)
        term = ssim if s == scales - 1 else cs
        result *= max(term, 0.0) ** weights[s]
        a, b = _downsample(a), _downsample(b)
    return float(result)


@dataclass(frozen=True)
class RDPoint:
    bitrate: float
    quality: float
    qp: int = -1

    def __post_init__(self):
        if not self.bitrate > 0:
            raise ValueError(f"bitrate must be positive, got {self.bitrate}")
        if math.isnan(self.quality):
            raise ValueError("quality must not be NaN")


def _curve(points, label):
    pts = [p if isinstance(p, RDPoint) else RDPoint(*p) for p in points]
    kept = [p for p in pts if math.isfinite(p.quality)]
    if len(kept) < len(pts):
        warnings.warn(f"{label}: {len(pts) - len(kept)} point(s) with infinite quality left out of the fit",
                      RuntimeWarning, stacklevel=3)
    if len(kept) < 2:
        raise ValueError(f"{label}: need at least two finite RD points, got {len(kept)}")
    q = np.array([p.quality for p in kept])
    if len(np.unique(q)) != len(q):
        raise ValueError(f"{label}: quality values must be distinct")
    r = np.log(np.array([p.bitrate for p in kept]))
    return q, r


def bd_rate(anchor, test) -> float:
    """Bjontegaard delta bitrate of ``test`` against ``anchor`` in percent (negative = savings).

    Each curve is a least-squares cubic of log bitrate against quality,
    integrated over the overlapping quality interval. Points may be
    :class:`RDPoint` or (bitrate, quality) pairs.
    """
    qa, ra = _curve(anchor, "anchor")
    qt, rt = _curve(test, "test")
    lo = max(qa.min(), qt.min())
    hi = min(qa.max(), qt.max())
    if not hi > lo:
        raise ValueError(f"quality ranges do not overlap: anchor {qa.min()}..{qa.max()}, test {qt.min()}..{qt.max()}")
    pa = np.polyint(np.polyfit(qa, ra, min(3, len(qa) - 1)))
    pt = np.polyint(np.polyfit(qt, rt, min(3, len(qt) - 1)))
    avg = ((np.polyval(pt, hi) - np.polyval(pt, lo)) - (np.polyval(pa, hi) - np.polyval(pa, lo))) / (hi - lo)
    return float((math.exp(avg) - 1.0) * 100.0)


@dataclass
class BitReport:
    """Per-category bit counts of an anchor and a proposed encoding of the same content."""

    anchor: dict
    proposed: dict

    def __post_init__(self):
        for name, d in (("anchor", self.anchor), ("proposed", self.proposed)):
            unknown = set(d) - set(CATEGORIES)
            if unknown:
                raise ValueError(f"{name} has unknown categories {sorted(unknown)}")
            if any(v < 0 for v in d.values()):
                raise ValueError(f"{name} has negative bit counts")


def bit_accounting(report: BitReport) -> dict:
    """Per-category change as a percentage of the anchor total, plus their Sum."""
    total = sum(report.anchor.values())
    if total <= 0:
        raise ValueError("anchor has zero total bits")
    out = {}
    for c in CATEGORIES:
        out[c] = (report.proposed.get(c, 0) - report.anchor.get(c, 0)) / total * 100.0
    out["Sum"] = math.fsum(out[c] for c in CATEGORIES)
    return out


def mode_area(decisions, block_sizes=None) -> dict:
    """Percentage of block area coded in each of Intra, Inter, Skip and DFP.

    ``decisions`` is an iterable of per-frame mode maps (arrays of :class:`Mode`
    values); ``block_sizes`` optionally gives each frame's block edge.
    """
    area = dict.fromkeys(AREA_MODES, 0.0)
    maps = list(decisions)
    sizes = block_sizes if block_sizes is not None else [1] * len(maps)
    for m, b in zip(maps, sizes):
        m = np.asarray(m).ravel()
        for mode, name in _AREA_OF_MODE.items():
            area[name] += float(np.count_nonzero(m == int(mode))) * b * b
    total = sum(area.values())
    if total == 0:
        return area
    return {k: 100.0 * v / total for k, v in area.items()}


def timing_ratio(t_proposed: float, t_anchor: float) -> float:
    if not t_anchor > 0:
        raise ValueError(f"anchor time must be positive, got {t_anchor}")
    if t_proposed < 0:
        raise ValueError(f"proposed time must be non-negative, got {t_proposed}")
    return 100.0 * t_proposed / t_anchor


def format_table(header, rows, floatfmt: str = "{:.3f}") -> str:
    """Aligned plain-text table; numbers right-aligned."""
    cells = [[str(h) for h in header]]
    for r in rows:
        cells.append([floatfmt.format(v) if isinstance(v, float) else str(v) for v in r])
    widths = [max(len(row[i]) for row in cells) for i in range(len(header))]
    lines = []
    for k, row in enumerate(cells):
        parts = [c.ljust(w) if j == 0 else c.rjust(w) for j, (c, w) in enumerate(zip(row, widths))]
        lines.append("  ".join(parts).rstrip())
        if k == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def to_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([f"{v:.6f}" if isinstance(v, float) else v for v in r])
    return buf.getvalue()


BD_HEADER = ("class", "sequence", "profile", "Y", "U", "V")
BITS_HEADER = ("sequence",) + CATEGORIES + ("Sum",)
AREA_HEADER = ("QP", "mode", "percent")


def bd_rows(entries) -> list:
    """Rows of (class, sequence, profile, Y, U, V) with an overall average row appended."""
    rows = [tuple(e) for e in entries]
    if rows:
        avg = tuple(float(np.mean([r[i] for r in rows])) for i in (3, 4, 5))
        rows.append(("Overall", "", rows[0][2] if len({r[2] for r in rows}) == 1 else "", *avg))
    return rows


def bits_rows(named_reports) -> list:
    rows = []
    for name, rep in named_reports:
        acc = bit_accounting(rep)
        rows.append((name, *[acc[c] for c in CATEGORIES], acc["Sum"]))
    return rows


def area_rows(per_qp) -> list:
    """(QP, mode, percent) rows from a mapping QP -> mode_area result."""
    return [(qp, m, float(per_qp[qp][m])) for qp in sorted(per_qp) for m in AREA_MODES]


def timing_rows(enc_proposed, enc_anchor, dec_proposed, dec_anchor) -> list:
    return [
        ("ΔT_Enc", timing_ratio(enc_proposed, enc_anchor)),
        ("ΔT_Dec", timing_ratio(dec_proposed, dec_anchor)),
    ]
