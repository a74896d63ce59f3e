"""Orthonormal DCT, uniform scalar quantisation and zigzag run-level scanning."""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from ..video_io import round_half_away

LOSSLESS_QP = 0


@lru_cache(maxsize=8)
def dct_matrix(n: int) -> np.ndarray:
    """Orthonormal type-II DCT basis; rows are frequencies."""
    if n < 1 or n & (n - 1):
        raise ValueError(f"transform size must be a power of two, got {n}")
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    m = np.cos(np.pi * (2 * i + 1) * k / (2 * n)) * np.sqrt(2.0 / n)
    m[0] /= np.sqrt(2.0)
    m.setflags(write=False)
    return m


@lru_cache(maxsize=8)
def zigzag(n: int) -> np.ndarray:
    """Flat indices of an n x n block in zigzag order (JPEG convention)."""
    order = sorted(
        ((y, x) for y in range(n) for x in range(n)),
        key=lambda p: (p[0] + p[1], p[1] if (p[0] + p[1]) % 2 == 0 else p[0]),
    )
    out = np.array([y * n + x for y, x in order], dtype=np.int64)
    out.setflags(write=False)
    return out


def qstep(qp: int) -> float:
    return 2.0 ** ((qp - 4) / 6.0)


def forward_dct(block) -> np.ndarray:
    m = dct_matrix(block.shape[0])
    return m @ np.asarray(block, dtype=np.float64) @ m.T


def inverse_dct(coef) -> np.ndarray:
    m = dct_matrix(coef.shape[0])
    return m.T @ np.asarray(coef, dtype=np.float64) @ m


def transform_quantize(residual, qp: int) -> np.ndarray:
    """Integer levels for a square residual block; QP 0 bypasses transform and quantiser."""
    residual = np.asarray(residual)
    if qp == LOSSLESS_QP:
        return np.asarray(residual, dtype=np.int64).copy()
    return round_half_away(forward_dct(residual) / qstep(qp)).astype(np.int64)


def dequantize_inverse(levels, qp: int) -> np.ndarray:
    if qp == LOSSLESS_QP:
        return np.asarray(levels, dtype=np.float64)
    return inverse_dct(np.asarray(levels, dtype=np.float64) * qstep(qp))


def run_levels(levels: np.ndarray) -> list[tuple[int, int]]:
    """(run of zeros, level) pairs for the nonzero levels in zigzag order."""
    flat = levels.ravel()[zigzag(levels.shape[0])]
    pairs = []
    run = 0
    for v in flat.tolist():
        if v:
            pairs.append((run, v))
            run = 0
        else:
            run += 1
    return pairs


def from_run_levels(pairs, n: int) -> np.ndarray:
    flat = np.zeros(n * n, dtype=np.int64)
    pos = -1
    for run, level in pairs:
        pos += run + 1
        if pos >= n * n:
            raise ValueError("run-level pairs overflow the block")
        flat[pos] = level
    out = np.zeros(n * n, dtype=np.int64)
    out[zigzag(n)] = flat
    return out.reshape(n, n)
