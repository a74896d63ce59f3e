"""DC / horizontal / vertical intra prediction from reconstructed neighbours."""

from __future__ import annotations

import numpy as np

DC, HORIZONTAL, VERTICAL = 0, 1, 2
INTRA_MODES = (DC, HORIZONTAL, VERTICAL)
UNAVAILABLE = 128


def predict(recon: np.ndarray, y: int, x: int, size: int, mode: int) -> np.ndarray:
    """Prediction for the size x size block at (y, x) of a partially reconstructed plane."""
    top = recon[y - 1, x:x + size].astype(np.int32) if y > 0 else None
    left = recon[y:y + size, x - 1].astype(np.int32) if x > 0 else None
    if mode == DC:
        edges = [e for e in (top, left) if e is not None]
        if not edges:
            return np.full((size, size), UNAVAILABLE, np.int32)
        vals = np.concatenate(edges)
        return np.full((size, size), (int(vals.sum()) + len(vals) // 2) // len(vals), np.int32)
    if mode == HORIZONTAL:
        if left is None:
            return np.full((size, size), UNAVAILABLE, np.int32)
        return np.repeat(left[:, None], size, axis=1)
    if mode == VERTICAL:
        if top is None:
            return np.full((size, size), UNAVAILABLE, np.int32)
        return np.repeat(top[None, :], size, axis=0)
    raise ValueError(f"unknown intra mode {mode}")
