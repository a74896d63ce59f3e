"""Coding order, reference lists and deep-prediction reference selection per profile."""

from __future__ import annotations

PROFILES = ("LP", "LD", "RA")
RA_GOP = 8
RA_ORDER = (8, 4, 2, 1, 3, 6, 5, 7)
MAX_DFP_DISTANCE = 2

FRAME_I, FRAME_P, FRAME_B = 0, 1, 2


def profile_id(profile: str) -> int:
    try:
        return PROFILES.index(profile)
    except ValueError:
        raise ValueError(f"profile must be one of {PROFILES}, got {profile!r}") from None


def coding_order(profile: str, n_frames: int, gop: int = RA_GOP) -> list[int]:
    """POCs in the order they are coded."""
    profile_id(profile)
    if n_frames <= 0:
        return []
    if profile != "RA":
        return list(range(n_frames))
    order = [0]
    start = 0
    pattern = RA_ORDER if gop == RA_GOP else _hierarchical(gop)
    while start + 1 < n_frames:
        order += [start + k for k in pattern if start + k < n_frames]
        start += gop
    return order


def _hierarchical(gop):
    out = []

    def split(lo, hi):
        if hi - lo < 2:
            return
        mid = (lo + hi) // 2
        out.append(mid)
        split(lo, mid)
        split(mid, hi)

    out.append(gop)
    split(0, gop)
    return tuple(out)


def frame_type(profile: str, coding_index: int) -> int:
    if coding_index == 0:
        return FRAME_I
    return FRAME_B if profile == "RA" else FRAME_P


def reference_pocs(profile: str, poc: int, decoded) -> list[int]:
    """Reference list, nearest first: two latest past frames (LP/LD); past + future (RA)."""
    past = sorted((p for p in decoded if p < poc), reverse=True)
    if profile != "RA":
        return past[:2]
    future = sorted(p for p in decoded if p > poc)
    if future and past:
        return [past[0], future[0]]
    if future:
        return future[:2]
    return past[:2]


def bi_allowed(profile: str, poc: int, refs) -> bool:
    if len(refs) < 2 or profile == "LP":
        return False
    if profile == "LD":
        return True
    return min(refs) < poc < max(refs)


def select_dfp_references(current_poc: int, decoded_pocs):
    """(t1, t2) for deep prediction, or None.

    Straddling references have priority: the closest decoded frame on each
    side, both within distance 2. Otherwise the two closest preceding decoded
    frames, both within distance 2.
    """
    decoded = set(decoded_pocs)
    past = sorted((p for p in decoded if p < current_poc), reverse=True)
    future = sorted(p for p in decoded if p > current_poc)
    if past and future:
        if current_poc - past[0] <= MAX_DFP_DISTANCE and future[0] - current_poc <= MAX_DFP_DISTANCE:
            return past[0], future[0]
    if len(past) >= 2 and current_poc - past[1] <= MAX_DFP_DISTANCE:
        return past[1], past[0]
    return None
