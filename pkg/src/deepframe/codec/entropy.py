"""Syntax-element writer/reader on top of the binary arithmetic coder.

Flags are context-coded bins; exp-Golomb codes and fixed-length fields are
bypass bins. Every bin is charged to a syntax category, and the coder's
renormalisation shifts (one per output bit) are what gets counted, so the
per-category totals add up exactly to the payload size in bits.
"""

from __future__ import annotations

from enum import IntEnum

import numpy as np

from .. import kernels

CATEGORIES = ("Blk", "DNN", "Skip", "Inter", "Intra", "Resi", "SAO")
MAX_EG_PREFIX = 31


class Ctx(IntEnum):
    SKIP = 0
    PRED_MODE = 1
    INTRA_DIR0 = 2
    INTRA_DIR1 = 3
    DFP = 4
    INTER_DIR = 5
    REF_IDX = 6
    CBF_Y = 7
    CBF_U = 8
    CBF_V = 9


N_CONTEXTS = len(Ctx)

# cost in bits of coding a 0 with 12-bit probability p0 (index); a 1 costs COST0[4096 - p0]
_p = np.arange(4096, dtype=np.float64)
_p[0] = 0.5
COST0 = -np.log2(_p / 4096.0)


class DecodeError(ValueError):
    """Malformed stream; ``offset`` is the byte position within the stream."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


def ue_len(v: int) -> int:
    return 2 * (int(v) + 1).bit_length() - 1


def se_map(v: int) -> int:
    return 2 * v - 1 if v > 0 else -2 * v


def se_unmap(k: int) -> int:
    return (k + 1) // 2 if k & 1 else -(k // 2)


def se_len(v: int) -> int:
    return ue_len(se_map(v))


def ue_bits(v: int) -> str:
    """Unsigned exp-Golomb code word as a '0'/'1' string."""
    if v < 0:
        raise ValueError("ue() takes nonnegative values")
    body = bin(v + 1)[2:]
    return "0" * (len(body) - 1) + body


def se_bits(v: int) -> str:
    return ue_bits(se_map(v))


class SyntaxWriter:
    def __init__(self):
        self.enc = kernels.ArithmeticEncoder(N_CONTEXTS)
        self.bits = dict.fromkeys(CATEGORIES, 0)
        self.payload = None

    @property
    def contexts(self):
        return self.enc.contexts

    def flag(self, ctx: int, bit: int, cat: str) -> None:
        self.bits[cat] += self.enc.encode_bin(int(ctx), int(bit))

    def bypass(self, bit: int, cat: str) -> None:
        self.bits[cat] += self.enc.encode_bypass(int(bit))

    def bypass_string(self, bits: str, cat: str) -> None:
        self.bits[cat] += self.enc.encode_bypass_bits([1 if b == "1" else 0 for b in bits])

    def ue(self, v: int, cat: str) -> None:
        self.bypass_string(ue_bits(v), cat)

    def se(self, v: int, cat: str) -> None:
        self.bypass_string(se_bits(v), cat)

    def fixed(self, value: int, n: int, cat: str) -> None:
        self.bypass_string(format(value, f"0{n}b"), cat)

    def flag_cost(self, ctx: int, bit: int) -> float:
        p0 = int(self.enc.contexts[int(ctx)])
        return COST0[p0] if bit == 0 else COST0[4096 - p0]

    def finish(self) -> bytes:
        data, tail = self.enc.finish()
        self.bits["Blk"] += tail
        self.payload = data
        return data

    @property
    def total_bits(self) -> int:
        return sum(self.bits.values())


class SyntaxReader:
    """Parses one frame payload; ``base`` is the payload's byte offset in the stream."""

    SLACK_BITS = 64

    def __init__(self, data: bytes, base: int = 0):
        self.dec = kernels.ArithmeticDecoder(data, N_CONTEXTS)
        self.bits = dict.fromkeys(CATEGORIES, 0)
        self.nbits = len(data) * 8
        self.base = base

    def error(self, message: str) -> DecodeError:
        pos = max(0, self.dec.bitpos - 32) // 8
        return DecodeError(message, self.base + pos)

    def _check(self):
        if self.dec.bitpos - 32 > self.nbits + self.SLACK_BITS:
            raise self.error("payload exhausted")

    def flag(self, ctx: int, cat: str) -> int:
        bit, shifts = self.dec.decode_bin(int(ctx))
        self.bits[cat] += shifts
        self._check()
        return bit

    def bypass(self, cat: str) -> int:
        bit, shifts = self.dec.decode_bypass()
        self.bits[cat] += shifts
        return bit

    def ue(self, cat: str) -> int:
        zeros = 0
        while self.bypass(cat) == 0:
            zeros += 1
            if zeros > MAX_EG_PREFIX:
                raise self.error("exp-Golomb prefix too long")
        value = 1
        for _ in range(zeros):
            value = (value << 1) | self.bypass(cat)
        self._check()
        return value - 1

    def se(self, cat: str) -> int:
        return se_unmap(self.ue(cat))

    def fixed(self, n: int, cat: str) -> int:
        value = 0
        for _ in range(n):
            value = (value << 1) | self.bypass(cat)
        return value

    def finish(self) -> None:
        """Charge the unread flush/padding bits to the block category."""
        used = self.dec.total_shifts
        if used > self.nbits:
            raise self.error("payload shorter than the decoded syntax")
        self.bits["Blk"] += self.nbits - used

    @property
    def total_bits(self) -> int:
        return sum(self.bits.values())

