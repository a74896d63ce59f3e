"""DFC1 container: stream header followed by length-prefixed frame payloads."""

from __future__ import annotations

import struct
from dataclasses import dataclass

from .entropy import DecodeError
from .gop import PROFILES

MAGIC = b"DFC1"
HEADER = struct.Struct("<4sHHIBBB8s")
FRAME_HEADER = struct.Struct("<BI")


@dataclass(frozen=True)
class StreamHeader:
    width: int
    height: int
    frames: int
    profile: str
    qp: int
    block: int
    weights_hash: bytes

    def pack(self) -> bytes:
        return HEADER.pack(
            MAGIC, self.width, self.height, self.frames, PROFILES.index(self.profile),
            self.qp, self.block, self.weights_hash,
        )


def parse_header(data: bytes) -> StreamHeader:
    if len(data) < HEADER.size:
        raise DecodeError("stream shorter than the DFC1 header", len(data))
    magic, w, h, n, profile, qp, block, digest = HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise DecodeError("bad magic, not a DFC1 stream", 0)
    if profile >= len(PROFILES):
        raise DecodeError(f"unknown profile id {profile}", 12)
    if block not in (8, 16, 32) or w % block or h % block:
        raise DecodeError(f"invalid block size {block} for {w}x{h}", 14)
    return StreamHeader(w, h, n, PROFILES[profile], qp, block, digest)


def pack_frame(frame_type: int, payload: bytes) -> bytes:
    return FRAME_HEADER.pack(frame_type, len(payload)) + payload


def iter_frames(data: bytes, count: int):
    """Yields (frame_type, payload, payload_offset) for ``count`` frames."""
    pos = HEADER.size
    for i in range(count):
        if pos + FRAME_HEADER.size > len(data):
            raise DecodeError(f"stream truncated before frame {i}", pos)
        ftype, length = FRAME_HEADER.unpack_from(data, pos)
        pos += FRAME_HEADER.size
        if pos + length > len(data):
            raise DecodeError(f"frame {i} payload truncated", pos)
        yield ftype, data[pos:pos + length], pos
        pos += length
    if pos != len(data):
        raise DecodeError("trailing bytes after the last frame", pos)
