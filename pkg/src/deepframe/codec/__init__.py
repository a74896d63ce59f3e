"""Block-based hybrid codec with a deep-frame prediction mode."""

from .bitstream import StreamHeader, parse_header
from .blocks import RDContext, lagrangian
from .decoder import DecodeResult, WeightsMismatch, decode
from .encoder import CodingConfig, EncodeResult, encode
from .entropy import CATEGORIES, DecodeError
from .gop import PROFILES, coding_order, select_dfp_references
from .motion import sad
from .syntax import BlockDecision, Mode

__all__ = [
    "BlockDecision",
    "CATEGORIES",
    "CodingConfig",
    "DecodeError",
    "DecodeResult",
    "EncodeResult",
    "Mode",
    "PROFILES",
    "RDContext",
    "StreamHeader",
    "WeightsMismatch",
    "coding_order",
    "decode",
    "encode",
    "lagrangian",
    "parse_header",
    "sad",
    "select_dfp_references",
]
