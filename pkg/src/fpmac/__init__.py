"""Bit-accurate model of a dual-precision FP8 / dual-FP4 multiply-accumulate PE."""

from .datapath import LaneFlags, MacConfig, MacMode, MacResult, mac
from .formats import (
    E1M2,
    E2M1,
    E4M3,
    E5M2,
    DecodedFloat,
    FloatClass,
    FormatSpec,
    PackedWord,
    decode,
    encode,
    pack_dual,
    unpack_dual,
)

__version__ = "0.1.0"

__all__ = [
    "E1M2",
    "E2M1",
    "E4M3",
    "E5M2",
    "DecodedFloat",
    "FloatClass",
    "FormatSpec",
    "LaneFlags",
    "MacConfig",
    "MacMode",
    "MacResult",
    "PackedWord",
    "decode",
    "encode",
    "mac",
    "pack_dual",
    "unpack_dual",
]
