"""Minifloat formats used by the MAC: FP8 (E4M3, E5M2) and FP4 (E2M1, E1M2).

Encodings:

    E4M3  bias 7   no Inf, NaN = S.1111.111, max finite 448
    E5M2  bias 15  IEEE-like Inf (S.11111.00) and NaN (S.11111.xx), max 57344
    E2M1  bias 1   no specials, values +-{0, 0.5, 1, 1.5, 2, 3, 4, 6}
    E1M2  bias 1   no specials, values +-{0, 0.25, ..., 1.75}

Subnormals are supported everywhere.  Encoding truncates toward zero; values
past the largest finite magnitude saturate, except E5M2 which overflows to Inf.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import NamedTuple

__all__ = [
    "FloatClass",
    "FormatSpec",
    "DecodedFloat",
    "Layout",
    "PackedWord",
    "E4M3",
    "E5M2",
    "E2M1",
    "E1M2",
    "FORMATS",
    "get_format",
    "decode",
    "encode",
    "pack_dual",
    "unpack_dual",
    "to_fraction",
    "bits_value",
    "ordinal",
    "parse_hex",
    "format_hex",
]


class FloatClass(enum.Enum):
    ZERO = "zero"
    SUBNORMAL = "subnormal"
    NORMAL = "normal"
    INF = "inf"
    NAN = "nan"


@dataclass(frozen=True)
class FormatSpec:
    """Static description of one minifloat format."""

    name: str
    total_bits: int
    exp_bits: int
    man_bits: int
    bias: int
    has_infinity: bool
    has_nan: bool

    def __post_init__(self):
        if self.total_bits != 1 + self.exp_bits + self.man_bits:
            raise ValueError(f"{self.name}: field widths do not add up")

    @property
    def emin(self) -> int:
        """Unbiased exponent of the smallest normal (and of every subnormal)."""
        return 1 - self.bias

    @property
    def emax(self) -> int:
        """Unbiased exponent of the largest finite binade."""
        top = (1 << self.exp_bits) - 1
        if self.has_infinity:
            top -= 1
        return top - self.bias

    @property
    def max_finite_significand(self) -> int:
        full = (1 << (self.man_bits + 1)) - 1
        # E4M3 spends the all-ones mantissa of the top binade on NaN.
        if self.has_nan and not self.has_infinity:
            return full - 1
        return full

    @property
    def sign_mask(self) -> int:
        return 1 << (self.total_bits - 1)

    @property
    def magnitude_mask(self) -> int:
        return self.sign_mask - 1

    @property
    def max_finite_bits(self) -> int:
        return ((self.emax + self.bias) << self.man_bits) | (
            self.max_finite_significand & ((1 << self.man_bits) - 1)
        )

    @property
    def inf_bits(self) -> int | None:
        if not self.has_infinity:
            return None
        return ((1 << self.exp_bits) - 1) << self.man_bits

    @property
    def nan_bits(self) -> int | None:
        """Canonical quiet NaN, or None when the format has no NaN."""
        if not self.has_nan:
            return None
        if self.has_infinity:
            return self.inf_bits | (1 << (self.man_bits - 1))
        return self.magnitude_mask

    @property
    def max_finite(self) -> Fraction:
        return Fraction(self.max_finite_significand) * _pow2(self.emax - self.man_bits)

    def __str__(self) -> str:
        return self.name


E4M3 = FormatSpec("E4M3", 8, 4, 3, 7, has_infinity=False, has_nan=True)
E5M2 = FormatSpec("E5M2", 8, 5, 2, 15, has_infinity=True, has_nan=True)
E2M1 = FormatSpec("E2M1", 4, 2, 1, 1, has_infinity=False, has_nan=False)
E1M2 = FormatSpec("E1M2", 4, 1, 2, 1, has_infinity=False, has_nan=False)

FORMATS = {f.name.lower(): f for f in (E4M3, E5M2, E2M1, E1M2)}


def get_format(name: str | FormatSpec) -> FormatSpec:
    if isinstance(name, FormatSpec):
        return name
    try:
        return FORMATS[name.lower()]
    except KeyError:
        raise ValueError(f"unknown format {name!r}; expected one of {sorted(FORMATS)}") from None


class DecodedFloat(NamedTuple):
    """An unpacked operand.

    ``significand`` is the integer 1.m (or 0.m) scaled by ``2**man_bits``, so
    the finite value is ``(-1)**sign * significand * 2**(exp - man_bits)``.
    Zero carries the subnormal exponent.  For Inf/NaN the fields hold the raw
    exponent and mantissa and carry no numeric meaning.
    """

    sign: int
    exp: int
    significand: int
    cls: FloatClass

    @property
    def is_finite(self) -> bool:
        return self.cls not in (FloatClass.INF, FloatClass.NAN)

    @property
    def is_zero(self) -> bool:
        return self.cls is FloatClass.ZERO


def _pow2(k: int) -> Fraction:
    return Fraction(1 << k) if k >= 0 else Fraction(1, 1 << -k)


# ── decode ──────────────────────────────────────────────────────────


def _decode(bits: int, spec: FormatSpec) -> DecodedFloat:
    m = spec.man_bits
    sign = (bits >> (spec.total_bits - 1)) & 1
    ef = (bits >> m) & ((1 << spec.exp_bits) - 1)
    mf = bits & ((1 << m) - 1)
    all_ones = (1 << spec.exp_bits) - 1

    if spec.has_infinity and ef == all_ones:
        cls = FloatClass.INF if mf == 0 else FloatClass.NAN
        return DecodedFloat(sign, ef - spec.bias, mf, cls)
    if spec.has_nan and not spec.has_infinity and ef == all_ones and mf == (1 << m) - 1:
        return DecodedFloat(sign, ef - spec.bias, mf, FloatClass.NAN)
    if ef == 0:
        if mf == 0:
            return DecodedFloat(sign, spec.emin, 0, FloatClass.ZERO)
        return DecodedFloat(sign, spec.emin, mf, FloatClass.SUBNORMAL)
    return DecodedFloat(sign, ef - spec.bias, mf | (1 << m), FloatClass.NORMAL)


@lru_cache(maxsize=None)
def decode_table(spec: FormatSpec) -> tuple[DecodedFloat, ...]:
    return tuple(_decode(p, spec) for p in range(1 << spec.total_bits))


def decode(bits: int, spec: FormatSpec) -> DecodedFloat:
    """Unpack ``bits`` into sign, unbiased exponent, significand and class."""
    if not 0 <= bits < (1 << spec.total_bits):
        raise ValueError(f"{bits:#x} does not fit in {spec.total_bits} bits")
    return decode_table(spec)[bits]


# ── encode ──────────────────────────────────────────────────────────


def encode_with_overflow(v: DecodedFloat, spec: FormatSpec) -> tuple[int, bool]:
    """Like :func:`encode`, also reporting whether the value overflowed."""
    m = spec.man_bits
    sign_bit = spec.sign_mask if v.sign else 0

    if v.cls is FloatClass.NAN:
        if spec.has_nan:
            return spec.nan_bits, False
        return sign_bit | spec.max_finite_bits, False
    if v.cls is FloatClass.INF:
        if spec.has_infinity:
            return sign_bit | spec.inf_bits, False
        return sign_bit | spec.max_finite_bits, True
    if v.significand == 0:
        return sign_bit, False

    sig, exp = v.significand, v.exp
    # Bring the leading one to bit m, truncating anything shifted out.
    top = sig.bit_length() - 1
    if top > m:
        sig >>= top - m
        exp += top - m
    elif top < m and exp > spec.emin:
        up = min(m - top, exp - spec.emin)
        sig <<= up
        exp -= up
    if exp < spec.emin:
        sig >>= spec.emin - exp
        exp = spec.emin
        if sig == 0:
            return sign_bit, False

    if exp > spec.emax or (exp == spec.emax and sig > spec.max_finite_significand):
        if spec.has_infinity:
            return sign_bit | spec.inf_bits, True
        return sign_bit | spec.max_finite_bits, True

    if sig < (1 << m):
        return sign_bit | sig, False
    return sign_bit | ((exp + spec.bias) << m) | (sig - (1 << m)), False


def encode(v: DecodedFloat, spec: FormatSpec) -> int:
    """Pack ``v`` into a bit pattern of ``spec``, truncating toward zero.

    Overflow saturates to the largest finite value (E5M2: Inf).  NaN becomes
    the canonical NaN, or the largest finite value in formats without NaN.
    """
    return encode_with_overflow(v, spec)[0]


# ── packed words ────────────────────────────────────────────────────


class Layout(enum.Enum):
    SINGLE_FP8 = "single-fp8"
    DUAL_FP4 = "dual-fp4"


@dataclass(frozen=True)
class PackedWord:
    """One 8-bit operand word.  In DUAL_FP4 layout bits[7:4] is lane 1."""

    bits: int
    layout: Layout = Layout.SINGLE_FP8

    def __post_init__(self):
        if not 0 <= self.bits <= 0xFF:
            raise ValueError(f"{self.bits:#x} is not an 8-bit word")

    @classmethod
    def single(cls, bits: int, spec: FormatSpec) -> PackedWord:
        # 4-bit values are zero-padded into the low nibble.
        if bits >= (1 << spec.total_bits):
            raise ValueError(f"{bits:#x} does not fit {spec.name}")
        return cls(bits, Layout.SINGLE_FP8)

    @property
    def lanes(self) -> tuple[int, ...]:
        """Lane patterns, lane 0 first."""
        if self.layout is Layout.DUAL_FP4:
            return (self.bits & 0xF, self.bits >> 4)
        return (self.bits,)

    def __int__(self) -> int:
        return self.bits


def pack_dual(lane1: int, lane0: int) -> PackedWord:
    if not (0 <= lane1 <= 0xF and 0 <= lane0 <= 0xF):
        raise ValueError("FP4 lanes must be 4-bit values")
    return PackedWord((lane1 << 4) | lane0, Layout.DUAL_FP4)


def unpack_dual(word: PackedWord | int) -> tuple[int, int]:
    """Split a word into ``(lane1, lane0)``."""
    bits = int(word)
    return bits >> 4, bits & 0xF


# ── values and helpers ──────────────────────────────────────────────


def to_fraction(v: DecodedFloat, spec: FormatSpec) -> Fraction:
    if not v.is_finite:
        raise ValueError(f"{v.cls.value} has no rational value")
    mag = Fraction(v.significand) * _pow2(v.exp - spec.man_bits)
    return -mag if v.sign else mag


def bits_value(bits: int, spec: FormatSpec) -> float:
    """Decoded value as a float (exact for every minifloat pattern)."""
    v = decode(bits, spec)
    if v.cls is FloatClass.NAN:
        return float("nan")
    if v.cls is FloatClass.INF:
        return float("-inf") if v.sign else float("inf")
    return float(to_fraction(v, spec))


def ordinal(bits: int, spec: FormatSpec) -> int:
    """Signed position on the number line; adjacent representables differ by 1.

    +0 and -0 share ordinal 0.  E5M2 Inf sits one step past the largest finite.
    """
    mag = bits & spec.magnitude_mask
    return -mag if bits & spec.sign_mask else mag


def parse_hex(text: str, width: int = 8) -> int:
    try:
        value = int(text, 16)
    except ValueError:
        raise ValueError(f"malformed hex literal {text!r}") from None
    if not 0 <= value < (1 << width):
        raise ValueError(f"{text} does not fit in {width} bits")
    return value


def format_hex(bits: int, width: int = 8) -> str:
    return f"0x{bits:0{(width + 3) // 4}X}"
