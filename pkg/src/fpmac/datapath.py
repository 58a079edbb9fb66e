"""Functional model of the dual-precision MAC, one function per pipeline stage.

    S0  decode operands, detect specials, split dual-FP4 words into lanes
    S1  sign XOR, unit-multiplier significand products, exponent compare
    S2  truncating alignment shift, then two's-complement of negative terms
    S3  3:2 carry-save reduction and carry-select final add
    S4  leading-zero count, normalize, truncate to the lane format
    S5  optional ReLU, encode, repack lanes

Internal fixed point per lane: 1.0 sits at bit ``2*man_bits + guard_bits`` and
the accumulator is ``W = 2*(man_bits+1) + guard_bits + 2`` bits wide.
:func:`mac` is the composition of the six stage functions; the pipeline model
calls the same functions one stage per cycle.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import NamedTuple

from .exponent_cmp import ExpCompareResult, ExponentComparator, product_exponent
from .formats import (
    E1M2,
    E2M1,
    E4M3,
    E5M2,
    DecodedFloat,
    FloatClass,
    FormatSpec,
    Layout,
    PackedWord,
    decode,
    encode_with_overflow,
)
from .unit_mult import MulMode, unit_multiply

__all__ = [
    "MacMode",
    "MacConfig",
    "LaneFlags",
    "MacResult",
    "Term",
    "AlignedTerm",
    "accumulator_width",
    "align_terms",
    "csa_3to2",
    "carry_select_add",
    "leading_zeros",
    "normalize",
    "relu",
    "mac",
    "mac_trace",
    "STAGES",
    "MAX_GUARD_BITS",
]

MAX_GUARD_BITS = 64


class MacMode(enum.Enum):
    E4M3 = "e4m3"
    E5M2 = "e5m2"
    DUAL_E2M1 = "dual-e2m1"
    DUAL_E1M2 = "dual-e1m2"

    @property
    def lane_format(self) -> FormatSpec:
        return _LANE_FORMAT[self]

    @property
    def lanes(self) -> int:
        return 2 if self in (MacMode.DUAL_E2M1, MacMode.DUAL_E1M2) else 1

    @property
    def layout(self) -> Layout:
        return Layout.DUAL_FP4 if self.lanes == 2 else Layout.SINGLE_FP8

    @classmethod
    def parse(cls, name: str | MacMode) -> MacMode:
        if isinstance(name, MacMode):
            return name
        key = name.lower().replace("_", "-")
        for mode in cls:
            if mode.value == key:
                return mode
        raise ValueError(f"unknown mode {name!r}; expected one of {[m.value for m in cls]}")


_LANE_FORMAT = {
    MacMode.E4M3: E4M3,
    MacMode.E5M2: E5M2,
    MacMode.DUAL_E2M1: E2M1,
    MacMode.DUAL_E1M2: E1M2,
}


@dataclass(frozen=True)
class MacConfig:
    mode: MacMode = MacMode.E4M3
    guard_bits: int = 3
    relu: bool = True
    accumulate_chain: bool = False

    def __post_init__(self):
        object.__setattr__(self, "mode", MacMode.parse(self.mode))
        if not 0 <= self.guard_bits <= MAX_GUARD_BITS:
            raise ValueError(f"guard_bits must be in [0, {MAX_GUARD_BITS}]")

    @property
    def spec(self) -> FormatSpec:
        return self.mode.lane_format

    @property
    def width(self) -> int:
        return accumulator_width(self.spec, self.guard_bits)

    @property
    def frac_bits(self) -> int:
        return 2 * self.spec.man_bits + self.guard_bits


def accumulator_width(spec: FormatSpec, guard_bits: int) -> int:
    return 2 * (spec.man_bits + 1) + guard_bits + 2


class LaneFlags(NamedTuple):
    overflow: bool = False
    underflow: bool = False
    invalid: bool = False
    inexact: bool = False


@dataclass(frozen=True)
class MacResult:
    bits: int
    mode: MacMode
    flags: tuple[LaneFlags, ...]  # lane 0 first

    @property
    def word(self) -> PackedWord:
        return PackedWord(self.bits, self.mode.layout)

    @property
    def lanes(self) -> tuple[int, ...]:
        return self.word.lanes


class Term(NamedTuple):
    """Sign and magnitude of a significand at the internal fixed-point scale."""

    sign: int
    magnitude: int


class AlignedTerm(NamedTuple):
    value: int  # signed; |value| < 2**(W-1)
    sticky: bool


# ── S2 ──────────────────────────────────────────────────────────────


def _shift_truncate(mag: int, shift: int, width: int) -> tuple[int, bool]:
    if shift == 0:
        return mag, False
    if shift >= width:
        return 0, mag != 0
    return mag >> shift, (mag & ((1 << shift) - 1)) != 0


def align_terms(p: Term, c: Term, cmp: ExpCompareResult, width: int) -> tuple[AlignedTerm, AlignedTerm]:
    """Right-shift the smaller-exponent term, truncating, then negate negatives."""
    out = []
    for term, shift in ((p, cmp.shift_p), (c, cmp.shift_c)):
        mag, sticky = _shift_truncate(term.magnitude, shift, width)
        out.append(AlignedTerm(-mag if term.sign else mag, sticky))
    return out[0], out[1]


# ── S3 ──────────────────────────────────────────────────────────────


def csa_3to2(x: int, y: int, z: int, width: int) -> tuple[int, int]:
    """3:2 compression at ``width`` bits: sum + carry == x + y + z (mod 2**width)."""
    mask = (1 << width) - 1
    x, y, z = x & mask, y & mask, z & mask
    s = x ^ y ^ z
    carry = (((x & y) | (x & z) | (y & z)) << 1) & mask
    return s, carry


def _ripple(a: int, b: int, cin: int, bits: int) -> tuple[int, int]:
    out = 0
    for i in range(bits):
        ai, bi = (a >> i) & 1, (b >> i) & 1
        out |= (ai ^ bi ^ cin) << i
        cin = (ai & bi) | (cin & (ai ^ bi))
    return out, cin


def carry_select_add(
    s: int, k: int, width: int, block: int = 4, trace: list | None = None
) -> int:
    """Carry-select adder: each block is summed for carry-in 0 and 1 up front,
    and the incoming carry picks one.  ``trace`` receives (block, carry_in)."""
    mask = (1 << width) - 1
    s, k = s & mask, k & mask
    result = 0
    carry = 0
    for idx, lo in enumerate(range(0, width, block)):
        bits = min(block, width - lo)
        bm = (1 << bits) - 1
        sb, kb = (s >> lo) & bm, (k >> lo) & bm
        sum0, cout0 = _ripple(sb, kb, 0, bits)
        sum1, cout1 = _ripple(sb, kb, 1, bits)
        if trace is not None:
            trace.append((idx, carry))
        if carry:
            result |= sum1 << lo
            carry = cout1
        else:
            result |= sum0 << lo
            carry = cout0
    return result


# ── S4 ──────────────────────────────────────────────────────────────


def leading_zeros(value: int, width: int) -> int:
    n = 0
    for i in range(width - 1, -1, -1):
        if (value >> i) & 1:
            break
        n += 1
    return n


class _Normalized(NamedTuple):
    value: DecodedFloat
    inexact: bool
    tiny: bool


def _normalize(acc: int, e_ref: int, spec: FormatSpec, frac_bits: int, width: int) -> _Normalized:
    acc &= (1 << width) - 1
    negative = (acc >> (width - 1)) & 1
    mag = ((1 << width) - acc) if negative else acc
    if mag == 0:
        return _Normalized(DecodedFloat(0, spec.emin, 0, FloatClass.ZERO), False, False)

    m = spec.man_bits
    msb = width - 1 - leading_zeros(mag, width)
    exp = e_ref + msb - frac_bits
    if exp >= spec.emin:
        cls = FloatClass.NORMAL
        # Move the leading one to bit m: right on carry-out, left after cancellation.
        shift = msb - m
        tiny = False
    else:
        cls = FloatClass.SUBNORMAL
        shift = frac_bits + spec.emin - m - e_ref
        exp = spec.emin
        tiny = True
    if shift >= 0:
        sig = mag >> shift
        lost = (mag & ((1 << shift) - 1)) != 0
    else:
        sig = mag << -shift
        lost = False
    if sig == 0:
        return _Normalized(DecodedFloat(negative, spec.emin, 0, FloatClass.ZERO), True, True)
    return _Normalized(DecodedFloat(negative, exp, sig, cls), lost, tiny)


def normalize(acc: int, e_ref: int, cfg: MacConfig) -> DecodedFloat:
    """Accumulator (two's complement, ``cfg.width`` bits) to a truncated lane value.

    Exponents above the format range are returned as-is; encoding saturates.
    """
    return _normalize(acc, e_ref, cfg.spec, cfg.frac_bits, cfg.width).value


# ── S5 ──────────────────────────────────────────────────────────────


def relu(v: DecodedFloat) -> DecodedFloat:
    if v.cls is FloatClass.NAN or not v.sign:
        return v
    return DecodedFloat(0, v.exp if v.is_zero else 0, 0, FloatClass.ZERO)


# ── stage records ───────────────────────────────────────────────────


@dataclass(frozen=True)
class LaneDecoded:
    a: DecodedFloat
    b: DecodedFloat
    c: DecodedFloat


@dataclass(frozen=True)
class LaneProduct:
    sign: int
    significand: int  # product magnitude, 2*man_bits fraction bits
    exp: int
    addend: DecodedFloat
    cmp: ExpCompareResult
    special: DecodedFloat | None = None  # result fixed by special-value rules
    invalid: bool = False


@dataclass(frozen=True)
class LaneAligned:
    p: AlignedTerm
    c: AlignedTerm
    e_ref: int
    special: DecodedFloat | None = None
    invalid: bool = False


@dataclass(frozen=True)
class LaneSum:
    acc: int
    e_ref: int
    sticky: bool
    special: DecodedFloat | None = None
    invalid: bool = False


@dataclass(frozen=True)
class LaneNormalized:
    value: DecodedFloat
    flags: LaneFlags


@dataclass(frozen=True)
class S0Out:
    lanes: tuple[LaneDecoded, ...]


@dataclass(frozen=True)
class S1Out:
    lanes: tuple[LaneProduct, ...]
    mult_outputs: tuple[int, ...] = field(default=())


@dataclass(frozen=True)
class S2Out:
    lanes: tuple[LaneAligned, ...]


@dataclass(frozen=True)
class S3Out:
    lanes: tuple[LaneSum, ...]


@dataclass(frozen=True)
class S4Out:
    lanes: tuple[LaneNormalized, ...]


# ── stages ──────────────────────────────────────────────────────────


def _word_lanes(word: int | PackedWord, cfg: MacConfig) -> tuple[int, ...]:
    bits = int(word)
    if not 0 <= bits <= 0xFF:
        raise ValueError(f"{bits:#x} is not an 8-bit word")
    if cfg.mode.lanes == 2:
        return (bits & 0xF, bits >> 4)
    return (bits,)


def s0_decode(a, b, c, cfg: MacConfig) -> S0Out:
    spec = cfg.spec
    lanes = tuple(
        LaneDecoded(decode(x, spec), decode(y, spec), decode(z, spec))
        for x, y, z in zip(_word_lanes(a, cfg), _word_lanes(b, cfg), _word_lanes(c, cfg))
    )
    return S0Out(lanes)


def _special(lane: LaneDecoded, sign_p: int) -> tuple[DecodedFloat | None, bool]:
    a, b, c = lane.a, lane.b, lane.c
    nan = DecodedFloat(0, 0, 0, FloatClass.NAN)
    if FloatClass.NAN in (a.cls, b.cls, c.cls):
        return nan, True
    p_inf = FloatClass.INF in (a.cls, b.cls)
    if p_inf and (a.is_zero or b.is_zero):
        return nan, True
    if p_inf and c.cls is FloatClass.INF and c.sign != sign_p:
        return nan, True
    if p_inf:
        return DecodedFloat(sign_p, 0, 0, FloatClass.INF), False
    if c.cls is FloatClass.INF:
        return DecodedFloat(c.sign, 0, 0, FloatClass.INF), False
    if (a.is_zero or b.is_zero) and c.is_zero:
        # -0 only when both the product and the addend are -0.
        return DecodedFloat(sign_p & c.sign, c.exp, 0, FloatClass.ZERO), False
    return None, False


def s1_multiply(s0: S0Out, cfg: MacConfig) -> S1Out:
    lanes = s0.lanes
    if cfg.mode is MacMode.DUAL_E2M1:
        # One block, split mode: lane 1 in the high segment, lane 0 in the low.
        pa = (lanes[1].a.significand << 2) | lanes[0].a.significand
        pb = (lanes[1].b.significand << 2) | lanes[0].b.significand
        out = unit_multiply(pa, pb, MulMode.SPLIT)
        products = (out & 0xF, out >> 4)
        mult_outputs = (out,)
    else:
        # E1M2 lanes use one full-mode block each; FP8 uses one block.
        mult_outputs = tuple(
            unit_multiply(lane.a.significand & 0xF, lane.b.significand & 0xF, MulMode.FULL)
            for lane in lanes
        )
        products = mult_outputs

    comparator = ExponentComparator.for_format(cfg.spec)
    result = []
    for lane, prod in zip(lanes, products):
        sign_p = lane.a.sign ^ lane.b.sign
        special, invalid = _special(lane, sign_p)
        if special is not None:
            prod = 0
        e_p = product_exponent(lane.a.exp, lane.b.exp)
        e_c = lane.c.exp
        # A zero term must never push the other one through the shifter.
        if lane.c.is_zero:
            e_c = e_p
        elif prod == 0:
            e_p = e_c
        cmp = comparator.compare(e_p, e_c)
        result.append(LaneProduct(sign_p, prod, e_p, lane.c, cmp, special, invalid))
    return S1Out(tuple(result), mult_outputs)


def s2_align(s1: S1Out, cfg: MacConfig) -> S2Out:
    g, m, width = cfg.guard_bits, cfg.spec.man_bits, cfg.width
    lanes = []
    for lp in s1.lanes:
        if lp.special is not None:
            zero = AlignedTerm(0, False)
            lanes.append(LaneAligned(zero, zero, lp.cmp.e_ref, lp.special, lp.invalid))
            continue
        p = Term(lp.sign, lp.significand << g)
        c = Term(lp.addend.sign, lp.addend.significand << (m + g))
        tp, tc = align_terms(p, c, lp.cmp, width)
        lanes.append(LaneAligned(tp, tc, lp.cmp.e_ref))
    return S2Out(tuple(lanes))


def s3_accumulate(s2: S2Out, cfg: MacConfig) -> S3Out:
    width = cfg.width
    lanes = []
    for la in s2.lanes:
        s, k = csa_3to2(la.p.value, la.c.value, 0, width)
        acc = carry_select_add(s, k, width)
        lanes.append(LaneSum(acc, la.e_ref, la.p.sticky or la.c.sticky, la.special, la.invalid))
    return S3Out(tuple(lanes))


def s4_normalize(s3: S3Out, cfg: MacConfig) -> S4Out:
    spec = cfg.spec
    lanes = []
    for ls in s3.lanes:
        if ls.special is not None:
            lanes.append(LaneNormalized(ls.special, LaneFlags(invalid=ls.invalid)))
            continue
        n = _normalize(ls.acc, ls.e_ref, spec, cfg.frac_bits, cfg.width)
        inexact = n.inexact or ls.sticky
        lanes.append(LaneNormalized(n.value, LaneFlags(underflow=n.tiny and inexact, inexact=inexact)))
    return S4Out(tuple(lanes))


def s5_output(s4: S4Out, cfg: MacConfig) -> MacResult:
    spec = cfg.spec
    patterns = []
    flags = []
    for ln in s4.lanes:
        v = relu(ln.value) if cfg.relu else ln.value
        bits, overflow = encode_with_overflow(v, spec)
        f = ln.flags
        if overflow:
            f = f._replace(overflow=True, inexact=True)
        if v.cls is FloatClass.NAN and not spec.has_nan:
            f = f._replace(invalid=True)
        patterns.append(bits)
        flags.append(f)
    if cfg.mode.lanes == 2:
        word = (patterns[1] << 4) | patterns[0]
    else:
        word = patterns[0]
    return MacResult(word, cfg.mode, tuple(flags))


STAGES = (s0_decode, s1_multiply, s2_align, s3_accumulate, s4_normalize, s5_output)
STAGE_NAMES = (
    "S0 input decode",
    "S1 multiply / exponent compare",
    "S2 alignment shifter",
    "S3 CSA + carry-select",
    "S4 LZA / normalize",
    "S5 ReLU / encode",
)


def mac_trace(a, b, c, cfg: MacConfig) -> tuple[MacResult, list]:
    """Run all stages, returning the result and every intermediate stage record."""
    records = [s0_decode(a, b, c, cfg)]
    for stage in STAGES[1:]:
        records.append(stage(records[-1], cfg))
    return records[-1], records


def mac(a: int | PackedWord, b: int | PackedWord, c: int | PackedWord, cfg: MacConfig | None = None) -> MacResult:
    """a*b + c per lane, through S0..S5."""
    cfg = cfg or MacConfig()
    out = s0_decode(a, b, c, cfg)
    for stage in STAGES[1:]:
        out = stage(out, cfg)
    return out
