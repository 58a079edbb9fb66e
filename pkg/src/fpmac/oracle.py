"""Exact reference for a*b + c and error statistics against the PE model.

Two independent routes compute the truncated exact result:

* :func:`exact_mac` + :func:`quantize_truncate` work on unbounded Python
  integers, one triple at a time.
* :func:`truncated_exact_batch` scales every operand to a common integer grid
  (uint64 sign/magnitude) and truncates with a sorted table of representable
  magnitudes.  It is used for the multi-million-triple sweeps.

Neither route shares code with the datapath's alignment or normalizer.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Iterable, Iterator

import numpy as np

from .formats import (
    DecodedFloat,
    FloatClass,
    FormatSpec,
    decode,
    decode_table,
    ordinal,
)

__all__ = [
    "ExactValue",
    "ErrorStats",
    "exact_mac",
    "exact_dot",
    "quantize_truncate",
    "apply_relu_bits",
    "ulp_distance",
    "truncated_exact_batch",
    "compare_sweep",
    "exhaustive_domain",
    "random_domain",
    "SCHEMA_VERSION",
]

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class ExactValue:
    """``(-1)**sign * numerator * 2**exp2`` with ``numerator`` odd (or zero)."""

    sign: int
    numerator: int
    exp2: int
    cls: FloatClass = FloatClass.NORMAL

    @classmethod
    def from_scaled(cls, signed_numerator: int, exp2: int, zero_sign: int = 0) -> ExactValue:
        if signed_numerator == 0:
            return cls(zero_sign, 0, 0, FloatClass.ZERO)
        sign = int(signed_numerator < 0)
        n = abs(signed_numerator)
        tz = (n & -n).bit_length() - 1
        return cls(sign, n >> tz, exp2 + tz)

    @classmethod
    def nan(cls) -> ExactValue:
        return cls(0, 0, 0, FloatClass.NAN)

    @classmethod
    def inf(cls, sign: int) -> ExactValue:
        return cls(sign, 0, 0, FloatClass.INF)

    def to_fraction(self) -> Fraction:
        if self.cls in (FloatClass.NAN, FloatClass.INF):
            raise ValueError(f"{self.cls.value} has no rational value")
        v = Fraction(self.numerator) * (Fraction(2) ** self.exp2)
        return -v if self.sign else v


def _special_result(a: DecodedFloat, b: DecodedFloat, c: DecodedFloat) -> ExactValue | None:
    if FloatClass.NAN in (a.cls, b.cls, c.cls):
        return ExactValue.nan()
    sign_p = a.sign ^ b.sign
    p_inf = FloatClass.INF in (a.cls, b.cls)
    if p_inf:
        if a.is_zero or b.is_zero:
            return ExactValue.nan()
        if c.cls is FloatClass.INF and c.sign != sign_p:
            return ExactValue.nan()
        return ExactValue.inf(sign_p)
    if c.cls is FloatClass.INF:
        return ExactValue.inf(c.sign)
    return None


def exact_mac(a: DecodedFloat, b: DecodedFloat, c: DecodedFloat, spec: FormatSpec) -> ExactValue:
    """a*b + c with no precision loss."""
    special = _special_result(a, b, c)
    if special is not None:
        return special
    m = spec.man_bits
    p = a.significand * b.significand
    if a.sign ^ b.sign:
        p = -p
    cs = -c.significand if c.sign else c.significand
    ep, ec = a.exp + b.exp - 2 * m, c.exp - m
    lo = min(ep, ec)
    total = (p << (ep - lo)) + (cs << (ec - lo))
    zero_sign = (a.sign ^ b.sign) & c.sign if (p == 0 and cs == 0) else 0
    return ExactValue.from_scaled(total, lo, zero_sign)


def exact_dot(pairs: Iterable[tuple[DecodedFloat, DecodedFloat]], spec: FormatSpec) -> ExactValue:
    """Sum of a_n * b_n with no intermediate loss (finite operands only)."""
    m = spec.man_bits
    terms = []
    for a, b in pairs:
        if not (a.is_finite and b.is_finite):
            raise ValueError("exact_dot takes finite operands")
        p = a.significand * b.significand
        terms.append((-p if a.sign ^ b.sign else p, a.exp + b.exp - 2 * m))
    if not terms:
        return ExactValue.from_scaled(0, 0)
    lo = min(e for _, e in terms)
    return ExactValue.from_scaled(sum(n << (e - lo) for n, e in terms), lo)


def quantize_truncate(v: ExactValue, spec: FormatSpec) -> int:
    """Largest-magnitude representable value not exceeding |v|, with v's sign."""
    sign_bit = spec.sign_mask if v.sign else 0
    if v.cls is FloatClass.NAN:
        return spec.nan_bits if spec.has_nan else spec.max_finite_bits
    if v.cls is FloatClass.INF:
        return sign_bit | (spec.inf_bits if spec.has_infinity else spec.max_finite_bits)
    if v.numerator == 0:
        return sign_bit

    m = spec.man_bits
    top = v.exp2 + v.numerator.bit_length() - 1
    if top > spec.emax:
        return sign_bit | (spec.inf_bits if spec.has_infinity else spec.max_finite_bits)
    e = max(top, spec.emin)
    # significand = floor(|v| / 2**(e - m))
    k = v.exp2 - (e - m)
    sig = v.numerator << k if k >= 0 else v.numerator >> -k
    if sig > spec.max_finite_significand and e == spec.emax:
        return sign_bit | spec.max_finite_bits
    if sig < (1 << m):
        return sign_bit | sig
    return sign_bit | ((e + spec.bias) << m) | (sig - (1 << m))


def apply_relu_bits(bits: int, spec: FormatSpec) -> int:
    if bits & spec.sign_mask and decode(bits, spec).cls is not FloatClass.NAN:
        return 0
    return bits


def ulp_distance(x: int, y: int, spec: FormatSpec) -> int:
    """Number of representable steps between two non-NaN patterns."""
    return abs(ordinal(x, spec) - ordinal(y, spec))


# ── vectorized route ────────────────────────────────────────────────


class _Tables:
    """Per-format integer grids for the vectorized oracle.

    Operand magnitudes are scaled by ``2**scale`` so that the smallest product
    lands on an integer; magnitudes stay below 2**64.
    """

    def __init__(self, spec: FormatSpec):
        m = spec.man_bits
        n = 1 << spec.total_bits
        table = decode_table(spec)
        self.spec = spec
        self.scale = 2 * (m - spec.emin)
        self.sign = np.array([d.sign for d in table], dtype=np.uint8)
        self.sig = np.array([d.significand for d in table], dtype=np.uint64)
        self.exp = np.array([d.exp for d in table], dtype=np.int64)
        self.is_nan = np.array([d.cls is FloatClass.NAN for d in table])
        self.is_inf = np.array([d.cls is FloatClass.INF for d in table])
        self.is_zero = np.array([d.cls is FloatClass.ZERO for d in table])
        # Addend magnitude on the product grid.
        cshift = np.where(self.is_inf | self.is_nan, 0, self.exp - m + self.scale)
        self.c_mag = np.where(self.is_inf | self.is_nan, 0, self.sig << cshift.astype(np.uint64))
        # Sorted magnitudes of non-negative finite patterns, pattern index == position.
        top = spec.max_finite_bits
        self.grid = self.c_mag[: top + 1].copy()
        if np.any(np.diff(self.grid.astype(object)) <= 0):
            raise AssertionError(f"{spec.name} magnitudes are not strictly increasing")
        # Exact magnitudes at or above this overflow (next binade past emax).
        self.overflow_at = 1 << (spec.emax + 1 + self.scale)
        self.n = n


@lru_cache(maxsize=None)
def _tables(spec: FormatSpec) -> _Tables:
    return _Tables(spec)


def truncated_exact_batch(a, b, c, spec: FormatSpec, relu: bool = False):
    """Vectorized ``quantize_truncate(exact_mac(...))`` over pattern arrays.

    Returns ``(bits, nan)`` where ``nan`` marks lanes whose exact result is NaN.
    """
    t = _tables(spec)
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    c = np.asarray(c, dtype=np.int64)
    m = spec.man_bits

    sp = t.sign[a] ^ t.sign[b]
    sc = t.sign[c]
    finite_p = ~(t.is_inf[a] | t.is_inf[b] | t.is_nan[a] | t.is_nan[b])
    pshift = np.where(finite_p, t.exp[a] + t.exp[b] - 2 * m + t.scale, 0).astype(np.uint64)
    pmag = np.where(finite_p, (t.sig[a] * t.sig[b]) << pshift, np.uint64(0))
    cmag = t.c_mag[c]

    same = sp == sc
    bigger_p = pmag >= cmag
    mag = np.where(same, pmag + cmag, np.where(bigger_p, pmag - cmag, cmag - pmag))
    sign = np.where(same | bigger_p, sp, sc).astype(np.int64)
    both_zero = (pmag == 0) & (cmag == 0)
    sign = np.where(mag == 0, np.where(both_zero, sp & sc, 0), sign)

    idx = np.searchsorted(t.grid, mag, side="right") - 1
    bits = idx.astype(np.int64)
    over = mag >= np.uint64(t.overflow_at) if t.overflow_at < (1 << 64) else np.zeros(mag.shape, bool)
    if spec.has_infinity:
        bits = np.where(over, spec.inf_bits, bits)
    bits = np.where(sign == 1, bits | spec.sign_mask, bits)

    # Special-value rules.
    any_nan = t.is_nan[a] | t.is_nan[b] | t.is_nan[c]
    p_inf = (t.is_inf[a] | t.is_inf[b]) & ~any_nan
    p_zero = t.is_zero[a] | t.is_zero[b]
    c_inf = t.is_inf[c]
    nan = any_nan | (p_inf & p_zero) | (p_inf & c_inf & (sc != sp))
    if spec.has_infinity:
        inf_sign = np.where(p_inf, sp, sc).astype(np.int64)
        inf_bits = spec.inf_bits | (inf_sign * spec.sign_mask)
        bits = np.where((p_inf | c_inf) & ~nan, inf_bits, bits)
    if spec.has_nan:
        bits = np.where(nan, spec.nan_bits, bits)

    if relu:
        bits = np.where(((bits & spec.sign_mask) != 0) & ~nan, 0, bits)
    return bits, nan


# ── statistics ──────────────────────────────────────────────────────


@dataclass
class ErrorStats:
    """PE-vs-oracle comparison summary.

    ``mean_abs`` is the mean absolute error over lane results where both sides
    are finite.  Lanes whose exact result is NaN are not ULP-compared; they
    count in ``invalid`` and must be flagged invalid by the PE, otherwise they
    count in ``nan_mismatch``.
    """

    compared: int = 0
    max_ulp: int = 0
    abs_error_sum: Fraction = field(default_factory=Fraction)
    finite_count: int = 0
    histogram: Counter = field(default_factory=Counter)
    invalid: int = 0
    nan_mismatch: int = 0
    bit_mismatch: int = 0

    @property
    def mismatch_count(self) -> int:
        return sum(n for d, n in self.histogram.items() if d > 0)

    @property
    def mean_abs(self) -> Fraction:
        if self.finite_count == 0:
            return Fraction(0)
        return self.abs_error_sum / self.finite_count

    def merge(self, other: ErrorStats) -> ErrorStats:
        return ErrorStats(
            compared=self.compared + other.compared,
            max_ulp=max(self.max_ulp, other.max_ulp),
            abs_error_sum=self.abs_error_sum + other.abs_error_sum,
            finite_count=self.finite_count + other.finite_count,
            histogram=self.histogram + other.histogram,
            invalid=self.invalid + other.invalid,
            nan_mismatch=self.nan_mismatch + other.nan_mismatch,
            bit_mismatch=self.bit_mismatch + other.bit_mismatch,
        )

    def to_dict(self) -> dict:
        mean = self.mean_abs
        return {
            "version": SCHEMA_VERSION,
            "compared": self.compared,
            "max_ulp": self.max_ulp,
            "mismatch_count": self.mismatch_count,
            "bit_mismatch": self.bit_mismatch,
            "invalid": self.invalid,
            "finite_count": self.finite_count,
            "nan_mismatch": self.nan_mismatch,
            "mean_abs": f"{mean.numerator}/{mean.denominator}",
            "mean_abs_float": float(mean),
            "histogram": {str(k): v for k, v in sorted(self.histogram.items())},
        }

    @classmethod
    def from_dict(cls, d: dict) -> ErrorStats:
        if d.get("version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported ErrorStats version {d.get('version')!r}")
        hist = Counter({int(k): v for k, v in d["histogram"].items()})
        num, den = d["mean_abs"].split("/")
        finite = d["finite_count"]
        return cls(
            compared=d["compared"],
            max_ulp=d["max_ulp"],
            abs_error_sum=Fraction(int(num), int(den)) * finite,
            finite_count=finite,
            histogram=hist,
            invalid=d["invalid"],
            nan_mismatch=d["nan_mismatch"],
            bit_mismatch=d["bit_mismatch"],
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def histogram_csv(self) -> str:
        lines = ["version,ulp_distance,count"]
        lines += [f"{SCHEMA_VERSION},{k},{v}" for k, v in sorted(self.histogram.items())]
        return "\n".join(lines) + "\n"


def _pattern_values(spec: FormatSpec) -> np.ndarray:
    """Finite pattern values as integers on the oracle grid (Inf/NaN -> 0)."""
    t = _tables(spec)
    signed = t.c_mag.astype(object)
    return np.where(t.sign == 1, -signed, signed)


def _stats_from_arrays(pe_bits, pe_invalid, ref_bits, ref_nan, spec: FormatSpec) -> ErrorStats:
    pe_bits = np.asarray(pe_bits, dtype=np.int64)
    ref_bits = np.asarray(ref_bits, dtype=np.int64)
    ref_nan = np.asarray(ref_nan, dtype=bool)
    pe_invalid = np.asarray(pe_invalid, dtype=bool)
    mag = spec.magnitude_mask
    stats = ErrorStats()
    stats.compared = int(pe_bits.size)
    stats.invalid = int(ref_nan.sum())
    stats.nan_mismatch = int((ref_nan & ~pe_invalid).sum() + (~ref_nan & pe_invalid).sum())

    ok = ~ref_nan
    pe, ref = pe_bits[ok], ref_bits[ok]
    stats.bit_mismatch = int((pe != ref).sum())

    def ordv(x):
        return np.where(x & spec.sign_mask, -(x & mag), x & mag)

    dist = np.abs(ordv(pe) - ordv(ref))
    if dist.size:
        values, counts = np.unique(dist, return_counts=True)
        stats.histogram = Counter({int(v): int(n) for v, n in zip(values, counts)})
        stats.max_ulp = int(values.max())

    t = _tables(spec)
    finite = ~(t.is_inf[pe] | t.is_inf[ref] | t.is_nan[pe] | t.is_nan[ref])
    vals = _pattern_values(spec)
    diff = np.abs(vals[pe[finite]] - vals[ref[finite]])
    stats.finite_count = int(finite.sum())
    stats.abs_error_sum = Fraction(int(diff.sum()) if diff.size else 0, 1 << t.scale)
    return stats


# ── sweeps ──────────────────────────────────────────────────────────


def exhaustive_domain(cfg, chunk: int = 1 << 16) -> Iterator[tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """Every operand triple.

    FP8 modes enumerate all 2**24 word triples.  Dual-FP4 modes enumerate all
    16**3 per-lane triples with the same triple in both lanes.
    """
    n = 1 << cfg.spec.total_bits
    grid = np.arange(n, dtype=np.int64)
    if cfg.mode.lanes == 2:
        a, b, c = (x.ravel() for x in np.meshgrid(grid, grid, grid, indexing="ij"))
        a, b, c = (x | (x << 4) for x in (a, b, c))
        for lo in range(0, a.size, chunk):
            yield a[lo:lo + chunk], b[lo:lo + chunk], c[lo:lo + chunk]
        return
    bc_b, bc_c = (x.ravel() for x in np.meshgrid(grid, grid, indexing="ij"))
    for av in range(n):
        yield np.full(bc_b.size, av, dtype=np.int64), bc_b, bc_c


def random_domain(cfg, count: int, seed: int, chunk: int = 1 << 16) -> Iterator[tuple[np.ndarray, ...]]:
    rng = np.random.default_rng(seed)
    left = count
    while left > 0:
        k = min(chunk, left)
        yield tuple(rng.integers(0, 256, size=k, dtype=np.int64) for _ in range(3))
        left -= k


def domain_size(cfg) -> int:
    if cfg.mode.lanes == 2:
        return 16 ** 3
    return 256 ** 3


def _lanes_of(words: np.ndarray, lanes: int) -> list[np.ndarray]:
    if lanes == 2:
        return [words & 0xF, words >> 4]
    return [words]


def _compare_chunk(cfg, a, b, c, engine: str) -> ErrorStats:
    from . import batch
    from .datapath import mac

    spec = cfg.spec
    a, b, c = (np.asarray(x, dtype=np.int64) for x in (a, b, c))
    if engine == "batch":
        res = batch.mac_batch(a, b, c, cfg)
        pe_lanes, inv_lanes = res.lane_bits, res.invalid
    elif engine == "scalar":
        results = [mac(int(x), int(y), int(z), cfg) for x, y, z in zip(a, b, c)]
        pe_lanes = [np.array([r.lanes[i] for r in results], dtype=np.int64) for i in range(cfg.mode.lanes)]
        inv_lanes = [np.array([r.flags[i].invalid for r in results], dtype=bool) for i in range(cfg.mode.lanes)]
    else:
        raise ValueError(f"unknown engine {engine!r}")

    stats = ErrorStats()
    for lane, (la, lb, lc) in enumerate(zip(*(_lanes_of(x, cfg.mode.lanes) for x in (a, b, c)))):
        ref, nan = truncated_exact_batch(la, lb, lc, spec, relu=cfg.relu)
        stats = stats.merge(_stats_from_arrays(pe_lanes[lane], inv_lanes[lane], ref, nan, spec))
    return stats


def compare_sweep(cfg, domain: Iterable, engine: str = "batch", workers: int = 1) -> ErrorStats:
    """Run the PE and the oracle over ``domain`` (an iterable of (a, b, c) word
    array chunks) and accumulate lane-level error statistics."""
    stats = ErrorStats()
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_compare_chunk, cfg, a, b, c, engine) for a, b, c in domain]
            for fut in futures:
                stats = stats.merge(fut.result())
        return stats
    for a, b, c in domain:
        stats = stats.merge(_compare_chunk(cfg, a, b, c, engine))
    return stats


def scalar_reference(a: int, b: int, c: int, spec: FormatSpec, relu: bool = False) -> int:
    """quantize_truncate(exact_mac(...)) for one lane, with optional ReLU."""
    bits = quantize_truncate(exact_mac(decode(a, spec), decode(b, spec), decode(c, spec), spec), spec)
    return apply_relu_bits(bits, spec) if relu else bits

