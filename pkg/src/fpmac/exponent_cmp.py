"""Three-input exponent comparator built from a difference block and a LUT.

The product exponent is formed from the two operand exponents, one EC block
takes its difference against the addend exponent, and a single table lookup
keyed on (sign, clamped magnitude) of that difference returns which side is
the reference and how far the other side must shift right.
"""

from __future__ import annotations

from functools import lru_cache
from typing import NamedTuple

from .formats import FormatSpec

__all__ = [
    "ExpCompareResult",
    "ExponentComparator",
    "product_exponent",
    "compare_align",
    "INTERNAL_EXP_RANGE",
]

# Covers the product and addend exponents of every supported format.
INTERNAL_EXP_RANGE = (-60, 32)


class ExpCompareResult(NamedTuple):
    e_ref: int
    shift_p: int
    shift_c: int


def product_exponent(ea: int, eb: int) -> int:
    # Operands arrive unbiased, so the double bias of the product is already gone.
    return ea + eb


class ExponentComparator:
    """Fixed-latency comparator for exponents within ``[lo, hi]``.

    Differences outside the table's range clamp to its last entry; inputs
    inside ``[lo, hi]`` never need clamping.
    """

    def __init__(self, lo: int, hi: int):
        if lo > hi:
            raise ValueError("empty exponent range")
        self.lo, self.hi = lo, hi
        self.max_diff = hi - lo
        # lut[sign][|d|] -> (product_is_ref, shift magnitude)
        self.lut = (
            tuple((True, k) for k in range(self.max_diff + 1)),
            tuple((k == 0, k) for k in range(self.max_diff + 1)),
        )

    @classmethod
    def for_format(cls, spec: FormatSpec) -> ExponentComparator:
        return _comparator(2 * spec.emin, 2 * spec.emax)

    def compare(self, e_p: int, e_c: int) -> ExpCompareResult:
        d = e_p - e_c
        sign = int(d < 0)
        key = min(abs(d), self.max_diff)
        product_ref, shift = self.lut[sign][key]
        if product_ref:
            return ExpCompareResult(e_p, 0, shift)
        return ExpCompareResult(e_c, shift, 0)

    def compare3(self, ea: int, eb: int, ec: int) -> ExpCompareResult:
        return self.compare(product_exponent(ea, eb), ec)


@lru_cache(maxsize=None)
def _comparator(lo: int, hi: int) -> ExponentComparator:
    return ExponentComparator(lo, hi)


def compare_align(e_p: int, e_c: int) -> ExpCompareResult:
    """Reference exponent and right-shift amounts for product and addend."""
    return _comparator(*INTERNAL_EXP_RANGE).compare(e_p, e_c)
