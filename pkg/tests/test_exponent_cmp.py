from __future__ import annotations

import pytest
from hypothesis import given, strategies as st

from fpmac.exponent_cmp import (
    INTERNAL_EXP_RANGE,
    ExpCompareResult,
    ExponentComparator,
    compare_align,
    product_exponent,
)
from fpmac.formats import E1M2, E2M1, E4M3, E5M2


def naive(e_p, e_c):
    ref = max(e_p, e_c)
    return ExpCompareResult(ref, ref - e_p, ref - e_c)


def test_product_exponent():
    assert product_exponent(0, 0) == 0
    assert product_exponent(3, -2) == 1
    assert product_exponent(E4M3.emax, E4M3.emax) == 16
    lo, hi = INTERNAL_EXP_RANGE
    assert lo <= 2 * E5M2.emin - 2 * E5M2.man_bits and 2 * E5M2.emax <= hi


def test_examples():
    assert compare_align(3, 1) == (3, 0, 2)
    assert compare_align(5, 5) == (5, 0, 0)
    assert compare_align(-4, 2) == (2, 6, 0)


def test_internal_range_exhaustive():
    lo, hi = INTERNAL_EXP_RANGE
    for e_p in range(lo, hi + 1):
        for e_c in range(lo, hi + 1):
            assert compare_align(e_p, e_c) == naive(e_p, e_c)


@pytest.mark.parametrize("spec", [E4M3, E5M2, E2M1, E1M2], ids=lambda s: s.name)
def test_per_format_reachable_pairs(spec):
    cmp = ExponentComparator.for_format(spec)
    e_ps = range(2 * spec.emin, 2 * spec.emax + 1)
    e_cs = range(spec.emin, spec.emax + 1)
    for e_p in e_ps:
        for e_c in e_cs:
            assert cmp.compare(e_p, e_c) == naive(e_p, e_c)


@given(st.integers(-60, 32), st.integers(-60, 32))
def test_invariants(e_p, e_c):
    r = compare_align(e_p, e_c)
    assert r.shift_p == 0 or r.shift_c == 0
    swapped = compare_align(e_c, e_p)
    assert swapped.e_ref == r.e_ref
    assert (swapped.shift_p, swapped.shift_c) == (r.shift_c, r.shift_p)


def test_compare3():
    cmp = ExponentComparator.for_format(E4M3)
    assert cmp.compare3(2, 3, 1) == naive(5, 1)


def test_lut_is_bounded():
    cmp = ExponentComparator(-4, 4)
    # table covers signed differences only up to the range span
    assert len(cmp.lut[0]) == len(cmp.lut[1]) == 9
