from __future__ import annotations

import random

import pytest
from hypothesis import given, settings, strategies as st

from fpmac.datapath import (
    AlignedTerm,
    LaneFlags,
    MacConfig,
    MacMode,
    Term,
    accumulator_width,
    align_terms,
    carry_select_add,
    csa_3to2,
    leading_zeros,
    mac,
    mac_trace,
    normalize,
    relu,
)
from fpmac.exponent_cmp import ExpCompareResult
from fpmac.formats import E4M3, DecodedFloat, FloatClass, bits_value, decode, pack_dual
from fpmac.oracle import scalar_reference
from fpmac.unit_mult import MulMode, unit_multiply

FP4_MODES = [MacMode.DUAL_E2M1, MacMode.DUAL_E1M2]


def cfg(mode, **kw):
    return MacConfig(mode=mode, **kw)


# ── config ──


def test_config_defaults_and_validation():
    c = MacConfig()
    assert (c.mode, c.guard_bits, c.relu, c.accumulate_chain) == (MacMode.E4M3, 3, True, False)
    assert c.width == accumulator_width(E4M3, 3) == 2 * 4 + 3 + 2
    assert MacConfig(mode="dual-e2m1").mode is MacMode.DUAL_E2M1
    assert MacConfig(guard_bits=64).guard_bits == 64
    with pytest.raises(ValueError):
        MacConfig(guard_bits=65)
    with pytest.raises(ValueError):
        MacConfig(guard_bits=-1)
    with pytest.raises(ValueError):
        MacConfig(mode="fp16")


# ── worked examples ──


def test_mac_examples():
    assert mac(0x38, 0x38, 0x00).bits == 0x38
    r = mac(0x40, 0x44, 0x38)
    assert r.bits == 0x4E and bits_value(r.bits, E4M3) == 7.0
    assert mac(0x40, 0xC4, 0x00, MacConfig(relu=True)).bits == 0x00
    r = mac(0x77, 0x11, 0x00, cfg(MacMode.DUAL_E2M1))
    assert r.bits == 0x55
    assert r.lanes == (0x5, 0x5)


def test_mac_accepts_packed_words():
    r = mac(pack_dual(7, 7), pack_dual(1, 1), pack_dual(0, 0), cfg(MacMode.DUAL_E2M1))
    assert r.word.bits == 0x55
    with pytest.raises(ValueError):
        mac(0x100, 0, 0)


def test_align_examples():
    cmp0 = ExpCompareResult(0, 0, 0)
    p, c = align_terms(Term(0, 5), Term(1, 3), cmp0, 8)
    assert p == AlignedTerm(5, False) and c == AlignedTerm(-3, False)

    p, _ = align_terms(Term(0, 0b1011), Term(0, 0), ExpCompareResult(2, 2, 0), 8)
    assert p == AlignedTerm(0b10, True)

    p, _ = align_terms(Term(1, 0b0110), Term(0, 0), ExpCompareResult(1, 1, 0), 8)
    assert p == AlignedTerm(-3, False)
    assert p.value & 0xFF == 0b1111_1101


def test_align_shift_past_width_clamps_to_sticky_zero():
    _, c = align_terms(Term(0, 1), Term(1, 0b111), ExpCompareResult(40, 0, 40), 13)
    assert c == AlignedTerm(0, True)


@given(st.integers(0, 1), st.integers(0, 1 << 12), st.integers(0, 20))
def test_align_truncates_before_negating(sign, mag, shift):
    p, _ = align_terms(Term(sign, mag), Term(0, 0), ExpCompareResult(shift, shift, 0), 16)
    kept = mag >> shift if shift < 16 else 0
    assert p.value == (-kept if sign else kept)
    assert p.sticky == (kept << shift != mag)


def test_csa_examples():
    assert csa_3to2(0, 0, 0, 8) == (0, 0)
    assert csa_3to2(1, 1, 1, 8) == (1, 2)


@settings(max_examples=500)
@given(st.integers(-(1 << 20), 1 << 20), st.integers(-(1 << 20), 1 << 20), st.integers(-(1 << 20), 1 << 20))
def test_csa_property(x, y, z):
    s, k = csa_3to2(x, y, z, 24)
    assert (s + k) % (1 << 24) == (x + y + z) % (1 << 24)


def test_csla_examples():
    for x in (0, 1, 0xABC, 0xFFF):
        assert carry_select_add(x, 0, 12) == x
    trace = []
    assert carry_select_add(0x0F, 0x01, 8, block=4, trace=trace) == 0x10
    assert trace == [(0, 0), (1, 1)]


@settings(max_examples=500)
@given(st.integers(0, (1 << 30) - 1), st.integers(0, (1 << 30) - 1), st.sampled_from([1, 3, 4, 8]))
def test_csla_property(s, k, block):
    assert carry_select_add(s, k, 30, block=block) == (s + k) % (1 << 30)


@given(st.integers(-(1 << 14), 1 << 14), st.integers(-(1 << 14), 1 << 14))
def test_csa_then_csla_is_integer_add(x, y):
    w = 17
    s, k = csa_3to2(x, y, 0, w)
    assert carry_select_add(s, k, w) == (x + y) % (1 << w)


def test_leading_zeros():
    assert leading_zeros(0, 8) == 8
    assert leading_zeros(1, 8) == 7
    assert leading_zeros(0x80, 8) == 0


def test_normalize_examples():
    c = MacConfig()
    assert normalize(0, 5, c).cls is FloatClass.ZERO
    one = normalize(1 << c.frac_bits, 0, c)
    assert (one.exp, one.significand) == (0, 0b1000)
    seven = normalize(7 << c.frac_bits, 0, c)
    assert (seven.exp, seven.significand) == (2, 0b1110)
    neg = normalize((-(7 << c.frac_bits)) & ((1 << c.width) - 1), 0, c)
    assert neg.sign == 1 and (neg.exp, neg.significand) == (2, 0b1110)


def test_relu_examples():
    assert relu(decode(0xD6, E4M3)).cls is FloatClass.ZERO  # -7.0
    assert relu(decode(0xD6, E4M3)).sign == 0
    v = decode(0x46, E4M3)
    assert relu(v) == v
    nan = decode(0x7F, E4M3)
    assert relu(nan) == nan


@given(st.integers(0, 255))
def test_relu_idempotent(p):
    v = decode(p, E4M3)
    assert relu(relu(v)) == relu(v)


# ── specials and flags ──


def test_special_values():
    c = MacConfig(mode=MacMode.E5M2, relu=False)
    inf, ninf, nan, one, zero = 0x7C, 0xFC, 0x7E, 0x3C, 0x00
    r = mac(inf, zero, one, c)
    assert r.bits == 0x7E and r.flags[0].invalid
    r = mac(inf, one, ninf, c)
    assert r.bits == 0x7E and r.flags[0].invalid
    r = mac(nan, one, one, c)
    assert r.flags[0].invalid
    assert mac(inf, one, one, c).bits == inf
    assert mac(one, one, ninf, c).bits == ninf
    assert mac(0x00, 0x7E, 0x00).bits == 0x00  # E4M3 x*0


def test_flags():
    c = MacConfig(relu=False)
    assert mac(0x38, 0x38, 0x00, c).flags == (LaneFlags(),)
    big = mac(0x7E, 0x7E, 0x00, c)  # 448 * 448 saturates
    assert big.bits == 0x7E and big.flags[0].overflow and big.flags[0].inexact
    tiny = mac(0x01, 0x01, 0x00, c)  # 2**-18 flushes
    assert tiny.bits == 0x00 and tiny.flags[0].underflow and tiny.flags[0].inexact
    e5 = mac(0x7B, 0x7B, 0x00, MacConfig(mode=MacMode.E5M2, relu=False))
    assert e5.bits == 0x7C and e5.flags[0].overflow


def test_signed_zero_rules():
    c = MacConfig(relu=False)
    assert mac(0x80, 0x38, 0x80, c).bits == 0x80  # -0 + -0
    assert mac(0x80, 0x38, 0x00, c).bits == 0x00
    assert mac(0x38, 0x38, 0xB8, c).bits == 0x00  # 1 - 1 cancels to +0


def test_trace_exposes_stage_records():
    res, records = mac_trace(0x77, 0x11, 0x00, cfg(MacMode.DUAL_E2M1))
    assert len(records) == 6 and records[-1] == res
    s1 = records[1]
    # one split-mode block: 6.0 = 0b11, subnormal 0.5 = 0b01, both lanes
    assert s1.mult_outputs == (unit_multiply(0b1111, 0b0101, MulMode.SPLIT),) == (0x33,)


def test_e1m2_uses_two_full_blocks():
    _, records = mac_trace(0x77, 0x77, 0x00, cfg(MacMode.DUAL_E1M2))
    assert records[1].mult_outputs == (49, 49)


# ── oracle agreement ──


@pytest.mark.parametrize("mode", FP4_MODES, ids=lambda m: m.value)
def test_fp4_lane_independence(mode):
    rng = random.Random(3)
    c = cfg(mode, guard_bits=8, relu=False)
    for a in range(16):
        for b in range(16):
            for z in range(16):
                hi = [rng.randrange(16) for _ in range(3)]
                r = mac((hi[0] << 4) | a, (hi[1] << 4) | b, (hi[2] << 4) | z, c)
                assert r.lanes[0] == mac(a, b, z, c).lanes[0]


@pytest.mark.parametrize("mode", FP4_MODES, ids=lambda m: m.value)
def test_fp4_sign_before_relu(mode):
    c = cfg(mode, guard_bits=8, relu=False)
    spec = c.spec
    for a in range(16):
        for b in range(16):
            for z in range(16):
                want = scalar_reference(a, b, z, spec)
                assert mac(a, b, z, c).lanes[0] == want


@pytest.mark.parametrize("mode", [MacMode.E4M3, MacMode.E5M2], ids=lambda m: m.value)
def test_fp8_sampled_bound(mode):
    from fpmac.oracle import ulp_distance

    rng = random.Random(11)
    c = cfg(mode, relu=False)
    for _ in range(3000):
        a, b, z = (rng.randrange(256) for _ in range(3))
        r = mac(a, b, z, c)
        want = scalar_reference(a, b, z, c.spec)
        if r.flags[0].invalid:
            assert bits_value(want, c.spec) != bits_value(want, c.spec)
            continue
        assert ulp_distance(r.bits, want, c.spec) <= 1


@pytest.mark.parametrize("guard", [0, 3, 9])
def test_pure_product_exact_for_any_guard(guard):
    c = MacConfig(guard_bits=guard, relu=False)
    rng = random.Random(guard)
    for _ in range(2000):
        a, b = rng.randrange(256), rng.randrange(256)
        if mac(a, b, 0, c).flags[0].invalid:
            continue
        assert mac(a, b, 0, c).bits == scalar_reference(a, b, 0, E4M3)


def test_never_raises_on_any_word():
    for mode in MacMode:
        c = cfg(mode)
        rng = random.Random(mode.value)
        for _ in range(300):
            mac(rng.randrange(256), rng.randrange(256), rng.randrange(256), c)
