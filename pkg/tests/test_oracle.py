from __future__ import annotations

import json
import random
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fpmac.datapath import MacConfig, MacMode
from fpmac.formats import E1M2, E2M1, E4M3, E5M2, FloatClass, bits_value, decode, to_fraction
from fpmac.oracle import (
    ErrorStats,
    ExactValue,
    apply_relu_bits,
    compare_sweep,
    domain_size,
    exact_dot,
    exact_mac,
    exhaustive_domain,
    quantize_truncate,
    random_domain,
    scalar_reference,
    truncated_exact_batch,
    ulp_distance,
)

ALL = [E4M3, E5M2, E2M1, E1M2]


def d(p, spec):
    return decode(p, spec)


def largest_below(v: Fraction, spec):
    """Brute-force truncation oracle: scan all finite patterns."""
    best = None
    for p in range(1 << spec.total_bits):
        x = d(p, spec)
        if not x.is_finite:
            continue
        f = to_fraction(x, spec)
        if f < 0 or f > abs(v):
            continue
        if best is None or f > best[0]:
            best = (f, p)
    bits = best[1]
    return bits | spec.sign_mask if v < 0 else bits


def test_exact_mac_examples():
    assert exact_mac(d(0x38, E4M3), d(0x38, E4M3), d(0, E4M3), E4M3).to_fraction() == 1
    v = exact_mac(d(0x40, E4M3), d(0x44, E4M3), d(0x38, E4M3), E4M3)
    assert (v.sign, v.numerator, v.exp2) == (0, 7, 0)
    v = exact_mac(d(0x7, E2M1), d(0x7, E2M1), d(0x7, E2M1), E2M1)
    assert (v.numerator, v.exp2) == (21, 1)


def test_quantize_examples():
    assert quantize_truncate(ExactValue.from_scaled(1, 0), E4M3) == 0x38
    assert quantize_truncate(ExactValue.from_scaled(3, -3), E2M1) == 0x0  # 0.375 < 0.5
    assert quantize_truncate(ExactValue.from_scaled(-5, -3), E2M1) == 0b1001  # -0.625 -> -0.5
    assert quantize_truncate(ExactValue.from_scaled(1, 9), E4M3) == 0x7E
    assert quantize_truncate(ExactValue.from_scaled(1, 16), E5M2) == 0x7C
    assert quantize_truncate(ExactValue.nan(), E5M2) == 0x7E


@pytest.mark.parametrize("spec", ALL, ids=lambda s: s.name)
def test_quantize_identity_on_representables(spec):
    for p in range(1 << spec.total_bits):
        x = d(p, spec)
        if x.cls is FloatClass.NAN:
            continue
        if x.cls is FloatClass.INF:
            v = ExactValue.inf(x.sign)
        else:
            f = to_fraction(x, spec)
            v = ExactValue.from_scaled(f.numerator * (-1 if x.sign and f == 0 else 1), 0, x.sign) if f == 0 else None
            if v is None:
                num, den = f.numerator, f.denominator
                v = ExactValue.from_scaled(num, -(den.bit_length() - 1))
        assert quantize_truncate(v, spec) == p, hex(p)


@given(st.integers(-(1 << 20), 1 << 20), st.integers(-30, 10))
def test_quantize_matches_brute_force(n, e):
    for spec in (E2M1, E1M2, E4M3):
        v = ExactValue.from_scaled(n, e)
        f = v.to_fraction()
        if abs(f) > spec.max_finite:
            continue
        got = quantize_truncate(v, spec)
        if f == 0:
            assert got == 0
            continue
        assert bits_value(got, spec) == bits_value(largest_below(f, spec), spec)


@given(st.integers(1, 1 << 16), st.integers(1, 1 << 16), st.integers(-20, 5))
def test_quantize_monotone(x, y, e):
    lo, hi = sorted((x, y))
    for spec in (E4M3, E5M2):
        q_lo = quantize_truncate(ExactValue.from_scaled(lo, e), spec)
        q_hi = quantize_truncate(ExactValue.from_scaled(hi, e), spec)
        assert bits_value(q_lo, spec) <= bits_value(q_hi, spec)


@given(st.integers(0, 255), st.integers(0, 255), st.integers(0, 255))
def test_exact_mac_commutative_and_rational(a, b, c):
    spec = E4M3
    x, y, z = d(a, spec), d(b, spec), d(c, spec)
    v1 = exact_mac(x, y, z, spec)
    assert v1 == exact_mac(y, x, z, spec)
    if all(t.is_finite for t in (x, y, z)):
        want = to_fraction(x, spec) * to_fraction(y, spec) + to_fraction(z, spec)
        assert v1.to_fraction() == want


def test_exact_dot():
    pairs = [(d(0x38, E4M3), d(0x40, E4M3)), (d(0xB8, E4M3), d(0x38, E4M3))]
    assert exact_dot(pairs, E4M3).to_fraction() == 1
    assert exact_dot([], E4M3).to_fraction() == 0
    with pytest.raises(ValueError):
        exact_dot([(d(0x7F, E4M3), d(0x38, E4M3))], E4M3)


def test_ulp_and_relu_bits():
    assert ulp_distance(0x38, 0x39, E4M3) == 1
    assert ulp_distance(0x01, 0x81, E4M3) == 2
    assert ulp_distance(0x7B, 0x7C, E5M2) == 1
    assert apply_relu_bits(0xB8, E4M3) == 0
    assert apply_relu_bits(0x38, E4M3) == 0x38
    assert apply_relu_bits(0xFF, E4M3) == 0xFF


@pytest.mark.parametrize("spec", ALL, ids=lambda s: s.name)
def test_batch_oracle_matches_scalar(spec):
    n = 1 << spec.total_bits
    rng = random.Random(spec.name)
    if n == 16:
        triples = [(a, b, c) for a in range(n) for b in range(n) for c in range(n)]
    else:
        triples = [tuple(rng.randrange(n) for _ in range(3)) for _ in range(20000)]
        triples += [(a, b, 0) for a in range(0, n, 3) for b in range(n)]
    a, b, c = (np.array(x) for x in zip(*triples))
    for relu in (False, True):
        bits, nan = truncated_exact_batch(a, b, c, spec, relu=relu)
        for i, (x, y, z) in enumerate(triples):
            want = scalar_reference(x, y, z, spec, relu=relu)
            if nan[i]:
                assert bits_value(want, spec) != bits_value(want, spec) or not spec.has_nan
                continue
            assert bits[i] == want, (hex(x), hex(y), hex(z))


# ── sweeps ──


def test_error_stats_roundtrip():
    s = compare_sweep(MacConfig(mode=MacMode.E4M3, relu=False), random_domain(None, 5000, seed=1))
    assert s.compared == 5000
    back = ErrorStats.from_dict(json.loads(s.to_json()))
    assert back == s
    assert back.to_json() == s.to_json()
    assert s.histogram_csv().splitlines()[0] == "version,ulp_distance,count"
    with pytest.raises(ValueError):
        ErrorStats.from_dict({"version": 99})


def test_empty_domain_gives_zero_stats():
    s = compare_sweep(MacConfig(), [])
    assert s == ErrorStats()
    assert s.mean_abs == 0 and s.mismatch_count == 0


def test_sweep_fp4_exhaustive_exact():
    cfg = MacConfig(mode=MacMode.DUAL_E2M1, guard_bits=8)
    s = compare_sweep(cfg, exhaustive_domain(cfg))
    assert s.compared == 2 * domain_size(cfg)
    assert s.max_ulp == 0 and s.bit_mismatch == 0


def test_sweep_fp8_pairs_c_zero_exact():
    cfg = MacConfig(mode=MacMode.E4M3, guard_bits=3, relu=False)
    g = np.arange(256)
    a, b = (x.ravel() for x in np.meshgrid(g, g, indexing="ij"))
    s = compare_sweep(cfg, [(a, b, np.zeros_like(a))])
    assert s.max_ulp == 0 and s.nan_mismatch == 0


def test_scalar_and_batch_engines_agree():
    cfg = MacConfig(mode=MacMode.E5M2, relu=False)
    dom = list(random_domain(cfg, 2000, seed=5))
    assert compare_sweep(cfg, dom, engine="scalar") == compare_sweep(cfg, dom, engine="batch")
    with pytest.raises(ValueError):
        compare_sweep(cfg, dom, engine="verilog")


def test_sweep_workers_match_serial():
    cfg = MacConfig(mode=MacMode.E4M3, relu=False)
    dom = list(random_domain(cfg, 6000, seed=2, chunk=2000))
    assert compare_sweep(cfg, dom, workers=2) == compare_sweep(cfg, dom)
