"""Array version of the datapath for exhaustive sweeps.

Same stages, same widths and the same truncation points as
:mod:`fpmac.datapath`, applied to numpy arrays of words.  Accumulators up to 62
bits run in int64; wider ones (E5M2 with large guard widths) fall back to
object arrays of Python ints.  Agreement with the scalar model is covered by
tests.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .datapath import MacConfig, MacMode
from .exponent_cmp import ExponentComparator
from .formats import FloatClass, FormatSpec, decode_table
from .unit_mult import _ROW_ENABLE, MulMode

__all__ = ["BatchResult", "mac_batch", "unit_multiply_batch"]


@dataclass
class BatchResult:
    bits: np.ndarray
    lane_bits: list  # lane 0 first
    overflow: list
    underflow: list
    invalid: list
    inexact: list


@lru_cache(maxsize=None)
def _decode_arrays(spec: FormatSpec):
    table = decode_table(spec)
    return (
        np.array([d.sign for d in table], dtype=np.int64),
        np.array([d.exp for d in table], dtype=np.int64),
        np.array([d.significand for d in table], dtype=np.int64),
        np.array([d.cls is FloatClass.NAN for d in table]),
        np.array([d.cls is FloatClass.INF for d in table]),
        np.array([d.cls is FloatClass.ZERO for d in table]),
    )


@lru_cache(maxsize=None)
def _lut_arrays(spec: FormatSpec):
    comp = ExponentComparator.for_format(spec)
    sel = np.array([[s for s, _ in half] for half in comp.lut], dtype=bool)
    shift = np.array([[k for _, k in half] for half in comp.lut], dtype=np.int64)
    return comp.max_diff, sel, shift


def unit_multiply_batch(a, b, mode: MulMode):
    enable = _ROW_ENABLE[MulMode(mode)]
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    acc = np.zeros(np.broadcast(a, b).shape, dtype=np.int64)
    for j in range(4):
        acc += ((a & enable[j]) << j) * ((b >> j) & 1)
    return acc & 0xFF


def _bit_length(x, width: int, dtype):
    bl = np.zeros(x.shape, dtype=np.int64)
    step = 1
    while step * 2 < width:
        step *= 2
    while step:
        t = x >> step
        nz = (t > 0).astype(bool)
        bl += np.where(nz, step, 0)
        x = np.where(nz, t, x).astype(dtype)
        step //= 2
    return bl + (x > 0).astype(np.int64)


def _as(x, dtype):
    if dtype is object:
        return np.array([int(v) for v in np.ravel(x)], dtype=object).reshape(np.shape(x))
    return np.asarray(x, dtype=np.int64)


def _pow2(s, dtype):
    return np.left_shift(_as(np.ones(np.shape(s)), dtype), _as(s, dtype))


def _shr(x, s, dtype):
    return np.right_shift(x, _as(s, dtype))


def _shl(x, s, dtype):
    return np.left_shift(x, _as(s, dtype))


def _shift_truncate(mag, shift, width, dtype):
    s = np.minimum(shift, width)
    out = _shr(mag, s, dtype)
    lost = (mag & (_pow2(s, dtype) - 1)) != 0
    return out, lost.astype(bool)


def mac_batch(a, b, c, cfg: MacConfig) -> BatchResult:
    spec = cfg.spec
    m, g, width, frac = spec.man_bits, cfg.guard_bits, cfg.width, cfg.frac_bits
    dtype = np.int64 if width <= 62 else object
    mask = (1 << width) - 1
    sgn_t, exp_t, sig_t, nan_t, inf_t, zero_t = _decode_arrays(spec)
    max_diff, lut_sel, lut_shift = _lut_arrays(spec)

    words = [np.asarray(x, dtype=np.int64) for x in (a, b, c)]
    if cfg.mode.lanes == 2:
        lane_words = [[w & 0xF for w in words], [w >> 4 for w in words]]
    else:
        lane_words = [words]

    # S1 multiplier array
    if cfg.mode is MacMode.DUAL_E2M1:
        (a0, b0, _), (a1, b1, _) = lane_words
        out = unit_multiply_batch((sig_t[a1] << 2) | sig_t[a0], (sig_t[b1] << 2) | sig_t[b0], MulMode.SPLIT)
        products = [out & 0xF, out >> 4]
    else:
        products = [unit_multiply_batch(sig_t[la] & 0xF, sig_t[lb] & 0xF, MulMode.FULL) for la, lb, _ in lane_words]

    lane_bits, f_over, f_under, f_inv, f_inex = [], [], [], [], []
    for (la, lb, lc), prod in zip(lane_words, products):
        sa, sb, sc = sgn_t[la], sgn_t[lb], sgn_t[lc]
        sp = sa ^ sb
        any_nan = nan_t[la] | nan_t[lb] | nan_t[lc]
        p_inf = inf_t[la] | inf_t[lb]
        p_zero = zero_t[la] | zero_t[lb]
        c_inf = inf_t[lc]
        c_zero = zero_t[lc]
        nan = any_nan | (p_inf & p_zero) | (p_inf & c_inf & (sc != sp))
        inf = ~nan & (p_inf | c_inf)
        inf_sign = np.where(p_inf, sp, sc)
        zz = ~nan & ~inf & p_zero & c_zero
        special = nan | inf | zz
        prod = np.where(special, 0, prod)

        e_p = exp_t[la] + exp_t[lb]
        e_c = exp_t[lc]
        e_c, e_p = np.where(c_zero, e_p, e_c), np.where(~c_zero & (prod == 0), e_c, e_p)
        d = e_p - e_c
        neg = (d < 0).astype(np.int64)
        key = np.minimum(np.abs(d), max_diff)
        sel = lut_sel[neg, key]
        shift = lut_shift[neg, key]
        e_ref = np.where(sel, e_p, e_c)
        shift_p = np.where(sel, 0, shift)
        shift_c = np.where(sel, shift, 0)

        # S2 truncate, then complement
        pmag = _as(prod, dtype) << g
        cmag = _as(np.where(special, 0, sig_t[lc]), dtype) << (m + g)
        pmag, p_lost = _shift_truncate(pmag, shift_p, width, dtype)
        cmag, c_lost = _shift_truncate(cmag, shift_c, width, dtype)
        sticky = p_lost | c_lost
        x = np.where(sp == 1, -pmag, pmag) & mask
        y = np.where(sc == 1, -cmag, cmag) & mask

        # S3 3:2 CSA (third port idle) + carry-select
        s = x ^ y
        k = ((x & y) << 1) & mask
        acc = np.zeros_like(s)
        carry = np.zeros(s.shape, dtype=bool)
        for lo in range(0, width, 4):
            bits = min(4, width - lo)
            bm = (1 << bits) - 1
            blk = ((s >> lo) & bm) + ((k >> lo) & bm)
            blk = np.where(carry, blk + 1, blk)
            acc = acc | ((blk & bm) << lo)
            carry = ((blk >> bits) & 1).astype(bool)

        # S4 leading-zero count and truncating normalize
        negative = ((acc >> (width - 1)) & 1).astype(np.int64)
        mag = np.where(negative == 1, (1 << width) - acc, acc)
        msb = _bit_length(mag, width, dtype) - 1
        exp = e_ref + msb - frac
        normal = exp >= spec.emin
        nshift = np.where(normal, msb - m, frac + spec.emin - m - e_ref)
        exp = np.where(normal, exp, spec.emin)
        right = np.maximum(nshift, 0)
        sig_r, lost = _shift_truncate(mag, right, width, dtype)
        sig = np.where(nshift >= 0, sig_r, _shl(mag, np.maximum(-nshift, 0), dtype))
        sig = sig.astype(np.int64)
        nonzero_acc = mag != 0
        tiny = nonzero_acc & ~normal
        inexact = (sticky | (lost & nonzero_acc)) & ~special
        res_sign = np.where(sig == 0, np.where(nonzero_acc, negative, 0), negative)

        # S5 ReLU, encode
        zeroed = cfg.relu & (res_sign == 1)
        over = ~zeroed & (sig != 0) & ((exp > spec.emax) | ((exp == spec.emax) & (sig > spec.max_finite_significand)))
        enc = np.where(sig < (1 << m), sig, ((exp + spec.bias) << m) | (sig - (1 << m)))
        if spec.has_infinity:
            enc = np.where(over, spec.inf_bits, enc)
        else:
            enc = np.where(over, spec.max_finite_bits, enc)
        enc = np.where(res_sign == 1, enc | spec.sign_mask, enc)
        enc = np.where(zeroed, 0, enc)

        # Special-value overrides.
        if spec.has_infinity:
            inf_bits = spec.inf_bits | (inf_sign * spec.sign_mask)
            inf_bits = np.where(cfg.relu & (inf_sign == 1), 0, inf_bits)
            enc = np.where(inf, inf_bits, enc)
        if spec.has_nan:
            enc = np.where(nan, spec.nan_bits, enc)
        zz_sign = sp & sc
        enc = np.where(zz, np.where((zz_sign == 1) & ~cfg.relu, spec.sign_mask, 0), enc)

        lane_bits.append(enc.astype(np.int64))
        f_over.append(over & ~special)
        f_under.append(tiny & inexact)
        f_inv.append(nan)
        f_inex.append(inexact | (over & ~special))

    if cfg.mode.lanes == 2:
        word = (lane_bits[1] << 4) | lane_bits[0]
    else:
        word = lane_bits[0]
    return BatchResult(word, lane_bits, f_over, f_under, f_inv, f_inex)
