"""Reconfigurable 4-bit unit multiplier.

Mode FULL is an unsigned 4x4 multiply.  Mode SPLIT masks every partial
product that crosses the 2-bit partition boundary, so the same 16-term array
yields two independent 2x2 products: a[3:2]*b[3:2] lands at bits[7:4] and
a[1:0]*b[1:0] at bits[3:0].
"""

from __future__ import annotations

import enum

__all__ = ["MulMode", "partial_product_mask", "masked_ppsum", "unit_multiply", "OPERAND_BITS"]

OPERAND_BITS = 4
_HALF = OPERAND_BITS // 2


class MulMode(enum.IntEnum):
    FULL = 0
    SPLIT = 1


def _delta(mode: MulMode, i: int, j: int) -> int:
    if mode is MulMode.FULL:
        return 1
    return int((i < _HALF) == (j < _HALF))


def partial_product_mask(mode: MulMode) -> tuple[tuple[int, ...], ...]:
    """4x4 enable matrix indexed ``[i][j]`` (a-bit i, b-bit j)."""
    mode = MulMode(mode)
    return tuple(
        tuple(_delta(mode, i, j) for j in range(OPERAND_BITS)) for i in range(OPERAND_BITS)
    )


_TERMS = {
    mode: tuple(
        (i, j) for i in range(OPERAND_BITS) for j in range(OPERAND_BITS) if _delta(mode, i, j)
    )
    for mode in MulMode
}


def masked_ppsum(a: int, b: int, mode: MulMode) -> int:
    """Reference double sum: sum over i, j of delta(i, j) * a_i * b_j * 2**(i+j)."""
    terms = _TERMS.get(mode)
    if terms is None:
        raise ValueError(f"unknown multiplier mode {mode!r}")
    total = 0
    for i, j in terms:
        total += (((a >> i) & (b >> j)) & 1) << (i + j)
    return total


# Per b-bit row: which a-bits may feed that row.
_ROW_ENABLE = {
    MulMode.FULL: (0b1111,) * OPERAND_BITS,
    MulMode.SPLIT: (0b0011, 0b0011, 0b1100, 0b1100),
}


def unit_multiply(a: int, b: int, mode: MulMode) -> int:
    """One pass through the partial-product array, returning the 8-bit output."""
    if not (0 <= a < 16 and 0 <= b < 16):
        raise ValueError("unit multiplier operands are 4-bit")
    enable = _ROW_ENABLE.get(mode)
    if enable is None:
        raise ValueError(f"unknown multiplier mode {mode!r}")
    acc = 0
    for j in range(OPERAND_BITS):
        if (b >> j) & 1:
            acc += (a & enable[j]) << j
    return acc & 0xFF
