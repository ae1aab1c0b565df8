"""Software IEEE 754 binary16 arithmetic with packed two-lane operations.

Values are plain 16-bit integer patterns (1 sign bit, 5 exponent bits,
10 stored significand bits).  Arithmetic widens both operands to float64,
computes there, and rounds once back to binary16 with round-to-nearest,
ties-to-even.  For a single add/sub/mul/div/sqrt this is provably
equivalent to a bit-level soft float because float64 carries more than
twice the binary16 significand width, so no double-rounding anomaly can
occur.  fma is done in exact rational arithmetic instead, since the exact
product-plus-addend can exceed 53 bits.

Operation counting is opt-in: every public function takes an optional
OpCounters and only touches it when one is passed, so value computation
and instrumentation stay separable.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from fractions import Fraction
from typing import NamedTuple, Optional

# Well-known bit patterns.
POS_ZERO = 0x0000
NEG_ZERO = 0x8000
ONE = 0x3C00
POS_INF = 0x7C00
NEG_INF = 0xFC00
NAN = 0x7E00  # canonical quiet NaN; payloads are not preserved
MAX_FINITE = 0x7BFF  # 65504.0
MIN_SUBNORMAL = 0x0001  # 2**-24

MAX_FINITE_VALUE = 65504.0

Binary16 = int  # 16-bit pattern; the module-wide representation


@dataclass
class OpCounters:
    """Per-run operation counters (single writer at a time)."""

    widen_count: int = 0  # binary16 -> wider conversions
    narrow_count: int = 0  # wider -> binary16 conversions
    half_arith_count: int = 0  # binary16 add/sub/mul/div/fma (packed = 1)
    wide_arith_count: int = 0  # float32/float64 arithmetic
    special_fn_count: int = 0  # exp, sqrt, reciprocal

    def reset(self) -> None:
        self.widen_count = 0
        self.narrow_count = 0
        self.half_arith_count = 0
        self.wide_arith_count = 0
        self.special_fn_count = 0

    def merge(self, other: "OpCounters") -> None:
        """Field-wise accumulate, for joining parallel workers."""
        self.widen_count += other.widen_count
        self.narrow_count += other.narrow_count
        self.half_arith_count += other.half_arith_count
        self.wide_arith_count += other.wide_arith_count
        self.special_fn_count += other.special_fn_count

    @property
    def conversion_count(self) -> int:
        return self.widen_count + self.narrow_count


class PackedPair(NamedTuple):
    """Two binary16 lanes operated on together (half2 analog)."""

    lo: Binary16
    hi: Binary16


def _rne_shift(sig: int, shift: int) -> int:
    """Shift right with round-to-nearest, ties-to-even."""
    rem = sig & ((1 << shift) - 1)
    out = sig >> shift
    half = 1 << (shift - 1)
    if rem > half or (rem == half and out & 1):
        out += 1
    return out


def _bits_from_f64(x: float) -> Binary16:
    bits = struct.unpack("<Q", struct.pack("<d", x))[0]
    sign = (bits >> 48) & 0x8000
    exp = (bits >> 52) & 0x7FF
    frac = bits & 0xFFFFFFFFFFFFF
    if exp == 0x7FF:
        return NAN if frac else sign | POS_INF
    e = exp - 1023
    # float64 subnormals (< 2**-1022) are far below half of the smallest
    # binary16 subnormal and flush to signed zero, as does anything below
    # the 2**-25 rounding boundary.
    if exp == 0 or e < -25:
        return sign
    if e >= 16:
        return sign | POS_INF
    sig = (1 << 52) | frac
    if e >= -14:
        # Normal range.  Assemble so a significand carry propagates into
        # the exponent field (and on to infinity) on its own.
        rounded = _rne_shift(sig, 42)
        half = ((e + 15) << 10) + rounded - (1 << 10)
    else:
        # Subnormal range, including the 2**-25 tie against zero.
        rounded = _rne_shift(sig, 42 + (-14 - e))
        half = rounded
    if (half & 0x7FFF) >= POS_INF:
        return sign | POS_INF
    return sign | half


def _value_of(h: Binary16) -> float:
    sign = -1.0 if h & 0x8000 else 1.0
    e = (h >> 10) & 0x1F
    frac = h & 0x3FF
    if e == 0x1F:
        return math.nan if frac else sign * math.inf
    if e == 0:
        return sign * math.ldexp(frac, -24)
    return sign * math.ldexp(frac | 0x400, e - 25)


# Widening is exact and hot, so precompute all 2**16 of them.
_TO_F64 = tuple(_value_of(h) for h in range(1 << 16))


def from_f64(x: float, counters: Optional[OpCounters] = None) -> Binary16:
    """Round a float64 to the nearest binary16 (ties to even)."""
    if counters is not None:
        counters.narrow_count += 1
    return _bits_from_f64(x)


def to_f64(h: Binary16, counters: Optional[OpCounters] = None) -> float:
    """Widen a binary16 to float64; exact for every pattern."""
    if counters is not None:
        counters.widen_count += 1
    return _TO_F64[h]


def is_nan(h: Binary16) -> bool:
    return (h & 0x7FFF) > POS_INF


def is_inf(h: Binary16) -> bool:
    return (h & 0x7FFF) == POS_INF


def is_finite(h: Binary16) -> bool:
    return (h & 0x7C00) != 0x7C00


def _add(a: Binary16, b: Binary16) -> Binary16:
    return _bits_from_f64(_TO_F64[a] + _TO_F64[b])


def _sub(a: Binary16, b: Binary16) -> Binary16:
    return _bits_from_f64(_TO_F64[a] - _TO_F64[b])


def _mul(a: Binary16, b: Binary16) -> Binary16:
    return _bits_from_f64(_TO_F64[a] * _TO_F64[b])


def _div(a: Binary16, b: Binary16) -> Binary16:
    x, y = _TO_F64[a], _TO_F64[b]
    if y == 0.0:
        if x == 0.0 or math.isnan(x):
            return NAN
        sign = (a ^ b) & 0x8000
        return sign | POS_INF
    return _bits_from_f64(x / y)


def _fraction_round(val: Fraction, negative: bool) -> Binary16:
    """Round a nonzero exact rational to binary16 (round-nearest-even)."""
    m = -val if negative else val
    # floor(log2(m)) via bit lengths, then correct the off-by-one.
    e = m.numerator.bit_length() - m.denominator.bit_length()
    if Fraction(2) ** e > m:
        e -= 1
    elif Fraction(2) ** (e + 1) <= m:
        e += 1
    ulp_exp = max(e - 10, -24)
    q = round(m * Fraction(2) ** (-ulp_exp))  # exact ties-to-even
    if q == 0:
        return NEG_ZERO if negative else POS_ZERO
    value = math.ldexp(float(q), ulp_exp)  # exact: q <= 2**11
    bits = _bits_from_f64(value)
    return bits | 0x8000 if negative else bits


def _fma(a: Binary16, b: Binary16, c: Binary16) -> Binary16:
    fa, fb, fc = _TO_F64[a], _TO_F64[b], _TO_F64[c]
    if math.isnan(fa) or math.isnan(fb) or math.isnan(fc):
        return NAN
    if math.isinf(fa) or math.isinf(fb):
        if fa == 0.0 or fb == 0.0:
            return NAN
        psign = (a ^ b) & 0x8000
        if math.isinf(fc) and (c & 0x8000) != psign:
            return NAN
        return psign | POS_INF
    if math.isinf(fc):
        return c
    val = Fraction(fa) * Fraction(fb) + Fraction(fc)
    if val == 0:
        if fa * fb == 0.0 and fc == 0.0:
            # Both addends are zeros: negative only when both are negative.
            psign = (a ^ b) & 0x8000
            return NEG_ZERO if (psign and c & 0x8000) else POS_ZERO
        return POS_ZERO  # exact cancellation rounds to +0
    return _fraction_round(val, val < 0)


def add16(a: Binary16, b: Binary16, counters: Optional[OpCounters] = None) -> Binary16:
    if counters is not None:
        counters.half_arith_count += 1
    return _add(a, b)


def sub16(a: Binary16, b: Binary16, counters: Optional[OpCounters] = None) -> Binary16:
    if counters is not None:
        counters.half_arith_count += 1
    return _sub(a, b)


def mul16(a: Binary16, b: Binary16, counters: Optional[OpCounters] = None) -> Binary16:
    if counters is not None:
        counters.half_arith_count += 1
    return _mul(a, b)


def div16(a: Binary16, b: Binary16, counters: Optional[OpCounters] = None) -> Binary16:
    if counters is not None:
        counters.half_arith_count += 1
    return _div(a, b)


def fma16(
    a: Binary16, b: Binary16, c: Binary16, counters: Optional[OpCounters] = None
) -> Binary16:
    """a*b + c with a single rounding, computed exactly."""
    if counters is not None:
        counters.half_arith_count += 1
    return _fma(a, b, c)


def exp16(x: Binary16, counters: Optional[OpCounters] = None) -> Binary16:
    if counters is not None:
        counters.special_fn_count += 1
    v = _TO_F64[x]
    if math.isnan(v):
        return NAN
    try:
        return _bits_from_f64(math.exp(v))
    except OverflowError:
        return POS_INF


def sqrt16(x: Binary16, counters: Optional[OpCounters] = None) -> Binary16:
    if counters is not None:
        counters.special_fn_count += 1
    v = _TO_F64[x]
    if math.isnan(v) or v < 0.0:
        return NAN
    return _bits_from_f64(math.sqrt(v))


def recip16(x: Binary16, counters: Optional[OpCounters] = None) -> Binary16:
    if counters is not None:
        counters.special_fn_count += 1
    v = _TO_F64[x]
    if math.isnan(v):
        return NAN
    if v == 0.0:
        return (x & 0x8000) | POS_INF
    return _bits_from_f64(1.0 / v)


_PACKED_OPS = {
    "add": _add,
    "sub": _sub,
    "mul": _mul,
    "div": _div,
}


def packed_op(
    op: str,
    a: PackedPair,
    b: PackedPair,
    c: Optional[PackedPair] = None,
    counters: Optional[OpCounters] = None,
) -> PackedPair:
    """Elementwise binary16 operation on two lanes, counted as one op.

    `op` is one of add/sub/mul/div/fma; fma takes the third pair `c`.
    Each lane result is bit-identical to the corresponding scalar op.
    """
    if counters is not None:
        counters.half_arith_count += 1
    if op == "fma":
        if c is None:
            raise ValueError("packed fma requires a third operand")
        return PackedPair(_fma(a.lo, b.lo, c.lo), _fma(a.hi, b.hi, c.hi))
    try:
        fn = _PACKED_OPS[op]
    except KeyError:
        raise ValueError(f"unknown packed op {op!r}") from None
    return PackedPair(fn(a.lo, b.lo), fn(a.hi, b.hi))
