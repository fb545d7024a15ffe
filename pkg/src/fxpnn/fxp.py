"""Bit-accurate signed fixed-point arithmetic.

A format with ``int_bits`` integer bits and ``frac_bits`` fractional bits
stores a value as an integer ``raw`` with an implicit scale of
``2**-frac_bits``. One extra bit carries the sign, so the total width is
``int_bits + frac_bits + 1``. The raw range is symmetric,
``[-(2**(int_bits+frac_bits) - 1), 2**(int_bits+frac_bits) - 1]``.

Rounding is half away from zero everywhere (encoding and right shifts) and
overflow saturates. Scalar operations work on :class:`FxpValue`; the
``*_array`` helpers apply identical rules to integer numpy arrays and are
what the batched inference path uses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "FixedPointFormat",
    "FxpValue",
    "ArithmeticContext",
    "FormatMismatchError",
    "encode",
    "decode",
    "add_sat",
    "mul_pow2",
    "zero",
    "relu",
    "round_half_away",
    "encode_array",
    "decode_array",
    "saturate_array",
    "shift_array",
]


class FormatMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class FixedPointFormat:
    int_bits: int
    frac_bits: int

    def __post_init__(self):
        if self.int_bits < 0 or self.frac_bits < 0:
            raise ValueError("bit counts must be non-negative")
        if self.total_bits < 2:
            raise ValueError("total width must be at least 2 bits")

    @property
    def total_bits(self) -> int:
        return self.int_bits + self.frac_bits + 1

    @property
    def max_raw(self) -> int:
        return (1 << (self.int_bits + self.frac_bits)) - 1

    @property
    def step(self) -> float:
        return 2.0 ** -self.frac_bits

    @property
    def max_value(self) -> float:
        return self.max_raw * self.step

    def clamp(self, raw: int) -> int:
        return max(-self.max_raw, min(self.max_raw, raw))

    def __str__(self):
        return f"Q{self.int_bits}.{self.frac_bits}"


@dataclass(frozen=True)
class FxpValue:
    raw: int
    fmt: FixedPointFormat

    def __post_init__(self):
        if not isinstance(self.raw, (int, np.integer)):
            raise TypeError("raw must be an integer")
        if abs(int(self.raw)) > self.fmt.max_raw:
            raise ValueError(f"raw {self.raw} outside the range of {self.fmt}")

    def __float__(self):
        return decode(self)


@dataclass
class ArithmeticContext:
    """Per-worker counters for the fixed-point datapath.

    ``accumulate`` selects how dot products are summed by the inference
    code: ``"saturate"`` clamps after every addition like a chain of K-bit
    adders, ``"wide"`` keeps an unbounded accumulator and clamps once.
    """

    accumulate: str = "saturate"
    additions: int = 0
    saturations: int = 0

    def __post_init__(self):
        if self.accumulate not in ("saturate", "wide"):
            raise ValueError(f"unknown accumulate mode {self.accumulate!r}")

    def reset(self):
        self.additions = 0
        self.saturations = 0


def round_half_away(x: float) -> int:
    return int(math.copysign(math.floor(abs(x) + 0.5), x))


def encode(x: float, fmt: FixedPointFormat) -> FxpValue:
    """Nearest representable value to ``x``, saturating outside the range."""
    x = float(x)
    if not math.isfinite(x):
        raise ValueError(f"cannot encode non-finite value {x!r}")
    # Scaling by a power of two is exact in binary floating point.
    return FxpValue(fmt.clamp(round_half_away(math.ldexp(x, fmt.frac_bits))), fmt)


def decode(v: FxpValue) -> float:
    return math.ldexp(float(v.raw), -v.fmt.frac_bits)


def zero(fmt: FixedPointFormat) -> FxpValue:
    return FxpValue(0, fmt)


def _saturated(raw: int, fmt: FixedPointFormat, ctx: ArithmeticContext | None) -> FxpValue:
    clamped = fmt.clamp(raw)
    if clamped != raw and ctx is not None:
        ctx.saturations += 1
    return FxpValue(clamped, fmt)


def add_sat(a: FxpValue, b: FxpValue, ctx: ArithmeticContext | None = None) -> FxpValue:
    if a.fmt != b.fmt:
        raise FormatMismatchError(f"cannot add {a.fmt} and {b.fmt}")
    if ctx is not None:
        ctx.additions += 1
    return _saturated(int(a.raw) + int(b.raw), a.fmt, ctx)


def _shift_raw(raw: int, q: int) -> int:
    if q >= 0:
        return raw << q
    s = -q
    mag = (abs(raw) + (1 << (s - 1))) >> s
    return -mag if raw < 0 else mag


def mul_pow2(a: FxpValue, q: int, ctx: ArithmeticContext | None = None) -> FxpValue:
    """Multiply by ``2**q`` as a shift of the raw integer.

    Left shifts saturate; right shifts round the discarded bits half away
    from zero. ``|q|`` must be below ``K - 1``, the exponent range of the
    power-of-two weight codebook.
    """
    q = int(q)
    if abs(q) >= a.fmt.total_bits - 1:
        raise ValueError(f"|q|={abs(q)} not below K-1={a.fmt.total_bits - 1}")
    return _saturated(_shift_raw(int(a.raw), q), a.fmt, ctx)


def relu(a: FxpValue) -> FxpValue:
    return a if a.raw > 0 else FxpValue(0, a.fmt)


# Array versions. Raw arrays are int64; formats up to K=32 cannot overflow
# int64 under the shifts the codebook allows.


def encode_array(x, fmt: FixedPointFormat) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("cannot encode non-finite values")
    scaled = np.ldexp(x, fmt.frac_bits)
    raw = np.sign(scaled) * np.floor(np.abs(scaled) + 0.5)
    raw = np.clip(raw, -fmt.max_raw, fmt.max_raw)
    return raw.astype(np.int64)


def decode_array(raw, fmt: FixedPointFormat) -> np.ndarray:
    return np.ldexp(np.asarray(raw, dtype=np.float64), -fmt.frac_bits)


def saturate_array(raw: np.ndarray, fmt: FixedPointFormat, ctx: ArithmeticContext | None = None) -> np.ndarray:
    out = np.clip(raw, -fmt.max_raw, fmt.max_raw)
    if ctx is not None:
        ctx.saturations += int(np.count_nonzero(out != raw))
    return out


def shift_array(raw: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Elementwise ``raw * 2**q`` with half-away rounding, no saturation."""
    raw = np.asarray(raw, dtype=np.int64)
    q = np.asarray(q, dtype=np.int64)
    left = np.left_shift(raw, np.maximum(q, 0))
    s = np.maximum(-q, 0)
    half = np.where(s > 0, np.left_shift(1, np.maximum(s - 1, 0)), 0)
    mag = np.right_shift(np.abs(raw) + half, s)
    right = np.where(raw < 0, -mag, mag)
    return np.where(q >= 0, left, right)
