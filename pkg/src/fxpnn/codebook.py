"""Weight and bias codebooks.

Weights are restricted to ``{0} U {+-2**q : |q| <= K-2}``, so every
multiplication on a K-bit datapath becomes a shift or a zeroing. Larger
exponents are excluded because shifting by ``K-1`` or more places flushes a
K-bit operand to zero or saturates it. Biases live on the fixed-point grid
of the deployment format.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fxp import FixedPointFormat, decode_array, encode_array

__all__ = [
    "PowerOfTwoCodebook",
    "BiasQuantizer",
    "build_weight_codebook",
    "quantize_nearest",
    "quantize_bias",
]


@dataclass(frozen=True)
class PowerOfTwoCodebook:
    total_bits: int
    entries: np.ndarray = field(repr=False, compare=False)

    @property
    def max_exponent(self) -> int:
        return self.total_bits - 2

    def __len__(self):
        return len(self.entries)

    def __contains__(self, x) -> bool:
        return bool(np.any(self.entries == float(x)))

    def contains_all(self, values) -> bool:
        values = np.asarray(values, dtype=np.float64)
        idx = np.searchsorted(self.entries, values)
        idx = np.clip(idx, 0, len(self.entries) - 1)
        return bool(np.all(self.entries[idx] == values))

    def quantize(self, x) -> np.ndarray:
        """Vectorised nearest-entry quantisation; ties go to the smaller magnitude."""
        x = np.asarray(x, dtype=np.float64)
        e = self.entries
        hi = np.clip(np.searchsorted(e, x, side="left"), 1, len(e) - 1)
        lo = hi - 1
        d_lo = np.abs(x - e[lo])
        d_hi = np.abs(e[hi] - x)
        pick_hi = (d_hi < d_lo) | ((d_hi == d_lo) & (np.abs(e[hi]) < np.abs(e[lo])))
        return np.where(pick_hi, e[hi], e[lo])


@dataclass(frozen=True)
class BiasQuantizer:
    fmt: FixedPointFormat

    def quantize(self, x) -> np.ndarray:
        return decode_array(encode_array(x, self.fmt), self.fmt)

    def contains_all(self, values) -> bool:
        values = np.asarray(values, dtype=np.float64)
        scaled = np.ldexp(values, self.fmt.frac_bits)
        return bool(np.all(scaled == np.round(scaled)) and np.all(np.abs(scaled) <= self.fmt.max_raw))


def build_weight_codebook(total_bits: int) -> PowerOfTwoCodebook:
    if total_bits < 3:
        raise ValueError(f"codebook needs K >= 3, got {total_bits}")
    qmax = total_bits - 2
    pos = np.ldexp(1.0, np.arange(-qmax, qmax + 1))
    entries = np.concatenate([-pos[::-1], [0.0], pos])
    return PowerOfTwoCodebook(total_bits, entries)


def quantize_nearest(x: float, cb: PowerOfTwoCodebook) -> float:
    return float(cb.quantize(x))


def quantize_bias(x: float, bq: BiasQuantizer) -> float:
    return float(bq.quantize(x))
