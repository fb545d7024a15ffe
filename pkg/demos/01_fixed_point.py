"""
Fixed-point arithmetic in a few lines
=====================================

A value is stored as a signed integer ``raw`` and read as ``raw * 2**-K_F``.
Additions saturate at the edge of the range; multiplication by a power of two
is a shift.
"""

import math

from fxpnn.fxp import ArithmeticContext, FixedPointFormat, add_sat, decode, encode, mul_pow2

fmt = FixedPointFormat(int_bits=5, frac_bits=8)
print(f"K = {fmt.total_bits} bits, step {fmt.step}, largest value {fmt.max_value}")

# encoding rounds to the nearest grid point, halves away from zero
for x in (math.pi, 0.001, -0.5 * fmt.step, 1e3):
    v = encode(x, fmt)
    print(f"{x:>12.6g} -> raw {v.raw:>6d} -> {decode(v):.8g}")

# saturation is counted, not silent
ctx = ArithmeticContext()
big = encode(20.0, fmt)
print("20 + 20 =", decode(add_sat(big, big, ctx)), "| saturations:", ctx.saturations)

# shifts replace the multiplier; right shifts round like encode
v = encode(1.5, fmt)
for q in (-3, -1, 0, 2, 5):
    print(f"1.5 * 2^{q:<3d} = {decode(mul_pow2(v, q, ctx))}")
print("saturations after 1.5 * 2^5:", ctx.saturations)
