"""
Power-of-two weights and the shift-only receiver
================================================

Weights restricted to {0, +-2^q} turn every product into a shift. The same
network then runs either in floating point or on the fixed-point datapath.
"""

import numpy as np

from fxpnn.codebook import build_weight_codebook, quantize_nearest
from fxpnn.fxp import ArithmeticContext, FixedPointFormat, encode_array
from fxpnn.lc import dc_quantize
from fxpnn.nn import MlpArchitecture, MlpModel, forward_fixed_batch, forward_float

cb = build_weight_codebook(8)
print(f"K=8 codebook: {len(cb)} entries, largest {cb.entries.max()}")
for w in (0.3, 0.375, -5.9, 1e-9):
    print(f"  {w:>8} -> {quantize_nearest(w, cb)}")

arch = MlpArchitecture.receiver(256, 4)
print("receiver layers", arch.sizes, "parameters", arch.n_params)

# a random network quantised directly, just to exercise both datapaths
fmt = FixedPointFormat(5, 12)
qm = dc_quantize(MlpModel.glorot(arch, np.random.default_rng(0)), fmt)
x = np.random.default_rng(1).uniform(-2, 2, (2000, 8))

ref = forward_float(qm.dequantize(), x)
ctx = ArithmeticContext()
out = forward_fixed_batch(qm, encode_array(x, fmt), ctx) * fmt.step
print(f"max |fixed - float| logit deviation at K_F=12: {np.abs(out - ref).max():.4f}")
print(f"argmax agreement: {np.mean(out.argmax(1) == ref.argmax(1)):.4f}")
print(f"additions per block: {ctx.additions // len(x)}, saturation events: {ctx.saturations}")
