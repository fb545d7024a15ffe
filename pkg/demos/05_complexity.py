"""
Counting additions
==================

With shift-only weights the network costs one addition per product (minus
one per neuron) plus one per bias. The ML receiver pays for squaring every
coordinate of every candidate, which grows with the word length K.
"""

import numpy as np

from fxpnn.evaluation import complexity_table
from fxpnn.fxp import ArithmeticContext, FixedPointFormat, encode
from fxpnn.lc import dc_quantize
from fxpnn.nn import MlpArchitecture, MlpModel, forward_fixed

for k in (8, 10, 12, 14, 16):
    ml, nn = complexity_table(k)
    print(f"K={k:>2d}: ML {ml.additions:>6d}  NN {nn.additions:>6d}  ratio {nn.ratio_vs_ml:.1%}")

# the closed form agrees with an instrumented pass
fmt = FixedPointFormat(5, 8)
arch = MlpArchitecture.receiver()
qm = dc_quantize(MlpModel.glorot(arch, np.random.default_rng(0)), fmt)
ctx = ArithmeticContext()
forward_fixed(qm, [encode(v, fmt) for v in np.linspace(-1, 1, 8)], ctx)
print("instrumented additions:", ctx.additions)
