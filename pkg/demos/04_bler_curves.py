"""
BLER curves of the maximum-likelihood receiver
==============================================

The 256-point constellation is the first shell structure of the E8 lattice.
Pass a model file to compare a trained receiver on the same noise.

    python demos/04_bler_curves.py [model.txt]
"""

import sys

from fxpnn.comm import build_constellation
from fxpnn.evaluation import FixedNnReceiver, FloatNnReceiver, MlReceiver, estimate_bler
from fxpnn.nn import QuantizedMlpModel, read_model

c = build_constellation()
print(f"{c.n_messages} points in {c.n_channel_uses} complex dimensions, energy {c.energy_per_symbol():.3f}")

receivers = [MlReceiver(c)]
if len(sys.argv) > 1:
    model = read_model(sys.argv[1])
    receivers.append(FloatNnReceiver(model, "nn-float"))
    if isinstance(model, QuantizedMlpModel):
        receivers.append(FixedNnReceiver(model, "nn-fixed"))

snrs = [0.0, 2.0, 4.0, 6.0, 8.0]
curves = {rx.tag: estimate_bler(rx, snrs, 20_000, seed=1, constellation=c) for rx in receivers}
print("snr  " + "".join(f"{tag:>12}" for tag in curves))
for i, s in enumerate(snrs):
    print(f"{s:>4g} " + "".join(f"{curves[tag][i].bler:>12.4g}" for tag in curves))
