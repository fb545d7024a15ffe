"""
Learning-Compression versus direct quantisation
===============================================

A small version of the full pipeline: 16 messages over 4 channel uses, a
narrow network and a short schedule, so it finishes in well under a minute.
Direct compression rounds the trained weights once; LC keeps training while
pulling the weights towards the codebook.
"""

import numpy as np

from fxpnn.comm import build_constellation
from fxpnn.evaluation import FixedNnReceiver, FloatNnReceiver, MlReceiver, estimate_bler
from fxpnn.fxp import FixedPointFormat
from fxpnn.lc import LcSchedule, TrainingData, dc_quantize, lc_train, pretrain
from fxpnn.nn import MlpArchitecture, MlpModel

c = build_constellation(16, 4)
arch = MlpArchitecture(8, (16, 16), 16)
fmt = FixedPointFormat(3, 4)
snr = 2.0

sched = LcSchedule(lr=3e-3, pretrain_steps=3000, train_snr_db=snr, mu0=1e-2, a=1.3, max_iters=40,
                   learn_steps=200, batch_size=128)
data = TrainingData(c, snr, sched.batch_size, np.random.default_rng(0))
model, loss = pretrain(MlpModel.glorot(arch, np.random.default_rng(1)), sched, data)
print(f"unconstrained training loss {loss:.4f}")

qm, trace, _ = lc_train(model, LcSchedule(**{**vars(sched), "pretrain_steps": 0}), data, fmt)
print("iter  mu        gap")
shown = trace.rows[::4]
if shown[-1] != trace.rows[-1]:
    shown.append(trace.rows[-1])
for it, mu, gap, _ in shown:
    print(f"{it:>4d}  {mu:<8.3g}  {gap:.4f}")
print("converged" if trace.converged else "not converged")

receivers = [
    MlReceiver(c),
    FloatNnReceiver(model, "float"),
    FixedNnReceiver(dc_quantize(model, fmt), "dc-fixed"),
    FixedNnReceiver(qm, "lc-fixed"),
]
for rx in receivers:
    (p,) = estimate_bler(rx, [snr], 50_000, seed=3, constellation=c)
    lo, hi = p.interval()
    print(f"{rx.tag:>9}: BLER {p.bler:.4f}  [{lo:.4f}, {hi:.4f}]")
