"""Compiled inner loop of the batched fixed-point forward pass."""

import numba
import numpy as np


@numba.njit(cache=True)
def dense_fixed(x, signs, exps, bias, has_bias, max_raw, wide, apply_relu):
    """One dense layer on raw integers; returns (outputs, saturation events).

    Same arithmetic as the scalar path: shift products (half-away rounding on
    right shifts, saturation on left shifts), then a left-to-right sum that
    saturates after every addition unless ``wide`` is set.
    """
    n, n_in = x.shape
    n_out = signs.shape[1]
    st = np.ascontiguousarray(signs.T)
    et = np.ascontiguousarray(exps.T)
    out = np.empty((n, n_out), dtype=np.int64)
    sat = 0
    for s in range(n):
        row = x[s]
        for j in range(n_out):
            acc = 0
            for i in range(n_in):
                sg = st[j, i]
                p = 0
                if sg != 0:
                    v = row[i]
                    q = et[j, i]
                    if q >= 0:
                        p = v << q
                        if p > max_raw:
                            p = max_raw
                            sat += 1
                        elif p < -max_raw:
                            p = -max_raw
                            sat += 1
                    else:
                        r = -q
                        mag = (abs(v) + (1 << (r - 1))) >> r
                        p = -mag if v < 0 else mag
                    if sg < 0:
                        p = -p
                if i == 0:
                    acc = p
                else:
                    acc += p
                    if not wide:
                        if acc > max_raw:
                            acc = max_raw
                            sat += 1
                        elif acc < -max_raw:
                            acc = -max_raw
                            sat += 1
            if has_bias:
                acc += bias[j]
                if not wide:
                    if acc > max_raw:
                        acc = max_raw
                        sat += 1
                    elif acc < -max_raw:
                        acc = -max_raw
                        sat += 1
            if wide:
                if acc > max_raw:
                    acc = max_raw
                    sat += 1
                elif acc < -max_raw:
                    acc = -max_raw
                    sat += 1
            if apply_relu and acc < 0:
                acc = 0
            out[s, j] = acc
    return out, sat
