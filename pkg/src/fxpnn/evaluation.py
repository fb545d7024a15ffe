"""Monte-Carlo block error rates and the addition-count complexity model.

Every (SNR, chunk) pair draws its messages and noise from its own RNG stream
keyed by ``(seed, SNR in milli-dB, chunk index)``. Two consequences follow:
receivers evaluated with the same seed see the same noise (common random
numbers), and the result does not depend on how chunks are spread over
worker processes.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .comm import DEFAULT_SIGMA2, Constellation, build_constellation, ml_detect_batch, receiver_input, snr_to_es
from .fxp import ArithmeticContext, encode_array
from .nn import MlpArchitecture, MlpModel, QuantizedMlpModel, forward_fixed_batch, forward_float

__all__ = [
    "BlerPoint",
    "ComplexityReport",
    "MlReceiver",
    "FloatNnReceiver",
    "FixedNnReceiver",
    "wilson_interval",
    "intervals_overlap",
    "estimate_bler",
    "count_additions",
    "complexity_table",
    "bler_csv",
    "complexity_csv",
]

CHUNK = 10_000


def wilson_interval(errors: int, blocks: int, confidence: float = 0.95) -> tuple[float, float]:
    if blocks <= 0:
        raise ValueError("blocks must be positive")
    z = norm.ppf(0.5 + confidence / 2)
    p = errors / blocks
    denom = 1 + z * z / blocks
    centre = (p + z * z / (2 * blocks)) / denom
    half = z * math.sqrt(p * (1 - p) / blocks + z * z / (4 * blocks * blocks)) / denom
    lo = 0.0 if errors == 0 else max(0.0, centre - half)
    hi = 1.0 if errors == blocks else min(1.0, centre + half)
    return float(lo), float(hi)


@dataclass(frozen=True)
class BlerPoint:
    snr_db: float
    errors: int
    blocks: int
    receiver: str
    saturations: int = 0

    def __post_init__(self):
        if self.blocks <= 0:
            raise ValueError("blocks must be positive")

    @property
    def bler(self) -> float:
        return self.errors / self.blocks

    def interval(self, confidence: float = 0.95) -> tuple[float, float]:
        return wilson_interval(self.errors, self.blocks, confidence)


def intervals_overlap(a: BlerPoint, b: BlerPoint, confidence: float = 0.95) -> bool:
    lo_a, hi_a = a.interval(confidence)
    lo_b, hi_b = b.interval(confidence)
    return lo_a <= hi_b and lo_b <= hi_a


class MlReceiver:
    tag = "ml"

    def __init__(self, constellation: Constellation):
        self.constellation = constellation

    def detect(self, y, es, ctx=None):
        return ml_detect_batch(y, self.constellation, es)


class FloatNnReceiver:
    def __init__(self, model: MlpModel | QuantizedMlpModel, tag: str = "nn-float"):
        self.model = model.dequantize() if isinstance(model, QuantizedMlpModel) else model
        self.tag = tag

    def detect(self, y, es, ctx=None):
        return np.argmax(forward_float(self.model, receiver_input(y, es)), axis=1)


class FixedNnReceiver:
    """Quantised network on the fixed-point datapath; input samples are encoded after gain normalisation."""

    def __init__(self, model: QuantizedMlpModel, tag: str = "nn-fixed", accumulate: str = "saturate"):
        self.model = model
        self.tag = tag
        self.accumulate = accumulate

    def detect(self, y, es, ctx=None):
        if ctx is None:
            ctx = ArithmeticContext(self.accumulate)
        x = receiver_input(y, es)
        raw = encode_array(x, self.model.fmt)
        scaled = np.abs(np.ldexp(x, self.model.fmt.frac_bits))
        ctx.saturations += int(np.count_nonzero(scaled >= self.model.fmt.max_raw + 0.5))
        return np.argmax(forward_fixed_batch(self.model, raw, ctx), axis=1)


def _stream(seed: int, snr_db: float, chunk: int) -> np.random.Generator:
    key = int(round(snr_db * 1000)) + 10**6
    if key < 0:
        raise ValueError("SNR below -1000 dB")
    return np.random.default_rng(np.random.SeedSequence([seed, key, chunk]))


def _run_chunk(args):
    receiver, constellation, snr_db, sigma2, seed, chunk, n, noiseless = args
    rng = _stream(seed, snr_db, chunk)
    es = snr_to_es(snr_db, sigma2)
    labels = rng.integers(0, constellation.n_messages, size=n)
    noise = rng.normal(scale=math.sqrt(sigma2 / 2), size=(n, constellation.points.shape[1]))
    y = math.sqrt(es) * constellation.points[labels]
    if not noiseless:
        y = y + noise
    ctx = ArithmeticContext(getattr(receiver, "accumulate", "saturate"))
    decisions = receiver.detect(y, es, ctx)
    return int(np.count_nonzero(decisions != labels)), ctx.saturations


def estimate_bler(receiver, snr_db, blocks: int, seed: int = 0, constellation: Constellation | None = None,
                  sigma2: float = DEFAULT_SIGMA2, workers: int = 1, chunk_size: int = CHUNK,
                  noiseless: bool = False) -> list[BlerPoint]:
    """Block error rate of ``receiver`` at each SNR (dB) over ``blocks`` uniform messages."""
    if blocks < 1:
        raise ValueError("blocks must be >= 1")
    constellation = constellation if constellation is not None else build_constellation()
    snrs = [float(s) for s in np.atleast_1d(snr_db)]
    tasks = []
    for s in snrs:
        for chunk, start in enumerate(range(0, blocks, chunk_size)):
            n = min(chunk_size, blocks - start)
            tasks.append((receiver, constellation, s, sigma2, seed, chunk, n, noiseless))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_chunk, tasks))
    else:
        results = [_run_chunk(t) for t in tasks]
    points, pos = [], 0
    n_chunks = len(tasks) // len(snrs) if snrs else 0
    for s in snrs:
        part = results[pos:pos + n_chunks]
        pos += n_chunks
        points.append(BlerPoint(s, sum(e for e, _ in part), blocks, receiver.tag, sum(x for _, x in part)))
    return points


@dataclass(frozen=True)
class ComplexityReport:
    receiver: str
    k: int
    additions: int
    ratio_vs_ml: float


def _nn_additions(arch: MlpArchitecture) -> int:
    # Products are hard-wired shifts; each neuron adds its inputs pairwise and then its bias.
    return sum(o * (i - 1) + (o if b else 0) for (i, o), b in zip(arch.layer_shapes, arch.bias_flags))


def _ml_additions(n_messages: int, n_channel_uses: int, k: int) -> int:
    # Per candidate: 2N subtractions, 2N squarings at K-1 additions each, 2N-1 additions to sum.
    d = 2 * n_channel_uses
    return n_messages * (d + d * (k - 1) + (d - 1))


def count_additions(kind: str, arch: MlpArchitecture | None = None, n_messages: int = 256,
                    n_channel_uses: int = 4, k: int = 14) -> ComplexityReport:
    if k < 3:
        raise ValueError(f"K must be at least 3, got {k}")
    arch = arch or MlpArchitecture.receiver(n_messages, n_channel_uses)
    ml = _ml_additions(n_messages, n_channel_uses, k)
    if kind == "ml":
        return ComplexityReport("ml", k, ml, 1.0)
    if kind == "nn":
        nn = _nn_additions(arch)
        return ComplexityReport("nn", k, nn, nn / ml)
    raise ValueError(f"unknown receiver kind {kind!r}")


def complexity_table(k: int, arch: MlpArchitecture | None = None, n_messages: int = 256,
                     n_channel_uses: int = 4) -> list[ComplexityReport]:
    return [count_additions(kind, arch, n_messages, n_channel_uses, k) for kind in ("ml", "nn")]


def bler_csv(points) -> str:
    rows = ["snr,bler,blocks,errors,receiver"]
    rows += [f"{p.snr_db!r},{p.bler!r},{p.blocks},{p.errors},{p.receiver}" for p in points]
    return "\n".join(rows) + "\n"


def complexity_csv(reports) -> str:
    rows = ["receiver,k,additions,ratio"]
    rows += [f"{r.receiver},{r.k},{r.additions},{round(r.ratio_vs_ml, 4)!r}" for r in reports]
    return "\n".join(rows) + "\n"
