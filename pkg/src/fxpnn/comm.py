"""Transmitter, AWGN channel and the maximum-likelihood receiver.

The default signal set is a prefix of the E8 lattice: lattice points sorted
by squared norm and then lexicographically, first 256 kept (the origin, the
240 minimal vectors and 15 vectors of squared norm 4), centred and scaled to
unit mean energy per complex symbol. A point file can replace it.

Complex samples are carried as interleaved real pairs, so a block of N
channel uses is a length-2N real vector. Noise variance ``sigma2`` is per
complex symbol, i.e. ``sigma2 / 2`` per real dimension.
"""

from __future__ import annotations

import itertools
import os
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Constellation",
    "ChannelConfig",
    "ConstellationFileError",
    "DEFAULT_SIGMA2",
    "e8_points",
    "build_constellation",
    "load_constellation",
    "normalize_points",
    "snr_to_es",
    "transmit",
    "transmit_batch",
    "ml_detect",
    "ml_detect_batch",
    "receiver_input",
]

DEFAULT_SIGMA2 = 1e-8  # -80 dB


class ConstellationFileError(ValueError):
    pass


@dataclass(frozen=True)
class Constellation:
    points: np.ndarray  # (M, 2N), unit mean energy per complex symbol

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] % 2:
            raise ValueError("points must be an (M, 2N) array")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def n_messages(self) -> int:
        return self.points.shape[0]

    @property
    def n_channel_uses(self) -> int:
        return self.points.shape[1] // 2

    def energy_per_symbol(self) -> float:
        return float(np.mean(np.sum(self.points**2, axis=1)) / self.n_channel_uses)


@dataclass(frozen=True)
class ChannelConfig:
    es: float
    sigma2: float = DEFAULT_SIGMA2

    def __post_init__(self):
        if not (self.es > 0 and self.sigma2 > 0):
            raise ValueError("es and sigma2 must be positive")

    @classmethod
    def from_snr_db(cls, snr_db: float, sigma2: float = DEFAULT_SIGMA2) -> "ChannelConfig":
        return cls(snr_to_es(snr_db, sigma2), sigma2)

    @property
    def snr(self) -> float:
        return self.es / self.sigma2


def snr_to_es(snr_db: float, sigma2: float) -> float:
    if sigma2 <= 0:
        raise ValueError("sigma2 must be positive")
    return sigma2 * 10.0 ** (snr_db / 10.0)


def e8_points(max_sq_norm: float = 4.0) -> np.ndarray:
    """All E8 points with squared norm <= ``max_sq_norm`` (at most 4).

    E8 is D8 together with D8 + (1/2,...,1/2); D8 are integer vectors with
    even coordinate sum. Rows are sorted by squared norm, then lexicographically.
    """
    if max_sq_norm > 4.0:
        raise ValueError("enumeration box only covers squared norm <= 4")
    ints = np.array(list(itertools.product(range(-2, 3), repeat=8)), dtype=np.float64)
    ints = ints[ints.sum(axis=1) % 2 == 0]
    halves = np.array(list(itertools.product((-1.5, -0.5, 0.5, 1.5), repeat=8)))
    halves = halves[np.round(halves.sum(axis=1)) % 2 == 0]
    pts = np.vstack([ints, halves])
    sq = np.sum(pts**2, axis=1)
    pts, sq = pts[sq <= max_sq_norm + 1e-9], sq[sq <= max_sq_norm + 1e-9]
    order = np.lexsort(tuple(pts[:, i] for i in range(7, -1, -1)) + (sq,))
    return pts[order]


def normalize_points(points) -> np.ndarray:
    """Scale so the mean energy per complex symbol is one."""
    pts = np.asarray(points, dtype=np.float64)
    n = pts.shape[1] // 2
    energy = np.mean(np.sum(pts**2, axis=1)) / n
    if energy <= 0:
        raise ValueError("degenerate point set")
    return pts / np.sqrt(energy)


def build_constellation(n_messages: int = 256, n_channel_uses: int = 4) -> Constellation:
    if n_channel_uses != 4:
        raise ValueError("the E8 construction needs 4 channel uses (8 real dimensions)")
    pts = e8_points()
    if n_messages > len(pts):
        raise ValueError(f"at most {len(pts)} points available")
    pts = pts[:n_messages]
    pts = pts - pts.mean(axis=0)
    return Constellation(normalize_points(pts))


def load_constellation(path_or_stream) -> Constellation:
    """Read one point per line, 2N whitespace-separated reals; ``#`` starts a comment."""
    if isinstance(path_or_stream, (str, os.PathLike)):
        with open(path_or_stream) as fh:
            lines = fh.readlines()
    else:
        lines = path_or_stream.readlines()
    rows, width = [], None
    for n, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            row = [float(t) for t in line.split()]
        except ValueError:
            raise ConstellationFileError(f"line {n}: non-numeric value") from None
        if width is None:
            width = len(row)
            if width == 0 or width % 2:
                raise ConstellationFileError(f"line {n}: need an even number of columns, got {width}")
        elif len(row) != width:
            raise ConstellationFileError(f"line {n}: expected {width} columns, got {len(row)}")
        if not np.all(np.isfinite(row)):
            raise ConstellationFileError(f"line {n}: non-finite value")
        rows.append(row)
    if not rows:
        raise ConstellationFileError("no points in file")
    pts = np.array(rows)
    if len(np.unique(pts, axis=0)) != len(pts):
        raise ConstellationFileError("duplicate points")
    return Constellation(normalize_points(pts))


def transmit_batch(messages, c: Constellation, cfg: ChannelConfig, rng: np.random.Generator) -> np.ndarray:
    messages = np.asarray(messages)
    if messages.size and (messages.min() < 0 or messages.max() >= c.n_messages):
        raise IndexError("message index out of range")
    x = np.sqrt(cfg.es) * c.points[messages]
    return x + rng.normal(scale=np.sqrt(cfg.sigma2 / 2), size=x.shape)


def transmit(m: int, c: Constellation, cfg: ChannelConfig, rng: np.random.Generator) -> np.ndarray:
    """Received block (2N reals) for message index ``m`` (0-based)."""
    if not 0 <= m < c.n_messages:
        raise IndexError(f"message {m} outside [0, {c.n_messages})")
    return transmit_batch(np.array([m]), c, cfg, rng)[0]


def ml_detect_batch(y, c: Constellation, es: float) -> np.ndarray:
    """Nearest scaled constellation point for each row of ``y``; ties go to the smaller index.

    Uses ``-2<y,x> + |x|^2``; the common ``|y|^2`` term is dropped.
    """
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    x = np.sqrt(es) * c.points
    metric = -2.0 * (y @ x.T) + np.sum(x**2, axis=1)
    return np.argmin(metric, axis=1)


def ml_detect(y, c: Constellation, es: float) -> int:
    return int(ml_detect_batch(y, c, es)[0])


def receiver_input(y, es: float) -> np.ndarray:
    """Gain-normalised received samples fed to the network, ``y / sqrt(es)``."""
    return np.asarray(y, dtype=np.float64) / np.sqrt(es)
