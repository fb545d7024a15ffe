"""Learning-Compression quantisation-aware training and the direct-compression baseline.

LC alternates two steps on the augmented Lagrangian of
``min L(psi) s.t. psi in C^P``:

* learning: a few Adam steps on ``L(psi) + mu/2 * ||psi - psi_hat - lam/mu||^2``
* compression: ``psi_hat = Pi_C(psi - lam/mu)``, nearest codebook value per entry

followed by ``lam <- lam - mu * (psi - psi_hat)`` and ``mu <- a * mu``.
Weights are projected onto the power-of-two codebook and biases onto the
fixed-point grid of the deployment format.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .codebook import BiasQuantizer, PowerOfTwoCodebook, build_weight_codebook
from .comm import DEFAULT_SIGMA2, ChannelConfig, Constellation, receiver_input, transmit_batch
from .fxp import FixedPointFormat
from .nn import Adam, MlpModel, QuantizedMlpModel, loss_and_gradient, quantized_from_reals

__all__ = [
    "LcSchedule",
    "LcState",
    "LcTrace",
    "TrainingDivergedError",
    "TrainingData",
    "NOT_CONVERGED_FLAG",
    "project",
    "dc_quantize",
    "augmented_loss",
    "learning_step",
    "compression_step",
    "multiplier_update",
    "pretrain",
    "lc_train",
]

log = logging.getLogger(__name__)

NOT_CONVERGED_FLAG = "lc-not-converged"

LossFn = Callable[[np.ndarray, np.ndarray, np.ndarray], "tuple[float, np.ndarray]"]


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class LcSchedule:
    mu0: float = 1e-3
    a: float = 1.2
    max_iters: int = 80
    stop_tol: float | None = None  # None: 1e-3 * sqrt(P)
    learn_steps: int = 2000
    lr: float = 1e-3
    lr_final: float | None = None  # LC learning rate decays geometrically to this over max_iters
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 256
    train_snr_db: float | tuple[float, float] = 10.0
    pretrain_steps: int = 20000
    pretrain_lr_final: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.a <= 1:
            raise ValueError("mu growth factor must exceed 1")
        if self.mu0 <= 0:
            raise ValueError("mu0 must be positive")
        if self.stop_tol is not None and self.stop_tol <= 0:
            raise ValueError("stop_tol must be positive")

    def tolerance(self, n_params: int) -> float:
        return self.stop_tol if self.stop_tol is not None else 1e-3 * np.sqrt(n_params)


@dataclass
class LcState:
    psi: np.ndarray
    psi_hat: np.ndarray
    lam: np.ndarray
    mu: float

    def __post_init__(self):
        if not (self.psi.shape == self.psi_hat.shape == self.lam.shape):
            raise ValueError("psi, psi_hat and lam must have equal length")

    @property
    def gap(self) -> float:
        return float(np.linalg.norm(self.psi - self.psi_hat))


@dataclass
class LcTrace:
    rows: list[tuple[int, float, float, float]] = field(default_factory=list)
    converged: bool = False

    def to_csv(self) -> str:
        out = ["iter,mu,psi_gap,loss"]
        out += [f"{i},{mu!r},{gap!r},{loss!r}" for i, mu, gap, loss in self.rows]
        return "\n".join(out) + "\n"


class TrainingData:
    """Online batches of gain-normalised noisy blocks with uniform messages.

    ``snr_db`` is either a fixed value or a ``(low, high)`` range sampled
    uniformly per block.
    """

    def __init__(self, constellation: Constellation, snr_db, batch_size: int, rng: np.random.Generator,
                 sigma2: float = DEFAULT_SIGMA2):
        self.constellation = constellation
        self.snr_db = snr_db
        self.batch_size = batch_size
        self.rng = rng
        self.sigma2 = sigma2

    def __call__(self):
        c, n = self.constellation, self.batch_size
        labels = self.rng.integers(0, c.n_messages, size=n)
        if np.ndim(self.snr_db) == 0:
            cfg = ChannelConfig.from_snr_db(float(self.snr_db), self.sigma2)
            return receiver_input(transmit_batch(labels, c, cfg, self.rng), cfg.es), labels
        lo, hi = self.snr_db
        snr = self.rng.uniform(lo, hi, size=n)
        es = self.sigma2 * 10.0 ** (snr / 10.0)
        x = np.sqrt(es)[:, None] * c.points[labels]
        y = x + self.rng.normal(scale=np.sqrt(self.sigma2 / 2), size=x.shape)
        return y / np.sqrt(es)[:, None], labels


def _model_loss(model: MlpModel) -> LossFn:
    def fn(psi, inputs, labels):
        return loss_and_gradient(MlpModel(model.arch, psi), inputs, labels)
    return fn


def project(values, weight_mask: np.ndarray, cb: PowerOfTwoCodebook, bq: BiasQuantizer) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    out = np.empty_like(values)
    out[weight_mask] = cb.quantize(values[weight_mask])
    out[~weight_mask] = bq.quantize(values[~weight_mask])
    return out


def dc_quantize(model: MlpModel, fmt: FixedPointFormat) -> QuantizedMlpModel:
    """Direct compression: nearest codebook value per weight, nearest grid value per bias."""
    cb = build_weight_codebook(fmt.total_bits)
    psi_hat = project(model.params, model.arch.weight_mask(), cb, BiasQuantizer(fmt))
    return quantized_from_reals(model.arch, psi_hat, fmt)


def augmented_loss(loss_fn: LossFn, state: LcState, inputs, labels) -> tuple[float, np.ndarray]:
    """Value and gradient of ``L(psi) + mu/2 ||psi - psi_hat - lam/mu||^2`` at ``state.psi``."""
    loss, grad = loss_fn(state.psi, inputs, labels)
    r = state.psi - state.psi_hat - state.lam / state.mu
    return loss + 0.5 * state.mu * float(r @ r), grad + state.mu * r


def learning_step(state: LcState, data, sched: LcSchedule, loss_fn: LossFn,
                  optimizer: Adam | None = None, steps: int | None = None,
                  lr: float | None = None) -> tuple[np.ndarray, float]:
    """Approximately minimise the augmented objective with Adam.

    ``data`` is a callable returning ``(inputs, labels)`` batches. Returns the
    new ``psi`` and the mean data loss over the steps.
    """
    opt = optimizer or Adam(len(state.psi), sched.lr, sched.beta1, sched.beta2, sched.eps)
    psi = state.psi.copy()
    losses = []
    for _ in range(sched.learn_steps if steps is None else steps):
        inputs, labels = data()
        loss, grad = loss_fn(psi, inputs, labels)
        if not np.isfinite(loss):
            raise TrainingDivergedError("non-finite loss in learning step")
        grad = grad + state.mu * (psi - state.psi_hat - state.lam / state.mu)
        psi = opt.step(psi, grad, lr)
        losses.append(loss)
    return psi, float(np.mean(losses)) if losses else float("nan")


def compression_step(state: LcState, weight_mask: np.ndarray, cb: PowerOfTwoCodebook,
                     bq: BiasQuantizer) -> np.ndarray:
    return project(state.psi - state.lam / state.mu, weight_mask, cb, bq)


def multiplier_update(state: LcState) -> np.ndarray:
    return state.lam - state.mu * (state.psi - state.psi_hat)


def pretrain(model: MlpModel, sched: LcSchedule, data, steps: int | None = None) -> tuple[MlpModel, float]:
    """Unconstrained Adam training with a geometric learning-rate decay.

    Returns the trained copy and the mean loss over the last 100 steps.
    """
    steps = sched.pretrain_steps if steps is None else steps
    opt = Adam(model.arch.n_params, sched.lr, sched.beta1, sched.beta2, sched.eps)
    psi = model.params.copy()
    decay = (sched.pretrain_lr_final / sched.lr) ** (1.0 / max(steps - 1, 1))
    recent = []
    for t in range(steps):
        inputs, labels = data()
        loss, grad = loss_and_gradient(MlpModel(model.arch, psi), inputs, labels)
        if not np.isfinite(loss):
            raise TrainingDivergedError(f"non-finite loss at pretraining step {t}")
        psi = opt.step(psi, grad, lr=sched.lr * decay**t)
        recent = (recent + [loss])[-100:]
    return MlpModel(model.arch, psi), float(np.mean(recent)) if recent else float("nan")


def lc_train(model: MlpModel, sched: LcSchedule, data, fmt: FixedPointFormat,
             loss_fn: LossFn | None = None) -> tuple[QuantizedMlpModel, LcTrace, LcState]:
    """Run LC from ``model``; pretrains first when ``sched.pretrain_steps > 0``.

    Stops once ``||psi - psi_hat|| < tolerance`` or after ``max_iters``
    iterations. Without convergence the final ``psi_hat`` is still returned,
    tagged with :data:`NOT_CONVERGED_FLAG`.
    """
    if loss_fn is None:
        loss_fn = _model_loss(model)
    if sched.pretrain_steps > 0:
        model, _ = pretrain(model, sched, data)
    arch = model.arch
    mask = arch.weight_mask()
    cb = build_weight_codebook(fmt.total_bits)
    bq = BiasQuantizer(fmt)
    tol = sched.tolerance(arch.n_params)

    psi = model.params.copy()
    state = LcState(psi, project(psi, mask, cb, bq), np.zeros_like(psi), sched.mu0)
    opt = Adam(len(psi), sched.lr, sched.beta1, sched.beta2, sched.eps)
    trace = LcTrace()
    lr_final = sched.lr if sched.lr_final is None else sched.lr_final
    decay = (lr_final / sched.lr) ** (1.0 / max(sched.max_iters - 1, 1))
    for it in range(1, sched.max_iters + 1):
        lr = sched.lr * decay ** (it - 1)
        state.psi, loss = learning_step(state, data, sched, loss_fn, opt, lr=lr)
        state.psi_hat = compression_step(state, mask, cb, bq)
        state.lam = multiplier_update(state)
        gap = state.gap
        trace.rows.append((it, state.mu, gap, loss))
        log.info("LC iter %d mu=%.4g gap=%.4g loss=%.4f", it, state.mu, gap, loss)
        if gap < tol:
            trace.converged = True
            break
        state.mu *= sched.a
    flags = () if trace.converged else (NOT_CONVERGED_FLAG,)
    if not trace.converged:
        log.warning("LC stopped after %d iterations without reaching gap < %.3g", sched.max_iters, tol)
    return quantized_from_reals(arch, state.psi_hat, fmt, flags), trace, state
