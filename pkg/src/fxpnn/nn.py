"""The receiver network: C2R, dense 64 ReLU, dense 32 ReLU, dense M.

Weights of a dense layer are stored as an ``(in, out)`` matrix so a batch of
row vectors maps as ``x @ W + b``. The flat parameter vector orders layers
first to last and, inside each layer, the weight matrix (row-major) followed
by the bias vector if the layer has one. The output layer has no bias and no
softmax; decisions are the argmax of its pre-activations.

Two forward paths exist. :func:`forward_float` is the float64 path used for
training. :func:`forward_fixed` and :func:`forward_fixed_batch` run a
:class:`QuantizedMlpModel` on the fixed-point datapath, where every product
is a shift or a zeroing and every sum is a saturating addition.
"""

from __future__ import annotations

import io
import os
from dataclasses import dataclass, field

import numpy as np

from .codebook import BiasQuantizer, build_weight_codebook
from .fxp import (
    ArithmeticContext,
    FixedPointFormat,
    FxpValue,
    add_sat,
    decode_array,
    mul_pow2,
    relu,
)
from ._kernels import dense_fixed

__all__ = [
    "MlpArchitecture",
    "MlpModel",
    "QuantizedMlpModel",
    "ModelFileError",
    "OffCodebookError",
    "Adam",
    "c2r",
    "forward_float",
    "loss_and_gradient",
    "quantized_from_reals",
    "forward_fixed",
    "forward_fixed_batch",
    "write_model",
    "read_model",
]

FILE_MAGIC = "fxpnn v1"


class ModelFileError(ValueError):
    pass


class OffCodebookError(ValueError):
    pass


@dataclass(frozen=True)
class MlpArchitecture:
    input_dim: int
    hidden: tuple[int, ...]
    output_dim: int
    bias_flags: tuple[bool, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        flags = tuple(self.bias_flags) or (True,) * len(self.hidden) + (False,)
        if len(flags) != len(self.hidden) + 1:
            raise ValueError("need one bias flag per dense layer")
        object.__setattr__(self, "bias_flags", tuple(bool(f) for f in flags))

    @classmethod
    def receiver(cls, n_messages: int = 256, n_channel_uses: int = 4) -> "MlpArchitecture":
        return cls(2 * n_channel_uses, (64, 32), n_messages, (True, True, False))

    @property
    def sizes(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden, self.output_dim)

    @property
    def layer_shapes(self) -> list[tuple[int, int]]:
        s = self.sizes
        return list(zip(s[:-1], s[1:]))

    @property
    def n_params(self) -> int:
        return sum(i * o + (o if b else 0) for (i, o), b in zip(self.layer_shapes, self.bias_flags))

    def slices(self):
        """(weight_slice, bias_slice or None) for every layer, into the flat vector."""
        out, pos = [], 0
        for (i, o), has_bias in zip(self.layer_shapes, self.bias_flags):
            w = slice(pos, pos + i * o)
            pos += i * o
            b = None
            if has_bias:
                b = slice(pos, pos + o)
                pos += o
            out.append((w, b))
        return out

    def weight_mask(self) -> np.ndarray:
        """Boolean mask over the flat vector, True on weights, False on biases."""
        mask = np.zeros(self.n_params, dtype=bool)
        for w, _ in self.slices():
            mask[w] = True
        return mask


@dataclass
class MlpModel:
    arch: MlpArchitecture
    params: np.ndarray

    def __post_init__(self):
        self.params = np.asarray(self.params, dtype=np.float64)
        if self.params.shape != (self.arch.n_params,):
            raise ValueError(f"expected {self.arch.n_params} parameters, got {self.params.shape}")

    @classmethod
    def glorot(cls, arch: MlpArchitecture, rng: np.random.Generator) -> "MlpModel":
        params = np.zeros(arch.n_params)
        for (w, _), (fan_in, fan_out) in zip(arch.slices(), arch.layer_shapes):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            params[w] = rng.uniform(-limit, limit, size=fan_in * fan_out)
        return cls(arch, params)

    @classmethod
    def zeros(cls, arch: MlpArchitecture) -> "MlpModel":
        return cls(arch, np.zeros(arch.n_params))

    def layers(self):
        """Views ``(W, b)`` per layer; ``b`` is None for bias-free layers."""
        out = []
        for (w, b), (i, o) in zip(self.arch.slices(), self.arch.layer_shapes):
            out.append((self.params[w].reshape(i, o), None if b is None else self.params[b]))
        return out

    def copy(self) -> "MlpModel":
        return MlpModel(self.arch, self.params.copy())


def c2r(y) -> np.ndarray:
    """Complex samples to interleaved reals ``[Re y1, Im y1, Re y2, ...]``.

    Works on the last axis, so a ``(batch, N)`` array becomes ``(batch, 2N)``.
    """
    y = np.asarray(y, dtype=np.complex128)
    out = np.empty(y.shape[:-1] + (2 * y.shape[-1],))
    out[..., 0::2] = y.real
    out[..., 1::2] = y.imag
    return out


def _check_input(arch: MlpArchitecture, x: np.ndarray):
    if x.shape[-1] != arch.input_dim:
        raise ValueError(f"input has {x.shape[-1]} features, model expects {arch.input_dim}")


def _forward_cache(model: MlpModel, x: np.ndarray):
    acts = [x]
    pre = []
    layers = model.layers()
    for k, (W, b) in enumerate(layers):
        z = acts[-1] @ W
        if b is not None:
            z = z + b
        pre.append(z)
        if k < len(layers) - 1:
            acts.append(np.maximum(z, 0.0))
    return acts, pre


def forward_float(model: MlpModel, x) -> np.ndarray:
    """Output-layer pre-activations for one input or a batch of inputs."""
    x = np.asarray(x, dtype=np.float64)
    _check_input(model.arch, x)
    _, pre = _forward_cache(model, x)
    return pre[-1]


def loss_and_gradient(model: MlpModel, inputs, labels) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy over the batch and its gradient w.r.t. the flat parameters."""
    x = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    n = len(labels)
    if n == 0:
        raise ValueError("empty batch")
    _check_input(model.arch, x)
    acts, pre = _forward_cache(model, x)
    z = pre[-1]
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = -float(logp[np.arange(n), labels].mean())

    delta = np.exp(logp)
    delta[np.arange(n), labels] -= 1.0
    delta /= n

    grad = np.empty(model.arch.n_params)
    layers = model.layers()
    for k in range(len(layers) - 1, -1, -1):
        W, b = layers[k]
        ws, bs = model.arch.slices()[k]
        grad[ws] = (acts[k].T @ delta).ravel()
        if bs is not None:
            grad[bs] = delta.sum(axis=0)
        if k > 0:
            delta = (delta @ W.T) * (pre[k - 1] > 0)
    return loss, grad


class Adam:
    """Plain Adam on a flat parameter vector."""

    def __init__(self, n: int, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray, lr: float | None = None) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        mhat = self.m / (1 - self.beta1**self.t)
        vhat = self.v / (1 - self.beta2**self.t)
        return params - (self.lr if lr is None else lr) * mhat / (np.sqrt(vhat) + self.eps)


@dataclass
class QuantizedMlpModel:
    """Deployment form: weights as sign/exponent codes, biases as raw integers.

    ``signs[k]`` holds -1, 0 or +1 per weight (0 is the zeroing code) and
    ``exponents[k]`` the shift amount ``q`` (ignored where the sign is 0).
    """

    arch: MlpArchitecture
    fmt: FixedPointFormat
    signs: list[np.ndarray]
    exponents: list[np.ndarray]
    bias_raw: list[np.ndarray | None]
    flags: tuple[str, ...] = field(default=())

    def weights(self) -> list[np.ndarray]:
        return [np.where(s == 0, 0.0, s * np.ldexp(1.0, q)) for s, q in zip(self.signs, self.exponents)]

    def biases(self) -> list[np.ndarray | None]:
        return [None if b is None else decode_array(b, self.fmt) for b in self.bias_raw]

    def dequantize(self) -> MlpModel:
        params = np.empty(self.arch.n_params)
        for (ws, bs), W, b in zip(self.arch.slices(), self.weights(), self.biases()):
            params[ws] = W.ravel()
            if bs is not None:
                params[bs] = b
        return MlpModel(self.arch, params)


def quantized_from_reals(arch: MlpArchitecture, params, fmt: FixedPointFormat, flags=()) -> QuantizedMlpModel:
    """Lossless conversion of a codebook-valued flat vector into shift codes.

    Raises :class:`OffCodebookError` if any weight is not in the power-of-two
    codebook for ``fmt.total_bits`` or any bias is off the fixed-point grid.
    """
    params = np.asarray(params, dtype=np.float64)
    if params.shape != (arch.n_params,):
        raise ValueError(f"expected {arch.n_params} parameters, got {params.shape}")
    cb = build_weight_codebook(fmt.total_bits)
    bq = BiasQuantizer(fmt)
    signs, exps, braw = [], [], []
    for (ws, bs), (i, o) in zip(arch.slices(), arch.layer_shapes):
        w = params[ws]
        if not cb.contains_all(w):
            bad = w[~np.isin(w, cb.entries)][0]
            raise OffCodebookError(f"weight {bad!r} is not in the K={fmt.total_bits} codebook")
        s = np.sign(w).astype(np.int8)
        _, e = np.frexp(np.where(w == 0, 1.0, np.abs(w)))
        signs.append(s.reshape(i, o))
        exps.append((e - 1).astype(np.int64).reshape(i, o))
        if bs is None:
            braw.append(None)
        else:
            b = params[bs]
            if not bq.contains_all(b):
                raise OffCodebookError(f"biases are not on the {fmt} grid")
            braw.append(np.ldexp(b, fmt.frac_bits).astype(np.int64))
    return QuantizedMlpModel(arch, fmt, signs, exps, braw, tuple(flags))


def _product(x: FxpValue, sign: int, q: int, ctx) -> FxpValue:
    if sign == 0:
        return FxpValue(0, x.fmt)
    p = mul_pow2(x, q, ctx)
    return p if sign > 0 else FxpValue(-p.raw, p.fmt)


def forward_fixed(qm: QuantizedMlpModel, x_fxp, ctx: ArithmeticContext | None = None) -> list[FxpValue]:
    """Scalar fixed-point inference built only from the primitives in :mod:`fxpnn.fxp`.

    Each neuron sums its products left to right, then adds its bias. This is
    the reference datapath; :func:`forward_fixed_batch` must match it bit for bit.
    """
    if ctx is None:
        ctx = ArithmeticContext()
    fmt = qm.fmt
    x = list(x_fxp)
    if len(x) != qm.arch.input_dim:
        raise ValueError(f"input has {len(x)} features, model expects {qm.arch.input_dim}")
    for v in x:
        if v.fmt != fmt:
            raise ValueError(f"input format {v.fmt} differs from model format {fmt}")
    n_layers = len(qm.signs)
    for k in range(n_layers):
        S, Q, B = qm.signs[k], qm.exponents[k], qm.bias_raw[k]
        n_in, n_out = S.shape
        out = []
        for j in range(n_out):
            if ctx.accumulate == "saturate":
                acc = _product(x[0], int(S[0, j]), int(Q[0, j]), ctx)
                for i in range(1, n_in):
                    acc = add_sat(acc, _product(x[i], int(S[i, j]), int(Q[i, j]), ctx), ctx)
                if B is not None:
                    acc = add_sat(acc, FxpValue(int(B[j]), fmt), ctx)
            else:
                wide = _product(x[0], int(S[0, j]), int(Q[0, j]), ctx).raw
                for i in range(1, n_in):
                    wide += _product(x[i], int(S[i, j]), int(Q[i, j]), ctx).raw
                    ctx.additions += 1
                if B is not None:
                    wide += int(B[j])
                    ctx.additions += 1
                clamped = fmt.clamp(wide)
                if clamped != wide:
                    ctx.saturations += 1
                acc = FxpValue(clamped, fmt)
            out.append(acc)
        x = [relu(v) for v in out] if k < n_layers - 1 else out
    return x


def forward_fixed_batch(qm: QuantizedMlpModel, x_raw, ctx: ArithmeticContext | None = None) -> np.ndarray:
    """Batched fixed-point inference on a ``(batch, input_dim)`` raw integer array.

    Compiled counterpart of :func:`forward_fixed`; results and saturation
    counts match it exactly.
    """
    if ctx is None:
        ctx = ArithmeticContext()
    x = np.ascontiguousarray(np.atleast_2d(np.asarray(x_raw, dtype=np.int64)))
    if x.shape[1] != qm.arch.input_dim:
        raise ValueError(f"input has {x.shape[1]} features, model expects {qm.arch.input_dim}")
    n = x.shape[0]
    n_layers = len(qm.signs)
    for k in range(n_layers):
        S, Q, B = qm.signs[k], qm.exponents[k], qm.bias_raw[k]
        n_in, n_out = S.shape
        bias = np.zeros(n_out, dtype=np.int64) if B is None else np.asarray(B, dtype=np.int64)
        x, sat = dense_fixed(x, np.ascontiguousarray(S, dtype=np.int8), np.ascontiguousarray(Q, dtype=np.int64),
                             bias, B is not None, qm.fmt.max_raw, ctx.accumulate == "wide", k < n_layers - 1)
        ctx.saturations += int(sat)
        ctx.additions += n * n_out * ((n_in - 1) + (B is not None))
    return x


# Model files

def _format_float(v: float) -> str:
    return repr(float(v))


def write_model(model, path_or_stream) -> None:
    """Write a float or quantized model in the line-oriented ``fxpnn v1`` format."""
    lines = [FILE_MAGIC, "arch " + " ".join(str(s) for s in model.arch.sizes)]
    if isinstance(model, QuantizedMlpModel):
        lines.append(f"format {model.fmt.int_bits} {model.fmt.frac_bits}")
        if model.flags:
            lines.append("flags " + " ".join(model.flags))
        for k, (S, Q) in enumerate(zip(model.signs, model.exponents)):
            n_in, n_out = S.shape
            for r in range(n_in):
                for c in range(n_out):
                    s = int(S[r, c])
                    if s == 0:
                        lines.append(f"w {k} {r} {c} Z")
                    else:
                        lines.append(f"w {k} {r} {c} {'+' if s > 0 else '-'} {int(Q[r, c])}")
        for k, b in enumerate(model.bias_raw):
            if b is not None:
                lines.extend(f"b {k} {j} {int(v)}" for j, v in enumerate(b))
    else:
        lines.append("format float")
        for k, (W, b) in enumerate(model.layers()):
            n_in, n_out = W.shape
            for r in range(n_in):
                for c in range(n_out):
                    lines.append(f"wf {k} {r} {c} {_format_float(W[r, c])}")
            if b is not None:
                lines.extend(f"bf {k} {j} {_format_float(v)}" for j, v in enumerate(b))
    text = "\n".join(lines) + "\n"
    if isinstance(path_or_stream, (str, os.PathLike)):
        with open(path_or_stream, "w") as fh:
            fh.write(text)
    else:
        path_or_stream.write(text)


def read_model(path_or_stream):
    """Parse a model file; returns :class:`MlpModel` or :class:`QuantizedMlpModel`."""
    if isinstance(path_or_stream, (str, os.PathLike)):
        with open(path_or_stream) as fh:
            text = fh.read()
    else:
        text = path_or_stream.read()
    lines = [(n, ln.strip()) for n, ln in enumerate(io.StringIO(text), start=1)]
    lines = [(n, ln) for n, ln in lines if ln and not ln.startswith("#")]

    def fail(n, msg):
        raise ModelFileError(f"line {n}: {msg}")

    if len(lines) < 3 or lines[0][1] != FILE_MAGIC:
        fail(lines[0][0] if lines else 1, f"expected header {FILE_MAGIC!r}")
    n, arch_line = lines[1]
    parts = arch_line.split()
    if parts[0] != "arch" or len(parts) < 3:
        fail(n, "expected 'arch <sizes...>'")
    try:
        sizes = [int(p) for p in parts[1:]]
    except ValueError:
        fail(n, "non-integer layer size")
    arch = MlpArchitecture(sizes[0], tuple(sizes[1:-1]), sizes[-1])
    n, fmt_line = lines[2]
    parts = fmt_line.split()
    if parts[0] != "format":
        fail(n, "expected 'format'")
    body = lines[3:]
    flags: tuple[str, ...] = ()
    if body and body[0][1].startswith("flags"):
        flags = tuple(body[0][1].split()[1:])
        body = body[1:]
    shapes = arch.layer_shapes

    def index(n, k, r, c=None):
        if not 0 <= k < len(shapes):
            fail(n, f"layer {k} out of range")
        n_in, n_out = shapes[k]
        if c is None:
            if not arch.bias_flags[k] or not 0 <= r < n_out:
                fail(n, "bias index out of range")
        elif not (0 <= r < n_in and 0 <= c < n_out):
            fail(n, "weight index out of range")

    if parts[1:] == ["float"]:
        model = MlpModel.zeros(arch)
        seen = np.zeros(arch.n_params, dtype=bool)
        sl = arch.slices()
        for n, ln in body:
            f = ln.split()
            try:
                if f[0] == "wf" and len(f) == 5:
                    k, r, c = int(f[1]), int(f[2]), int(f[3])
                    index(n, k, r, c)
                    pos = sl[k][0].start + r * shapes[k][1] + c
                elif f[0] == "bf" and len(f) == 4:
                    k, j = int(f[1]), int(f[2])
                    index(n, k, j)
                    pos = sl[k][1].start + j
                else:
                    fail(n, f"unexpected record {f[0]!r}")
                model.params[pos] = float(f[-1])
            except ValueError as exc:
                if isinstance(exc, ModelFileError):
                    raise
                fail(n, f"malformed record: {exc}")
            seen[pos] = True
        if not seen.all():
            raise ModelFileError(f"{int((~seen).sum())} parameters missing")
        return model

    if len(parts) != 3:
        fail(n, "expected 'format KI KF' or 'format float'")
    try:
        fmt = FixedPointFormat(int(parts[1]), int(parts[2]))
    except ValueError as exc:
        fail(n, f"bad format: {exc}")
    signs = [np.zeros(s, dtype=np.int8) for s in shapes]
    exps = [np.zeros(s, dtype=np.int64) for s in shapes]
    braw = [np.zeros(o, dtype=np.int64) if b else None for (_, o), b in zip(shapes, arch.bias_flags)]
    seen_w = [np.zeros(s, dtype=bool) for s in shapes]
    seen_b = [np.zeros(o, dtype=bool) if b else None for (_, o), b in zip(shapes, arch.bias_flags)]
    qmax = fmt.total_bits - 2
    for n, ln in body:
        f = ln.split()
        try:
            if f[0] == "w" and len(f) in (5, 6):
                k, r, c = int(f[1]), int(f[2]), int(f[3])
                index(n, k, r, c)
                if len(f) == 5:
                    if f[4] != "Z":
                        fail(n, "expected Z or '<sign> <q>'")
                    signs[k][r, c] = 0
                else:
                    if f[4] not in "+-":
                        fail(n, f"bad sign {f[4]!r}")
                    q = int(f[5])
                    if abs(q) > qmax:
                        fail(n, f"exponent {q} outside codebook |q| <= {qmax}")
                    signs[k][r, c] = 1 if f[4] == "+" else -1
                    exps[k][r, c] = q
                seen_w[k][r, c] = True
            elif f[0] == "b" and len(f) == 4:
                k, j = int(f[1]), int(f[2])
                index(n, k, j)
                raw = int(f[3])
                if abs(raw) > fmt.max_raw:
                    fail(n, f"bias raw {raw} outside {fmt}")
                braw[k][j] = raw
                seen_b[k][j] = True
            else:
                fail(n, f"unexpected record {f[0]!r}")
        except ValueError as exc:
            if isinstance(exc, ModelFileError):
                raise
            fail(n, f"malformed record: {exc}")
    missing = sum(int((~s).sum()) for s in seen_w) + sum(int((~s).sum()) for s in seen_b if s is not None)
    if missing:
        raise ModelFileError(f"{missing} parameters missing")
    return QuantizedMlpModel(arch, fmt, signs, exps, braw, flags)
