"""Command-line front end: ``train``, ``quantize``, ``eval`` and ``complexity``.

Option values come from command-line flags, then from an optional
``--config`` file of ``key=value`` lines (keys are flag names without the
leading dashes), then from built-in defaults. Exit codes: 0 success,
1 runtime failure, 2 usage error, 3 training divergence.
"""

from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from .comm import DEFAULT_SIGMA2, build_constellation, load_constellation
from .evaluation import (
    FixedNnReceiver,
    FloatNnReceiver,
    MlReceiver,
    bler_csv,
    complexity_csv,
    complexity_table,
    estimate_bler,
)
from .fxp import FixedPointFormat
from .codebook import build_weight_codebook
from .lc import LcSchedule, TrainingData, TrainingDivergedError, dc_quantize, lc_train, pretrain
from .nn import MlpArchitecture, MlpModel, ModelFileError, OffCodebookError, QuantizedMlpModel, read_model, write_model

EXIT_RUNTIME = 1
EXIT_USAGE = 2
EXIT_DIVERGED = 3

RECEIVERS = ("ml", "nn-float", "nn-fixed", "dc-float", "dc-fixed")


class UsageError(Exception):
    pass


def read_config(path: str) -> dict[str, str]:
    out = {}
    with open(path) as fh:
        for n, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{n}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            out[key.replace("-", "_")] = value
    return out


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="key=value file with option defaults")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output path (standard output if omitted, where allowed)")
    p.add_argument("--constellation", help="point file replacing the built-in E8 constellation")
    p.add_argument("-v", "--verbose", action="store_true")


def _add_format(p):
    p.add_argument("--ki", type=int, default=5)
    p.add_argument("--kf", type=int, default=8)


def _add_schedule(p):
    d = LcSchedule()
    p.add_argument("--lr", type=float, default=d.lr)
    p.add_argument("--batch-size", type=int, default=d.batch_size)
    p.add_argument("--train-snr", type=float, default=d.train_snr_db)
    p.add_argument("--mu0", type=float, default=d.mu0)
    p.add_argument("--a", type=float, default=d.a)
    p.add_argument("--max-iters", type=int, default=d.max_iters)
    p.add_argument("--learn-steps", type=int, default=d.learn_steps)
    p.add_argument("--stop-tol", type=float, default=None, help="default 1e-3 * sqrt(P)")


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(prog="fxpnn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    subs = {}

    p = subs["train"] = sub.add_parser("train", help="unconstrained training of the float receiver")
    _add_common(p)
    _add_schedule(p)
    p.add_argument("--steps", type=int, default=LcSchedule().pretrain_steps)

    p = subs["quantize"] = sub.add_parser("quantize", help="quantise a float model with LC or DC")
    _add_common(p)
    _add_format(p)
    _add_schedule(p)
    p.add_argument("--model", help="float model file")
    p.add_argument("--method", choices=("lc", "dc"), default="lc")
    p.add_argument("--trace", help="write the LC trace CSV here")

    p = subs["eval"] = sub.add_parser("eval", help="Monte-Carlo BLER over an SNR grid")
    _add_common(p)
    _add_format(p)
    p.add_argument("--model")
    p.add_argument("--receiver", choices=RECEIVERS, default="ml")
    p.add_argument("--snr-start", type=float, default=-2.0)
    p.add_argument("--snr-stop", type=float, default=11.0)
    p.add_argument("--snr-step", type=float, default=1.0)
    p.add_argument("--blocks", type=int, default=100_000)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--accumulate", choices=("saturate", "wide"), default="saturate")

    p = subs["complexity"] = sub.add_parser("complexity", help="addition counts of the ML and NN receivers")
    p.add_argument("--config")
    p.add_argument("--k", type=int, default=14)
    p.add_argument("--out")
    return parser, subs


def parse_args(argv) -> argparse.Namespace:
    parser, subs = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        cfg = read_config(args.config)
        sub = subs[args.command]
        actions = {a.dest: a for a in sub._actions}
        unknown = set(cfg) - set(actions) - {"config"}
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
        for key, value in cfg.items():
            choices = actions[key].choices
            if choices and value not in choices:
                raise UsageError(f"config {key}: invalid choice {value!r}")
        # string defaults go through each option's type conversion
        sub.set_defaults(**cfg)
        args = parser.parse_args(argv)
    return args


def _format(args) -> FixedPointFormat:
    if args.ki < 0 or args.kf < 0 or args.ki + args.kf + 1 < 3:
        raise UsageError("need ki >= 0, kf >= 0 and ki + kf + 1 >= 3")
    return FixedPointFormat(args.ki, args.kf)


def _constellation(args):
    return load_constellation(args.constellation) if args.constellation else build_constellation()


def _schedule(args, pretrain_steps=0) -> LcSchedule:
    return LcSchedule(mu0=args.mu0, a=args.a, max_iters=args.max_iters, stop_tol=args.stop_tol,
                      learn_steps=args.learn_steps, lr=args.lr, batch_size=args.batch_size,
                      train_snr_db=args.train_snr, pretrain_steps=pretrain_steps, seed=args.seed)


def _emit(text: str, out: str | None):
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def cmd_train(args) -> int:
    if not args.out:
        raise UsageError("train needs --out")
    if args.steps < 1:
        raise UsageError("--steps must be positive")
    c = _constellation(args)
    arch = MlpArchitecture.receiver(c.n_messages, c.n_channel_uses)
    sched = _schedule(args, pretrain_steps=args.steps)
    model = MlpModel.glorot(arch, np.random.default_rng([args.seed, 1]))
    data = TrainingData(c, sched.train_snr_db, sched.batch_size, np.random.default_rng([args.seed, 2]))
    model, loss = pretrain(model, sched, data)
    write_model(model, args.out)
    print(f"final training loss {loss:.6f}")
    return 0


def _load(path, kind=None):
    if not path:
        raise UsageError("--model is required")
    try:
        model = read_model(path)
    except FileNotFoundError:
        raise UsageError(f"no such model file: {path}") from None
    if kind is not None and not isinstance(model, kind):
        raise UsageError(f"{path} is not a {'float' if kind is MlpModel else 'quantized'} model")
    return model


def cmd_quantize(args) -> int:
    if not args.out:
        raise UsageError("quantize needs --out")
    fmt = _format(args)
    model = _load(args.model)
    if isinstance(model, QuantizedMlpModel):
        if model.fmt != fmt:
            raise UsageError(f"model is already quantized for {model.fmt}")
        model = model.dequantize()
    cb = build_weight_codebook(fmt.total_bits)
    print(f"format {fmt.int_bits} {fmt.frac_bits}, weight codebook size {len(cb)}")
    if args.method == "dc":
        qm = dc_quantize(model, fmt)
    else:
        c = _constellation(args)
        sched = _schedule(args)
        data = TrainingData(c, sched.train_snr_db, sched.batch_size, np.random.default_rng([args.seed, 3]))
        qm, trace, _ = lc_train(model, sched, data, fmt)
        if args.trace:
            with open(args.trace, "w") as fh:
                fh.write(trace.to_csv())
        first, last = trace.rows[0], trace.rows[-1]
        print(f"LC {len(trace.rows)} iterations, gap {first[2]:.4g} -> {last[2]:.4g}, "
              f"{'converged' if trace.converged else 'NOT converged'}")
    write_model(qm, args.out)
    return 0


def _snr_grid(args):
    if args.snr_step <= 0 or args.snr_stop < args.snr_start:
        raise UsageError("empty SNR grid")
    n = int(np.floor((args.snr_stop - args.snr_start) / args.snr_step + 1e-9)) + 1
    return [round(args.snr_start + i * args.snr_step, 10) for i in range(n)]


def cmd_eval(args) -> int:
    if args.blocks < 1:
        raise UsageError("--blocks must be positive")
    if args.workers < 1:
        raise UsageError("--workers must be positive")
    c = _constellation(args)
    snrs = _snr_grid(args)
    kind = args.receiver
    if kind == "ml":
        rx = MlReceiver(c)
    elif kind == "nn-float":
        rx = FloatNnReceiver(_load(args.model), tag=kind)
    elif kind == "nn-fixed":
        model = _load(args.model)
        if not isinstance(model, QuantizedMlpModel):
            raise UsageError("fixed-point evaluation needs a quantized model")
        rx = FixedNnReceiver(model, tag=kind, accumulate=args.accumulate)
    else:
        qm = dc_quantize(_load(args.model, MlpModel), _format(args))
        rx = FloatNnReceiver(qm, tag=kind) if kind == "dc-float" else FixedNnReceiver(qm, kind, args.accumulate)
    points = estimate_bler(rx, snrs, args.blocks, seed=args.seed, constellation=c, sigma2=DEFAULT_SIGMA2,
                           workers=args.workers)
    _emit(bler_csv(points), args.out)
    if isinstance(rx, FixedNnReceiver):
        print(f"saturation events: {sum(p.saturations for p in points)}", file=sys.stderr)
    return 0


def cmd_complexity(args) -> int:
    if args.k < 3:
        raise UsageError("--k must be at least 3")
    _emit(complexity_csv(complexity_table(args.k)), args.out)
    return 0


COMMANDS = {"train": cmd_train, "quantize": cmd_quantize, "eval": cmd_eval, "complexity": cmd_complexity}


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except UsageError as exc:
        print(f"fxpnn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # argparse
        return EXIT_USAGE if exc.code else 0
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"fxpnn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDivergedError as exc:
        print(f"fxpnn: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ModelFileError, OffCodebookError, ValueError, OSError) as exc:
        print(f"fxpnn: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
