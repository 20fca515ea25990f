"""Command-line entry point: ``georope {encode,train,eval,check,bench}``.

Exit codes: 0 success, 1 invalid input or failed check, 2 internal error.
"""

from __future__ import annotations

import argparse
import io
import logging
import sys
from dataclasses import replace
from typing import Optional, Sequence

import numpy as np

from . import bench as bench_mod
from . import checks
from .attention import EncoderKind, GeoTransformer, ModelConfig, ModelError
from .baselines import BaselineError, RopeVariant, rope_rotate, rope_schedule, sinusoidal_table
from .fileio import (
    FormatError,
    RunConfig,
    TaskConfig,
    atomic_write_text,
    config_schema_text,
    format_geotokens_csv,
    load_checkpoint,
    load_config,
    load_geotokens,
    save_checkpoint,
)
from .geo import GeoError
from .spherical import EncodingConfig, EncodingError, PadPolicy, apply_blockwise, build_encoding
from .tasks import (
    TaskError,
    TrainConfig,
    TrainingError,
    chance_band,
    dataset_loss,
    evaluate,
    gen_nearest_neighbor_task,
    gen_proximity_task,
    run_ablation,
    train,
)

log = logging.getLogger("georope")

VALIDATION_ERRORS = (FormatError, GeoError, EncodingError, ModelError, BaselineError, TaskError, TrainingError, OSError)


class CheckFailed(Exception):
    pass


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        atomic_write_text(out, text)
    else:
        sys.stdout.write(text)


# -- encode ----------------------------------------------------------------------


def encode_tokens(tokens, encoder: str, mode: str, pad: bool, base: float, rope_variant: str) -> list[np.ndarray]:
    """Position-encoded feature vectors, one per geotoken.

    Sinusoidal and rope use the row index as the position; spherical uses the
    geotoken's coordinates.
    """
    if not tokens:
        return []
    d = tokens[0].dim
    feats = np.stack([t.features for t in tokens])
    kind = EncoderKind(encoder)
    if kind is EncoderKind.SPHERICAL:
        cfg = EncodingConfig(d, mode, base, PadPolicy.ZERO if pad else PadPolicy.REJECT)
        return [apply_blockwise(build_encoding(t.position, cfg), t.features) for t in tokens]
    if kind is EncoderKind.SINUSOIDAL:
        return list(feats + sinusoidal_table(len(tokens), d, base).values)
    if kind is EncoderKind.ROPE:
        sched = rope_schedule(d, RopeVariant(rope_variant), base)
        return [rope_rotate(f, m, sched) for m, f in enumerate(feats)]
    return list(feats)


def cmd_encode(args) -> int:
    tokens = load_geotokens(args.input)
    if tokens:
        d = tokens[0].dim
        for t in tokens:
            t.check_dim(d)
        if args.dim is not None and args.dim != d:
            raise FormatError(f"--dim {args.dim} does not match the file's {d} feature columns")
    encoded = encode_tokens(tokens, args.encoder, args.mode, args.pad, args.base, args.rope_variant)
    _emit(format_geotokens_csv(tokens, encoded), args.out)
    return 0


# -- train / eval --------------------------------------------------------------------


def _run_config(args) -> RunConfig:
    rc = load_config(args.config) if args.config else RunConfig(ModelConfig(), TrainConfig(), TaskConfig())
    model_over = {}
    if args.encoder is not None:
        model_over["encoder"] = args.encoder
    if args.mode is not None:
        model_over["mode"] = args.mode
    if args.dim is not None:
        model_over["dim"] = args.dim
    if args.pad:
        model_over["pad"] = True
    model = replace(rc.model, **model_over)
    train_cfg = rc.train
    if args.seed is not None:
        model = replace(model, seed=args.seed)
        train_cfg = replace(train_cfg, seed=args.seed)
    return RunConfig(model, train_cfg, rc.task)


def _task_data(rc: RunConfig, n: int, seed: int):
    t = rc.task
    if t.kind == "proximity":
        return gen_proximity_task(t.n_tokens, n, seed, rc.train.tau, dim=rc.model.dim)
    return gen_nearest_neighbor_task(t.n_tokens, n, seed, dim=rc.model.dim)


def cmd_train(args) -> int:
    if args.print_config_schema:
        sys.stdout.write(config_schema_text())
        return 0
    if not args.out:
        raise FormatError("train needs --out <checkpoint path>")
    rc = _run_config(args)
    data = _task_data(rc, rc.task.n_train, rc.train.seed)
    model = GeoTransformer(rc.model)
    start = dataset_loss(model, data)
    _, losses = train(model, data, rc.train)
    save_checkpoint(args.out, model)
    end = dataset_loss(model, data)
    if args.loss_csv:
        atomic_write_text(args.loss_csv, "step,loss\n" + "".join(f"{i},{v!r}\n" for i, v in enumerate(losses)))
    print(f"trained {rc.model.encoder.value} model for {rc.train.steps} steps: loss {start:.4f} -> {end:.4f}")
    print(f"checkpoint written to {args.out}")
    return 0


def cmd_eval(args) -> int:
    if args.print_config_schema:
        sys.stdout.write(config_schema_text())
        return 0
    rc = _run_config(args)
    if args.ablation:
        return _eval_ablation(args, rc)
    if not args.checkpoint:
        raise FormatError("eval needs --checkpoint <path> (or --ablation)")
    model = load_checkpoint(args.checkpoint)
    if model.config.dim != rc.model.dim:
        rc = replace(rc, model=replace(rc.model, dim=model.config.dim))
    held_out = _task_data(rc, rc.task.n_eval, rc.train.seed + 10_000)
    report = evaluate(model, held_out)
    lo, hi = chance_band(rc.task.n_tokens, rc.task.n_eval)
    rho = "n/a" if report.spearman is None else f"{report.spearman:.4f}"
    print(f"instances: {report.n_instances}")
    print(f"retrieval accuracy: {report.accuracy:.4f} (chance band {lo:.4f}..{hi:.4f})")
    print(f"spearman(logit, -distance): {rho}")
    return 0


def _eval_ablation(args, rc: RunConfig) -> int:
    base = rc.model
    configs = {
        "none": replace(base, encoder=EncoderKind.NONE),
        "spherical-uniform": replace(base, encoder=EncoderKind.SPHERICAL, mode="uniform"),
        "spherical-multifreq": replace(base, encoder=EncoderKind.SPHERICAL, mode="multifreq"),
    }
    t = rc.task
    sweeps = run_ablation(configs, t.seeds, rc.train, t.n_tokens, t.n_train, t.n_eval)
    buf = io.StringIO()
    buf.write("encoder,seed,accuracy,spearman\n")
    for label, sw in sweeps.items():
        for s, r in zip(sw.seeds, sw.reports):
            buf.write(f"{label},{s},{r.accuracy!r},{'' if r.spearman is None else repr(r.spearman)}\n")
    if args.out:
        atomic_write_text(args.out, buf.getvalue())
    lo, hi = chance_band(t.n_tokens, t.n_eval)
    print(f"nearest-neighbour retrieval, {t.n_tokens} tokens, {t.n_train}/{t.n_eval} instances, seeds {list(t.seeds)}")
    print(f"chance band 1/{t.n_tokens} +/- 3 sd: {lo:.4f}..{hi:.4f}")
    for label, sw in sweeps.items():
        rho = sw.median_spearman
        accs = " ".join(f"{a:.3f}" for a in sw.accuracies)
        print(f"{label:<22} median acc {sw.median_accuracy:.4f}  median spearman {rho if rho is None else round(rho, 4)}  [{accs}]")
    return 0


# -- check / bench ----------------------------------------------------------------------


def cmd_check(args) -> int:
    results = checks.run_checks(args.seed or 0)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name}: {r.detail}")
    print()
    print(checks.format_orthogonality_table())
    if args.paper_fidelity:
        print()
        print(checks.format_fidelity_report())
    failed = [r.name for r in results if not r.passed]
    if failed:
        raise CheckFailed(f"{len(failed)} check(s) failed: {', '.join(failed)}")
    return 0


def _parse_dims(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise FormatError(f"--dims must be a comma-separated list of integers, got {text!r}") from None


def cmd_bench(args) -> int:
    dims = _parse_dims(args.dims)
    try:
        result = bench_mod.run_bench(dims, reps=args.reps, batch=args.batch, seed=args.seed or 0)
    except ValueError as exc:
        raise FormatError(str(exc)) from None
    if args.out:
        atomic_write_text(args.out, result.to_csv())
    else:
        sys.stdout.write(result.to_csv())
    print(result.summary(), file=sys.stderr if not args.out else sys.stdout)
    return 0


# -- parser --------------------------------------------------------------------------------


def _add_encoder_flags(p, defaults: bool) -> None:
    p.add_argument("--encoder", choices=[k.value for k in EncoderKind], default="spherical" if defaults else None)
    p.add_argument("--mode", choices=["uniform", "multifreq", "as-printed"], default="uniform" if defaults else None)
    p.add_argument("--dim", type=int, default=None, help="expected / model dimension")
    p.add_argument("--pad", action="store_true", help="zero-pad dims that are not a multiple of 3")
    p.add_argument("--seed", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="georope", description="Spherical rotary position encoding for geotokens.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("encode", help="rotate/offset geotoken features by position")
    p.add_argument("input", help="geotoken CSV or GeoJSON file")
    _add_encoder_flags(p, defaults=True)
    p.add_argument("--base", type=float, default=10000.0)
    p.add_argument("--rope-variant", choices=[v.value for v in RopeVariant], default="printed")
    p.add_argument("--out", help="output CSV (default: stdout)")
    p.set_defaults(func=cmd_encode)

    for name, func, helptext in (("train", cmd_train, "train on a synthetic task"), ("eval", cmd_eval, "evaluate")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", help="run configuration file (see --print-config-schema)")
        p.add_argument("--print-config-schema", action="store_true")
        _add_encoder_flags(p, defaults=False)
        p.add_argument("--out", help="checkpoint (train) or per-seed CSV (eval --ablation)")
        p.set_defaults(func=func)
        if name == "train":
            p.add_argument("--loss-csv", help="write the per-step loss curve here")
        else:
            p.add_argument("--checkpoint")
            p.add_argument("--ablation", action="store_true", help="encoder ablation over the configured seeds")

    p = sub.add_parser("check", help="run the invariant suite")
    p.add_argument("--paper-fidelity", action="store_true", help="also print the printed-formula fidelity report")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("bench", help="dense vs blockwise scaling benchmark")
    p.add_argument("--dims", default=",".join(str(d) for d in bench_mod.DEFAULT_DIMS))
    p.add_argument("--reps", type=int, default=30)
    p.add_argument("--batch", type=int, default=256, help="vectors rotated per apply call")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="CSV output path (default: stdout)")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors; those are validation failures here
        return 0 if exc.code == 0 else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except CheckFailed as exc:
        print(f"georope: {exc}", file=sys.stderr)
        return 1
    except VALIDATION_ERRORS as exc:
        print(f"georope: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        log.debug("internal error", exc_info=True)
        print(f"georope: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


cli_dispatch = main

if __name__ == "__main__":
    sys.exit(main())
