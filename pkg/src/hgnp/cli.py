"""Command-line entry point: ``hgnp train|eval|report|sensitivity``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from pathlib import Path

import numpy as np
from scipy.stats import spearmanr
from threadpoolctl import threadpool_limits

from . import checkpoint
from .analysis import CurvePoint, auc, curve_from_metrics, hybrid_curve
from .config import ConfigFile, dump_config, load_config, load_data
from .data import DataError, Dataset, load_csv, load_idx
from .network import init_network
from .sensitivity import exact_scores, normalize_per_layer, taylor_scores
from .trainer import ConfigError, DivergenceError, evaluate, hgnp_run, read_metrics, write_csv

log = logging.getLogger("hgnp")

EXIT_OK, EXIT_ERROR, EXIT_DIVERGED = 0, 1, 2


def _fail(msg: str, code: int = EXIT_ERROR) -> int:
    print(f"hgnp: error: {msg}", file=sys.stderr)
    return code


def _input_shape(cfg: ConfigFile, train: Dataset) -> tuple[int, ...]:
    shape = cfg.input_shape or tuple(train.inputs.shape[1:])
    if tuple(train.inputs.shape[1:]) != tuple(shape):
        raise ConfigError("input_shape", f"{shape} does not match data shape {train.inputs.shape[1:]}")
    return tuple(shape)


def cmd_train(args) -> int:
    try:
        cfg = load_config(args.config)
        if args.seed_override is not None:
            cfg.train.seed = args.seed_override
        train, val = load_data(cfg)
        shape = _input_shape(cfg, train)
        try:
            net = init_network(cfg.layers, cfg.train.seed, shape)
        except ValueError as exc:
            raise ConfigError("layers", str(exc)) from None
    except ConfigError as exc:
        return _fail(f"config error: {exc}")

    out = Path(args.out) if args.out else Path(cfg.output)
    if not out.is_absolute() and not args.out:
        out = cfg.base_dir / out
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.echo").write_text(dump_config(cfg))

    start = time.perf_counter()
    try:
        result = hgnp_run(net, train, val, cfg.train, out)
    except DivergenceError as exc:
        return _fail(f"run diverged: {exc}", EXIT_DIVERGED)
    wall = time.perf_counter() - start

    final = result.metrics[-1] if result.metrics else None
    acc, loss = evaluate(result.net, val, cfg.train.loss_kind)
    lines = [
        f"epochs {len(result.metrics)}",
        f"prune_events {result.prune_events}",
        f"infeasible {int(result.infeasible)}",
        f"kappa {final.kappa if final else 1.0!r}",
        f"accuracy {acc!r}",
        f"loss {loss!r}",
        f"rho {final.rho if final else float('nan')!r}",
        f"checkpoint {result.checkpoints[-1].name if result.checkpoints else ''}",
        f"wall_seconds {wall:.3f}",
    ]
    (out / "run_summary.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return EXIT_OK


def _eval_data(args) -> Dataset:
    if args.config:
        cfg = load_config(args.config)
        return load_data(cfg)[1]
    if args.data_images and args.data_labels:
        return load_idx(args.data_images, args.data_labels, args.data_classes, "validation")
    if args.data_csv:
        if args.data_features is None:
            raise ConfigError("data-features", "required with --data-csv")
        return load_csv(args.data_csv, args.data_features, args.data_classes, "validation")
    raise ConfigError("data", "give --config, --data-images/--data-labels or --data-csv")


def cmd_eval(args) -> int:
    try:
        net = checkpoint.load(args.checkpoint)
    except checkpoint.CheckpointError as exc:
        return _fail(f"checkpoint: {exc}")
    except OSError as exc:
        return _fail(f"cannot read {args.checkpoint}: {exc.strerror}")
    try:
        ds = _eval_data(args)
    except (ConfigError, DataError, OSError) as exc:
        return _fail(str(exc))
    if tuple(ds.inputs.shape[1:]) != net.input_shape:
        return _fail(f"data shape {ds.inputs.shape[1:]} does not match network input {net.input_shape}")
    acc, loss = evaluate(net, ds, args.loss)
    print(f"accuracy {acc!r} loss {loss!r} samples {len(ds)}")
    return EXIT_OK


def cmd_report(args) -> int:
    out = Path(args.out)
    curves: list[tuple[str, list[CurvePoint]]] = []
    try:
        for path in args.metrics:
            curves.append((path, curve_from_metrics(read_metrics(path))))
    except OSError as exc:
        return _fail(f"cannot read {exc.filename}: {exc.strerror}")
    except ValueError as exc:
        return _fail(str(exc))
    if len(curves) > 2:
        return _fail("report takes one or two metrics files (baseline first, then HGNP)")
    if len(curves) == 2 and args.threshold is None:
        return _fail("two metrics files need --threshold")

    rows = []
    try:
        for path, curve in curves:
            rows.append({"curve": path, "points": len(curve), "auc": auc(curve)})
        hybrid = None
        if len(curves) == 2:
            hybrid = hybrid_curve(curves[0][1], curves[1][1], args.threshold)
            rows.append({"curve": f"hybrid@{args.threshold!r}", "points": len(hybrid), "auc": auc(hybrid)})
    except ValueError as exc:
        return _fail(str(exc))

    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "auc_report.csv", ("curve", "points", "auc"), rows)
    if hybrid is not None:
        hrows = [
            {"kappa": p.kappa, "accuracy": p.accuracy, "source": "baseline" if p.kappa > args.threshold else "hgnp"}
            for p in hybrid
        ]
        write_csv(out / "hybrid_curve.csv", ("kappa", "accuracy", "source"), hrows)
    for r in rows:
        print(f"{r['curve']}: auc {r['auc']:.6f} over {r['points']} points")
    return EXIT_OK


def cmd_sensitivity(args) -> int:
    try:
        net = checkpoint.load(args.checkpoint)
    except checkpoint.CheckpointError as exc:
        return _fail(f"checkpoint: {exc}")
    except OSError as exc:
        return _fail(f"cannot read {args.checkpoint}: {exc.strerror}")
    try:
        cfg = load_config(args.config)
        train, _ = load_data(cfg)
    except ConfigError as exc:
        return _fail(f"config error: {exc}")
    run = cfg.train
    rng = np.random.default_rng(run.seed)
    idx = rng.choice(len(train), size=min(args.batch, len(train)), replace=False)
    x, y = train.inputs[idx], train.labels[idx]
    taylor = normalize_per_layer(taylor_scores(net, x, y, run.loss_kind, run.prune_mu, run.bound, run.eig_tol))
    exact = normalize_per_layer(exact_scores(net, x, y, run.loss_kind, run.prune_mu, run.bound, run.eig_tol))
    rows = []
    for (l, j, t, tn), (_, _, e, en) in zip(taylor.entries(), exact.entries()):
        rows.append({"layer": l, "neuron": j, "taylor": t, "exact": e, "taylor_normalized": tn, "exact_normalized": en})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "sensitivity_compare.csv", ("layer", "neuron", "taylor", "exact", "taylor_normalized", "exact_normalized"), rows)
    if len(rows) > 1:
        rho = spearmanr([r["taylor"] for r in rows], [r["exact"] for r in rows]).statistic
        print(f"spearman {float(rho):.6f} over {len(rows)} neurons")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hgnp", description="Neuron pruning with a curvature penalty.")
    p.add_argument("--threads", type=int, default=None, help="cap BLAS threads")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="run the train/prune schedule")
    t.add_argument("--config", required=True)
    t.add_argument("--out", help="output directory (overrides [output] dir)")
    t.add_argument("--seed-override", type=int)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="accuracy and loss of a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--config", help="evaluate on this config's validation split")
    e.add_argument("--data-images")
    e.add_argument("--data-labels")
    e.add_argument("--data-csv")
    e.add_argument("--data-features", type=int)
    e.add_argument("--data-classes", type=int)
    e.add_argument("--loss", default="cross_entropy")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("report", help="AUC of sparsity/accuracy curves and the hybrid splice")
    r.add_argument("--metrics", action="append", required=True, help="metrics.csv; baseline first")
    r.add_argument("--threshold", type=float)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_report)

    s = sub.add_parser("sensitivity", help="Taylor vs exact neuron scores for a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--config", required=True)
    s.add_argument("--batch", type=int, default=64)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sensitivity)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.threads is not None:
        with threadpool_limits(limits=args.threads):
            return args.func(args)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
