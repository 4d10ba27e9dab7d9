"""Command-line interface.

Exit codes: 0 success, 1 user error (bad arguments, malformed inputs),
2 runtime failure (divergence, unexpected errors). Set DEMUL_THREADS to pin
the BLAS thread count before numpy loads (single-threaded runs are
bit-reproducible).
"""

from __future__ import annotations

import os


def _setup_threads() -> None:
    n = os.environ.get("DEMUL_THREADS")
    if n:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
            os.environ.setdefault(var, n)


_setup_threads()

import argparse
import logging
import sys
from dataclasses import fields
from pathlib import Path

from . import io as dio
from .config import ConfigError, load_config, param_space_from_dict, parse_grid
from .harness import (
    ExperimentConfig,
    TrainingDiverged,
    ablate,
    compare_radon,
    evaluate_checkpoint,
    train,
)
from .introspect import export_report
from .metrics import METRIC_NAMES
from .nn import Objective
from .radon import RadonConfig, radon_demultiple
from .synthgen import Gather, GatherGeometry, GeneratorError, ParamSpace, make_dataset
from .unet import UNetConfig, infer_demultiple, parse_schedule

logger = logging.getLogger(__name__)

_USER_ERRORS = (ConfigError, GeneratorError, dio.FormatError, ValueError,
                FileNotFoundError, IsADirectoryError)


def experiment_from_dict(values: dict) -> ExperimentConfig:
    """Build an ExperimentConfig from flat config-file values."""
    values = dict(values)
    unet_kwargs = {}
    if "n_blocks" in values:
        unet_kwargs["n_blocks"] = int(values.pop("n_blocks"))
    if "base_channels" in values:
        unet_kwargs["base_channels"] = int(values.pop("base_channels"))
    if "kernel_schedule" in values:
        unet_kwargs["kernel_schedule"] = parse_schedule(str(values.pop("kernel_schedule")))
    if "down_mode" in values:
        unet_kwargs["down_mode"] = str(values.pop("down_mode"))
    if "up_mode" in values:
        unet_kwargs["up_mode"] = str(values.pop("up_mode"))
    if "objective" in values:
        unet_kwargs["objective"] = Objective(str(values.pop("objective")))
    cfg = ExperimentConfig(unet=UNetConfig(**unet_kwargs))
    if "seeds" in values:
        raw = values.pop("seeds")
        seeds = tuple(int(s) for s in str(raw).split()) if isinstance(raw, str) else (int(raw),)
        cfg.seeds = seeds
    known = {f.name for f in fields(ExperimentConfig)}
    for key, val in values.items():
        if key not in known:
            raise ConfigError(f"unknown experiment key {key!r}")
        setattr(cfg, key, val)
    cfg.out_dir = Path(cfg.out_dir)
    return cfg


def _radon_config(args) -> RadonConfig:
    cfg = RadonConfig()
    for attr, opt in (("n_q", "n_q"), ("q_lo", "q_lo"), ("q_hi", "q_hi"),
                      ("damping", "damping"), ("cg_max_iter", "iters"),
                      ("q_mute", "q_mute"), ("mute_margin", "mute_margin")):
        val = getattr(args, opt, None)
        if val is not None:
            setattr(cfg, attr, val)
    cfg.validate()
    return cfg


def _add_radon_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--n-q", dest="n_q", type=int)
    p.add_argument("--q-lo", dest="q_lo", type=float)
    p.add_argument("--q-hi", dest="q_hi", type=float)
    p.add_argument("--damping", type=float)
    p.add_argument("--iters", type=int)
    p.add_argument("--q-mute", dest="q_mute", type=float)
    p.add_argument("--mute-margin", dest="mute_margin", type=float)


def _load_gathers(path: Path, traces_per_gather, limit):
    if path.suffix.lower() in (".segy", ".sgy"):
        if traces_per_gather is None:
            raise ConfigError("--traces-per-gather is required for SEG-Y input")
        gathers = dio.read_segy_gathers(path, traces_per_gather)
        truths = None
    else:
        pairs, _ = dio.read_dataset(path)
        gathers = [p.x for p in pairs]
        truths = [p.y for p in pairs]
    if limit is not None:
        gathers = gathers[:limit]
        truths = truths[:limit] if truths else None
    return gathers, truths


def cmd_generate(args) -> int:
    space = ParamSpace()
    if args.space:
        space = param_space_from_dict(load_config(args.space))
    geometry = GatherGeometry(n_traces=args.traces, n_samples=args.samples, dt=args.dt)
    make_dataset(space, geometry, args.n, args.seed, args.out)
    print(f"wrote {args.n} pairs to {args.out}")
    if args.preview:
        out = Path(args.preview)
        out.mkdir(parents=True, exist_ok=True)
        pairs, _ = dio.read_dataset(args.out)
        for i, pair in enumerate(pairs[:8]):
            dio.write_pgm(pair.x.data, out / f"gather{i:02d}_with_multiples.pgm")
            dio.write_pgm(pair.y.data, out / f"gather{i:02d}_multiple_free.pgm")
        print(f"preview panel ({min(len(pairs), 8)} gather pairs) in {out}")
    return 0


def cmd_train(args) -> int:
    values = load_config(args.config) if args.config else {}
    cfg = experiment_from_dict(values)
    for opt in ("epochs", "batch_size", "optimizer", "momentum", "val_fraction"):
        val = getattr(args, opt)
        if val is not None:
            setattr(cfg, opt, val)
    if args.lr is not None:
        cfg.learning_rate = args.lr
    if args.objective:
        cfg.unet.objective = Objective(args.objective)
    if args.n_blocks is not None:
        cfg.unet.n_blocks = args.n_blocks
    if args.base_channels is not None:
        cfg.unet.base_channels = args.base_channels
    if args.schedule:
        cfg.unet.kernel_schedule = parse_schedule(args.schedule)
    if args.down:
        cfg.unet.down_mode = args.down
    if args.up:
        cfg.unet.up_mode = args.up
    cfg.out_dir = Path(args.out)
    report = train(cfg, args.dataset, seed=args.seed)
    final = report.final
    print(f"seed {args.seed}: " + " ".join(f"{k}={final[k]:.4g}" for k in METRIC_NAMES))
    print(f"checkpoint: {report.checkpoint_path}")
    print(f"metrics:    {report.csv_path}")
    return 0


def cmd_eval(args) -> int:
    report = evaluate_checkpoint(args.ckpt, args.dataset)
    for name in METRIC_NAMES:
        mean, std = report.row(name)
        print(f"{name:8s} {mean:.5g} +- {std:.5g}  (n={report.n})")
    if args.out:
        rows = [(name, repr(report.mean[name]), repr(report.std[name]), report.n)
                for name in METRIC_NAMES]
        dio.write_metric_rows(rows, args.out, header=("metric", "mean", "std", "n"))
    return 0


def cmd_infer(args) -> int:
    model = dio.load_checkpoint(args.ckpt)
    gathers, _ = _load_gathers(Path(args.input), args.traces_per_gather, args.limit)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for i, g in enumerate(gathers):
        est = infer_demultiple(model, g)
        dio.write_pgm(g.data, out_dir / f"gather{i:04d}_input.pgm")
        dio.write_pgm(est.data, out_dir / f"gather{i:04d}_primaries.pgm")
        dio.write_pgm(g.data - est.data, out_dir / f"gather{i:04d}_multiples.pgm")
    print(f"wrote {3 * len(gathers)} images to {out_dir}")
    return 0


def cmd_ablate(args) -> int:
    variants = []
    for name, overrides in parse_grid(Path(args.grid).read_text()):
        cfg = experiment_from_dict(overrides)
        if args.seeds:
            cfg.seeds = tuple(int(s) for s in args.seeds.split(","))
        variants.append((name, cfg))
    result = ablate(variants, args.dataset, args.out)
    for name in result.curves:
        print(f"variant {name}: ok")
    for name, err in result.failures.items():
        print(f"variant {name}: FAILED ({err})", file=sys.stderr)
    if result.table_path:
        print(f"comparison table: {result.table_path}")
    return 0 if not result.failures else 2


def cmd_radon(args) -> int:
    cfg = _radon_config(args)
    gathers, truths = _load_gathers(Path(args.input), args.traces_per_gather, args.limit)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for i, g in enumerate(gathers):
        prim, mult = radon_demultiple(
            Gather(g.data.astype(float), g.geometry), cfg)
        dio.write_pgm(g.data, out_dir / f"gather{i:04d}_input.pgm")
        dio.write_pgm(prim.data, out_dir / f"gather{i:04d}_primaries.pgm")
        dio.write_pgm(mult.data, out_dir / f"gather{i:04d}_multiples.pgm")
        if truths is not None:
            from .metrics import evaluate
            for name, val in evaluate(truths[i].data, prim.data).items():
                rows.append((i, name, repr(val)))
    if rows:
        dio.write_metric_rows(rows, out_dir / "radon_metrics.csv",
                              header=("gather", "metric", "value"))
    print(f"processed {len(gathers)} gathers into {out_dir}")
    return 0


def cmd_compare(args) -> int:
    result = compare_radon(args.ckpt, args.input, _radon_config(args), args.out,
                           traces_per_gather=args.traces_per_gather,
                           max_gathers=args.limit)
    print(f"compared {result['n_gathers']} gathers, "
          f"{result['images_written']} images in {args.out}")
    if "metrics_path" in result:
        print(f"metric table: {result['metrics_path']}")
    return 0


def cmd_inspect(args) -> int:
    model = dio.load_checkpoint(args.ckpt)
    gather = None
    if args.dataset:
        pairs, _ = dio.read_dataset(args.dataset)
        try:
            gather = pairs[args.index].x
        except IndexError:
            raise ConfigError(f"gather index {args.index} out of range "
                              f"(dataset has {len(pairs)} pairs)") from None
    created = export_report(model, gather, args.out, k_filters=args.k_filters,
                            k_maps=args.k_maps, seed=args.seed)
    print(f"wrote {len(created)} introspection artifacts to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="demul",
        description="Deep-learning seismic demultiple laboratory")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate a synthetic gather dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--space", help="parameter-space config file")
    p.add_argument("--traces", type=int, default=64)
    p.add_argument("--samples", type=int, default=256)
    p.add_argument("--dt", type=float, default=0.004)
    p.add_argument("--preview", help="write an 8-gather PGM panel to this directory")
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("train", help="train one seeded run")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="experiment config file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--optimizer", choices=("sgd", "adam"))
    p.add_argument("--lr", type=float)
    p.add_argument("--momentum", type=float)
    p.add_argument("--val-fraction", dest="val_fraction", type=float)
    p.add_argument("--objective", choices=("direct", "inverse"))
    p.add_argument("--n-blocks", dest="n_blocks", type=int)
    p.add_argument("--base-channels", dest="base_channels", type=int)
    p.add_argument("--schedule", help="kernel schedule codes, e.g. '11 22 22 22'")
    p.add_argument("--down", choices=("maxpool", "strided_conv"))
    p.add_argument("--up", choices=("bilinear", "transposed_conv"))
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", help="write metric CSV here")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("infer", help="run demultiple inference")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--input", required=True, help="dataset or SEG-Y file")
    p.add_argument("--out", required=True)
    p.add_argument("--traces-per-gather", dest="traces_per_gather", type=int)
    p.add_argument("--limit", type=int)
    p.set_defaults(fn=cmd_infer)

    p = sub.add_parser("ablate", help="run a hyperparameter grid with seed averaging")
    p.add_argument("--dataset", required=True)
    p.add_argument("--grid", required=True, help="grid config file (comma lists = axes)")
    p.add_argument("--out", required=True)
    p.add_argument("--seeds", help="comma-separated seed override")
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("radon", help="Radon-transform demultiple baseline")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--traces-per-gather", dest="traces_per_gather", type=int)
    p.add_argument("--limit", type=int)
    _add_radon_args(p)
    p.set_defaults(fn=cmd_radon)

    p = sub.add_parser("compare", help="U-net vs Radon side-by-side")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--traces-per-gather", dest="traces_per_gather", type=int)
    p.add_argument("--limit", type=int)
    _add_radon_args(p)
    p.set_defaults(fn=cmd_compare)

    p = sub.add_parser("inspect", help="export filters, stats, feature maps")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dataset", help="dataset supplying the feature-map input")
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--k-filters", dest="k_filters", type=int, default=3)
    p.add_argument("--k-maps", dest="k_maps", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_inspect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except _USER_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - top-level CLI boundary
        logger.exception("unhandled failure")
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
