#!/usr/bin/env python3
"""Reproduce one hyperparameter ablation axis at desk scale.

Each axis mirrors one of the studied comparisons (optimizer, sampling
technique, kernel-size case, loss objective, network depth), trains every
variant over the seed list, and writes mean +- std metric curves, a
comparison table, and rendered curve plots.

Example:
    python scripts/run_ablation.py --axis optimizer --n-pairs 200 --epochs 10
"""

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from demul.harness import ExperimentConfig, ablate
from demul.nn import Objective
from demul.synthgen import GatherGeometry, ParamSpace, make_dataset
from demul.unet import CASE_SCHEDULES, UNetConfig, parse_schedule

AXES = ("optimizer", "sampling", "kernel", "loss", "depth")


def base_config(args) -> ExperimentConfig:
    unet = UNetConfig(n_blocks=args.n_blocks, base_channels=args.base_channels)
    return ExperimentConfig(unet=unet, optimizer=args.optimizer,
                            learning_rate=args.lr, epochs=args.epochs,
                            batch_size=args.batch_size,
                            seeds=tuple(range(args.n_seeds)))


def variants_for(axis: str, args):
    base = base_config(args)
    if axis == "optimizer":
        return [("sgd", replace(base, optimizer="sgd", learning_rate=None)),
                ("adam", replace(base, optimizer="adam", learning_rate=None))]
    if axis == "sampling":
        out = []
        for down in ("maxpool", "strided_conv"):
            for up in ("bilinear", "transposed_conv"):
                cfg = replace(base, unet=replace(base.unet, down_mode=down, up_mode=up))
                out.append((f"{down}+{up}", cfg))
        return out
    if axis == "kernel":
        return [(f"case_{c}", replace(base, unet=replace(
            base.unet, kernel_schedule=parse_schedule(codes))))
            for c, codes in CASE_SCHEDULES.items()]
    if axis == "loss":
        return [(obj.value, replace(base, unet=replace(base.unet, objective=obj)))
                for obj in (Objective.DIRECT, Objective.INVERSE)]
    if axis == "depth":
        return [(f"{n}_blocks", replace(base, unet=replace(base.unet, n_blocks=n)))
                for n in (5, 9)]
    raise SystemExit(f"unknown axis {axis}")


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--axis", choices=AXES, required=True)
    ap.add_argument("--out", default="results")
    ap.add_argument("--n-pairs", type=int, default=200)
    ap.add_argument("--epochs", type=int, default=10)
    ap.add_argument("--batch-size", type=int, default=8)
    ap.add_argument("--n-seeds", type=int, default=5)
    ap.add_argument("--n-blocks", type=int, default=5)
    ap.add_argument("--base-channels", type=int, default=8)
    ap.add_argument("--optimizer", default="adam")
    ap.add_argument("--lr", type=float, default=2e-3)
    ap.add_argument("--seed", type=int, default=42, help="dataset seed")
    args = ap.parse_args()

    out = Path(args.out) / args.axis
    out.mkdir(parents=True, exist_ok=True)
    dataset = out / "train.dmlt"
    if not dataset.exists():
        print(f"generating {args.n_pairs} pairs -> {dataset}")
        make_dataset(ParamSpace(), GatherGeometry(), args.n_pairs, args.seed, dataset)

    result = ablate(variants_for(args.axis, args), dataset, out)
    for name, curve in result.curves.items():
        final = {m: round(curve.mean[m][-1], 4) for m in curve.mean}
        print(f"{name}: {final}")
    for name, err in result.failures.items():
        print(f"{name}: FAILED ({err})", file=sys.stderr)
    print(f"curves and table in {out}")
    return 2 if result.failures else 0


if __name__ == "__main__":
    sys.exit(main())
