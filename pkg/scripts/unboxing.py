#!/usr/bin/env python3
"""Network unboxing: train briefly, then export per-block filter images,
weight-distribution statistics, and feature maps for one gather.

    python scripts/unboxing.py --out results/unboxing
"""

import argparse
import sys
from pathlib import Path

from demul.harness import ExperimentConfig, train
from demul.introspect import export_report, filter_stats
from demul.io import load_checkpoint, read_dataset
from demul.synthgen import GatherGeometry, ParamSpace, make_dataset
from demul.unet import UNetConfig


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="results/unboxing")
    ap.add_argument("--n-pairs", type=int, default=120)
    ap.add_argument("--epochs", type=int, default=5)
    ap.add_argument("--gather-index", type=int, default=0)
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataset = out / "train.dmlt"
    if not dataset.exists():
        make_dataset(ParamSpace(), GatherGeometry(), args.n_pairs, 7, dataset)

    cfg = ExperimentConfig(unet=UNetConfig(n_blocks=5, base_channels=8),
                           optimizer="adam", learning_rate=2e-3,
                           epochs=args.epochs, batch_size=8, out_dir=out / "run")
    report = train(cfg, dataset, seed=0)
    model = load_checkpoint(report.checkpoint_path)
    pairs, _ = read_dataset(dataset)

    created = export_report(model, pairs[args.gather_index].x, out / "report")
    print(f"{len(created)} artifacts in {out / 'report'}")
    print("block  weights     mean        std      skew    ex.kurt")
    for bid in range(model.n_blocks):
        s = filter_stats(model, bid)
        print(f"{bid:5d} {s.n_weights:8d} {s.mean:10.3e} {s.std:9.3e} "
              f"{s.skewness:8.3f} {s.excess_kurtosis:8.3f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
