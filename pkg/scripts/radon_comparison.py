#!/usr/bin/env python3
"""Train a desk-scale model and compare it head-to-head with the parabolic
Radon baseline: five panels per gather (input, U-net primaries / removed
multiples, Radon primaries / removed multiples) plus a metric table.

    python scripts/radon_comparison.py --out results/radon_cmp
"""

import argparse
import sys
from pathlib import Path

from demul.harness import ExperimentConfig, compare_radon, train
from demul.radon import RadonConfig
from demul.synthgen import GatherGeometry, ParamSpace, make_dataset
from demul.unet import UNetConfig


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="results/radon_cmp")
    ap.add_argument("--n-pairs", type=int, default=200)
    ap.add_argument("--epochs", type=int, default=10)
    ap.add_argument("--n-gathers", type=int, default=8)
    ap.add_argument("--q-mute", type=float, default=16.0)
    ap.add_argument("--seed", type=int, default=42)
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataset = out / "train.dmlt"
    if not dataset.exists():
        make_dataset(ParamSpace(), GatherGeometry(), args.n_pairs, args.seed, dataset)

    cfg = ExperimentConfig(unet=UNetConfig(n_blocks=5, base_channels=8),
                           optimizer="adam", learning_rate=2e-3,
                           epochs=args.epochs, batch_size=8, out_dir=out / "run")
    report = train(cfg, dataset, seed=0)
    print(f"trained: final val metrics {report.final}")

    result = compare_radon(report.checkpoint_path, dataset,
                           RadonConfig(q_mute=args.q_mute), out / "panels",
                           max_gathers=args.n_gathers)
    print(f"{result['images_written']} panel images in {out / 'panels'}")
    print(f"metric table: {result.get('metrics_path')}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
