"""Network unboxing: filter images, weight-distribution statistics, and
per-block feature maps.

Statistics are reported, never judged: whether a block's weights look
Gaussian is left to the reader of the emitted histograms.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .io import write_metric_rows, write_pgm
from .synthgen import Gather
from .tensor import Tensor
from .unet import Model


class IntrospectError(ValueError):
    pass


@dataclass
class FilterStats:
    block_id: int
    n_filters: int
    n_weights: int
    mean: float
    std: float
    skewness: float
    excess_kurtosis: float
    bin_edges: np.ndarray
    counts: np.ndarray


def _block_weights(model: Model, block_id: int) -> tuple[np.ndarray, int]:
    blocks = model.blocks()
    if not 0 <= block_id < len(blocks):
        raise IntrospectError(
            f"block id {block_id} out of range [0, {len(blocks)})")
    blk = blocks[block_id]
    w = np.concatenate([blk.conv1.weight.data.ravel(), blk.conv2.weight.data.ravel()])
    n_filters = blk.conv1.weight.data.shape[0] + blk.conv2.weight.data.shape[0]
    return w.astype(np.float64), n_filters


def filter_stats(model: Model, block_id: int, bins: int = 32) -> FilterStats:
    """Moments and histogram over all conv weights of one block."""
    w, n_filters = _block_weights(model, block_id)
    mean = float(w.mean())
    std = float(w.std())
    if std > 0:
        z = (w - mean) / std
        skew = float(np.mean(z**3))
        kurt = float(np.mean(z**4) - 3.0)
    else:
        skew, kurt = 0.0, 0.0
    counts, edges = np.histogram(w, bins=bins)
    return FilterStats(block_id=block_id, n_filters=n_filters, n_weights=w.size,
                       mean=mean, std=std, skewness=skew, excess_kurtosis=kurt,
                       bin_edges=edges, counts=counts)


def dump_filters(model: Model, block_id: int, k: int, seed: int
                 ) -> tuple[list[np.ndarray], FilterStats]:
    """k seeded-random filter images (first input channel, min-max normalized
    per filter) plus the block's weight statistics."""
    stats = filter_stats(model, block_id)
    blk = model.blocks()[block_id]
    all_filters = [blk.conv1.weight.data[i] for i in range(blk.conv1.weight.data.shape[0])]
    all_filters += [blk.conv2.weight.data[i] for i in range(blk.conv2.weight.data.shape[0])]
    if k > len(all_filters):
        raise IntrospectError(
            f"requested {k} filters but block {block_id} has {len(all_filters)}")
    rng = np.random.default_rng(seed)
    chosen = rng.choice(len(all_filters), size=k, replace=False)
    images = []
    for idx in sorted(chosen):
        img = np.asarray(all_filters[idx][0], dtype=np.float64)  # first input channel
        lo, hi = img.min(), img.max()
        images.append((img - lo) / (hi - lo) if hi > lo else np.zeros_like(img))
    return images, stats


def feature_maps(model: Model, gather: Gather, block_id: int, k: int, seed: int
                 ) -> list[np.ndarray]:
    """k seeded-random output channels of one block, per-channel min-max
    normalized. Requires a capture-enabled forward (run here)."""
    x = np.asarray(gather.data, dtype=np.float32)[None, None]
    model.forward(Tensor(x), capture=True)
    if block_id not in model.captured:
        raise IntrospectError(f"no captured activation for block {block_id}")
    act = model.captured[block_id][0]  # (channels, X, Y)
    if k > act.shape[0]:
        raise IntrospectError(
            f"requested {k} feature maps but block {block_id} has {act.shape[0]} channels")
    rng = np.random.default_rng(seed)
    chosen = sorted(rng.choice(act.shape[0], size=k, replace=False))
    maps = []
    for c in chosen:
        img = act[c].astype(np.float64)
        lo, hi = img.min(), img.max()
        maps.append((img - lo) / (hi - lo) if hi > lo else np.zeros_like(img))
    return maps


def export_report(model: Model, gather: Gather | None, out_dir, k_filters: int = 3,
                  k_maps: int = 4, seed: int = 0) -> list[Path]:
    """Write per-block filter PGMs, a stats CSV, and (given a gather) feature
    map PGMs. Returns the created paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    created = []
    rows = []
    for bid in range(model.n_blocks):
        stats = filter_stats(model, bid)
        rows.append((bid, stats.n_filters, stats.n_weights,
                     f"{stats.mean:.6g}", f"{stats.std:.6g}",
                     f"{stats.skewness:.6g}", f"{stats.excess_kurtosis:.6g}"))
        images, _ = dump_filters(model, bid, min(k_filters, 1 + stats.n_filters // 2), seed)
        for i, img in enumerate(images):
            p = out_dir / f"block{bid:02d}_filter{i}.pgm"
            write_pgm(img, p)
            created.append(p)
    csv_path = out_dir / "filter_stats.csv"
    write_metric_rows(rows, csv_path, header=(
        "block_id", "n_filters", "n_weights", "mean", "std", "skewness", "excess_kurtosis"))
    created.append(csv_path)
    if gather is not None:
        for bid in range(model.n_blocks):
            for i, img in enumerate(feature_maps(model, gather, bid, k_maps, seed)):
                p = out_dir / f"block{bid:02d}_fmap{i}.pgm"
                write_pgm(img, p)
                created.append(p)
    return created
