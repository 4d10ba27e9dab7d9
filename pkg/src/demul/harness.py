"""Experiment orchestration: training runs, multi-seed ablations with
mean +- std curves, Radon comparison, and bulk evaluation.

Every run is a pure function of (config, dataset bytes, seed): batches are
shuffled with per-(seed, epoch) generators and all initialization is seeded.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import io as dio
from .metrics import METRIC_NAMES, MetricError, MetricReport, evaluate
from .nn import Objective, OptimizerState, optimizer_step, mse_loss, zero_grads
from .radon import RadonConfig, radon_demultiple
from .synthgen import Gather, GatherGeometry
from .tensor import Tensor
from .unet import Model, UNetConfig, build, infer_demultiple

logger = logging.getLogger(__name__)

CSV_HEADER = ("epoch", "seed", "metric", "value")
CURVE_HEADER = ("epoch", "metric", "mean", "std", "run_id")


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; carries the epoch/step diagnostic."""


@dataclass
class ExperimentConfig:
    unet: UNetConfig = field(default_factory=UNetConfig)
    optimizer: str = "sgd"            # favoured default; "adam" is the alternative
    learning_rate: float | None = None  # None -> per-optimizer default
    momentum: float = 0.9
    epochs: int = 50
    batch_size: int = 16
    val_fraction: float = 0.2
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    out_dir: Path = Path("runs")

    def validate(self) -> None:
        self.unet.validate()
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"optimizer must be sgd or adam, got {self.optimizer!r}")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0 < self.val_fraction < 1:
            raise ValueError("val_fraction must be in (0, 1)")
        if not self.seeds or len(set(self.seeds)) != len(self.seeds):
            raise ValueError("seeds must be non-empty and distinct")

    def make_optimizer(self) -> OptimizerState:
        if self.optimizer == "sgd":
            lr = 0.01 if self.learning_rate is None else self.learning_rate
            return OptimizerState.sgd(learning_rate=lr, momentum=self.momentum)
        lr = 1e-3 if self.learning_rate is None else self.learning_rate
        return OptimizerState.adam(learning_rate=lr)


@dataclass
class TrainReport:
    seed: int
    loss_history: list[float]
    val_metrics: list[dict[str, float]]     # one dict per epoch (means over val set)
    checkpoint_path: Path
    csv_path: Path

    @property
    def final(self) -> dict[str, float]:
        return self.val_metrics[-1]


def split_dataset(pairs, val_fraction: float):
    n_val = max(1, int(round(len(pairs) * val_fraction)))
    if n_val >= len(pairs):
        raise ValueError(f"dataset of {len(pairs)} pairs too small for validation split")
    return pairs[:-n_val], pairs[-n_val:]


def _target_array(pair, objective: Objective) -> np.ndarray:
    return pair.y.data if objective is Objective.DIRECT else pair.m.data


def _validate(model: Model, val_pairs, chunk: int = 16) -> dict[str, float]:
    objective = model.config.objective
    per_gather = []
    for start in range(0, len(val_pairs), chunk):
        block = val_pairs[start:start + chunk]
        x = np.stack([p.x.data for p in block])[:, None]
        pred = model.forward(Tensor(x)).data[:, 0]
        if objective is Objective.INVERSE:
            pred = x[:, 0] - pred
        for pair, est in zip(block, pred):
            try:
                sample = evaluate(pair.y.data, est)
            except MetricError:  # e.g. a constant prediction makes pcorr undefined
                sample = {name: float("nan") for name in METRIC_NAMES}
            per_gather.append(sample)
    return dict(MetricReport.from_samples(per_gather).mean)


def train(config: ExperimentConfig, dataset_path, seed: int) -> TrainReport:
    """One seeded training run: shuffled mini-batches, half-MSE loss against
    the objective target, per-epoch validation metrics, checkpoint + CSV."""
    config.validate()
    pairs, geometry = dio.read_dataset(dataset_path)
    train_pairs, val_pairs = split_dataset(pairs, config.val_fraction)
    model = build(config.unet, seed=seed)
    state = config.make_optimizer()
    params = model.parameters()
    objective = config.unet.objective

    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    x_all = np.stack([p.x.data for p in train_pairs])[:, None]
    t_all = np.stack([_target_array(p, objective) for p in train_pairs])[:, None]

    loss_history: list[float] = []
    val_metrics: list[dict[str, float]] = []
    rows: list[tuple] = []
    n = len(train_pairs)
    for epoch in range(1, config.epochs + 1):
        rng = np.random.default_rng(np.random.SeedSequence([seed, epoch, 0xBA7C4]))
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, config.batch_size):
            batch = order[start:start + config.batch_size]
            x = Tensor(x_all[batch])
            target = Tensor(t_all[batch])
            loss = mse_loss(model.forward(x), target)
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}, step {start // config.batch_size} "
                    f"(seed {seed}); reduce the learning rate")
            loss.backward()
            optimizer_step(params, state)
            zero_grads(params)
            epoch_loss += value * len(batch)
        epoch_loss /= n
        loss_history.append(epoch_loss)
        means = _validate(model, val_pairs)
        val_metrics.append(means)
        rows.append((epoch, seed, "loss", repr(epoch_loss)))
        rows.extend((epoch, seed, name, repr(means[name])) for name in METRIC_NAMES)
        logger.info("seed %d epoch %d: loss=%.3e snr=%.2fdB ssim=%.3f",
                    seed, epoch, epoch_loss, means["snr_db"], means["ssim"])

    ckpt = out_dir / f"model_seed{seed}.dmlw"
    dio.save_checkpoint(model, ckpt)
    csv_path = out_dir / f"metrics_seed{seed}.csv"
    dio.write_metric_rows(rows, csv_path, header=CSV_HEADER)
    return TrainReport(seed=seed, loss_history=loss_history, val_metrics=val_metrics,
                       checkpoint_path=ckpt, csv_path=csv_path)


@dataclass
class MetricCurve:
    """Per-epoch mean and std across seeds, per metric."""

    epochs: list[int]
    mean: dict[str, list[float]]
    std: dict[str, list[float]]

    @classmethod
    def from_reports(cls, reports: list[TrainReport]) -> "MetricCurve":
        n_epochs = len(reports[0].val_metrics)
        epochs = list(range(1, n_epochs + 1))
        mean: dict[str, list[float]] = {}
        std: dict[str, list[float]] = {}
        for name in METRIC_NAMES:
            table = np.array([[r.val_metrics[e][name] for r in reports]
                              for e in range(n_epochs)])
            mean[name] = [float(v) for v in table.mean(axis=1)]
            std[name] = [float(v) for v in table.std(axis=1)]
        return cls(epochs=epochs, mean=mean, std=std)

    def rows(self, run_id: str) -> list[tuple]:
        out = []
        for i, epoch in enumerate(self.epochs):
            for name in METRIC_NAMES:
                out.append((epoch, name, repr(self.mean[name][i]),
                            repr(self.std[name][i]), run_id))
        return out


def train_seeds(config: ExperimentConfig, dataset_path) -> list[TrainReport]:
    return [train(config, dataset_path, seed) for seed in config.seeds]


@dataclass
class AblationResult:
    curves: dict[str, MetricCurve]
    reports: dict[str, list[TrainReport]]
    failures: dict[str, str]
    table_path: Path | None = None


def ablate(variants: list[tuple[str, ExperimentConfig]], dataset_path,
           out_dir) -> AblationResult:
    """Run every variant x seed; emit mean +- std curves per variant and a
    final-epoch comparison table. A failing variant is isolated and recorded."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    curves: dict[str, MetricCurve] = {}
    reports: dict[str, list[TrainReport]] = {}
    failures: dict[str, str] = {}
    for name, cfg in variants:
        run_dir = out_dir / _slug(name)
        try:
            rs = train_seeds(replace(cfg, out_dir=run_dir), dataset_path)
        except Exception as exc:  # isolate the failing variant
            logger.error("variant %s failed: %s", name, exc)
            failures[name] = str(exc)
            continue
        reports[name] = rs
        curve = MetricCurve.from_reports(rs)
        curves[name] = curve
        dio.write_metric_rows(curve.rows(name), run_dir / "curves.csv",
                              header=CURVE_HEADER)
    table_rows = []
    for name, curve in curves.items():
        for metric in METRIC_NAMES:
            table_rows.append((curve.epochs[-1], metric,
                               repr(curve.mean[metric][-1]),
                               repr(curve.std[metric][-1]), name))
    table_path = None
    if table_rows:
        table_path = out_dir / "comparison.csv"
        dio.write_metric_rows(table_rows, table_path, header=CURVE_HEADER)
    _plot_curves(curves, out_dir)
    return AblationResult(curves=curves, reports=reports, failures=failures,
                          table_path=table_path)


def _slug(name: str) -> str:
    return "".join(c if c.isalnum() or c in "-_" else "_" for c in name)


def _plot_curves(curves: dict[str, MetricCurve], out_dir: Path) -> None:
    if not curves:
        return
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:  # plotting is best-effort; CSVs are the artifact
        logger.warning("matplotlib unavailable; skipping curve rendering")
        return
    fig, axes = plt.subplots(1, len(METRIC_NAMES), figsize=(4 * len(METRIC_NAMES), 3))
    for ax, metric in zip(axes, METRIC_NAMES):
        for name, curve in curves.items():
            m = np.array(curve.mean[metric])
            s = np.array(curve.std[metric])
            ax.plot(curve.epochs, m, label=name)
            ax.fill_between(curve.epochs, m - s, m + s, alpha=0.2)
        ax.set_title(metric)
        ax.set_xlabel("epoch")
    axes[0].legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(out_dir / "curves.png", dpi=110)
    plt.close(fig)


def evaluate_checkpoint(ckpt_path, dataset_path) -> MetricReport:
    model = dio.load_checkpoint(ckpt_path)
    pairs, _ = dio.read_dataset(dataset_path)
    samples = [evaluate(p.y.data, infer_demultiple(model, p.x).data) for p in pairs]
    return MetricReport.from_samples(samples)


def compare_radon(ckpt_path, input_path, radon_config: RadonConfig, out_dir,
                  traces_per_gather: int | None = None,
                  max_gathers: int | None = None) -> dict:
    """Side-by-side U-net vs Radon demultiple.

    Emits five PGM panels per gather (input, U-net primaries, U-net removed
    multiples, Radon primaries, Radon removed multiples) and, when ground
    truth is available (dataset input), a metric table for both methods.
    """
    model = dio.load_checkpoint(ckpt_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    input_path = Path(input_path)
    truths: list[np.ndarray] | None
    if input_path.suffix.lower() in (".segy", ".sgy"):
        if traces_per_gather is None:
            raise ValueError("traces_per_gather is required for SEG-Y input")
        n_tr, n_samp = model.config.input_shape
        gathers = dio.read_segy_gathers(input_path, traces_per_gather,
                                        geometry=GatherGeometry(n_traces=n_tr,
                                                                n_samples=n_samp))
        truths = None
    else:
        pairs, _ = dio.read_dataset(input_path)
        gathers = [p.x for p in pairs]
        truths = [p.y.data for p in pairs]
    if max_gathers is not None:
        gathers = gathers[:max_gathers]
        truths = truths[:max_gathers] if truths is not None else None

    unet_rows, radon_rows = [], []
    written = 0
    for i, g in enumerate(gathers):
        unet_prim = infer_demultiple(model, g)
        unet_mult = g.data - unet_prim.data
        radon_prim, radon_mult = radon_demultiple(
            Gather(np.asarray(g.data, dtype=np.float64), g.geometry), radon_config)
        panels = {
            "input": g.data,
            "unet_primaries": unet_prim.data,
            "unet_multiples": unet_mult,
            "radon_primaries": radon_prim.data,
            "radon_multiples": radon_mult.data,
        }
        for name, img in panels.items():
            dio.write_pgm(img, out_dir / f"gather{i:04d}_{name}.pgm")
            written += 1
        if truths is not None:
            for name, val in evaluate(truths[i], unet_prim.data).items():
                unet_rows.append((i, name, repr(val)))
            for name, val in evaluate(truths[i], radon_prim.data).items():
                radon_rows.append((i, name, repr(val)))
    result = {"n_gathers": len(gathers), "images_written": written}
    if truths is not None:
        dio.write_metric_rows(
            [(i, "unet", m, v) for (i, m, v) in unet_rows]
            + [(i, "radon", m, v) for (i, m, v) in radon_rows],
            out_dir / "comparison_metrics.csv",
            header=("gather", "method", "metric", "value"))
        result["metrics_path"] = out_dir / "comparison_metrics.csv"
    return result
