"""U-net family builder: depth, kernel schedules, sampling modes, objectives.

The network maps (N, 1, n_traces, n_samples) gathers to same-shape outputs.
Spatial axis 2 is the trace (x) axis and axis 3 the time (y) axis, so a
schedule code "12" leaves traces untouched and halves the time axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nn import ConvBlock, ConvLayer, Objective, he_uniform_conv
from .synthgen import Gather
from .tensor import (
    ShapeError,
    Tensor,
    bilinear_upsample,
    concat_channels,
    conv2d_transposed,
    maxpool2d,
)

# Table of studied kernel schedules; first digit scales x (traces), second y (time).
CASE_SCHEDULES: dict[str, str] = {
    "A": "11 22 22 22",
    "B": "12 24 24 24",
    "C": "22 22 22 22",
    "D": "24 24 24 24",
}

DOWN_MODES = ("maxpool", "strided_conv")
UP_MODES = ("bilinear", "transposed_conv")


def parse_schedule(text: str) -> list[tuple[int, int]]:
    """Parse codes like "11 22 22 22" into per-level (fx, fy) factors."""
    factors = []
    for code in text.split():
        if len(code) != 2 or not code.isdigit():
            raise ValueError(f"bad schedule code {code!r}; expected two digits like '12'")
        fx, fy = int(code[0]), int(code[1])
        if fx < 1 or fy < 1:
            raise ValueError(f"schedule factors must be >= 1, got {code!r}")
        factors.append((fx, fy))
    if not factors:
        raise ValueError("empty kernel schedule")
    return factors


def adapt_schedule(factors: list[tuple[int, int]], levels: int) -> list[tuple[int, int]]:
    """Truncate, or extend by repeating the deepest level, to `levels` entries."""
    if levels <= len(factors):
        return list(factors[:levels])
    return list(factors) + [factors[-1]] * (levels - len(factors))


@dataclass
class UNetConfig:
    n_blocks: int = 9
    base_channels: int = 48
    kernel_schedule: list[tuple[int, int]] = field(default_factory=lambda: parse_schedule(CASE_SCHEDULES["A"]))
    down_mode: str = "maxpool"
    up_mode: str = "bilinear"
    objective: Objective = Objective.DIRECT
    in_channels: int = 1
    input_shape: tuple[int, int] = (64, 256)  # (traces, samples)

    @property
    def levels(self) -> int:
        return (self.n_blocks - 1) // 2

    def schedule(self) -> list[tuple[int, int]]:
        return adapt_schedule(self.kernel_schedule, self.levels)

    def channels(self) -> list[int]:
        """Channel width per level, bottleneck last."""
        return [self.base_channels * 2**i for i in range(self.levels + 1)]

    def validate(self) -> None:
        if self.n_blocks < 1 or self.n_blocks % 2 == 0:
            raise ValueError(f"n_blocks must be odd and >= 1, got {self.n_blocks}")
        if self.base_channels < 1:
            raise ValueError("base_channels must be positive")
        if self.down_mode not in DOWN_MODES:
            raise ValueError(f"down_mode must be one of {DOWN_MODES}, got {self.down_mode!r}")
        if self.up_mode not in UP_MODES:
            raise ValueError(f"up_mode must be one of {UP_MODES}, got {self.up_mode!r}")
        if len(self.kernel_schedule) < 1:
            raise ValueError("kernel schedule must have at least one level")
        check_divisibility(self.schedule(), self.input_shape)

    @classmethod
    def small(cls, **kw) -> "UNetConfig":
        return cls(n_blocks=5, **kw)

    @classmethod
    def standard(cls, **kw) -> "UNetConfig":
        return cls(n_blocks=9, **kw)

    @classmethod
    def big(cls, **kw) -> "UNetConfig":
        return cls(n_blocks=13, **kw)


def check_divisibility(schedule: list[tuple[int, int]], shape: tuple[int, int]) -> None:
    px = int(np.prod([f[0] for f in schedule]))
    py = int(np.prod([f[1] for f in schedule]))
    if shape[0] % px:
        raise ShapeError(
            f"trace axis {shape[0]} not divisible by schedule x-product {px}")
    if shape[1] % py:
        raise ShapeError(
            f"time axis {shape[1]} not divisible by schedule y-product {py}")


class _DownOp:
    """Down-sampling by (fx, fy): max-pool, or a learnable conv with kernel = stride."""

    def __init__(self, rng, mode: str, factor: tuple[int, int], channels: int):
        self.mode = mode
        self.factor = factor
        self.conv = None
        if mode == "strided_conv":
            self.conv = ConvLayer(rng, channels, channels, kernel=factor,
                                  stride=factor, padding="valid")

    def __call__(self, x: Tensor) -> Tensor:
        if self.mode == "maxpool":
            if self.factor == (1, 1):
                return x
            return maxpool2d(x, self.factor)
        return self.conv(x)

    def parameters(self) -> list[Tensor]:
        return self.conv.parameters() if self.conv else []


class _UpOp:
    """Up-sampling by (fx, fy): bilinear, or a transposed conv with kernel = stride."""

    def __init__(self, rng, mode: str, factor: tuple[int, int], channels: int):
        self.mode = mode
        self.factor = factor
        self.weight = None
        if mode == "transposed_conv":
            self.weight = Tensor(
                he_uniform_conv(rng, channels, channels, *factor), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        if self.mode == "bilinear":
            return bilinear_upsample(x, self.factor)
        return conv2d_transposed(x, self.weight, self.factor)

    def parameters(self) -> list[Tensor]:
        return [self.weight] if self.weight is not None else []


class Model:
    """Encoder blocks + down ops, bottleneck, up ops + decoder blocks with
    concatenation skips, and a linear 1x1 output head."""

    def __init__(self, config: UNetConfig, seed: int):
        config.validate()
        self.config = config
        self.seed = seed
        rng = np.random.default_rng(seed)
        ch = config.channels()
        sched = config.schedule()
        levels = config.levels

        self.enc_blocks: list[ConvBlock] = []
        self.down_ops: list[_DownOp] = []
        c_in = config.in_channels
        for i in range(levels):
            self.enc_blocks.append(ConvBlock(rng, c_in, ch[i]))
            self.down_ops.append(_DownOp(rng, config.down_mode, sched[i], ch[i]))
            c_in = ch[i]
        self.bottleneck = ConvBlock(rng, c_in, ch[levels])
        self.up_ops: list[_UpOp] = []
        self.dec_blocks: list[ConvBlock] = []
        for i in reversed(range(levels)):
            self.up_ops.append(_UpOp(rng, config.up_mode, sched[i], ch[i + 1]))
            self.dec_blocks.append(ConvBlock(rng, ch[i + 1] + ch[i], ch[i]))
        self.head = ConvLayer(rng, ch[0], 1, kernel=(1, 1))
        self.levels = levels
        self.captured: dict[int, np.ndarray] = {}

    # block ids follow the U shape: encoder 0..L-1, bottleneck L, decoder L+1..2L
    @property
    def n_blocks(self) -> int:
        return 2 * self.levels + 1

    def blocks(self) -> list[ConvBlock]:
        return self.enc_blocks + [self.bottleneck] + self.dec_blocks

    def parameters(self) -> list[Tensor]:
        params: list[Tensor] = []
        for blk, down in zip(self.enc_blocks, self.down_ops):
            params += blk.parameters() + down.parameters()
        params += self.bottleneck.parameters()
        for up, blk in zip(self.up_ops, self.dec_blocks):
            params += up.parameters() + blk.parameters()
        params += self.head.parameters()
        return params

    def num_params(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def forward(self, x: Tensor, capture: bool = False) -> Tensor:
        if x.data.ndim != 4 or x.data.shape[1] != self.config.in_channels:
            raise ShapeError(
                f"expected (N, {self.config.in_channels}, X, Y) input, got {x.data.shape}")
        check_divisibility(self.config.schedule(), (x.data.shape[2], x.data.shape[3]))
        if capture:
            self.captured = {}
        skips: list[Tensor] = []
        h = x
        bid = 0
        for blk, down in zip(self.enc_blocks, self.down_ops):
            h = blk(h)
            self._capture(capture, bid, h)
            bid += 1
            skips.append(h)
            h = down(h)
        h = self.bottleneck(h)
        self._capture(capture, bid, h)
        bid += 1
        for up, blk, skip in zip(self.up_ops, self.dec_blocks, reversed(skips)):
            h = up(h)
            h = concat_channels(h, skip)
            h = blk(h)
            self._capture(capture, bid, h)
            bid += 1
        return self.head(h)

    def _capture(self, enabled: bool, block_id: int, h: Tensor) -> None:
        if enabled:
            self.captured[block_id] = h.data.copy()

    __call__ = forward


def build(config: UNetConfig, seed: int = 0) -> Model:
    """Deterministically initialized model (He-uniform weights, zero biases)."""
    return Model(config, seed)


def param_count(config: UNetConfig) -> int:
    """Closed-form parameter count; equals enumeration of a built model exactly."""
    config.validate()
    ch = config.channels()
    sched = config.schedule()
    levels = config.levels

    def conv(cin, cout, kh=3, kw=3, bias=True):
        return cin * cout * kh * kw + (cout if bias else 0)

    def block(cin, cout):
        return conv(cin, cout) + conv(cout, cout)

    total = 0
    c_in = config.in_channels
    for i in range(levels):
        total += block(c_in, ch[i])
        if config.down_mode == "strided_conv":
            fx, fy = sched[i]
            total += conv(ch[i], ch[i], fx, fy)
        c_in = ch[i]
    total += block(c_in, ch[levels])
    for i in reversed(range(levels)):
        if config.up_mode == "transposed_conv":
            fx, fy = sched[i]
            total += conv(ch[i + 1], ch[i + 1], fx, fy, bias=False)
        total += block(ch[i + 1] + ch[i], ch[i])
    total += conv(ch[0], 1, 1, 1)
    return total


def gather_to_batch(gathers: list[Gather] | list[np.ndarray], transpose: bool = False) -> np.ndarray:
    """Stack gathers into an (N, 1, traces, samples) float32 batch.

    `transpose` flips each image for data stored time-major.
    """
    arrs = []
    for g in gathers:
        a = g.data if isinstance(g, Gather) else np.asarray(g)
        if transpose:
            a = a.T
        arrs.append(np.asarray(a, dtype=np.float32))
    return np.stack(arrs)[:, None, :, :]


def infer_demultiple(model: Model, gather: Gather, objective: Objective | None = None) -> Gather:
    """Run demultiple inference on one gather.

    Direct objective: the network output is the multiple-free estimate.
    Inverse objective: the network predicts the multiples, which are
    subtracted from the input.
    """
    obj = objective if objective is not None else model.config.objective
    x = gather_to_batch([gather])
    pred = model.forward(Tensor(x)).data[0, 0]
    if obj is Objective.INVERSE:
        pred = gather.data - pred
    return Gather(pred.astype(np.float32), gather.geometry, meta=dict(gather.meta))
