"""Layer compositions, the training loss, and the two optimizers under study."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .tensor import ShapeError, Tensor, conv2d, relu, _result


class Objective(Enum):
    """What the network predicts: the clean image, or the noise to subtract."""

    DIRECT = "direct"    # target y (multiple-free gather)
    INVERSE = "inverse"  # target x - y (the multiples themselves)


def he_uniform_conv(rng: np.random.Generator, f: int, c: int, kh: int, kw: int,
                    dtype=np.float32) -> np.ndarray:
    """Fan-in He-uniform init: U(-b, b) with b = sqrt(6 / fan_in)."""
    fan_in = c * kh * kw
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=(f, c, kh, kw)).astype(dtype)


class ConvLayer:
    """Single learnable conv with bias."""

    def __init__(self, rng, in_channels: int, out_channels: int, kernel=(3, 3),
                 stride=(1, 1), padding="same"):
        self.weight = Tensor(he_uniform_conv(rng, out_channels, in_channels, *kernel),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(out_channels, dtype=np.float32), requires_grad=True)
        self.stride = stride
        self.padding = padding

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, self.stride, self.padding)

    def parameters(self) -> list[Tensor]:
        return [self.weight, self.bias]


class ConvBlock:
    """Two same-padded 3x3 convs, each followed by ReLU; spatial dims preserved."""

    def __init__(self, rng, in_channels: int, out_channels: int):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.conv1 = ConvLayer(rng, in_channels, out_channels)
        self.conv2 = ConvLayer(rng, out_channels, out_channels)

    def __call__(self, x: Tensor) -> Tensor:
        return relu(self.conv2(relu(self.conv1(x))))

    def parameters(self) -> list[Tensor]:
        return self.conv1.parameters() + self.conv2.parameters()


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Half mean squared error: (1/2N) sum (y_i - yhat_i)^2, N = element count.

    Gradient w.r.t. pred is (yhat - y) / N.
    """
    if pred.data.shape != target.data.shape:
        raise ShapeError(f"mse_loss: shapes differ, {pred.data.shape} vs {target.data.shape}")
    n = pred.data.size
    diff = pred.data - target.data
    value = np.asarray(0.5 / n * np.dot(diff.ravel(), diff.ravel()), dtype=pred.data.dtype)

    def bw(g):
        if pred.requires_grad:
            pred.accumulate_grad(g.item() / n * diff)
        if target.requires_grad:
            target.accumulate_grad(-g.item() / n * diff)

    return _result(value, (pred, target), bw, "mse_loss")


@dataclass
class OptimizerState:
    """Per-parameter moment buffers plus hyperparameters for one optimizer."""

    kind: str  # "sgd_momentum" | "adam"
    learning_rate: float
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    buffers: dict = field(default_factory=dict)

    @classmethod
    def sgd(cls, learning_rate: float = 0.01, momentum: float = 0.9) -> "OptimizerState":
        return cls(kind="sgd_momentum", learning_rate=learning_rate, momentum=momentum)

    @classmethod
    def adam(cls, learning_rate: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
             eps: float = 1e-8) -> "OptimizerState":
        return cls(kind="adam", learning_rate=learning_rate, beta1=beta1, beta2=beta2, eps=eps)


def sgd_step(params: list[Tensor], state: OptimizerState) -> None:
    """Heavy-ball update: v <- mu*v - lr*g; p <- p + v."""
    if state.kind != "sgd_momentum":
        raise ValueError(f"sgd_step called with state kind {state.kind!r}")
    state.step_count += 1
    for i, p in enumerate(params):
        if p.grad is None:
            raise ValueError(f"parameter {i} has no gradient; run backward first")
        v = state.buffers.get(i)
        if v is None:
            v = np.zeros_like(p.data)
        v = state.momentum * v - state.learning_rate * p.grad
        state.buffers[i] = v
        p.data += v


def adam_step(params: list[Tensor], state: OptimizerState) -> None:
    """Bias-corrected Adam update with the standard defaults."""
    if state.kind != "adam":
        raise ValueError(f"adam_step called with state kind {state.kind!r}")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    for i, p in enumerate(params):
        if p.grad is None:
            raise ValueError(f"parameter {i} has no gradient; run backward first")
        m, v = state.buffers.get(i, (None, None))
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = b1 * m + (1 - b1) * p.grad
        v = b2 * v + (1 - b2) * p.grad * p.grad
        state.buffers[i] = (m, v)
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        p.data -= state.learning_rate * mhat / (np.sqrt(vhat) + state.eps)


def optimizer_step(params: list[Tensor], state: OptimizerState) -> None:
    if state.kind == "sgd_momentum":
        sgd_step(params, state)
    elif state.kind == "adam":
        adam_step(params, state)
    else:
        raise ValueError(f"unknown optimizer kind {state.kind!r}")


def zero_grads(params: list[Tensor]) -> None:
    for p in params:
        p.grad = None
