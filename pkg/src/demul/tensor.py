"""Minimal reverse-mode autodiff engine.

Supplies exactly the operations an encoder/decoder convolutional network
needs: cross-correlation conv (and its transpose), non-overlapping max-pool,
bilinear upsampling, pointwise activations, channel concatenation and basic
arithmetic. 4D tensors use (batch, channel, x=trace, y=time) layout.

Training runs in float32; gradient checking runs in float64 because central
finite differences are unreliable in single precision.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

__all__ = [
    "Tensor",
    "Graph",
    "ShapeError",
    "set_checked",
    "tensor",
    "conv2d",
    "conv2d_transposed",
    "maxpool2d",
    "bilinear_upsample",
    "relu",
    "sigmoid",
    "concat_channels",
    "add",
    "sub",
    "mul",
    "scale",
    "tsum",
    "tmean",
    "backward",
    "grad_check",
]


class ShapeError(ValueError):
    """Raised when operand shapes are inconsistent for an operation."""


# When enabled, every op validates that its inputs are finite.
_CHECKED = False


def set_checked(flag: bool) -> None:
    """Enable/disable NaN/Inf validation at op boundaries."""
    global _CHECKED
    _CHECKED = bool(flag)


def _check_finite(*tensors: "Tensor") -> None:
    if not _CHECKED:
        return
    for t in tensors:
        if not np.all(np.isfinite(t.data)):
            raise FloatingPointError("non-finite value entering op in checked mode")


class Tensor:
    """N-d array node in the reverse-mode graph.

    Data is immutable by convention once created; only `grad` is mutated
    (by backward passes and optimizer bookkeeping).
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward_fn", "op", "_backward_done")

    def __init__(self, data, requires_grad: bool = False, parents=(), backward_fn=None, op: str = "leaf"):
        self.data = np.asarray(data)
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = tuple(parents)
        self._backward_fn = backward_fn
        self.op = op
        self._backward_done = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self) -> None:
        """Run reverse accumulation from this (scalar) tensor."""
        backward(self, Graph.trace(self))

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def sum(self):
        return tsum(self)

    def mean(self):
        return tmean(self)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self.op!r}, requires_grad={self.requires_grad})"


def tensor(data, requires_grad: bool = False, dtype=np.float32) -> Tensor:
    """Leaf constructor; copies input into a contiguous array of `dtype`."""
    return Tensor(np.array(data, dtype=dtype), requires_grad=requires_grad)


class Graph:
    """Topologically ordered view of the nodes reachable from a root.

    The order places parents before children, so reverse iteration is a
    valid backward schedule visiting each node exactly once.
    """

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    @classmethod
    def trace(cls, root: Tensor) -> "Graph":
        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        # iterative DFS; deep U-nets overflow Python's recursion limit
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        return cls(order)

    def leaves(self) -> list[Tensor]:
        return [n for n in self.nodes if not n._parents and n.requires_grad]


def backward(loss: Tensor, graph: Graph | None = None) -> None:
    """Reverse-topological gradient accumulation from a scalar loss.

    Populates `.grad` on every requires_grad node reachable from `loss`.
    Calling twice on the same loss without rebuilding the graph is an error.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    if loss._backward_done:
        raise RuntimeError("backward already ran for this loss; rebuild the graph before calling again")
    if not loss.requires_grad:
        raise RuntimeError("loss is detached from any differentiable graph")
    if graph is None:
        graph = Graph.trace(loss)
    loss._backward_done = True
    loss.grad = np.ones_like(loss.data)
    for node in reversed(graph.nodes):
        if node._backward_fn is None or node.grad is None:
            continue
        node._backward_fn(node.grad)


def _result(data, parents, backward_fn, op: str) -> Tensor:
    req = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=req, parents=parents if req else (),
                  backward_fn=backward_fn if req else None, op=op)


# ---------------------------------------------------------------------------
# elementwise ops


def _binary_check(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{op}: operand shapes differ, {a.data.shape} vs {b.data.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _binary_check(a, b, "add")
    _check_finite(a, b)

    def bw(g):
        if a.requires_grad:
            a.accumulate_grad(g)
        if b.requires_grad:
            b.accumulate_grad(g)

    return _result(a.data + b.data, (a, b), bw, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _binary_check(a, b, "sub")
    _check_finite(a, b)

    def bw(g):
        if a.requires_grad:
            a.accumulate_grad(g)
        if b.requires_grad:
            b.accumulate_grad(-g)

    return _result(a.data - b.data, (a, b), bw, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _binary_check(a, b, "mul")
    _check_finite(a, b)

    def bw(g):
        if a.requires_grad:
            a.accumulate_grad(g * b.data)
        if b.requires_grad:
            b.accumulate_grad(g * a.data)

    return _result(a.data * b.data, (a, b), bw, "mul")


def scale(a: Tensor, c: float) -> Tensor:
    _check_finite(a)

    def bw(g):
        if a.requires_grad:
            a.accumulate_grad(g * c)

    return _result(a.data * c, (a,), bw, "scale")


def relu(t: Tensor) -> Tensor:
    _check_finite(t)
    out = np.maximum(t.data, 0)

    def bw(g):
        if t.requires_grad:
            t.accumulate_grad(g * (t.data > 0))

    return _result(out, (t,), bw, "relu")


def sigmoid(t: Tensor) -> Tensor:
    _check_finite(t)
    out = expit(t.data)

    def bw(g):
        if t.requires_grad:
            t.accumulate_grad(g * out * (1.0 - out))

    return _result(out, (t,), bw, "sigmoid")


def tsum(t: Tensor) -> Tensor:
    _check_finite(t)

    def bw(g):
        if t.requires_grad:
            t.accumulate_grad(np.full_like(t.data, g.item()))

    return _result(np.asarray(t.data.sum(), dtype=t.data.dtype), (t,), bw, "sum")


def tmean(t: Tensor) -> Tensor:
    return scale(tsum(t), 1.0 / t.data.size)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate along axis 1; all other dims must match."""
    if a.data.ndim != b.data.ndim:
        raise ShapeError(f"concat_channels: rank mismatch {a.data.ndim} vs {b.data.ndim}")
    for ax in range(a.data.ndim):
        if ax != 1 and a.data.shape[ax] != b.data.shape[ax]:
            raise ShapeError(
                f"concat_channels: non-channel axis {ax} differs, {a.data.shape} vs {b.data.shape}")
    _check_finite(a, b)
    ca = a.data.shape[1]

    def bw(g):
        if a.requires_grad:
            a.accumulate_grad(g[:, :ca])
        if b.requires_grad:
            b.accumulate_grad(g[:, ca:])

    return _result(np.concatenate([a.data, b.data], axis=1), (a, b), bw, "concat")


# ---------------------------------------------------------------------------
# convolution


def _same_pad(in_size: int, k: int, s: int) -> tuple[int, int, int]:
    out = -(-in_size // s)  # ceil
    total = max((out - 1) * s + k - in_size, 0)
    return out, total // 2, total - total // 2


def _conv_forward_raw(xpad: np.ndarray, k: np.ndarray, stride) -> np.ndarray:
    """Cross-correlation of a pre-padded NCHW input; returns NCHW output."""
    sh, sw = stride
    kf, kc, kh, kw = k.shape
    n = xpad.shape[0]
    ho = (xpad.shape[2] - kh) // sh + 1
    wo = (xpad.shape[3] - kw) // sw + 1
    out = np.zeros((n, ho, wo, kf), dtype=xpad.dtype)
    for i in range(kh):
        for j in range(kw):
            xs = xpad[:, :, i:i + sh * ho:sh, j:j + sw * wo:sw]
            out += np.tensordot(xs, k[:, :, i, j], axes=([1], [1]))
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def _conv_input_grad_raw(g: np.ndarray, k: np.ndarray, stride, padded_hw, pads) -> np.ndarray:
    """Scatter the output gradient back through a cross-correlation.

    Returns the gradient w.r.t. the *unpadded* input given top/left pad offsets.
    """
    sh, sw = stride
    kf, kc, kh, kw = k.shape
    n, _, ho, wo = g.shape
    hp, wp = padded_hw
    pt, pb, pl, pr = pads
    dxp = np.zeros((n, kc, hp, wp), dtype=g.dtype)
    for i in range(kh):
        for j in range(kw):
            contrib = np.tensordot(g, k[:, :, i, j], axes=([1], [0]))  # (n, ho, wo, kc)
            dxp[:, :, i:i + sh * ho:sh, j:j + sw * wo:sw] += contrib.transpose(0, 3, 1, 2)
    return dxp[:, :, pt:hp - pb, pl:wp - pr]


def conv2d(input: Tensor, kernel: Tensor, bias: Tensor | None = None,
           stride: tuple[int, int] = (1, 1), padding: str = "same") -> Tensor:
    """2D cross-correlation (no kernel flip) with zero padding.

    input (N, C, X, Y); kernel (F, C, kx, ky); bias (F,) or None.
    `same` keeps ceil(in/stride) output size and requires odd kernel dims;
    `valid` keeps floor((in-k)/stride)+1.
    """
    x, k = input.data, kernel.data
    if x.ndim != 4 or k.ndim != 4:
        raise ShapeError(f"conv2d expects 4D input and kernel, got {x.shape} and {k.shape}")
    if x.shape[1] != k.shape[1]:
        raise ShapeError(f"conv2d: input has {x.shape[1]} channels but kernel expects {k.shape[1]}")
    if bias is not None and bias.data.shape != (k.shape[0],):
        raise ShapeError(f"conv2d: bias shape {bias.data.shape} != ({k.shape[0]},)")
    if padding not in ("same", "valid"):
        raise ShapeError(f"conv2d: unknown padding {padding!r}")
    sh, sw = stride
    kh, kw = k.shape[2], k.shape[3]
    if padding == "same":
        if kh % 2 == 0 or kw % 2 == 0:
            raise ShapeError(f"conv2d: same padding requires odd kernel dims, got {kh}x{kw}")
        _, pt, pb = _same_pad(x.shape[2], kh, sh)
        _, pl, pr = _same_pad(x.shape[3], kw, sw)
    else:
        if x.shape[2] < kh or x.shape[3] < kw:
            raise ShapeError(f"conv2d: kernel {kh}x{kw} larger than input {x.shape[2]}x{x.shape[3]}")
        pt = pb = pl = pr = 0
    _check_finite(*( (input, kernel, bias) if bias is not None else (input, kernel) ))

    xpad = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr))) if (pt or pb or pl or pr) else x
    out = _conv_forward_raw(xpad, k, stride)
    if bias is not None:
        out += bias.data[None, :, None, None]

    parents = (input, kernel) if bias is None else (input, kernel, bias)

    def bw(g):
        if bias is not None and bias.requires_grad:
            bias.accumulate_grad(g.sum(axis=(0, 2, 3)))
        if kernel.requires_grad:
            dk = np.empty_like(k)
            n, _, ho, wo = g.shape
            for i in range(kh):
                for j in range(kw):
                    xs = xpad[:, :, i:i + sh * ho:sh, j:j + sw * wo:sw]
                    dk[:, :, i, j] = np.tensordot(g, xs, axes=([0, 2, 3], [0, 2, 3]))
            kernel.accumulate_grad(dk)
        if input.requires_grad:
            input.accumulate_grad(_conv_input_grad_raw(
                g, k, stride, (xpad.shape[2], xpad.shape[3]), (pt, pb, pl, pr)))

    return _result(out, parents, bw, "conv2d")


def conv2d_transposed(input: Tensor, kernel: Tensor,
                      stride: tuple[int, int] = (1, 1)) -> Tensor:
    """Transposed convolution: the adjoint of a same-padded strided conv2d.

    input (N, F, X, Y); kernel (F, C, kx, ky); output (N, C, X*sx, Y*sy).
    """
    x, k = input.data, kernel.data
    if x.ndim != 4 or k.ndim != 4:
        raise ShapeError(f"conv2d_transposed expects 4D input and kernel, got {x.shape} and {k.shape}")
    if x.shape[1] != k.shape[0]:
        raise ShapeError(
            f"conv2d_transposed: input has {x.shape[1]} channels but kernel expects {k.shape[0]}")
    sh, sw = stride
    if sh < 1 or sw < 1:
        raise ShapeError(f"conv2d_transposed: stride components must be >= 1, got {stride}")
    _check_finite(input, kernel)
    n, _, h, w = x.shape
    kh, kw = k.shape[2], k.shape[3]
    hs, ws = h * sh, w * sw
    # geometry of the matching same-padded conv (hs, ws) -> (h, w)
    _, pt, pb = _same_pad(hs, kh, sh)
    _, pl, pr = _same_pad(ws, kw, sw)
    hp, wp = hs + pt + pb, ws + pl + pr

    out = _conv_input_grad_raw(x, k, stride, (hp, wp), (pt, pb, pl, pr))

    def bw(g):
        gpad = np.pad(g, ((0, 0), (0, 0), (pt, pb), (pl, pr))) if (pt or pb or pl or pr) else g
        if input.requires_grad:
            input.accumulate_grad(_conv_forward_raw(gpad, k, stride))
        if kernel.requires_grad:
            dk = np.empty_like(k)
            for i in range(kh):
                for j in range(kw):
                    gs = gpad[:, :, i:i + sh * h:sh, j:j + sw * w:sw]
                    dk[:, :, i, j] = np.tensordot(x, gs, axes=([0, 2, 3], [0, 2, 3]))
            kernel.accumulate_grad(dk)

    return _result(out, (input, kernel), bw, "conv2d_transposed")


# ---------------------------------------------------------------------------
# resampling ops


def maxpool2d(input: Tensor, kernel: tuple[int, int]) -> Tensor:
    """Non-overlapping window maximum; stride equals kernel.

    Gradient routes to the first (row-major within the window) maximum.
    """
    x = input.data
    if x.ndim != 4:
        raise ShapeError(f"maxpool2d expects 4D input, got {x.shape}")
    kh, kw = kernel
    n, c, h, w = x.shape
    if h % kh:
        raise ShapeError(f"maxpool2d: spatial axis 2 (size {h}) not divisible by kernel {kh}")
    if w % kw:
        raise ShapeError(f"maxpool2d: spatial axis 3 (size {w}) not divisible by kernel {kw}")
    _check_finite(input)
    ho, wo = h // kh, w // kw
    win = x.reshape(n, c, ho, kh, wo, kw).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, kh * kw)
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    def bw(g):
        if not input.requires_grad:
            return
        dwin = np.zeros((n, c, ho, wo, kh * kw), dtype=g.dtype)
        np.put_along_axis(dwin, idx[..., None], g[..., None], axis=-1)
        dx = dwin.reshape(n, c, ho, wo, kh, kw).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
        input.accumulate_grad(dx)

    return _result(np.ascontiguousarray(out), (input,), bw, "maxpool2d")


def _upsample_axis_tables(in_len: int, f: int):
    """Per-phase (source offset, weight) tables for half-pixel bilinear upsampling.

    Output u = f*h + r samples source coordinate (u + 0.5)/f - 0.5 = h + c_r,
    c_r = (r + 0.5)/f - 0.5 in (-0.5, 0.5); border source indices clamp.
    """
    tables = []
    for r in range(f):
        c = (r + 0.5) / f - 0.5
        if c >= 0:
            tables.append((r, 0, 1, 1.0 - c, c))   # x[h], x[h+1]
        else:
            tables.append((r, -1, 0, -c, 1.0 + c))  # x[h-1], x[h]
    return tables


def _upsample_last_axis(x: np.ndarray, f: int) -> np.ndarray:
    if f == 1:
        return x.copy()
    L = x.shape[-1]
    out = np.empty(x.shape[:-1] + (L * f,), dtype=x.dtype)
    for r, o0, o1, w0, w1 in _upsample_axis_tables(L, f):
        a = _shift_clamped(x, o0)
        b = _shift_clamped(x, o1)
        out[..., r::f] = w0 * a + w1 * b
    return out


def _shift_clamped(x: np.ndarray, off: int) -> np.ndarray:
    """x[..., h+off] with border clamping, off in {-1, 0, 1}."""
    if off == 0:
        return x
    if off == 1:
        return np.concatenate([x[..., 1:], x[..., -1:]], axis=-1)
    return np.concatenate([x[..., :1], x[..., :-1]], axis=-1)


def _upsample_last_axis_adjoint(g: np.ndarray, f: int, in_len: int) -> np.ndarray:
    if f == 1:
        return g.copy()
    dx = np.zeros(g.shape[:-1] + (in_len,), dtype=g.dtype)
    for r, o0, o1, w0, w1 in _upsample_axis_tables(in_len, f):
        gr = g[..., r::f]
        _shift_clamped_adjoint_add(dx, w0 * gr, o0)
        _shift_clamped_adjoint_add(dx, w1 * gr, o1)
    return dx


def _shift_clamped_adjoint_add(dx: np.ndarray, v: np.ndarray, off: int) -> None:
    if off == 0:
        dx += v
    elif off == 1:
        dx[..., 1:] += v[..., :-1]
        dx[..., -1] += v[..., -1]
    else:
        dx[..., :-1] += v[..., 1:]
        dx[..., 0] += v[..., 0]


def bilinear_upsample(input: Tensor, factor: tuple[int, int]) -> Tensor:
    """Integer-factor bilinear upsampling with half-pixel centers.

    Source coordinate for output index u is (u + 0.5)/f - 0.5, clamped to the
    borders; interpolation is exactly linear.
    """
    x = input.data
    if x.ndim != 4:
        raise ShapeError(f"bilinear_upsample expects 4D input, got {x.shape}")
    fx, fy = factor
    if fx < 1 or fy < 1:
        raise ShapeError(f"bilinear_upsample: factors must be >= 1, got {factor}")
    _check_finite(input)
    n, c, h, w = x.shape

    tmp = _upsample_last_axis(x, fy)
    out = _upsample_last_axis(tmp.transpose(0, 1, 3, 2), fx).transpose(0, 1, 3, 2)

    def bw(g):
        if not input.requires_grad:
            return
        gt = _upsample_last_axis_adjoint(np.ascontiguousarray(g.transpose(0, 1, 3, 2)), fx, h)
        dx = _upsample_last_axis_adjoint(np.ascontiguousarray(gt.transpose(0, 1, 3, 2)), fy, w)
        input.accumulate_grad(dx)

    return _result(np.ascontiguousarray(out), (input,), bw, "bilinear_upsample")


# ---------------------------------------------------------------------------
# gradient checking


def grad_check(op_under_test, input_shapes, seed: int, eps: float = 1e-4) -> float:
    """Max relative error between analytic and central-FD gradients.

    Inputs are float64 leaves with entries bounded away from zero (so kinked
    ops like relu/maxpool are probed away from their non-differentiable set).
    The scalar loss is a fixed random projection of the op output. Returns
    max over all leaf entries of |g_an - g_fd| / max(|g_fd|, 1e-8).
    """
    rng = np.random.default_rng(seed)

    def draw(shape):
        mag = rng.uniform(0.2, 1.0, size=shape)
        sgn = np.where(rng.random(shape) < 0.5, -1.0, 1.0)
        return mag * sgn

    leaves = [Tensor(draw(s), requires_grad=True) for s in input_shapes]
    probe = op_under_test(*leaves)
    r = rng.standard_normal(probe.data.shape)

    def loss_value(arrays) -> float:
        outs = op_under_test(*[Tensor(a) for a in arrays])
        return float((outs.data * r).sum())

    loss = tsum(mul(probe, Tensor(r)))
    loss.backward()

    worst = 0.0
    base = [lf.data for lf in leaves]
    for li, leaf in enumerate(leaves):
        g_an = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
        flat = base[li].reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + eps
            fp = loss_value(base)
            flat[idx] = orig - eps
            fm = loss_value(base)
            flat[idx] = orig
            g_fd = (fp - fm) / (2 * eps)
            err = abs(g_an.reshape(-1)[idx] - g_fd) / max(abs(g_fd), 1e-8)
            worst = max(worst, err)
    return worst
