"""Parabolic Radon transform demultiple baseline.

Time-domain modeling operator d(t, x) = sum_q panel(t - q*(x/x_ref)^2, q)
with linear interpolation along tau, its exact adjoint, and a damped
least-squares inversion by conjugate gradients on the normal equations.
Curvature q is measured in samples of move-out at the reference (far) offset,
the same unit the synthetic generator uses for its q_min threshold.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .synthgen import Gather, GatherGeometry

logger = logging.getLogger(__name__)


class RadonError(ValueError):
    pass


@dataclass
class RadonConfig:
    n_q: int = 128
    q_lo: float = -8.0        # samples at x_ref
    q_hi: float = 32.0
    damping: float = 0.1      # lambda on the normal equations
    cg_max_iter: int = 60
    cg_tol: float = 1e-6
    q_mute: float = 16.0      # panel cells with q >= q_mute are "multiples"
    mute_margin: float = 2.5  # extend the mute below q_mute to catch smear

    def validate(self) -> None:
        if self.n_q < 2:
            raise RadonError("n_q must be at least 2")
        if not self.q_lo < 0.0 < self.q_hi:
            raise RadonError(f"q range must straddle 0, got [{self.q_lo}, {self.q_hi}]")
        if not self.q_lo <= self.q_mute <= self.q_hi:
            raise RadonError(f"q_mute {self.q_mute} outside q range")
        if self.damping < 0:
            raise RadonError("damping must be >= 0")
        if self.cg_max_iter < 1:
            raise RadonError("cg_max_iter must be >= 1")
        if not 0 <= self.mute_margin < self.q_mute / 2:
            raise RadonError(
                f"mute_margin must sit in [0, q_mute/2), got {self.mute_margin}")

    def q_values(self) -> np.ndarray:
        return np.linspace(self.q_lo, self.q_hi, self.n_q)


@dataclass
class RadonPanel:
    """tau-q domain image: data[q_index, tau_sample]."""

    data: np.ndarray
    q_values: np.ndarray
    geometry: GatherGeometry
    solve_info: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.data.shape != (len(self.q_values), self.geometry.n_samples):
            raise RadonError(
                f"panel {self.data.shape} inconsistent with {len(self.q_values)} "
                f"q values x {self.geometry.n_samples} samples")


class RadonOperator:
    """Precomputed linear map panel -> gather and its exact adjoint.

    d[tr, t] = sum_q w0(q,tr) * P[q, t + B(q,tr)] + w1(q,tr) * P[q, t + B + 1]
    with B = floor(t - shift) - t (constant per (q, tr)). Terms are grouped by
    the integer shift, so each group is one dense (trace x q) matmul followed
    by a shifted slice-add; the adjoint transposes the same matrices and
    mirrors the shifts, making the pair exactly adjoint with zero padding.
    """

    def __init__(self, q_values: np.ndarray, geometry: GatherGeometry):
        self.q_values = np.asarray(q_values, dtype=np.float64)
        self.geometry = geometry
        nt = geometry.n_samples
        n_q = len(self.q_values)
        n_tr = geometry.n_traces
        shift = self.q_values[:, None] * (geometry.offsets[None, :] / geometry.far_offset) ** 2
        base = np.floor(-shift).astype(np.int64)   # floor(t - shift) = t + base
        frac = (-shift) - base                     # in [0, 1)
        groups: dict[int, np.ndarray] = {}
        for q in range(n_q):
            for tr in range(n_tr):
                for s, w in ((int(base[q, tr]), 1.0 - frac[q, tr]),
                             (int(base[q, tr]) + 1, frac[q, tr])):
                    if w == 0.0:
                        continue
                    a = groups.get(s)
                    if a is None:
                        a = groups[s] = np.zeros((n_tr, n_q))
                    a[tr, q] += w
        self._shifts = sorted(groups)
        self._mats = [groups[s] for s in self._shifts]
        self._mats_t = [a.T.copy() for a in self._mats]
        self._nt = nt

    def _bounds(self, s: int) -> tuple[int, int]:
        # t range where both t and t + s are in [0, nt)
        return max(0, -s), self._nt - max(0, s)

    def forward(self, panel: np.ndarray) -> np.ndarray:
        out = np.zeros((self.geometry.n_traces, self._nt))
        for s, a in zip(self._shifts, self._mats):
            lo, hi = self._bounds(s)
            if lo < hi:
                out[:, lo:hi] += a @ panel[:, lo + s:hi + s]
        return out

    def adjoint(self, gather: np.ndarray) -> np.ndarray:
        out = np.zeros((len(self.q_values), self._nt))
        for s, at in zip(self._shifts, self._mats_t):
            lo, hi = self._bounds(s)
            if lo < hi:
                out[:, lo + s:hi + s] += at @ gather[:, lo:hi]
        return out


_OPERATOR_CACHE: dict = {}


def _operator(q_values: np.ndarray, geometry: GatherGeometry) -> RadonOperator:
    key = (q_values.tobytes(), geometry.n_traces, geometry.n_samples,
           geometry.offsets.tobytes())
    op = _OPERATOR_CACHE.get(key)
    if op is None:
        op = RadonOperator(q_values, geometry)
        if len(_OPERATOR_CACHE) > 8:
            _OPERATOR_CACHE.clear()
        _OPERATOR_CACHE[key] = op
    return op


def radon_model(panel: RadonPanel, geometry: GatherGeometry) -> Gather:
    """Synthesize a gather from a tau-q panel (parabolic stack)."""
    op = _operator(panel.q_values, geometry)
    return Gather(op.forward(panel.data).astype(np.float64), geometry)


def radon_adjoint(gather: Gather, config: RadonConfig) -> RadonPanel:
    """Exact adjoint of radon_model: slant stack over parabolas."""
    config.validate()
    op = _operator(config.q_values(), gather.geometry)
    return RadonPanel(op.adjoint(np.asarray(gather.data, dtype=np.float64)),
                      op.q_values, gather.geometry)


def conjugate_gradients(apply_a, b: np.ndarray, max_iter: int, tol: float):
    """CG for SPD systems; returns (x, info) with the relative residual."""
    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rs = float(np.vdot(r, r))
    b_norm = float(np.linalg.norm(b))
    if b_norm == 0.0:
        return x, {"iterations": 0, "residual": 0.0, "converged": True}
    it = 0
    for it in range(1, max_iter + 1):
        ap = apply_a(p)
        alpha = rs / float(np.vdot(p, ap))
        x += alpha * p
        r -= alpha * ap
        rs_new = float(np.vdot(r, r))
        if np.sqrt(rs_new) / b_norm <= tol:
            rs = rs_new
            break
        p = r + (rs_new / rs) * p
        rs = rs_new
    residual = float(np.sqrt(rs) / b_norm)
    return x, {"iterations": it, "residual": residual, "converged": residual <= tol}


def radon_invert(gather: Gather, config: RadonConfig) -> RadonPanel:
    """Least-squares panel via CG on (L^T L + damping I) m = L^T d.

    Non-convergence within the iteration cap is reported in solve_info and
    logged, never silently ignored.
    """
    config.validate()
    op = _operator(config.q_values(), gather.geometry)
    d = np.asarray(gather.data, dtype=np.float64)
    rhs = op.adjoint(d)

    def apply_a(m):
        return op.adjoint(op.forward(m)) + config.damping * m

    m, info = conjugate_gradients(apply_a, rhs, config.cg_max_iter, config.cg_tol)
    if not info["converged"]:
        logger.warning("radon_invert: CG stopped at iteration %d with relative residual %.3e",
                       info["iterations"], info["residual"])
    return RadonPanel(m, op.q_values, gather.geometry, solve_info=info)


def radon_demultiple(gather: Gather, config: RadonConfig) -> tuple[Gather, Gather]:
    """Separate a gather into (primaries, multiples) by muting the panel.

    Cells with q >= q_mute - mute_margin model the multiples (the margin
    catches panel smear of events sitting right on the boundary); primaries
    are the exact complement, so primaries + multiples == input.
    """
    panel = radon_invert(gather, config)
    muted = panel.data.copy()
    muted[panel.q_values < config.q_mute - config.mute_margin, :] = 0.0
    op = _operator(panel.q_values, gather.geometry)
    multiples = op.forward(muted)
    primaries = np.asarray(gather.data, dtype=np.float64) - multiples
    meta = {"radon_solve": panel.solve_info}
    return (Gather(primaries, gather.geometry, meta=meta),
            Gather(multiples, gather.geometry, meta=dict(meta)))
