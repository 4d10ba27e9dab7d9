"""Synthetic pre-stack gather pairs: multiple-infested input, multiple-free target.

Events are hyperbolic spikes convolved with a Gabor wavelet, then NMO-corrected
with a near-correct velocity profile. Multiples are synthesized as independent
low-velocity events whose residual move-out at the far offset is at least
`q_min` samples; primaries keep residual move-out strictly below that, so the
two populations are separable by curvature alone.

Move-out convention: an event with velocity v and zero-offset time t0, corrected
with reference velocity v_ref = v_nmo(t0), lands on the trajectory
tau(x) = sqrt(t0^2 + x^2*(1/v^2 - 1/v_ref^2)); its "move-out" is
tau(x_far) - t0 expressed in samples. Velocities are solved in closed form from
sampled move-out targets, so generator invariants hold exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve

# -6 dB full spectral width of a Gaussian envelope = _SIGF_PER_BW * sigma_f
_SIGF_PER_BW = 2.0 * math.sqrt(2.0 * math.log(10.0 ** 0.3))

_WAVELET_ZONES = 4  # piecewise-stationary zones for the time-varying wavelet


class GeneratorError(ValueError):
    """Raised for unsatisfiable parameter spaces or invalid geometry."""


@dataclass(frozen=True)
class GatherGeometry:
    """Acquisition grid: trace offsets and the time axis."""

    n_traces: int = 64
    n_samples: int = 256
    dt: float = 0.004
    offsets: np.ndarray | None = None

    def __post_init__(self):
        if self.offsets is None:
            object.__setattr__(self, "offsets", np.linspace(0.0, 3000.0, self.n_traces))
        else:
            object.__setattr__(self, "offsets", np.asarray(self.offsets, dtype=np.float64))
        if self.dt <= 0:
            raise GeneratorError(f"dt must be positive, got {self.dt}")
        if len(self.offsets) != self.n_traces:
            raise GeneratorError(f"{len(self.offsets)} offsets for {self.n_traces} traces")
        if np.any(np.diff(self.offsets) <= 0):
            raise GeneratorError("offsets must be strictly increasing")

    @property
    def record_length(self) -> float:
        return self.n_samples * self.dt

    @property
    def far_offset(self) -> float:
        return float(self.offsets[-1])

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_samples) * self.dt


@dataclass
class Gather:
    """One seismic image, trace-major: data[trace, time_sample]."""

    data: np.ndarray
    geometry: GatherGeometry
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.data.shape != (self.geometry.n_traces, self.geometry.n_samples):
            raise GeneratorError(
                f"gather data {self.data.shape} != geometry "
                f"({self.geometry.n_traces}, {self.geometry.n_samples})")


@dataclass
class GatherPair:
    """x = primaries + multiples, y = primaries only, m = x - y (exactly)."""

    x: Gather
    y: Gather
    m: Gather
    meta: dict = field(default_factory=dict)


@dataclass(frozen=True)
class WaveletSpec:
    polarity: int = 1
    phase_deg: float = 0.0
    f_center: float = 30.0
    bandwidth: float = 20.0
    f_decay: float = 0.0  # fractional central-frequency decrease per second

    def validate(self, dt: float, record_length: float) -> None:
        nyquist = 0.5 / dt
        if not 0 < self.f_center < nyquist:
            raise GeneratorError(f"f_center {self.f_center} outside (0, {nyquist})")
        if self.bandwidth <= 0:
            raise GeneratorError("bandwidth must be positive")
        if not 0 <= self.f_decay < 1.0 / record_length:
            raise GeneratorError(f"f_decay {self.f_decay} outside [0, 1/record)")
        if self.polarity not in (1, -1):
            raise GeneratorError(f"polarity must be +-1, got {self.polarity}")


@dataclass(frozen=True)
class EventSpec:
    kind: str  # "primary" | "multiple"
    t0: float
    amplitude: float
    velocity: float

    def __post_init__(self):
        if self.kind not in ("primary", "multiple"):
            raise GeneratorError(f"unknown event kind {self.kind!r}")
        if self.amplitude == 0:
            raise GeneratorError("event amplitude must be nonzero")


@dataclass(frozen=True)
class ParamSpace:
    """Sampling ranges for one gather pair. All ranges are inclusive."""

    n_primaries: tuple[int, int] = (3, 8)
    n_multiples: tuple[int, int] = (5, 10)
    t0_frac: tuple[float, float] = (0.08, 0.92)       # fraction of record length
    # optional per-population vertical position overrides
    t0_frac_primaries: tuple[float, float] | None = None
    t0_frac_multiples: tuple[float, float] | None = None
    amplitude: tuple[float, float] = (0.3, 1.0)       # magnitude; sign is random
    rmo_perturb_pct: tuple[float, float] = (-0.6, 0.6)  # primary velocity error
    primary_rmo_cap: float = 2.0                      # samples at far offset
    q_min: float = 3.0                                # samples at far offset
    q_max: float = 24.0
    f_center: tuple[float, float] = (25.0, 45.0)
    bandwidth: tuple[float, float] = (15.0, 30.0)
    phase_deg: tuple[float, float] = (-30.0, 30.0)
    f_decay: tuple[float, float] = (0.0, 0.25)
    nmo_perturb_pct: tuple[float, float] = (-0.3, 0.3)  # per-gather model scale
    v_top: float = 1800.0
    v_bottom: float = 2600.0
    stretch_limit: float = 1.5

    def validate(self, geometry: GatherGeometry) -> None:
        for name in ("n_primaries", "n_multiples", "t0_frac", "amplitude",
                     "rmo_perturb_pct", "f_center", "bandwidth", "phase_deg",
                     "f_decay", "nmo_perturb_pct", "t0_frac_primaries",
                     "t0_frac_multiples"):
            rng = getattr(self, name)
            if rng is None:
                continue
            lo, hi = rng
            if lo > hi:
                raise GeneratorError(f"empty range for {name}: ({lo}, {hi})")
        if self.q_min < 1:
            raise GeneratorError(f"q_min must be >= 1 sample, got {self.q_min}")
        if self.q_min > self.q_max:
            raise GeneratorError(f"q_min {self.q_min} > q_max {self.q_max}")
        if self.q_min * geometry.dt >= geometry.record_length:
            raise GeneratorError("q_min exceeds the record length")
        if not 0 < self.primary_rmo_cap < self.q_min:
            raise GeneratorError(
                f"primary_rmo_cap must sit in (0, q_min={self.q_min}), got {self.primary_rmo_cap}")
        if self.stretch_limit <= 1:
            raise GeneratorError("stretch_limit must exceed 1")
        if not 0 < self.v_top <= self.v_bottom:
            raise GeneratorError("need 0 < v_top <= v_bottom")
        if not 0 <= self.t0_frac[0] and self.t0_frac[1] <= 1:
            raise GeneratorError("t0_frac must lie within [0, 1]")


def nmo_profile(space: ParamSpace, geometry: GatherGeometry, perturb_pct: float) -> np.ndarray:
    """NMO correction velocity sampled on the output time grid."""
    t = geometry.times
    v = space.v_top + (space.v_bottom - space.v_top) * t / geometry.record_length
    return v * (1.0 + perturb_pct / 100.0)


def make_wavelet(spec: WaveletSpec, dt: float, at_time: float = 0.0) -> np.ndarray:
    """Gabor wavelet: Gaussian envelope times a cosine carrier, unit peak.

    The Gaussian is sized so the -6 dB spectral full width equals `bandwidth`;
    the carrier runs at f_center * (1 - f_decay * at_time).
    """
    f_eff = spec.f_center * (1.0 - spec.f_decay * at_time)
    if f_eff <= 0:
        raise GeneratorError(
            f"effective centre frequency {f_eff:.3f} Hz <= 0 at t={at_time:.3f}s")
    sigma_f = spec.bandwidth / _SIGF_PER_BW
    sigma_t = 1.0 / (2.0 * math.pi * sigma_f)
    half = int(math.ceil(4.0 * sigma_t / dt))
    tau = np.arange(-half, half + 1) * dt
    w = np.exp(-0.5 * (tau / sigma_t) ** 2) * np.cos(
        2.0 * math.pi * f_eff * tau + math.radians(spec.phase_deg))
    w *= spec.polarity
    return w / np.abs(w).max()


def hyperbolic_time(t0: float, offsets: np.ndarray, velocity: float) -> np.ndarray:
    return np.sqrt(t0 * t0 + (offsets / velocity) ** 2)


def synth_prestack(events: list[EventSpec], wavelet_spec: WaveletSpec,
                   geometry: GatherGeometry) -> Gather:
    """Spike hyperbolas with fractional-sample placement, convolved with a
    (possibly time-varying) wavelet. Events whose far-offset branch leaves the
    record are clipped and flagged in meta["clipped"]."""
    wavelet_spec.validate(geometry.dt, geometry.record_length)
    spikes = np.zeros((geometry.n_traces, geometry.n_samples), dtype=np.float64)
    clipped: list[int] = []
    for idx, ev in enumerate(events):
        if not 0 <= ev.t0 < geometry.record_length:
            raise GeneratorError(f"event {idx} t0={ev.t0:.3f}s outside the record")
        pos = hyperbolic_time(ev.t0, geometry.offsets, ev.velocity) / geometry.dt
        i0 = np.floor(pos).astype(np.int64)
        frac = pos - i0
        live = i0 < geometry.n_samples - 1
        if not live.all():
            clipped.append(idx)
        tr = np.nonzero(live)[0]
        spikes[tr, i0[live]] += ev.amplitude * (1.0 - frac[live])
        spikes[tr, i0[live] + 1] += ev.amplitude * frac[live]
    data = _convolve_time_varying(spikes, wavelet_spec, geometry)
    return Gather(data, geometry, meta={"clipped": clipped})


def _convolve_time_varying(spikes: np.ndarray, spec: WaveletSpec,
                           geometry: GatherGeometry) -> np.ndarray:
    if spec.f_decay == 0.0:
        w = make_wavelet(spec, geometry.dt, 0.0)
        return fftconvolve(spikes, w[None, :], mode="same", axes=1)
    # piecewise-stationary zones blended linearly between zone centres
    t_rec = geometry.record_length
    centres = (np.arange(_WAVELET_ZONES) + 0.5) / _WAVELET_ZONES * t_rec
    t = geometry.times
    out = np.zeros_like(spikes)
    weights = _blend_weights(t, centres)
    for k in range(_WAVELET_ZONES):
        wk = make_wavelet(spec, geometry.dt, centres[k])
        out += weights[k][None, :] * fftconvolve(spikes, wk[None, :], mode="same", axes=1)
    return out


def _blend_weights(t: np.ndarray, centres: np.ndarray) -> np.ndarray:
    n = len(centres)
    w = np.zeros((n, len(t)))
    seg = np.clip(np.searchsorted(centres, t, side="right") - 1, 0, n - 2)
    lam = np.clip((t - centres[seg]) / (centres[seg + 1] - centres[seg]), 0.0, 1.0)
    for k in range(n):
        w[k] = np.where(seg == k, 1.0 - lam, 0.0) + np.where(seg + 1 == k, lam, 0.0)
    return w


def nmo_correct(gather: Gather, nmo_velocity: np.ndarray, stretch_limit: float) -> Gather:
    """Map each output time tau back to sqrt(tau^2 + x^2/v(tau)^2) with linear
    interpolation; samples stretched beyond `stretch_limit` are muted to 0."""
    geo = gather.geometry
    v = np.broadcast_to(np.asarray(nmo_velocity, dtype=np.float64), (geo.n_samples,))
    if np.any(v <= 0):
        raise GeneratorError("NMO velocities must be positive")
    if stretch_limit <= 1:
        raise GeneratorError("stretch_limit must exceed 1")
    tau = geo.times
    t_src = np.sqrt(tau[None, :] ** 2 + (geo.offsets[:, None] / v[None, :]) ** 2)
    stretch = t_src / np.maximum(tau[None, :], 1e-12)
    pos = t_src / geo.dt
    i0 = np.floor(pos).astype(np.int64)
    frac = pos - i0
    valid = (i0 >= 0) & (i0 < geo.n_samples - 1)
    i0c = np.clip(i0, 0, geo.n_samples - 2)
    lo = np.take_along_axis(gather.data, i0c, axis=1)
    hi = np.take_along_axis(gather.data, i0c + 1, axis=1)
    out = np.where(valid, lo * (1.0 - frac) + hi * frac, 0.0)
    out[stretch > stretch_limit] = 0.0
    return Gather(out, geo, meta=dict(gather.meta))


def moveout_at_offset(t0: float, velocity: float, v_ref: float, x: float) -> float:
    """Residual move-out (seconds) at offset x, relative to reference velocity."""
    arg = t0 * t0 + x * x * (1.0 / velocity ** 2 - 1.0 / v_ref ** 2)
    return math.sqrt(max(arg, 0.0)) - t0


def velocity_for_moveout(t0: float, moveout_s: float, v_ref: float, x: float) -> float:
    """Invert `moveout_at_offset` for the event velocity (closed form)."""
    inv_v2 = ((t0 + moveout_s) ** 2 - t0 * t0) / (x * x) + 1.0 / v_ref ** 2
    if inv_v2 <= 0:
        raise GeneratorError(f"move-out {moveout_s:.4f}s at t0={t0:.3f}s is unreachable")
    return 1.0 / math.sqrt(inv_v2)


def _ref_velocity(space: ParamSpace, geometry: GatherGeometry, perturb_pct: float,
                  t0: float) -> float:
    v = space.v_top + (space.v_bottom - space.v_top) * min(t0 / geometry.record_length, 1.0)
    return v * (1.0 + perturb_pct / 100.0)


def _trajectory(ev: EventSpec, v_ref: float, geometry: GatherGeometry) -> np.ndarray:
    arg = ev.t0 ** 2 + geometry.offsets ** 2 * (1.0 / ev.velocity ** 2 - 1.0 / v_ref ** 2)
    return np.sqrt(np.maximum(arg, 0.0))


def _crosses(mult: EventSpec, prim: EventSpec, v_ref_m: float, v_ref_p: float,
             geometry: GatherGeometry) -> bool:
    dm = _trajectory(mult, v_ref_m, geometry) - _trajectory(prim, v_ref_p, geometry)
    return bool(np.any(dm <= 0) and np.any(dm >= 0))


def make_pair(space: ParamSpace, geometry: GatherGeometry, seed) -> GatherPair:
    """Sample one multiple-infested / multiple-free pair.

    Guarantees: every multiple's far-offset move-out >= q_min samples; every
    primary's stays <= primary_rmo_cap (< q_min); at least one multiple crosses
    a primary when both populations are present; x == y + m exactly and
    max|x| == 1 after shared normalization.
    """
    space.validate(geometry)
    rng = np.random.default_rng(seed)
    dt, x_far = geometry.dt, geometry.far_offset
    t_rec = geometry.record_length

    wavelet = WaveletSpec(
        polarity=1 if rng.random() < 0.5 else -1,
        phase_deg=rng.uniform(*space.phase_deg),
        f_center=rng.uniform(*space.f_center),
        bandwidth=rng.uniform(*space.bandwidth),
        f_decay=rng.uniform(*space.f_decay),
    )
    nmo_pct = rng.uniform(*space.nmo_perturb_pct)
    v_nmo = nmo_profile(space, geometry, nmo_pct)

    t0_prim = space.t0_frac_primaries or space.t0_frac
    t0_mult = space.t0_frac_multiples or space.t0_frac

    def draw_amp() -> float:
        return rng.uniform(*space.amplitude) * (1.0 if rng.random() < 0.5 else -1.0)

    n_p = int(rng.integers(space.n_primaries[0], space.n_primaries[1] + 1))
    n_m = int(rng.integers(space.n_multiples[0], space.n_multiples[1] + 1))

    primaries: list[EventSpec] = []
    for _ in range(n_p):
        t0 = rng.uniform(*t0_prim) * t_rec
        v_ref = _ref_velocity(space, geometry, nmo_pct, t0)
        v_ev = v_ref * (1.0 + rng.uniform(*space.rmo_perturb_pct) / 100.0)
        cap_s = space.primary_rmo_cap * dt
        mo = moveout_at_offset(t0, v_ev, v_ref, x_far)
        if abs(mo) > cap_s:
            v_ev = velocity_for_moveout(t0, math.copysign(cap_s, mo), v_ref, x_far)
        primaries.append(EventSpec("primary", t0, draw_amp(), v_ev))

    def draw_multiple(t0: float) -> EventSpec:
        v_ref = _ref_velocity(space, geometry, nmo_pct, t0)
        q = rng.uniform(space.q_min, space.q_max)
        return EventSpec("multiple", t0, draw_amp(),
                         velocity_for_moveout(t0, q * dt, v_ref, x_far))

    multiples = [draw_multiple(rng.uniform(*t0_mult) * t_rec) for _ in range(n_m)]

    if primaries and multiples:
        _ensure_crossing(space, geometry, rng, primaries, multiples, nmo_pct)

    y_raw = synth_prestack(primaries, wavelet, geometry)
    m_raw = synth_prestack(multiples, wavelet, geometry)
    y_nmo = nmo_correct(y_raw, v_nmo, space.stretch_limit)
    m_nmo = nmo_correct(m_raw, v_nmo, space.stretch_limit)
    x_data = y_nmo.data + m_nmo.data

    scale = np.abs(x_data).max()
    if scale > 0:
        x_data = x_data / scale
        y_data = y_nmo.data / scale
    else:
        y_data = y_nmo.data
    x32 = x_data.astype(np.float32)
    y32 = y_data.astype(np.float32)
    m32 = x32 - y32  # exact by construction, in stored precision

    meta = {
        "primaries": primaries,
        "multiples": multiples,
        "wavelet": wavelet,
        "nmo_perturb_pct": nmo_pct,
        "v_nmo": v_nmo,
        "scale": float(scale),
        "clipped": {"primaries": y_raw.meta["clipped"], "multiples": m_raw.meta["clipped"]},
    }
    return GatherPair(
        x=Gather(x32, geometry), y=Gather(y32, geometry), m=Gather(m32, geometry), meta=meta)


def _ensure_crossing(space, geometry, rng, primaries, multiples, nmo_pct, retries: int = 50):
    def any_crossing() -> bool:
        for m in multiples:
            vrm = _ref_velocity(space, geometry, nmo_pct, m.t0)
            for p in primaries:
                vrp = _ref_velocity(space, geometry, nmo_pct, p.t0)
                if _crosses(m, p, vrm, vrp, geometry):
                    return True
        return False

    dt, x_far = geometry.dt, geometry.far_offset
    t_rec = geometry.record_length
    t0_lo = (space.t0_frac_multiples or space.t0_frac)[0] * t_rec
    for _ in range(retries):
        if any_crossing():
            return
        # move one multiple to sit just above a primary so trajectories must cross
        pi = int(rng.integers(len(primaries)))
        mi = int(rng.integers(len(multiples)))
        p = primaries[pi]
        old = multiples[mi]
        v_ref_old = _ref_velocity(space, geometry, nmo_pct, old.t0)
        q_old = moveout_at_offset(old.t0, old.velocity, v_ref_old, x_far) / dt
        gap = (q_old - space.primary_rmo_cap) * dt
        t0_new = max(t0_lo, p.t0 - rng.uniform(0.1, 0.9) * gap)
        v_ref = _ref_velocity(space, geometry, nmo_pct, t0_new)
        multiples[mi] = EventSpec("multiple", t0_new, old.amplitude,
                                  velocity_for_moveout(t0_new, q_old * dt, v_ref, x_far))
    if not any_crossing():
        raise GeneratorError("could not arrange a multiple/primary crossing; "
                             "parameter space too constrained")


def pair_seed(seed: int, index: int) -> np.random.SeedSequence:
    """Order-independent per-pair seed derivation; pair i can be regenerated alone."""
    return np.random.SeedSequence([seed, index])


def make_dataset(space: ParamSpace, geometry: GatherGeometry, n: int, seed: int,
                 path) -> None:
    """Generate n pairs (independently seeded per index) and write them to disk."""
    if n < 1:
        raise GeneratorError(f"dataset size must be >= 1, got {n}")
    from .io import write_dataset

    pairs = (make_pair(space, geometry, pair_seed(seed, i)) for i in range(n))
    write_dataset(pairs, n, geometry, path)
