"""Validation metrics: MSE, SNR, SSIM, and peak cross-correlation.

All four are pure functions of two equal-shape 2D images. PCORR here is the
maximum over integer 2D lags (+-8 samples per axis) of the normalized
cross-correlation of globally zero-meaned images; this definition is normative
for this artifact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import convolve1d

SNR_CAP_DB = 140.0
PCORR_MAX_LAG = 8

_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5


class MetricError(ValueError):
    pass


def _check_pair(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise MetricError(f"metric inputs differ in shape: {a.shape} vs {b.shape}")
    return a, b


def mse(a, b) -> float:
    """Plain mean of squared differences (no 1/2 factor; this is the
    evaluation metric, distinct from the training loss)."""
    a, b = _check_pair(a, b)
    d = a - b
    return float(np.mean(d * d))


def snr_db(ref, est) -> float:
    """10*log10(sum ref^2 / sum (ref-est)^2), capped at +140 dB."""
    ref, est = _check_pair(ref, est)
    sig = float(np.sum(ref * ref))
    if sig == 0.0:
        raise MetricError("snr_db: reference image is identically zero")
    noise = float(np.sum((ref - est) ** 2))
    if noise == 0.0:
        return SNR_CAP_DB
    return min(10.0 * np.log10(sig / noise), SNR_CAP_DB)


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2.0
    g = np.exp(-0.5 * ((np.arange(size) - half) / sigma) ** 2)
    return g / g.sum()


def _filter_valid(img: np.ndarray, win: np.ndarray) -> np.ndarray:
    """Separable correlation with a 1D window on both axes, cropped to the
    region the window fully covers (interior values match 'valid' mode)."""
    half = (len(win) - 1) // 2
    tmp = convolve1d(img, win, axis=0, mode="constant")
    tmp = convolve1d(tmp, win, axis=1, mode="constant")
    return tmp[half:img.shape[0] - half, half:img.shape[1] - half]


def ssim(a, b, data_range: float = 2.0) -> float:
    """Mean local SSIM with an 11x11 Gaussian window (sigma 1.5).

    `data_range` defaults to 2 for gathers normalized into [-1, 1];
    C1 = (0.01 L)^2, C2 = (0.03 L)^2.
    """
    a, b = _check_pair(a, b)
    if min(a.shape) < _SSIM_WINDOW:
        raise MetricError(
            f"ssim needs images of at least {_SSIM_WINDOW} pixels per axis, got {a.shape}")
    win = _gaussian_window(_SSIM_WINDOW, _SSIM_SIGMA)
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    mu_a = _filter_valid(a, win)
    mu_b = _filter_valid(b, win)
    var_a = _filter_valid(a * a, win) - mu_a * mu_a
    var_b = _filter_valid(b * b, win) - mu_b * mu_b
    cov = _filter_valid(a * b, win) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def pcorr(a, b, max_lag: int = PCORR_MAX_LAG) -> float:
    """Peak of the lag-scanned normalized cross-correlation."""
    return pcorr_with_lag(a, b, max_lag)[0]


def pcorr_with_lag(a, b, max_lag: int = PCORR_MAX_LAG) -> tuple[float, tuple[int, int]]:
    a, b = _check_pair(a, b)
    az = a - a.mean()
    bz = b - b.mean()
    na = float(np.sqrt(np.sum(az * az)))
    nb = float(np.sqrt(np.sum(bz * bz)))
    if na == 0.0 or nb == 0.0:
        raise MetricError("pcorr is undefined for constant images")
    best, best_lag = -np.inf, (0, 0)
    h, w = a.shape
    # lag (di, dj) scores sum_a a[i, j] * b[i + di, j + dj]: a copy of `a`
    # delayed by d samples in `b` peaks at lag +d
    for di in range(-max_lag, max_lag + 1):
        for dj in range(-max_lag, max_lag + 1):
            sa = az[max(-di, 0):h + min(-di, 0), max(-dj, 0):w + min(-dj, 0)]
            sb = bz[max(di, 0):h + min(di, 0), max(dj, 0):w + min(dj, 0)]
            val = float(np.sum(sa * sb)) / (na * nb)
            if val > best:
                best, best_lag = val, (di, dj)
    return best, best_lag


METRIC_NAMES = ("mse", "snr_db", "ssim", "pcorr")


def evaluate(ref, est) -> dict[str, float]:
    """All four metrics of est against ref."""
    return {
        "mse": mse(ref, est),
        "snr_db": snr_db(ref, est),
        "ssim": ssim(ref, est),
        "pcorr": pcorr(ref, est),
    }


@dataclass
class MetricReport:
    """Mean and standard deviation of each metric over a dataset."""

    mean: dict[str, float]
    std: dict[str, float]
    n: int

    @classmethod
    def from_samples(cls, samples: list[dict[str, float]]) -> "MetricReport":
        if not samples:
            raise MetricError("cannot aggregate an empty metric sample list")
        names = samples[0].keys()
        mean = {k: float(np.mean([s[k] for s in samples])) for k in names}
        std = {k: float(np.std([s[k] for s in samples])) for k in names}
        return cls(mean=mean, std=std, n=len(samples))

    def row(self, metric: str) -> tuple[float, float]:
        return self.mean[metric], self.std[metric]
