"""Image quality metrics: MSE, PSNR (peak 1.0) and Gaussian-window SSIM."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .imagegraph import Image

PSNR_CAP = 99.0
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


@dataclass(frozen=True)
class MetricReport:
    mse: float
    psnr: float
    ssim: float

    def as_dict(self) -> dict:
        return asdict(self)


def _arr(x) -> np.ndarray:
    a = x.data if isinstance(x, Image) else np.asarray(x, dtype=np.float64)
    return a[..., None] if a.ndim == 2 else a


def _check(a, b):
    a, b = _arr(a), _arr(b)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def mse(a, b) -> float:
    a, b = _check(a, b)
    return float(np.mean((a - b) ** 2))


def psnr(a, b) -> float:
    err = mse(a, b)
    if err < 1e-10:
        return PSNR_CAP
    return min(PSNR_CAP, float(10.0 * np.log10(1.0 / err)))


def gaussian_window(size: int = 8, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


def _ssim_map(a, b, size, sigma):
    g = gaussian_window(size, sigma)

    def filt(z):
        # valid-mode separable weighted window means
        z = np.lib.stride_tricks.sliding_window_view(z, size, axis=0) @ g
        return np.lib.stride_tricks.sliding_window_view(z, size, axis=1) @ g

    mu_a, mu_b = filt(a), filt(b)
    saa = filt(a * a) - mu_a * mu_a
    sbb = filt(b * b) - mu_b * mu_b
    sab = filt(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + SSIM_C1) * (2 * sab + SSIM_C2)
    den = (mu_a**2 + mu_b**2 + SSIM_C1) * (saa + sbb + SSIM_C2)
    return num / den


def _global_ssim(a, b):
    mu_a, mu_b = a.mean(), b.mean()
    saa = ((a - mu_a) ** 2).mean()
    sbb = ((b - mu_b) ** 2).mean()
    sab = ((a - mu_a) * (b - mu_b)).mean()
    num = (2 * mu_a * mu_b + SSIM_C1) * (2 * sab + SSIM_C2)
    den = (mu_a**2 + mu_b**2 + SSIM_C1) * (saa + sbb + SSIM_C2)
    return num / den


def ssim(a, b, window: int = 8, sigma: float = 1.5) -> float:
    """Mean local SSIM over all fully contained windows, averaged over channels.

    Images smaller than the window fall back to one global window.
    """
    a, b = _check(a, b)
    h, w, c = a.shape
    if h < window or w < window:
        vals = [_global_ssim(a[..., k], b[..., k]) for k in range(c)]
    else:
        vals = [_ssim_map(a[..., k], b[..., k], window, sigma).mean() for k in range(c)]
    return float(np.mean(vals))


def report(original, candidate) -> MetricReport:
    return MetricReport(mse=mse(original, candidate), psnr=psnr(original, candidate), ssim=ssim(original, candidate))
