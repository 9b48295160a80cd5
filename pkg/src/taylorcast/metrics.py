"""Frame-comparison metrics: MSE, MAE, SSIM, PSNR, and per-sequence reports."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

PSNR_CAP_DB = 100.0


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"frame shapes differ: {a.shape} vs {b.shape}")
    return a, b


def mse(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.mean((a - b) ** 2))


def mae(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.mean(np.abs(a - b)))


def psnr(a, b, data_range: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB, capped at 100 for identical frames."""
    err = mse(a, b)
    if err == 0.0:
        return PSNR_CAP_DB
    value = 10.0 * math.log10(data_range * data_range / err)
    return min(value, PSNR_CAP_DB)


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    """Normalized 2-D Gaussian kernel."""
    half = (size - 1) / 2.0
    coords = np.arange(size) - half
    g = np.exp(-(coords**2) / (2.0 * sigma * sigma))
    kernel = np.outer(g, g)
    return kernel / kernel.sum()


def ssim(
    a,
    b,
    data_range: float = 1.0,
    window_size: int = 11,
    sigma: float = 1.5,
    k1: float = 0.01,
    k2: float = 0.03,
) -> float:
    """Structural similarity with a Gaussian window, averaged over windows and channels.

    Frames may be [H, W] or [C, H, W].  Windows are taken fully inside the
    frame (valid mode), per the original formulation.
    """
    a, b = _pair(a, b)
    if a.ndim == 2:
        a = a[None]
        b = b[None]
    if a.ndim != 3:
        raise ValueError(f"ssim expects [H,W] or [C,H,W] frames, got shape {a.shape}")
    h, w = a.shape[-2:]
    if window_size > h or window_size > w:
        raise ValueError(f"window {window_size} exceeds frame extent {(h, w)}")

    kernel = gaussian_window(window_size, sigma)
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2

    def smooth(img: np.ndarray) -> np.ndarray:
        wins = sliding_window_view(img, (window_size, window_size), axis=(1, 2))
        return np.tensordot(wins, kernel, axes=([3, 4], [0, 1]))

    mu_a = smooth(a)
    mu_b = smooth(b)
    aa = smooth(a * a)
    bb = smooth(b * b)
    ab = smooth(a * b)
    var_a = aa - mu_a * mu_a
    var_b = bb - mu_b * mu_b
    cov = ab - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


@dataclass
class MetricReport:
    """Per-frame metric lists for one predicted sequence plus their means."""

    mse: list[float] = field(default_factory=list)
    mae: list[float] = field(default_factory=list)
    ssim: list[float] = field(default_factory=list)
    psnr: list[float] = field(default_factory=list)

    @property
    def mean_mse(self) -> float:
        return float(np.mean(self.mse))

    @property
    def mean_mae(self) -> float:
        return float(np.mean(self.mae))

    @property
    def mean_ssim(self) -> float:
        return float(np.mean(self.ssim))

    @property
    def mean_psnr(self) -> float:
        return float(np.mean(self.psnr))

    def append(self, prediction, target, data_range: float = 1.0) -> None:
        self.mse.append(mse(prediction, target))
        self.mae.append(mae(prediction, target))
        self.ssim.append(ssim(prediction, target, data_range=data_range))
        self.psnr.append(psnr(prediction, target, data_range=data_range))


def sequence_report(predictions, targets, data_range: float = 1.0) -> MetricReport:
    """Report over aligned frame sequences [K, C, H, W] (or [K, H, W])."""
    predictions = np.asarray(predictions, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if predictions.shape != targets.shape:
        raise ValueError(f"sequence shapes differ: {predictions.shape} vs {targets.shape}")
    report = MetricReport()
    for pred, tgt in zip(predictions, targets):
        report.append(pred, tgt, data_range=data_range)
    return report


def fitting_window(height: int, width: int, preferred: int = 11) -> int:
    """Largest odd window size <= preferred that fits the frame."""
    size = min(preferred, height, width)
    return size if size % 2 else size - 1


def mean_ssim_over_clips(predictions, targets, data_range: float = 1.0) -> float:
    """Mean SSIM over every frame of a batch [N, K, C, H, W].

    The window shrinks (odd, <= 11) for frames smaller than the standard
    window so this stays usable as a training metric on tiny fixtures.
    """
    predictions = np.asarray(predictions, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if predictions.shape != targets.shape:
        raise ValueError(f"batch shapes differ: {predictions.shape} vs {targets.shape}")
    window = fitting_window(predictions.shape[-2], predictions.shape[-1])
    values = [
        ssim(p, t, data_range=data_range, window_size=window)
        for clip_p, clip_t in zip(predictions, targets)
        for p, t in zip(clip_p, clip_t)
    ]
    return float(np.mean(values))
