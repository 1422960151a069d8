"""Image quality metrics on [0, 1]-normalized images."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigurationError

__all__ = [
    "MetricReport",
    "psnr",
    "rmse",
    "ssim",
    "ssim_map",
    "roi_metrics",
    "normalize_pair",
    "image_metrics",
]

WINDOW = 7
SIGMA = 1.5
K1, K2 = 0.01, 0.03


@dataclass(frozen=True)
class MetricReport:
    psnr: float
    ssim: float
    rmse: float
    roi_psnr: Optional[float] = None
    roi_ssim: Optional[float] = None
    roi_rmse: Optional[float] = None


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ConfigurationError(f"shape mismatch {a.shape} vs {b.shape}")
    return a, b


def _psnr_from_mse(mse, data_range):
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(data_range ** 2 / mse)


def psnr(a, b, data_range=1.0):
    """Peak signal-to-noise ratio in dB; ``inf`` for identical inputs."""
    a, b = _pair(a, b)
    return _psnr_from_mse(float(np.mean((a - b) ** 2)), data_range)


def rmse(a, b):
    a, b = _pair(a, b)
    return math.sqrt(float(np.mean((a - b) ** 2)))


def gaussian_window(size=WINDOW, sigma=SIGMA):
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim_map(a, b, data_range=1.0):
    """Local SSIM at every position where the 7x7 window fits (no padding)."""
    a, b = _pair(a, b)
    if a.ndim != 2 or min(a.shape) < WINDOW:
        raise ConfigurationError(f"SSIM needs images of at least {WINDOW}x{WINDOW}")
    w = gaussian_window()
    c1, c2 = (K1 * data_range) ** 2, (K2 * data_range) ** 2

    def filt(x):
        return np.einsum("ijkl,kl->ij", sliding_window_view(x, w.shape), w)

    mu_a, mu_b = filt(a), filt(b)
    var_a = filt(a * a) - mu_a ** 2
    var_b = filt(b * b) - mu_b ** 2
    cov = filt(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return num / den


def ssim(a, b, data_range=1.0):
    """Mean single-scale SSIM (Gaussian window, sigma 1.5)."""
    return float(np.mean(ssim_map(a, b, data_range)))


def roi_metrics(a, b, mask, data_range=1.0):
    """PSNR/SSIM/RMSE restricted to the pixels where ``mask`` is set.

    SSIM is evaluated on the mask's bounding box (grown to at least the window
    size) and averaged over window centres that fall inside the mask.
    """
    a, b = _pair(a, b)
    mask = np.asarray(mask).astype(bool)
    if mask.shape != a.shape:
        raise ConfigurationError("mask shape differs from image shape")
    if not mask.any():
        raise ConfigurationError("RoI mask is empty")
    mse = float(np.mean((a[mask] - b[mask]) ** 2))
    rows, cols = np.nonzero(mask)
    box = []
    for lo, hi, n in ((rows.min(), rows.max() + 1, a.shape[0]), (cols.min(), cols.max() + 1, a.shape[1])):
        while hi - lo < WINDOW:
            lo, hi = max(lo - 1, 0), min(hi + 1, n)
        box.append(slice(lo, hi))
    smap = ssim_map(a[tuple(box)], b[tuple(box)], data_range)
    h = WINDOW // 2
    centre = mask[tuple(box)][h:h + smap.shape[0], h:h + smap.shape[1]]
    roi_ssim = float(smap[centre].mean()) if centre.any() else float(smap.mean())
    return MetricReport(
        psnr=_psnr_from_mse(mse, data_range), ssim=roi_ssim, rmse=math.sqrt(mse),
        roi_psnr=_psnr_from_mse(mse, data_range), roi_ssim=roi_ssim, roi_rmse=math.sqrt(mse),
    )


def normalize_pair(recon, truth):
    """Map both images through the ground truth's min-max window."""
    recon, truth = _pair(recon, truth)
    lo, hi = float(truth.min()), float(truth.max())
    scale = hi - lo if hi > lo else 1.0
    return (recon - lo) / scale, (truth - lo) / scale


def image_metrics(recon, truth, mask=None):
    """Whole-image metrics (plus RoI metrics when ``mask`` is given)."""
    a, b = normalize_pair(recon, truth)
    r = MetricReport(psnr(a, b), ssim(a, b), rmse(a, b))
    if mask is None:
        return r
    roi = roi_metrics(a, b, mask)
    return MetricReport(r.psnr, r.ssim, r.rmse, roi.psnr, roi.ssim, roi.rmse)
