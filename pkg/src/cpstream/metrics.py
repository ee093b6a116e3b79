"""Image metrics: L1, SSIM / D-SSIM, the combined photometric loss, PSNR."""

import numpy as np
from scipy.ndimage import correlate1d

from .errors import DimensionMismatch

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2
DEFAULT_LAMBDA = 0.2
PSNR_CAP = 99.0


def _check(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise DimensionMismatch(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    x = np.arange(size) - (size - 1) / 2.0
    w = np.exp(-(x**2) / (2.0 * sigma**2))
    return w / w.sum()


def _filter(img, window):
    # Separable filtering, then crop so only fully-covered windows remain.
    h = len(window) // 2
    out = correlate1d(img, window, axis=0, mode="nearest")
    out = correlate1d(out, window, axis=1, mode="nearest")
    return out[h:-h, h:-h]


def ssim_map(a, b):
    a, b = _check(a, b)
    if a.ndim == 2:
        a, b = a[:, :, None], b[:, :, None]
    if min(a.shape[:2]) < SSIM_WINDOW:
        raise DimensionMismatch(f"images must be at least {SSIM_WINDOW} px on each side")
    win = gaussian_window()
    maps = []
    for ch in range(a.shape[2]):
        x, y = a[:, :, ch], b[:, :, ch]
        mx, my = _filter(x, win), _filter(y, win)
        sxx = _filter(x * x, win) - mx * mx
        syy = _filter(y * y, win) - my * my
        sxy = _filter(x * y, win) - mx * my
        num = (2 * mx * my + SSIM_C1) * (2 * sxy + SSIM_C2)
        den = (mx * mx + my * my + SSIM_C1) * (sxx + syy + SSIM_C2)
        maps.append(num / den)
    return np.stack(maps, axis=-1)


def ssim(a, b) -> float:
    """Mean SSIM over all valid 11x11 windows and channels."""
    return float(ssim_map(a, b).mean())


def dssim(a, b) -> float:
    return 1.0 - ssim(a, b)


def l1(a, b) -> float:
    a, b = _check(a, b)
    return float(np.abs(a - b).mean())


def loss(rendered, reference, lam=DEFAULT_LAMBDA) -> float:
    """(1 - lam) * L1 + lam * (1 - SSIM)."""
    value = (1.0 - lam) * l1(rendered, reference)
    if lam != 0:
        value += lam * dssim(rendered, reference)
    return value


def mse(a, b) -> float:
    a, b = _check(a, b)
    return float(np.mean((a - b) ** 2))


def psnr(rendered, reference) -> float:
    """PSNR in dB for unit-range images, capped at 99 dB (returned for identical images)."""
    err = mse(rendered, reference)
    if err == 0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / err))
