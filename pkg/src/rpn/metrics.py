"""Image quality metrics and the Bjontegaard delta rate."""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import correlate1d

MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
WINDOW_SIZE = 11
WINDOW_SIGMA = 1.5
K1, K2 = 0.01, 0.03


def psnr(a, b, peak=255.0):
    """10 log10(peak^2 / MSE); ``math.inf`` for identical inputs."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(peak**2 / mse)


def _gaussian_window(size=WINDOW_SIZE, sigma=WINDOW_SIGMA):
    x = np.arange(size) - size // 2
    g = np.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


def _filter_valid(img, win):
    # separable filtering, keeping only positions where the window fits entirely
    out = correlate1d(img, win, axis=0, mode="constant")
    out = correlate1d(out, win, axis=1, mode="constant")
    r = len(win) // 2
    return out[r:img.shape[0] - r, r:img.shape[1] - r]


def _ssim_cs(x, y, data_range):
    win = _gaussian_window()
    c1 = (K1 * data_range) ** 2
    c2 = (K2 * data_range) ** 2
    mu_x = _filter_valid(x, win)
    mu_y = _filter_valid(y, win)
    sxx = _filter_valid(x * x, win) - mu_x**2
    syy = _filter_valid(y * y, win) - mu_y**2
    sxy = _filter_valid(x * y, win) - mu_x * mu_y
    cs_map = (2 * sxy + c2) / (sxx + syy + c2)
    lum = (2 * mu_x * mu_y + c1) / (mu_x**2 + mu_y**2 + c1)
    return float(np.mean(lum * cs_map)), float(np.mean(cs_map))


def _downsample(img):
    h, w = img.shape[0] // 2 * 2, img.shape[1] // 2 * 2
    img = img[:h, :w]
    return 0.25 * (img[0::2, 0::2] + img[1::2, 0::2] + img[0::2, 1::2] + img[1::2, 1::2])


def ms_ssim_scales(height, width):
    """Dyadic scales (at most 5) at which the 11x11 window still fits."""
    n, size = 0, min(height, width)
    while n < len(MS_SSIM_WEIGHTS) and size >= WINDOW_SIZE:
        n += 1
        size //= 2
    return n


def ms_ssim(a, b, data_range=1.0):
    """MS-SSIM of HxW or HxWxC images, averaged over channels.

    Uses as many scales as fit (5 for inputs of at least 176 pixels); the
    exponents of the used scales are renormalized to sum to one.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    scales = ms_ssim_scales(a.shape[0], a.shape[1])
    if scales == 0:
        raise ValueError(f"{a.shape[0]}x{a.shape[1]} is too small for an {WINDOW_SIZE}px window")
    weights = np.array(MS_SSIM_WEIGHTS[:scales])
    weights = weights / weights.sum()
    scores = []
    for c in range(a.shape[2]):
        x, y = a[..., c], b[..., c]
        values = []
        for s in range(scales):
            ssim_val, cs = _ssim_cs(x, y, data_range)
            values.append(ssim_val if s == scales - 1 else cs)
            x, y = _downsample(x), _downsample(y)
        values = np.maximum(np.array(values), 0.0)
        scores.append(float(np.prod(values**weights)))
    return float(np.mean(scores))


def ms_ssim_db(score):
    return -10.0 * math.log10(max(1.0 - score, 1e-12))


@dataclass
class RdPoint:
    bpp: float
    psnr: float
    ms_ssim: float
    level: int = 0


@dataclass
class RdCurve:
    points: list
    label: str = ""
    extra: dict = field(default_factory=dict)

    def sorted(self):
        return RdCurve(sorted(self.points, key=lambda p: p.bpp), self.label, self.extra)

    def arrays(self, metric="psnr"):
        rates = np.array([p.bpp for p in self.points], dtype=np.float64)
        if metric == "psnr":
            quality = [p.psnr for p in self.points]
        elif metric in ("ms_ssim", "ms-ssim"):
            quality = [ms_ssim_db(p.ms_ssim) for p in self.points]
        else:
            raise ValueError(f"unknown metric {metric!r}")
        return rates, np.array(quality, dtype=np.float64)


def _validate_curve(rates, quality, name):
    if len(rates) < 4:
        raise ValueError(f"{name}: BD-rate needs at least 4 points, got {len(rates)}")
    if np.any(rates <= 0) or not np.all(np.isfinite(quality)):
        raise ValueError(f"{name}: rates must be positive and qualities finite")
    if np.any(np.diff(rates) <= 0) or np.any(np.diff(quality) <= 0):
        raise ValueError(f"{name}: rate and quality must both increase strictly")


def bd_rate(curve_a, curve_b, metric="psnr"):
    """Average rate change of ``curve_b`` relative to ``curve_a`` at equal quality, in percent.

    Fits log10(rate) as a cubic polynomial of quality for each curve and
    integrates the difference over the overlapping quality interval.
    """
    ra, qa = curve_a.arrays(metric)
    rb, qb = curve_b.arrays(metric)
    order_a, order_b = np.argsort(ra), np.argsort(rb)
    ra, qa, rb, qb = ra[order_a], qa[order_a], rb[order_b], qb[order_b]
    _validate_curve(ra, qa, "curve A")
    _validate_curve(rb, qb, "curve B")
    lo, hi = max(qa.min(), qb.min()), min(qa.max(), qb.max())
    if lo >= hi:
        raise ValueError("quality ranges of the two curves do not overlap")
    pa = np.polyint(np.polyfit(qa, np.log10(ra), 3))
    pb = np.polyint(np.polyfit(qb, np.log10(rb), 3))
    int_a = np.polyval(pa, hi) - np.polyval(pa, lo)
    int_b = np.polyval(pb, hi) - np.polyval(pb, lo)
    avg_diff = (int_b - int_a) / (hi - lo)
    return (10.0**avg_diff - 1.0) * 100.0
