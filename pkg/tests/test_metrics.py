import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rpn.metrics import RdCurve, RdPoint, bd_rate, ms_ssim, ms_ssim_db, ms_ssim_scales, psnr

FIXTURE = Path(__file__).parent / "fixtures" / "ms_ssim_pair.npz"


def _reference_ms_ssim(a, b, data_range=255.0):
    """Direct loop-based MS-SSIM: explicit 2-D window over every valid position."""
    weights = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333]
    g = np.exp(-((np.arange(11) - 5) ** 2) / (2 * 1.5**2))
    window = np.outer(g, g) / np.outer(g, g).sum()
    c1, c2 = (0.01 * data_range) ** 2, (0.03 * data_range) ** 2
    scores = []
    for c in range(a.shape[2]):
        x, y = a[..., c].astype(np.float64), b[..., c].astype(np.float64)
        values = []
        scales = 0
        while scales < 5 and min(x.shape) >= 11:
            lum_sum = cs_sum = 0.0
            n = 0
            for i in range(x.shape[0] - 10):
                for j in range(x.shape[1] - 10):
                    px, py = x[i:i + 11, j:j + 11], y[i:i + 11, j:j + 11]
                    mx, my = (window * px).sum(), (window * py).sum()
                    vx = (window * (px - mx) ** 2).sum()
                    vy = (window * (py - my) ** 2).sum()
                    cov = (window * (px - mx) * (py - my)).sum()
                    cs = (2 * cov + c2) / (vx + vy + c2)
                    lum = (2 * mx * my + c1) / (mx**2 + my**2 + c1)
                    lum_sum += lum * cs
                    cs_sum += cs
                    n += 1
            values.append((lum_sum / n, cs_sum / n))
            scales += 1
            h, w = x.shape[0] // 2 * 2, x.shape[1] // 2 * 2
            x = x[:h, :w].reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))
            y = y[:h, :w].reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))
        w = np.array(weights[:scales]) / sum(weights[:scales])
        terms = [cs for _, cs in values[:-1]] + [values[-1][0]]
        scores.append(np.prod([max(t, 0.0) ** e for t, e in zip(terms, w)]))
    return float(np.mean(scores))


class TestPSNR:
    def test_identical_is_infinite(self):
        a = np.full((4, 4, 3), 7, np.uint8)
        assert psnr(a, a) == math.inf

    def test_full_range_is_zero(self):
        assert psnr(np.zeros((4, 4)), np.full((4, 4), 255.0)) == pytest.approx(0.0, abs=1e-12)

    def test_constant_difference_16(self):
        a = np.random.default_rng(0).integers(0, 200, (32, 32, 3))
        # MSE = 256, so 10 log10(255^2 / 256) = 24.0484 dB with the 8-bit peak
        assert psnr(a, a + 16) == pytest.approx(10 * math.log10(255**2 / 256), abs=1e-12)
        assert psnr(a, a + 16) == pytest.approx(24.0484, abs=1e-4)
        # a peak of 256 gives 10 log10(256) = 24.0824 dB
        assert psnr(a, a + 16, peak=256) == pytest.approx(24.0824, abs=1e-4)

    def test_decreases_with_noise(self):
        rng = np.random.default_rng(1)
        a = rng.uniform(0, 255, (32, 32))
        noise = rng.uniform(-1, 1, a.shape)
        values = [psnr(a, a + s * noise) for s in (1, 2, 4, 8, 16)]
        assert all(x > y for x, y in zip(values, values[1:]))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            psnr(np.zeros((2, 2)), np.zeros((2, 3)))


class TestMSSSIM:
    def test_identical_is_one(self):
        a = np.random.default_rng(0).integers(0, 256, (64, 64, 3)).astype(np.uint8)
        assert ms_ssim(a, a, 255.0) == 1.0

    def test_symmetric(self):
        pair = np.load(FIXTURE)
        assert abs(ms_ssim(pair["a"], pair["b"], 255.0) - ms_ssim(pair["b"], pair["a"], 255.0)) < 1e-9

    def test_matches_reference_on_fixture(self):
        pair = np.load(FIXTURE)
        ours = ms_ssim(pair["a"], pair["b"], 255.0)
        assert abs(ours - _reference_ms_ssim(pair["a"], pair["b"])) < 1e-4
        assert 0.0 < ours < 1.0

    def test_scale_count(self):
        assert ms_ssim_scales(64, 64) == 3
        assert ms_ssim_scales(176, 200) == 5
        assert ms_ssim_scales(10, 100) == 0
        with pytest.raises(ValueError):
            ms_ssim(np.zeros((8, 8)), np.zeros((8, 8)))

    def test_db(self):
        assert ms_ssim_db(0.9) == pytest.approx(10.0)


def _curve(rates, quality):
    return RdCurve([RdPoint(r, q, 0.9, i) for i, (r, q) in enumerate(zip(rates, quality))])


def _trapezoid_oracle(ra, qa, rb, qb, n=200_001):
    lo, hi = max(min(qa), min(qb)), min(max(qa), max(qb))
    q = np.linspace(lo, hi, n)
    fa = np.polyval(np.polyfit(qa, np.log10(ra), 3), q)
    fb = np.polyval(np.polyfit(qb, np.log10(rb), 3), q)
    diff = fb - fa
    avg = float(np.sum((diff[1:] + diff[:-1]) / 2 * np.diff(q))) / (hi - lo)
    return (10**avg - 1) * 100


class TestBDRate:
    rates = [0.1, 0.2, 0.4, 0.8, 1.6]
    quality = [28.0, 30.5, 33.0, 35.2, 37.0]

    def test_identical(self):
        c = _curve(self.rates, self.quality)
        assert bd_rate(c, c) == pytest.approx(0.0, abs=1e-9)

    def test_doubled_rate(self):
        a = _curve(self.rates, self.quality)
        b = _curve([2 * r for r in self.rates], self.quality)
        assert bd_rate(a, b) == pytest.approx(100.0, abs=1e-6)
        assert bd_rate(b, a) == pytest.approx(-50.0, abs=1e-6)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_matches_trapezoid_oracle(self, seed):
        rng = np.random.default_rng(seed)
        ra = np.cumsum(rng.uniform(0.05, 0.5, 5))
        rb = np.cumsum(rng.uniform(0.05, 0.5, 5))
        qa = 25 + np.cumsum(rng.uniform(0.5, 3.0, 5))
        qb = qa[0] + rng.uniform(-1, 1) + np.cumsum(rng.uniform(0.5, 3.0, 5))
        expected = _trapezoid_oracle(ra, qa, rb, qb)
        got = bd_rate(_curve(ra, qa), _curve(rb, qb))
        assert abs(got - expected) <= 1e-3 * max(abs(expected), 1.0)

    def test_ms_ssim_metric(self):
        pts_a = [RdPoint(r, 30, m, i) for i, (r, m) in enumerate(zip(self.rates, [0.9, 0.93, 0.95, 0.97, 0.98]))]
        pts_b = [RdPoint(2 * p.bpp, 30, p.ms_ssim, p.level) for p in pts_a]
        assert bd_rate(RdCurve(pts_a), RdCurve(pts_b), "ms_ssim") == pytest.approx(100.0, abs=1e-6)

    def test_invalid_curves(self):
        good = _curve(self.rates, self.quality)
        with pytest.raises(ValueError, match="at least 4"):
            bd_rate(good, _curve(self.rates[:3], self.quality[:3]))
        with pytest.raises(ValueError, match="increase"):
            bd_rate(good, _curve(self.rates, [28, 27, 33, 35, 37]))
        with pytest.raises(ValueError, match="overlap"):
            bd_rate(good, _curve(self.rates, [q + 50 for q in self.quality]))
        with pytest.raises(ValueError, match="metric"):
            bd_rate(good, good, "vmaf")
