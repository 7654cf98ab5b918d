import math

import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from fd import projected, relative_error
from rpn.pyramid import PyramidConfig, ScalableCodec, build_pyramid_inputs
from rpn.training import level_sizes
from rpn.uncertainty import (
    U_CLAMP,
    UncertaintyHead,
    estimate_uncertainty,
    loss_uncertainty,
    loss_uncertainty_guided,
    normalized_weights,
    reverse_pyramid_pass,
)


class TestHead:
    def test_zero_weights_give_bias_constant(self):
        head = UncertaintyHead(8)
        with torch.no_grad():
            head.proj.bias.fill_(-1.25)
        u = head(torch.randn(2, 8, 4, 4), (8, 8))
        assert torch.equal(u, torch.full((2, 1, 8, 8), -1.25))

    def test_output_clamped(self):
        head = UncertaintyHead(4)
        with torch.no_grad():
            head.proj.bias.fill_(50.0)
        assert head(torch.randn(1, 4, 2, 2), (4, 4)).max().item() == U_CLAMP

    def test_spatial_level_size(self):
        cfg = PyramidConfig.default("spatial", 3, 8)
        model = ScalableCodec(cfg)
        x = torch.rand(1, 3, 128, 64)
        with torch.no_grad():
            states = model(x, noise=False)
        u = estimate_uncertainty(states[2].y_hat, model.heads[1], (64, 32))
        assert u.shape == (1, 1, 64, 32)

    def test_rejects_non_batched(self):
        with pytest.raises(ValueError):
            estimate_uncertainty(torch.randn(8, 4, 4), UncertaintyHead(8), (4, 4))

    def test_gradient(self):
        head = UncertaintyHead(4, hidden=4).double()
        with torch.no_grad():
            for p in head.parameters():
                p.normal_(0, 0.5)
        y = torch.randn(1, 4, 2, 2, dtype=torch.float64)
        assert relative_error(projected(lambda t: head(t, (4, 4)), (1, 1, 4, 4)), [y]) < 1e-4


class TestLossU:
    def test_perfect_reconstruction_unit_variance(self):
        x = torch.rand(1, 3, 4, 4)
        assert loss_uncertainty(x, x, torch.zeros(1, 1, 4, 4)).item() == 0.0

    def test_single_pixel_closed_form(self):
        x = torch.zeros(1, 3, 1, 1, dtype=torch.float64)
        x_hat = torch.full_like(x, math.sqrt(2.0))
        u = torch.full((1, 1, 1, 1), math.log(0.5), dtype=torch.float64)
        value = loss_uncertainty(x_hat, x, u).item()
        assert value == pytest.approx(2.0 + 1.5 * math.log(0.5), abs=1e-12)
        assert value == pytest.approx(0.96028, abs=1e-4)

    def test_gradient_wrt_u_single_pixel(self):
        x = torch.zeros(1, 3, 1, 1, dtype=torch.float64)
        x_hat = torch.full_like(x, math.sqrt(2.0))
        u = torch.full((1, 1, 1, 1), math.log(0.5), dtype=torch.float64)
        # closed form: -exp(-(u + ln 2)) e + 1.5 = -2 + 1.5
        u.requires_grad_(True)
        loss_uncertainty(x_hat, x, u).backward()
        assert u.grad.item() == pytest.approx(-0.5, rel=1e-12)
        assert relative_error(lambda t: loss_uncertainty(x_hat, x, t), [u.detach()]) < 1e-6

    def test_optimum_is_log_third_of_error(self):
        # d/du [exp(-u) e / 2 + 1.5 u] = 0  <=>  u = ln(e / 3)
        e = 0.12
        x = torch.zeros(1, 1, 1, 1, dtype=torch.float64)
        x_hat = torch.full_like(x, math.sqrt(e))
        us = torch.linspace(-6, 0, 6001, dtype=torch.float64)
        values = [loss_uncertainty(x_hat, x, u.view(1, 1, 1, 1)).item() for u in us]
        best = us[min(range(len(values)), key=values.__getitem__)].item()
        assert best == pytest.approx(math.log(e / 3), abs=1e-3)

    def test_gradient_full(self):
        x = torch.rand(1, 3, 3, 3, dtype=torch.float64)
        x_hat = torch.rand(1, 3, 3, 3, dtype=torch.float64)
        u = torch.randn(1, 1, 3, 3, dtype=torch.float64)
        assert relative_error(loss_uncertainty, [x_hat, x, u]) < 1e-4


class TestLossUG:
    def test_constant_map_perfect_reconstruction(self):
        x = torch.rand(1, 3, 4, 4)
        assert torch.equal(normalized_weights(torch.full((1, 1, 4, 4), 3.0)), torch.ones(1, 4, 4))
        assert loss_uncertainty_guided(x, x, torch.full((1, 1, 4, 4), 3.0)).item() == 0.0

    def test_two_pixel_example(self):
        x = torch.zeros(1, 1, 1, 2, dtype=torch.float64)
        x_hat = torch.tensor([[[[math.sqrt(5.0), math.sqrt(3.0)]]]], dtype=torch.float64)
        u = torch.tensor([[[[-1.0, 2.0]]]], dtype=torch.float64)
        assert loss_uncertainty_guided(x_hat, x, u).item() == pytest.approx(1.5, abs=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(st.floats(0.01, 100), st.floats(-50, 50), st.integers(0, 10_000))
    def test_affine_invariance(self, a, b, seed):
        g = torch.Generator().manual_seed(seed)
        x = torch.rand(2, 3, 4, 4, generator=g, dtype=torch.float64)
        x_hat = torch.rand(2, 3, 4, 4, generator=g, dtype=torch.float64)
        u = torch.randn(2, 1, 4, 4, generator=g, dtype=torch.float64)
        torch.testing.assert_close(loss_uncertainty_guided(x_hat, x, u),
                                   loss_uncertainty_guided(x_hat, x, a * u + b))

    def test_no_gradient_to_uncertainty(self):
        u = torch.randn(1, 1, 3, 3, requires_grad=True)
        x_hat = torch.rand(1, 3, 3, 3, requires_grad=True)
        loss_uncertainty_guided(x_hat, torch.rand(1, 3, 3, 3), u).backward()
        assert u.grad is None and x_hat.grad is not None

    def test_gradient(self):
        x = torch.rand(1, 3, 3, 3, dtype=torch.float64)
        x_hat = torch.rand(1, 3, 3, 3, dtype=torch.float64)
        u = torch.randn(1, 1, 3, 3, dtype=torch.float64)
        assert relative_error(lambda t: loss_uncertainty_guided(t, x, u), [x_hat]) < 1e-4

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            loss_uncertainty_guided(torch.rand(1, 3, 2, 2), torch.rand(1, 3, 3, 3), torch.zeros(1, 1, 2, 2))


class TestReversePass:
    def _setup(self, levels):
        cfg = PyramidConfig.default("spatial", levels, 8)
        model = ScalableCodec(cfg).eval()
        x = torch.rand(1, 3, 16 * 2 ** levels, 16 * 2 ** levels)
        with torch.no_grad():
            states = model(x, noise=False)
        sizes = level_sizes(build_pyramid_inputs(x, cfg))
        return model, [s.y_hat for s in states], sizes

    def test_three_levels(self):
        model, latents, sizes = self._setup(3)
        maps = reverse_pyramid_pass(latents, model.heads, sizes)
        assert [tuple(m.shape[-2:]) for m in maps] == sizes[:2]

    def test_single_level(self):
        model, latents, sizes = self._setup(1)
        assert reverse_pyramid_pass(latents, model.heads, sizes) == []

    def test_reproducible(self):
        model, latents, sizes = self._setup(3)
        a = reverse_pyramid_pass(latents, model.heads, sizes)
        b = reverse_pyramid_pass(latents, model.heads, sizes)
        assert all(torch.equal(p, q) for p, q in zip(a, b))
