"""Learned per-channel factorized prior and a fixed discrete prior.

Both expose ``likelihood(values)`` (probability mass of the unit interval around
each value) and ``coding_tables()`` for the range coder.
"""

import math

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from rpn.entropy.rangecoder import QuantizedCDF, range_decode, range_encode
from rpn.transforms import lower_bound

DEFAULT_SUPPORT = (-16, 16)
SUPPORT_MARGIN = 2
SUPPORT_LIMIT = 2048


def _stable_interval_mass(lower, upper):
    # evaluates sigmoid differences on the side of the logistic with better precision
    sign = -torch.sign(lower + upper).detach()
    return torch.abs(torch.sigmoid(sign * upper) - torch.sigmoid(sign * lower))


class FactorizedPrior(nn.Module):
    """Univariate density per channel with a monotone CDF network.

    The CDF is sigmoid(f(x)) where f stacks layers ``softplus(M) x + b`` followed
    by ``x + tanh(a) tanh(x)``; positive slopes and |tanh(a)| < 1 keep f monotone.

    Support bounds for coding come from integer values seen in training mode,
    widened by a margin of 2; values outside are escape-coded.
    """

    def __init__(self, channels, filters=(3, 3, 3), init_scale=10.0, likelihood_bound=1e-9):
        super().__init__()
        self.channels = channels
        self.likelihood_bound = likelihood_bound
        dims = (1,) + tuple(filters) + (1,)
        scale = init_scale ** (1.0 / (len(filters) + 1))
        self.matrices = nn.ParameterList()
        self.biases = nn.ParameterList()
        self.factors = nn.ParameterList()
        for i in range(len(filters) + 1):
            init = math.log(math.expm1(1.0 / scale / dims[i + 1]))
            self.matrices.append(nn.Parameter(torch.full((channels, dims[i + 1], dims[i]), init)))
            self.biases.append(nn.Parameter(torch.rand(channels, dims[i + 1], 1) - 0.5))
            if i < len(filters):
                self.factors.append(nn.Parameter(torch.zeros(channels, dims[i + 1], 1)))
        self.register_buffer("observed_min", torch.full((channels,), math.inf))
        self.register_buffer("observed_max", torch.full((channels,), -math.inf))

    def logits_cumulative(self, x):
        """x: (C, 1, n) -> CDF logits of the same shape."""
        logits = x
        for i, matrix in enumerate(self.matrices):
            logits = torch.matmul(F.softplus(matrix.to(x.dtype)), logits)
            logits = logits + self.biases[i].to(x.dtype)
            if i < len(self.factors):
                logits = logits + torch.tanh(self.factors[i].to(x.dtype)) * torch.tanh(logits)
        return logits

    def _per_channel(self, values):
        # (N, C, H, W) -> (C, 1, N*H*W)
        if values.dim() != 4 or values.shape[1] != self.channels:
            raise ValueError(f"expected (N, {self.channels}, H, W), got {tuple(values.shape)}")
        return values.transpose(0, 1).reshape(self.channels, 1, -1)

    def _restore(self, flat, shape):
        n, c, h, w = shape
        return flat.reshape(c, n, h, w).transpose(0, 1).contiguous()

    def cdf(self, values):
        flat = self._per_channel(values)
        return self._restore(torch.sigmoid(self.logits_cumulative(flat)), values.shape)

    def likelihood(self, values):
        flat = self._per_channel(values)
        lower = self.logits_cumulative(flat - 0.5)
        upper = self.logits_cumulative(flat + 0.5)
        mass = _stable_interval_mass(lower, upper)
        if self.likelihood_bound > 0:
            mass = lower_bound(mass, self.likelihood_bound)
        return self._restore(mass, values.shape)

    @torch.no_grad()
    def update_support(self, values):
        """Widen the tracked per-channel integer range with ``round(values)``."""
        flat = torch.round(self._per_channel(values.detach()).squeeze(1))
        self.observed_min.copy_(torch.minimum(self.observed_min, flat.min(dim=1).values.float()))
        self.observed_max.copy_(torch.maximum(self.observed_max, flat.max(dim=1).values.float()))

    def forward(self, values):
        if self.training:
            self.update_support(values)
        return self.likelihood(values)

    def support(self, channel):
        lo, hi = self.observed_min[channel].item(), self.observed_max[channel].item()
        if not (math.isfinite(lo) and math.isfinite(hi)):
            return DEFAULT_SUPPORT
        lo = max(int(lo) - SUPPORT_MARGIN, -SUPPORT_LIMIT)
        hi = min(int(hi) + SUPPORT_MARGIN, SUPPORT_LIMIT - 1)
        return lo, hi

    @torch.no_grad()
    def _mass_grid(self, lo, hi):
        """(C, hi-lo+1) float64 masses of the integers lo..hi for every channel."""
        k = torch.arange(lo, hi + 1, dtype=torch.float64)
        grid = k.expand(self.channels, 1, k.numel())
        lower = self.logits_cumulative(grid - 0.5)
        upper = self.logits_cumulative(grid + 0.5)
        return _stable_interval_mass(lower, upper)[:, 0].numpy()

    def pmf(self, k, channel):
        """CDF(k+1/2) - CDF(k-1/2) in float64; escape-slot mass outside the support."""
        lo, hi = self.support(channel)
        if lo <= k <= hi:
            return float(self._mass_grid(k, k)[channel, 0])
        return float(self.coding_tables()[channel].probabilities()[-1])

    def coding_tables(self):
        bounds = [self.support(c) for c in range(self.channels)]
        lo = min(b[0] for b in bounds)
        masses = self._mass_grid(lo, max(b[1] for b in bounds))
        return [
            QuantizedCDF.from_probabilities(masses[c, b[0] - lo:b[1] - lo + 1], offset=b[0])
            for c, b in enumerate(bounds)
        ]

    def compress(self, symbols):
        """Code an integer tensor (N, C, H, W) channel-major into one byte string."""
        flat = self._per_channel(symbols).squeeze(1)
        indexes = np.repeat(np.arange(self.channels), flat.shape[1]).tolist()
        return range_encode(flat.reshape(-1).long().tolist(), self.coding_tables(), indexes)

    def decompress(self, data, shape):
        n, c, h, w = shape
        if c != self.channels:
            raise ValueError(f"shape {shape} does not match {self.channels} channels")
        per_channel = n * h * w
        indexes = np.repeat(np.arange(c), per_channel).tolist()
        values = range_decode(data, self.coding_tables(), c * per_channel, indexes)
        flat = torch.tensor(values, dtype=torch.float32).reshape(c, 1, per_channel)
        return self._restore(flat, shape)


class DiscretePrior(nn.Module):
    """Fixed pmf over ``offset .. offset+len(pmf)-1`` shared by all channels."""

    def __init__(self, pmf, offset=0):
        super().__init__()
        pmf = torch.as_tensor(pmf, dtype=torch.float64)
        if pmf.dim() != 1 or torch.any(pmf < 0):
            raise ValueError("pmf must be a non-negative vector")
        self.offset = int(offset)
        self.register_buffer("pmf_values", pmf / pmf.sum())

    def likelihood(self, values):
        k = torch.round(values).long() - self.offset
        inside = (k >= 0) & (k < self.pmf_values.numel())
        p = self.pmf_values[k.clamp(0, self.pmf_values.numel() - 1)]
        return torch.where(inside, p, torch.zeros_like(p)).to(values.dtype)

    def pmf(self, k, channel=0):
        i = int(k) - self.offset
        return float(self.pmf_values[i]) if 0 <= i < self.pmf_values.numel() else 0.0

    def coding_table(self):
        return QuantizedCDF.from_probabilities(self.pmf_values.numpy(), self.offset, escape_prob=0.0)
