"""Reverse-pyramid aleatoric uncertainty heads and the L_U / L_UG objectives."""

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

U_CLAMP = 10.0
_LN2 = math.log(2.0)


class UncertaintyHead(nn.Module):
    """Maps the decoded latent of level l+1 to a log-variance map u_l at level-l size.

    Three 3x3 conv stages with leaky ReLU, bilinear resampling to the target
    size, then a 1x1 projection to one channel; output clamped to [-10, 10].
    """

    def __init__(self, in_channels, hidden=16):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(in_channels, hidden, 3, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(hidden, hidden, 3, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(hidden, hidden, 3, padding=1),
            nn.LeakyReLU(0.2),
        )
        for m in self.body:
            if isinstance(m, nn.Conv2d):
                nn.init.zeros_(m.bias)
        self.proj = nn.Conv2d(hidden, 1, 1)
        # constant initial map; training introduces spatial structure
        nn.init.zeros_(self.proj.weight)
        nn.init.zeros_(self.proj.bias)

    def forward(self, y_next, size):
        t = self.body(y_next)
        t = F.interpolate(t, size=tuple(size), mode="bilinear", align_corners=False)
        return torch.clamp(self.proj(t), -U_CLAMP, U_CLAMP)


def estimate_uncertainty(y_next, head, size):
    if y_next.dim() != 4:
        raise ValueError(f"expected a (N, C, h, w) latent, got {tuple(y_next.shape)}")
    return head(y_next, size)


def _pixel_error(x_hat, x):
    if x_hat.shape != x.shape:
        raise ValueError(f"shape mismatch {tuple(x_hat.shape)} vs {tuple(x.shape)}")
    return ((x_hat - x) ** 2).mean(dim=1)


def loss_uncertainty(x_hat, x, u):
    """mean_p [ exp(-(u_p + ln 2)) e_p + 1.5 u_p ], e_p the per-pixel squared error.

    exp(-(u + ln 2)) = 1 / (2 delta) with delta = exp(u).
    """
    e = _pixel_error(x_hat, x)
    u = torch.clamp(u[:, 0], -U_CLAMP, U_CLAMP)
    return (torch.exp(-(u + _LN2)) * e + 1.5 * u).mean()


def normalized_weights(u):
    """Per-image min-max normalization of detached u to [0, 1]; constant maps give ones."""
    u = u.detach()[:, 0]
    flat = u.flatten(1)
    lo = flat.min(dim=1).values[:, None, None]
    hi = flat.max(dim=1).values[:, None, None]
    span = hi - lo
    w = (u - lo) / torch.where(span > 0, span, torch.ones_like(span))
    return torch.where(span > 0, w, torch.ones_like(w))


def loss_uncertainty_guided(x_hat, x, u):
    """mean_p w_p e_p with w the normalized, gradient-free uncertainty map."""
    return (normalized_weights(u) * _pixel_error(x_hat, x)).mean()


def reverse_pyramid_pass(latents, heads, sizes):
    """Uncertainty maps [u_0, ..., u_{L-2}], each u_l estimated from latents[l+1].

    ``sizes[l]`` is the (H, W) of the level-l image. Levels are visited top-down
    in resolution order (L-2 first); the top level has no map.
    """
    maps = [None] * (len(latents) - 1)
    for level in range(len(latents) - 2, -1, -1):
        maps[level] = estimate_uncertainty(latents[level + 1], heads[level], sizes[level])
    return maps
