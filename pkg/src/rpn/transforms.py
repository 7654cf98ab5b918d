"""Analysis / synthesis transforms: stride-2 5x5 convolutions with GDN."""

import torch
import torch.nn as nn
import torch.nn.functional as F

NUM_STAGES = 4
DOWNSCALE = 2**NUM_STAGES


class _LowerBound(torch.autograd.Function):
    # gradient passes where the input is above the bound or is being pushed up
    @staticmethod
    def forward(ctx, x, bound):
        ctx.save_for_backward(x, bound)
        return torch.max(x, bound)

    @staticmethod
    def backward(ctx, grad_output):
        x, bound = ctx.saved_tensors
        pass_through = (x >= bound) | (grad_output < 0)
        return pass_through.type_as(grad_output) * grad_output, None


def lower_bound(x, bound):
    return _LowerBound.apply(x, torch.as_tensor(bound, dtype=x.dtype, device=x.device))


def _check_gdn_shapes(x, beta, gamma):
    c = x.shape[1]
    if beta.shape != (c,) or gamma.shape != (c, c):
        raise ValueError(
            f"GDN parameter shapes beta={tuple(beta.shape)} gamma={tuple(gamma.shape)} "
            f"do not match {c} input channels"
        )


def gdn_forward(x, beta, gamma):
    """y_i = x_i / sqrt(beta_i + sum_j gamma_ij x_j^2) at every spatial position."""
    _check_gdn_shapes(x, beta, gamma)
    c = x.shape[1]
    norm = F.conv2d(x * x, gamma.view(c, c, 1, 1), beta)
    return x / torch.sqrt(norm)


def igdn_forward(y, beta, gamma):
    """One-step inverse of GDN: x_i = y_i * sqrt(beta_i + sum_j gamma_ij y_j^2)."""
    _check_gdn_shapes(y, beta, gamma)
    c = y.shape[1]
    norm = F.conv2d(y * y, gamma.view(c, c, 1, 1), beta)
    return y * torch.sqrt(norm)


class GDN(nn.Module):
    """GDN layer with reparameterized, lower-bounded beta and gamma.

    beta = max(b, sqrt(beta_min))^2 and gamma = max(g, 0)^2, so beta >= beta_min
    and gamma >= 0 hold for any value of the raw parameters.
    """

    def __init__(self, channels, inverse=False, beta_min=1e-6, gamma_init=0.1):
        super().__init__()
        self.inverse = inverse
        self.beta_min = float(beta_min)
        self.beta_raw = nn.Parameter(torch.ones(channels))
        self.gamma_raw = nn.Parameter(torch.sqrt(gamma_init * torch.eye(channels)))

    @property
    def beta(self):
        return lower_bound(self.beta_raw, self.beta_min**0.5) ** 2

    @property
    def gamma(self):
        return lower_bound(self.gamma_raw, 0.0) ** 2

    def forward(self, x):
        fn = igdn_forward if self.inverse else gdn_forward
        return fn(x, self.beta, self.gamma)


def _conv(in_ch, out_ch):
    conv = nn.Conv2d(in_ch, out_ch, 5, stride=2, padding=2)
    nn.init.zeros_(conv.bias)
    return conv


def _deconv(in_ch, out_ch):
    deconv = nn.ConvTranspose2d(in_ch, out_ch, 5, stride=2, padding=2, output_padding=1)
    nn.init.zeros_(deconv.bias)
    return deconv


class AnalysisTransform(nn.Module):
    """[Conv5x5/2 + GDN] x3 then Conv5x5/2: image (N,3,H,W) -> latent (N,C,H/16,W/16)."""

    def __init__(self, channels, in_channels=3):
        super().__init__()
        self.channels = channels
        layers = []
        for i in range(NUM_STAGES):
            layers.append(_conv(in_channels if i == 0 else channels, channels))
            if i < NUM_STAGES - 1:
                layers.append(GDN(channels))
        self.layers = nn.Sequential(*layers)

    def forward(self, x):
        h, w = x.shape[-2:]
        if h % DOWNSCALE or w % DOWNSCALE:
            raise ValueError(f"input dims {h}x{w} are not divisible by {DOWNSCALE}")
        return self.layers(x)


class SynthesisTransform(nn.Module):
    """[Deconv5x5/2 + IGDN] x3 then Deconv5x5/2: latent -> image at 16x the size.

    Output is not clamped; callers clamp to [0, 1] when evaluating.
    """

    def __init__(self, channels, out_channels=3):
        super().__init__()
        self.channels = channels
        layers = []
        for i in range(NUM_STAGES):
            last = i == NUM_STAGES - 1
            layers.append(_deconv(channels, out_channels if last else channels))
            if not last:
                layers.append(GDN(channels, inverse=True))
        self.layers = nn.Sequential(*layers)

    def forward(self, y):
        return self.layers(y)
