"""Cross-resolution context mining: iterated enhancement / redundancy-removal blocks.

The module maps a decoded lower-level latent to a resolution field that serves
as residual prior (and synthesis side input) for the next level. Block pattern
is IEB-(RRB-IEB)^K followed by a 1x1 projection to the next level's channels.
"""

import torch
import torch.nn as nn
import torch.nn.functional as F

DEFAULT_TAU = 2.0 / 3.0
DEFAULT_REDUCTION = 4


def _conv1x1(in_ch, out_ch, bias=True):
    return nn.Conv2d(in_ch, out_ch, 1, bias=bias)


class GCA(nn.Module):
    """Global context attention with a bottleneck channel transform and residual add."""

    def __init__(self, channels, reduction=DEFAULT_REDUCTION):
        super().__init__()
        if reduction < 1:
            raise ValueError(f"reduction ratio must be >= 1, got {reduction}")
        hidden = max(1, channels // reduction)
        self.score = _conv1x1(channels, 1, bias=False)
        self.w1 = _conv1x1(channels, hidden)
        self.norm = nn.LayerNorm([hidden, 1, 1])
        self.w2 = _conv1x1(hidden, channels)

    def attention_weights(self, x):
        """Softmax over all N_p positions of the 1x1 score map, shape (N, H*W)."""
        return torch.softmax(self.score(x).flatten(1), dim=1)

    def context(self, x):
        w = self.attention_weights(x)
        return torch.einsum("ncp,np->nc", x.flatten(2), w)[..., None, None]

    def forward(self, x):
        t = self.w2(F.relu(self.norm(self.w1(self.context(x)))))
        return x + t


def sample_gumbel(shape, generator=None, dtype=torch.float32, device=None):
    u = torch.rand(shape, generator=generator, dtype=dtype, device=device)
    tiny = torch.finfo(dtype).tiny
    return -torch.log((-torch.log(u.clamp_min(tiny))).clamp_min(tiny))


def gumbel_mask(logits, tau, training, hard=True, gumbel=None, generator=None):
    """Binary keep-mask from two-category logits stacked on dim 0.

    Training draws Gumbel(0, 1) noise (or uses ``gumbel`` as given) and returns
    the category-0 softmax probability at temperature ``tau``; with ``hard`` the
    forward value is binarized and the backward pass uses the soft gradient.
    Inference is a deterministic argmax (ties keep).
    """
    if not tau > 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    if logits.shape[0] != 2:
        raise ValueError(f"expected 2 categories on dim 0, got {logits.shape[0]}")
    if not training:
        return (logits[0] >= logits[1]).to(logits.dtype)
    if gumbel is None:
        gumbel = sample_gumbel(logits.shape, generator, logits.dtype, logits.device)
    soft = torch.softmax((logits + gumbel) / tau, dim=0)[0]
    if not hard:
        return soft
    z = logits + gumbel
    binary = (z[0] >= z[1]).to(soft.dtype)
    return binary - soft.detach() + soft


def gumbel_channel_mask(V, tau, training, hard=True, gumbel=None, generator=None):
    """Channel mask of length c from logits V of shape (2, c)."""
    return gumbel_mask(V, tau, training, hard, gumbel, generator)


def gumbel_spatial_mask(x, head, tau, training, hard=True, gumbel=None, generator=None):
    """Spatial mask (N, H, W) from the 2-channel logit map ``head(x)``."""
    logits = head(x).transpose(0, 1)
    return gumbel_mask(logits, tau, training, hard, gumbel, generator)


def smconv(x, csm, ssm, weight, dilation=1):
    """Mask-modulated convolution: conv(x * ssm) * csm, 'same' padding, no bias."""
    n, c, h, w = x.shape
    if ssm.shape != (n, h, w):
        raise ValueError(f"spatial mask shape {tuple(ssm.shape)} != {(n, h, w)}")
    if csm.shape != (weight.shape[0],):
        raise ValueError(f"channel mask length {tuple(csm.shape)} != {weight.shape[0]}")
    pad = dilation * (weight.shape[-1] // 2)
    out = F.conv2d(x * ssm[:, None], weight, padding=pad, dilation=dilation)
    return out * csm[None, :, None, None]


class SMConv(nn.Module):
    def __init__(self, channels, kernel_size, dilation=1):
        super().__init__()
        self.dilation = dilation
        self.weight = nn.Parameter(torch.empty(channels, channels, kernel_size, kernel_size))
        nn.init.kaiming_uniform_(self.weight, a=5**0.5)

    def forward(self, x, csm, ssm):
        return smconv(x, csm, ssm, self.weight, self.dilation)


def _spatial_logit_head(channels):
    hidden = max(4, channels // 2)
    return nn.Sequential(
        nn.Conv2d(channels, hidden, 3, padding=1),
        nn.ReLU(),
        nn.Conv2d(hidden, hidden, 3, padding=1),
        nn.ReLU(),
        nn.Conv2d(hidden, hidden, 3, padding=1),
        nn.ReLU(),
        nn.Conv2d(hidden, 2, 1),
    )


class IEB(nn.Module):
    """Information enhancement block.

    (y_ieb_prev: N x c/2 x 2h x 2w, y_rrb_prev: N x c x h x w) -> N x c/2 x 2h x 2w.
    In quality mode (``spatial=False``) all features share one resolution.
    """

    def __init__(self, channels, spatial=True, reduction=DEFAULT_REDUCTION):
        super().__init__()
        half = channels // 2
        if spatial:
            self.up = nn.ConvTranspose2d(channels, half, 3, stride=2, padding=1, output_padding=1)
        else:
            self.up = nn.Conv2d(channels, half, 3, padding=1)
        self.gca = GCA(half, reduction)
        self.w3 = _conv1x1(2 * half, half)

    def forward(self, y_ieb_prev, y_rrb_prev):
        t = self.gca(self.up(y_rrb_prev))
        if t.shape != y_ieb_prev.shape:
            raise ValueError(
                f"upsampled RRB feature {tuple(t.shape)} does not match IEB feature "
                f"{tuple(y_ieb_prev.shape)}"
            )
        return self.w3(torch.cat([t, y_ieb_prev], dim=1))


class RRB(nn.Module):
    """Redundancy removal block with Gumbel channel/spatial masks and SMConv branches.

    (y_ieb: N x c/2 x 2h x 2w, y_rrb_prev: N x c x h x w) -> N x c x h x w.
    """

    def __init__(self, channels, spatial=True, tau=DEFAULT_TAU, reduction=DEFAULT_REDUCTION):
        super().__init__()
        half = channels // 2
        self.tau = tau
        self.hard_masks = False
        self.down = nn.Conv2d(half, channels, 3, stride=2 if spatial else 1, padding=1)
        # biased towards "keep" so a fresh block does not discard half its channels
        self.V = nn.Parameter(torch.stack([torch.ones(channels), torch.zeros(channels)]))
        with torch.no_grad():
            self.V.add_(0.1 * torch.randn_like(self.V))
        self.spatial_logits = _spatial_logit_head(channels)
        self.branches = nn.ModuleList(
            [SMConv(channels, 1), SMConv(channels, 3), SMConv(channels, 3, dilation=2)]
        )
        self.w4 = _conv1x1(3 * channels, channels)
        self.gca = GCA(channels, reduction)
        self.w5 = _conv1x1(2 * channels, channels)

    def masks(self, t, generator=None):
        csm = gumbel_channel_mask(
            self.V, self.tau, self.training, self.hard_masks, generator=generator
        )
        ssm = gumbel_spatial_mask(
            t, self.spatial_logits, self.tau, self.training, self.hard_masks,
            generator=generator,
        )
        return csm, ssm

    def forward(self, y_ieb, y_rrb_prev, generator=None):
        t = self.down(y_ieb)
        if t.shape != y_rrb_prev.shape:
            raise ValueError(
                f"downsampled IEB feature {tuple(t.shape)} does not match RRB feature "
                f"{tuple(y_rrb_prev.shape)}"
            )
        csm, ssm = self.masks(t, generator)
        s = torch.cat([branch(t, csm, ssm) for branch in self.branches], dim=1)
        t_hat = t + self.gca(self.w4(s))
        return self.w5(torch.cat([t_hat, y_rrb_prev], dim=1))


class CRCM(nn.Module):
    """Maps a decoded latent (N, c_in, h, w) to a resolution field (N, c_out, h', w').

    h' = 2h in spatial mode and h in quality mode. The first IEB receives a zero
    enhancement feature, so K=1 yields IEB-RRB-IEB.
    """

    def __init__(self, in_channels, out_channels, iterations=2, spatial=True,
                 tau=DEFAULT_TAU, reduction=DEFAULT_REDUCTION):
        super().__init__()
        if iterations < 1:
            raise ValueError(f"iteration count must be >= 1, got {iterations}")
        if in_channels % 2:
            raise ValueError(f"CRCM input channels must be even, got {in_channels}")
        self.spatial = spatial
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.iebs = nn.ModuleList(
            [IEB(in_channels, spatial, reduction) for _ in range(iterations + 1)]
        )
        self.rrbs = nn.ModuleList(
            [RRB(in_channels, spatial, tau, reduction) for _ in range(iterations)]
        )
        self.proj = _conv1x1(in_channels // 2, out_channels)

    def set_hard_masks(self, flag):
        for rrb in self.rrbs:
            rrb.hard_masks = bool(flag)

    def forward(self, y_prev, generator=None):
        n, c, h, w = y_prev.shape
        if c != self.in_channels:
            raise ValueError(f"expected {self.in_channels} channels, got {c}")
        scale = 2 if self.spatial else 1
        y_ieb = y_prev.new_zeros(n, c // 2, scale * h, scale * w)
        y_rrb = y_prev
        y_ieb = self.iebs[0](y_ieb, y_rrb)
        for rrb, ieb in zip(self.rrbs, self.iebs[1:]):
            y_rrb = rrb(y_ieb, y_rrb, generator)
            y_ieb = ieb(y_ieb, y_rrb)
        return self.proj(y_ieb)
