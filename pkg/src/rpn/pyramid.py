"""Forward top-down pyramid: base-layer coding, residual enhance layers, container I/O.

Images are NCHW float tensors in [0, 1]. The encoder always feeds the CRCM with
the latent the decoder will reconstruct, so both sides derive bit-identical
resolution fields.
"""

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from rpn.container import LevelRecord, ScalableContainer, parse_container
from rpn.crcm import CRCM, DEFAULT_TAU
from rpn.entropy import FactorizedPrior, estimate_rate, quantize
from rpn.errors import ConfigError, FormatError, InsufficientLayersError
from rpn.transforms import DOWNSCALE, AnalysisTransform, SynthesisTransform
from rpn.uncertainty import UncertaintyHead

SPATIAL_LAMBDAS = (0.0067, 0.013, 0.025)


@dataclass
class PyramidConfig:
    mode: str = "spatial"
    levels: int = 3
    channels: tuple = (16, 16, 16)
    lambdas: tuple = SPATIAL_LAMBDAS
    iterations: int = 2
    tau: float = DEFAULT_TAU

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        self.lambdas = tuple(float(v) for v in self.lambdas)
        if self.mode not in ("spatial", "quality"):
            raise ConfigError(f"mode must be 'spatial' or 'quality', got {self.mode!r}")
        if self.levels < 1:
            raise ConfigError("need at least one level")
        if len(self.channels) != self.levels or len(self.lambdas) != self.levels:
            raise ConfigError(
                f"{self.levels} levels need as many channel counts and lambdas, got "
                f"{self.channels} and {self.lambdas}"
            )
        if any(v <= 0 for v in self.lambdas):
            raise ConfigError(f"lambdas must be positive, got {self.lambdas}")
        if self.iterations < 1:
            raise ConfigError("CRCM iteration count must be >= 1")

    @classmethod
    def default(cls, mode="spatial", levels=None, channels=None):
        if mode == "spatial":
            levels = levels or 3
            lambdas = SPATIAL_LAMBDAS if levels == 3 else tuple(
                SPATIAL_LAMBDAS[0] * 2.0**i for i in range(levels)
            )
        else:
            levels = levels or 4
            # later quality levels weigh distortion more
            lambdas = tuple(0.0134 / 2.0**i for i in range(levels))
        if channels is None:
            channels = (16,) * levels if mode == "spatial" else tuple(
                16 + 4 * i for i in range(levels)
            )
        elif isinstance(channels, int):
            channels = (channels,) * levels
        return cls(mode=mode, levels=levels, channels=channels, lambdas=lambdas)

    @property
    def scale_factors(self):
        if self.mode == "quality":
            return (1,) * self.levels
        return tuple(2 ** (self.levels - 1 - l) for l in range(self.levels))

    @property
    def alignment(self):
        """Full-resolution dims must be multiples of this for every level to fit."""
        return DOWNSCALE * self.scale_factors[0]


@dataclass
class LevelCodingState:
    level: int
    y: torch.Tensor
    y_hat: torch.Tensor
    y_bar: torch.Tensor
    r_hat: torch.Tensor
    x_hat: torch.Tensor
    likelihoods: torch.Tensor
    bits: torch.Tensor = None
    segment: bytes = field(default=None, repr=False)

    @property
    def coded(self):
        """The tensor that is entropy coded: y_hat at the base, r_hat above it."""
        return self.y_hat if self.r_hat is None else self.r_hat


def build_pyramid_inputs(x, cfg):
    """Per-level reference images, level 0 first (bicubic, anti-aliased)."""
    out = []
    for f in cfg.scale_factors:
        if f == 1:
            out.append(x)
            continue
        h, w = x.shape[-2:]
        if h % f or w % f:
            raise ValueError(f"{h}x{w} is not divisible by scale factor {f}")
        small = F.interpolate(x, size=(h // f, w // f), mode="bicubic",
                              align_corners=False, antialias=True)
        out.append(small.clamp(0.0, 1.0))
    return out


def pad_to_multiple(x, multiple):
    """Reflect-pad bottom/right of an (N, C, H, W) tensor up to ``multiple``."""
    h, w = x.shape[-2:]
    ph, pw = -h % multiple, -w % multiple
    if not (ph or pw):
        return x
    arr = x.detach().cpu().numpy()
    widths = [(0, 0), (0, 0), (0, ph), (0, pw)]
    mode = "reflect" if min(h, w) > 1 else "edge"
    return torch.from_numpy(np.pad(arr, widths, mode=mode)).to(x.dtype)


class ScalableCodec(nn.Module):
    """All trainable parts of the pyramid: per-level transforms and priors, CRCMs, heads."""

    def __init__(self, cfg):
        super().__init__()
        self.cfg = cfg
        c = cfg.channels
        self.analysis = nn.ModuleList([AnalysisTransform(ch) for ch in c])
        self.synthesis = nn.ModuleList([SynthesisTransform(ch) for ch in c])
        self.priors = nn.ModuleList([FactorizedPrior(ch) for ch in c])
        spatial = cfg.mode == "spatial"
        self.crcms = nn.ModuleList([
            CRCM(c[l - 1], c[l], cfg.iterations, spatial, cfg.tau) for l in range(1, cfg.levels)
        ])
        self.heads = nn.ModuleList([UncertaintyHead(c[l + 1]) for l in range(cfg.levels - 1)])

    def set_hard_masks(self, flag):
        for crcm in self.crcms:
            crcm.set_hard_masks(flag)

    def resolution_field(self, level, y_hat_prev, generator=None):
        y_bar = self.crcms[level - 1](y_hat_prev, generator)
        return y_bar

    def forward(self, x, noise=True, generator=None):
        """Full forward pyramid on an aligned image batch; returns per-level states.

        ``noise`` selects additive uniform noise (training surrogate) versus rounding.
        """
        check_aligned(x, self.cfg)
        mode = "train_noise" if noise else "eval_round"
        states = []
        y_hat_prev = None
        for level, x_l in enumerate(build_pyramid_inputs(x, self.cfg)):
            y = self.analysis[level](x_l)
            if level == 0:
                y_bar = r_hat = None
                y_hat = quantize(y, mode, generator)
                likelihoods = self.priors[0](y_hat)
            else:
                y_bar = self.resolution_field(level, y_hat_prev, generator)
                if y_bar.shape != y.shape:
                    raise ConfigError(
                        f"resolution field {tuple(y_bar.shape)} does not match level-{level} "
                        f"latent {tuple(y.shape)}"
                    )
                r_hat = quantize(y - y_bar, mode, generator)
                likelihoods = self.priors[level](r_hat)
                y_hat = r_hat + y_bar
            x_hat = self.synthesis[level](y_hat)
            bits = -torch.log2(likelihoods).sum()
            states.append(LevelCodingState(level, y, y_hat, y_bar, r_hat, x_hat, likelihoods, bits))
            y_hat_prev = y_hat
        return states


def check_aligned(x, cfg):
    h, w = x.shape[-2:]
    if h % cfg.alignment or w % cfg.alignment:
        raise ConfigError(f"{h}x{w} is not aligned to {cfg.alignment}; pad first")


def _decode_latent(model, level, symbols, y_hat_prev):
    """Shared encoder/decoder reconstruction of y_hat_l and x_hat_l from integer symbols."""
    if level == 0:
        y_bar = None
        y_hat = symbols
    else:
        y_bar = model.resolution_field(level, y_hat_prev)
        y_hat = symbols + y_bar
    return y_bar, y_hat, model.synthesis[level](y_hat)


@torch.no_grad()
def compress_base(x0, model):
    """Code level 0: y0_hat = round(A0(x0)); returns (segment, state)."""
    y = model.analysis[0](x0)
    symbols = quantize(y, "eval_round")
    segment = model.priors[0].compress(symbols)
    _, y_hat, x_hat = _decode_latent(model, 0, symbols, None)
    bits = estimate_rate(symbols, model.priors[0])
    state = LevelCodingState(0, y, y_hat, None, None, x_hat,
                             model.priors[0].likelihood(symbols), bits, segment)
    return segment, state


@torch.no_grad()
def compress_enhance(level, x_l, y_hat_prev, model):
    """Code level l >= 1 as r_hat = round(A_l(x_l) - y_bar) with y_bar = CRCM(y_hat_prev)."""
    y = model.analysis[level](x_l)
    y_bar = model.resolution_field(level, y_hat_prev)
    if y_bar.shape != y.shape:
        raise ConfigError(
            f"resolution field {tuple(y_bar.shape)} does not match latent {tuple(y.shape)}"
        )
    r_hat = quantize(y - y_bar, "eval_round")
    segment = model.priors[level].compress(r_hat)
    _, y_hat, x_hat = _decode_latent(model, level, r_hat, y_hat_prev)
    prior = model.priors[level]
    state = LevelCodingState(level, y, y_hat, y_bar, r_hat, x_hat, prior.likelihood(r_hat),
                             estimate_rate(r_hat, prior), segment)
    return segment, state


@torch.no_grad()
def encode_scalable(x, model):
    """Encode one image (1, 3, H, W) in [0, 1]; returns (container, per-level states)."""
    if x.dim() != 4 or x.shape[0] != 1 or x.shape[1] != 3:
        raise ValueError(f"expected a (1, 3, H, W) image, got {tuple(x.shape)}")
    cfg = model.cfg
    was_training = model.training
    model.eval()
    try:
        orig_h, orig_w = x.shape[-2:]
        padded = pad_to_multiple(x, cfg.alignment)
        states, records, segments = [], [], []
        y_hat_prev = None
        for level, x_l in enumerate(build_pyramid_inputs(padded, cfg)):
            if level == 0:
                segment, state = compress_base(x_l, model)
            else:
                segment, state = compress_enhance(level, x_l, y_hat_prev, model)
            y_hat_prev = state.y_hat
            states.append(state)
            segments.append(segment)
            records.append(LevelRecord(x_l.shape[-2], x_l.shape[-1], cfg.channels[level],
                                       len(segment)))
    finally:
        model.train(was_training)
    return ScalableContainer(cfg.mode, orig_h, orig_w, records, segments), states


def level_output_size(cfg, level, orig_h, orig_w):
    f = cfg.scale_factors[level]
    return -(-orig_h // f), -(-orig_w // f)


@torch.no_grad()
def decode_scalable(container, target_level, model):
    """Reconstruct level ``target_level`` as a (1, 3, h, w) tensor clamped to [0, 1]."""
    if isinstance(container, (bytes, bytearray)):
        container = parse_container(container)
    cfg = model.cfg
    if container.mode != cfg.mode or container.levels != cfg.levels:
        raise ConfigError(
            f"container ({container.mode}, L={container.levels}) does not match model "
            f"({cfg.mode}, L={cfg.levels})"
        )
    if not 0 <= target_level < container.levels:
        raise ValueError(f"level {target_level} outside 0..{container.levels - 1}")
    if target_level >= container.available_levels:
        raise InsufficientLayersError(
            f"level {target_level} requested but only {container.available_levels} "
            f"segments present"
        )
    was_training = model.training
    model.eval()
    try:
        y_hat_prev = x_hat = None
        for level in range(target_level + 1):
            rec = container.records[level]
            if rec.channels != cfg.channels[level]:
                raise FormatError(
                    f"level {level} has {rec.channels} channels, model expects "
                    f"{cfg.channels[level]}"
                )
            if rec.height % DOWNSCALE or rec.width % DOWNSCALE:
                raise FormatError(f"level {level} dims {rec.height}x{rec.width} not aligned")
            shape = (1, rec.channels, rec.height // DOWNSCALE, rec.width // DOWNSCALE)
            symbols = model.priors[level].decompress(container.segments[level], shape)
            symbols = symbols.to(model.synthesis[level].layers[0].weight.dtype)
            _, y_hat_prev, x_hat = _decode_latent(model, level, symbols, y_hat_prev)
    finally:
        model.train(was_training)
    h, w = level_output_size(cfg, target_level, container.orig_height, container.orig_width)
    return x_hat[..., :h, :w].clamp(0.0, 1.0)
