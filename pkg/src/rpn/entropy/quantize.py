"""Additive-noise training surrogate and deterministic rounding."""

import enum

import torch


class QuantizerMode(str, enum.Enum):
    TRAIN_NOISE = "train_noise"
    EVAL_ROUND = "eval_round"


def round_half_away(y):
    # coder and rate model must agree on ties, so torch.round (half-to-even) is avoided
    return torch.sign(y) * torch.floor(torch.abs(y) + 0.5)


def quantize(y, mode, generator=None):
    mode = QuantizerMode(mode)
    if mode is QuantizerMode.TRAIN_NOISE:
        noise = torch.rand(y.shape, generator=generator, dtype=y.dtype, device=y.device) - 0.5
        return y + noise
    return round_half_away(y)
