"""Rate estimation and scalable (cumulative) rate accounting."""

from dataclasses import dataclass

import torch


def estimate_rate(values, model):
    """-sum log2 p(values) in bits under ``model.likelihood``.

    Noisy (training) values give the continuous relaxation; integer values give
    the integer pmf used for coding.
    """
    p = model.likelihood(values)
    if torch.any(p <= 0):
        raise ValueError("zero probability under the entropy model")
    return -torch.log2(p).sum()


@dataclass
class RateReport:
    self_bits: list
    cumulative_bits: list
    bpp: list


def accumulate_rates(per_level_bits, height=None, width=None):
    """Prefix sums of per-level bits; bpp relative to the original ``height`` x ``width``."""
    bits = [float(b) for b in per_level_bits]
    if any(b < 0 for b in bits):
        raise ValueError(f"negative level rate in {bits}")
    cumulative = []
    total = 0.0
    for b in bits:
        total += b
        cumulative.append(total)
    bpp = [c / (height * width) for c in cumulative] if height and width else []
    return RateReport(bits, cumulative, bpp)
