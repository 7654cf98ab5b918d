from rpn.entropy.prior import DiscretePrior, FactorizedPrior
from rpn.entropy.quantize import QuantizerMode, quantize, round_half_away
from rpn.entropy.rangecoder import (
    DecodeError,
    QuantizedCDF,
    RangeDecoder,
    RangeEncoder,
    range_decode,
    range_encode,
)
from rpn.entropy.rate import RateReport, accumulate_rates, estimate_rate

__all__ = [
    "DecodeError",
    "DiscretePrior",
    "FactorizedPrior",
    "QuantizedCDF",
    "QuantizerMode",
    "RangeDecoder",
    "RangeEncoder",
    "RateReport",
    "accumulate_rates",
    "estimate_rate",
    "quantize",
    "range_decode",
    "range_encode",
    "round_half_away",
]
