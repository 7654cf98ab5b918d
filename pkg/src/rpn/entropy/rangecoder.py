"""32-bit range coder with carry propagation and 16-bit frequency tables.

The encoder keeps a 33-bit ``low`` and a one-byte cache so carries ripple into
bytes that were already produced (LZMA-style). Output is big-endian; the stream
is self-terminating given the symbol count, so no length is stored in-band.
"""

import math
from bisect import bisect_right
from dataclasses import dataclass

import numpy as np

PRECISION = 16
TOTAL = 1 << PRECISION
_TOP = 1 << 24
_MASK32 = 0xFFFFFFFF
# escapes: 6-bit length prefix, then the zigzagged value in <=16-bit chunks
_ESCAPE_LEN_BITS = 6
_ESCAPE_CHUNK = 16


class DecodeError(ValueError):
    """Raised when a stream is truncated or inconsistent with the model."""


@dataclass(frozen=True)
class QuantizedCDF:
    """Integer frequency table over ``offset .. offset+n-1`` plus one escape slot.

    ``cdf`` has n + 2 entries: cdf[0] = 0, cdf[-1] = 2**16; slot n is the escape.
    """

    offset: int
    cdf: tuple

    @property
    def num_symbols(self):
        return len(self.cdf) - 2

    @property
    def lower(self):
        return self.offset

    @property
    def upper(self):
        return self.offset + self.num_symbols - 1

    def freq(self, index):
        return self.cdf[index + 1] - self.cdf[index]

    @classmethod
    def from_probabilities(cls, probs, offset=0, escape_prob=None):
        """Quantize ``probs`` (support symbols) to frequencies summing to 2**16.

        Every slot, including the escape, receives at least one count. The
        escape mass defaults to whatever ``probs`` leave unassigned.
        """
        probs = np.asarray(probs, dtype=np.float64)
        if probs.ndim != 1 or probs.size == 0:
            raise ValueError("need a non-empty 1-D probability vector")
        if np.any(~np.isfinite(probs)) or np.any(probs < 0):
            raise ValueError("probabilities must be finite and non-negative")
        if escape_prob is None:
            escape_prob = max(0.0, 1.0 - probs.sum())
        p = np.append(probs, escape_prob)
        n = p.size
        if n > TOTAL // 2:
            raise ValueError(f"alphabet of {n} symbols too large for {PRECISION}-bit tables")
        p = p / p.sum()
        scaled = p * (TOTAL - n)
        freqs = np.floor(scaled).astype(np.int64) + 1
        remainder = TOTAL - int(freqs.sum())
        if remainder:
            order = np.argsort(-(scaled - np.floor(scaled)), kind="stable")
            freqs[order[:remainder]] += 1
        cdf = np.concatenate([[0], np.cumsum(freqs)])
        return cls(int(offset), tuple(int(v) for v in cdf))

    def probabilities(self):
        """Effective coding probabilities (support slots then escape)."""
        return np.diff(np.asarray(self.cdf, dtype=np.float64)) / TOTAL


class RangeEncoder:
    def __init__(self):
        self.low = 0
        self.range = _MASK32
        self._cache = 0
        self._cache_size = 1
        self._skip_first = True  # first byte out is always 0; never written
        self._out = bytearray()

    def _emit(self, byte):
        if self._skip_first:
            self._skip_first = False
            return
        self._out.append(byte)

    def _shift_low(self):
        low = self.low
        if (low & _MASK32) < 0xFF000000 or low > _MASK32:
            carry = low >> 32
            temp = self._cache
            while True:
                self._emit((temp + carry) & 0xFF)
                temp = 0xFF
                self._cache_size -= 1
                if self._cache_size == 0:
                    break
            self._cache = (low >> 24) & 0xFF
        self._cache_size += 1
        self.low = (low << 8) & _MASK32

    def encode(self, start, freq, bits=PRECISION):
        r = self.range >> bits
        self.low += r * start
        self.range = r * freq
        while self.range < _TOP:
            self.range <<= 8
            self._shift_low()

    def encode_bits(self, value, nbits):
        """Code ``value`` uniformly over [0, 2**nbits), nbits <= 16."""
        if nbits:
            self.encode(value, 1, nbits)

    def finish(self):
        for _ in range(5):
            self._shift_low()
        return bytes(self._out)


class RangeDecoder:
    def __init__(self, data):
        self.data = bytes(data)
        self.pos = 0
        self.range = _MASK32
        self.code = 0
        for _ in range(4):
            self.code = (self.code << 8) | self._next_byte()
        self._r = 0

    def _next_byte(self):
        if self.pos >= len(self.data):
            raise DecodeError(f"stream truncated: needed byte {self.pos} of {len(self.data)}")
        b = self.data[self.pos]
        self.pos += 1
        return b

    def target(self, bits=PRECISION):
        self._r = self.range >> bits
        value = self.code // self._r
        if value >> bits:
            raise DecodeError(f"corrupt stream near byte {self.pos}")
        return value

    def consume(self, start, freq):
        r = self._r
        self.code -= r * start
        self.range = r * freq
        while self.range < _TOP:
            self.code = ((self.code << 8) | self._next_byte()) & _MASK32
            self.range <<= 8
        if self.code >= self.range:
            raise DecodeError(f"corrupt stream near byte {self.pos}")

    def decode_bits(self, nbits):
        if not nbits:
            return 0
        value = self.target(nbits)
        self.consume(value, 1)
        return value


def _zigzag(v):
    return 2 * v if v >= 0 else -2 * v - 1


def _unzigzag(z):
    return z >> 1 if not z & 1 else -((z + 1) >> 1)


def _encode_escape(enc, value):
    z = _zigzag(value)
    nbits = z.bit_length()
    if nbits >= 1 << _ESCAPE_LEN_BITS:
        raise ValueError(f"escape value {value} too large")
    enc.encode_bits(nbits, _ESCAPE_LEN_BITS)
    for shift in range(0, nbits, _ESCAPE_CHUNK):
        width = min(_ESCAPE_CHUNK, nbits - shift)
        enc.encode_bits((z >> shift) & ((1 << width) - 1), width)


def _decode_escape(dec):
    nbits = dec.decode_bits(_ESCAPE_LEN_BITS)
    z = 0
    for shift in range(0, nbits, _ESCAPE_CHUNK):
        width = min(_ESCAPE_CHUNK, nbits - shift)
        z |= dec.decode_bits(width) << shift
    return _unzigzag(z)


def escape_bits(value):
    """Bits spent on an escaped value beyond the escape slot itself."""
    return _ESCAPE_LEN_BITS + _zigzag(int(value)).bit_length()


def _tables_and_indexes(model, n, indexes):
    tables = [model] if isinstance(model, QuantizedCDF) else list(model)
    if indexes is None:
        if len(tables) != 1:
            raise ValueError("indexes are required with more than one table")
        indexes = [0] * n
    elif len(indexes) != n:
        raise ValueError(f"{len(indexes)} indexes for {n} symbols")
    return tables, indexes


def range_encode(symbols, model, indexes=None):
    """Range-code integer ``symbols``; ``model`` is one table or a list indexed by ``indexes``."""
    symbols = [int(s) for s in symbols]
    tables, indexes = _tables_and_indexes(model, len(symbols), indexes)
    enc = RangeEncoder()
    for s, i in zip(symbols, indexes):
        table = tables[i]
        cdf = table.cdf
        k = s - table.offset
        n = len(cdf) - 2
        if 0 <= k < n:
            enc.encode(cdf[k], cdf[k + 1] - cdf[k])
        else:
            enc.encode(cdf[n], cdf[n + 1] - cdf[n])
            _encode_escape(enc, s)
    return enc.finish()


def range_decode(data, model, n, indexes=None):
    """Inverse of :func:`range_encode` for ``n`` symbols under the identical model."""
    tables, indexes = _tables_and_indexes(model, n, indexes)
    if n == 0:
        return []
    dec = RangeDecoder(data)
    out = []
    for i in indexes:
        table = tables[i]
        cdf = table.cdf
        k = bisect_right(cdf, dec.target()) - 1
        dec.consume(cdf[k], cdf[k + 1] - cdf[k])
        if k == len(cdf) - 2:
            out.append(_decode_escape(dec))
        else:
            out.append(table.offset + k)
    return out


def ideal_bits(symbols, table, indexes=None):
    """Code length implied by the quantized tables, -sum log2 p (escapes included)."""
    tables, indexes = _tables_and_indexes(table, len(symbols), indexes)
    total = 0.0
    for s, i in zip(symbols, indexes):
        t = tables[i]
        k = int(s) - t.offset
        if 0 <= k < t.num_symbols:
            total += PRECISION - math.log2(t.freq(k))
        else:
            total += PRECISION - math.log2(t.freq(t.num_symbols)) + escape_bits(s)
    return total
