"""Truncatable multi-level container.

Layout (little-endian)::

    magic "RPNS" | version u8 | mode u8 | L u8 | orig_H u16 | orig_W u16
    L x {level_H u16, level_W u16, C u16, seg_len u32}
    segment_0 .. segment_{L-1}

Cutting the byte string after any complete segment yields a valid container
holding the corresponding prefix of levels; the header is left untouched.
"""

import struct
from dataclasses import dataclass, field

from rpn.errors import FormatError

MAGIC = b"RPNS"
VERSION = 1
MODES = ("spatial", "quality")

_HEADER_FIELDS = (
    ("magic", "4s"),
    ("version", "B"),
    ("mode", "B"),
    ("levels", "B"),
    ("orig_height", "H"),
    ("orig_width", "H"),
)
_LEVEL_FIELDS = (("height", "H"), ("width", "H"), ("channels", "H"), ("length", "I"))


@dataclass(frozen=True)
class LevelRecord:
    height: int
    width: int
    channels: int
    length: int


@dataclass
class ScalableContainer:
    mode: str
    orig_height: int
    orig_width: int
    records: list
    segments: list = field(default_factory=list)

    @property
    def levels(self):
        return len(self.records)

    @property
    def available_levels(self):
        return len(self.segments)

    def header_size(self):
        return 11 + 10 * self.levels

    def truncated(self, k):
        """Container holding only the first ``k`` segments."""
        if not 0 <= k <= self.levels:
            raise ValueError(f"cannot keep {k} of {self.levels} levels")
        return ScalableContainer(
            self.mode, self.orig_height, self.orig_width, list(self.records),
            list(self.segments[:k]),
        )


def serialize_container(c):
    if c.mode not in MODES:
        raise ValueError(f"unknown mode {c.mode!r}")
    if not 1 <= c.levels <= 255:
        raise ValueError(f"level count {c.levels} out of range")
    for rec, seg in zip(c.records, c.segments):
        if len(seg) != rec.length:
            raise ValueError(f"segment of {len(seg)} bytes recorded as {rec.length}")
    out = bytearray(struct.pack(
        "<4sBBBHH", MAGIC, VERSION, MODES.index(c.mode), c.levels, c.orig_height, c.orig_width,
    ))
    for rec in c.records:
        out += struct.pack("<HHHI", rec.height, rec.width, rec.channels, rec.length)
    for seg in c.segments:
        out += seg
    return bytes(out)


def truncate_to(data, k):
    """Keep the header and the first ``k`` segments of a serialized container."""
    c = parse_container(data)
    if k > c.available_levels:
        raise ValueError(f"container holds only {c.available_levels} segments")
    return data[:c.header_size() + sum(r.length for r in c.records[:k])]


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def read(self, name, fmt):
        size = struct.calcsize("<" + fmt)
        if self.pos + size > len(self.data):
            raise FormatError(f"truncated header: field '{name}' at byte {self.pos}")
        (value,) = struct.unpack_from("<" + fmt, self.data, self.pos)
        self.pos += size
        return value


def parse_container(data):
    data = bytes(data)
    r = _Reader(data)
    head = {name: r.read(name, fmt) for name, fmt in _HEADER_FIELDS}
    if head["magic"] != MAGIC:
        raise FormatError(f"bad magic {head['magic']!r}")
    if head["version"] != VERSION:
        raise FormatError(f"unsupported version {head['version']}")
    if head["mode"] >= len(MODES):
        raise FormatError(f"unknown mode code {head['mode']}")
    if head["levels"] == 0:
        raise FormatError("container declares zero levels")
    records = []
    for i in range(head["levels"]):
        fields = {name: r.read(f"level[{i}].{name}", fmt) for name, fmt in _LEVEL_FIELDS}
        records.append(LevelRecord(**fields))

    segments = []
    pos = r.pos
    for i, rec in enumerate(records):
        if pos == len(data) and rec.length:
            break
        end = pos + rec.length
        if end > len(data):
            raise FormatError(
                f"segment {i} declares {rec.length} bytes but only {len(data) - pos} remain"
            )
        segments.append(data[pos:end])
        pos = end
    if pos != len(data):
        raise FormatError(f"{len(data) - pos} trailing bytes after the last segment")
    return ScalableContainer(
        MODES[head["mode"]], head["orig_height"], head["orig_width"], records, segments,
    )
