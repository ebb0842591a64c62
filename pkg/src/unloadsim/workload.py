"""Deterministic workload generation: Zipf-distributed small writes over the
region layout, plus the binary trace-dump format.

The RNG is a self-contained SplitMix64 so traces are bit-reproducible on any
platform: state advances by the 64-bit golden-ratio constant and each output
is the standard xor-shift/multiply finalizer of the new state.  Independent
streams derive their initial state from (seed, stream id), never from global
or platform RNGs.
"""

from __future__ import annotations

import math
import struct
from bisect import bisect_right
from dataclasses import dataclass
from typing import BinaryIO, Iterable, Iterator

from .core import RegionLayout, WriteRequest

MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15

DEFAULT_WRITE_SIZE = 16
DEFAULT_NUM_WRITES = 5_000_000
DEFAULT_SKEW = 0.5


class InvalidSupport(ValueError):
    """Zipf support size must be at least 1."""


class ConfigMismatch(ValueError):
    """Workload config and region layout disagree."""


def mix64(z: int) -> int:
    """SplitMix64 finalizer (Stafford variant 13)."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


class Rng:
    """SplitMix64 with 64-bit state, split into independent streams by id.

    The initial state is mix64(seed) XOR mix64((stream+1) * golden), so
    stream 0 with seed s differs from stream 1 with the same seed while
    staying fully determined by (seed, stream).
    """

    __slots__ = ("_state",)

    def __init__(self, seed: int, stream: int = 0):
        self._state = mix64(seed) ^ mix64(((stream + 1) * _GOLDEN) & MASK64)

    def next_u64(self) -> int:
        self._state = (self._state + _GOLDEN) & MASK64
        return mix64(self._state)

    def next_float(self) -> float:
        """Uniform in [0, 1) with 53 random mantissa bits."""
        return (self.next_u64() >> 11) * 2.0**-53


class ZipfDist:
    """Discrete Zipf over 1..n: p(i) proportional to i**(-s).

    Sampling walks a cumulative table with binary search; the pmf is
    normalized against an exactly summed weight total (math.fsum).
    """

    __slots__ = ("n", "s", "pmf", "cdf")

    def __init__(self, n: int, s: float):
        if n < 1:
            raise InvalidSupport("support size must be >= 1")
        if s < 0:
            raise ValueError("skew must be >= 0")
        self.n = n
        self.s = s
        weights = [float(i) ** -s for i in range(1, n + 1)]
        total = math.fsum(weights)
        self.pmf = [w / total for w in weights]
        cdf = []
        acc = 0.0
        for w in weights:
            acc += w
            cdf.append(acc / total)
        cdf[-1] = 1.0
        self.cdf = cdf

    def sample(self, rng: Rng) -> int:
        """One draw, 1-based region index."""
        return bisect_right(self.cdf, rng.next_float()) + 1


@dataclass(frozen=True)
class WorkloadConfig:
    """Knobs of the closed-loop write workload."""

    num_regions: int
    write_size: int = DEFAULT_WRITE_SIZE
    num_writes: int = DEFAULT_NUM_WRITES
    skew: float = DEFAULT_SKEW
    seed: int = 1
    offset_mode: str = "region_start"

    def __post_init__(self):
        if self.num_regions < 1:
            raise ValueError("num_regions must be >= 1")
        if self.write_size < 1:
            raise ValueError("write_size must be >= 1")
        if self.num_writes < 0:
            raise ValueError("num_writes must be >= 0")
        if self.offset_mode != "region_start":
            raise ValueError(f"unknown offset_mode {self.offset_mode!r}")


def payload_for_seq(seq: int, size: int) -> bytes:
    """Deterministic payload: the low 8 bytes of seq (big-endian) tiled to
    size, so misplaced or lost writes are detectable from memory content."""
    pattern = (seq & MASK64).to_bytes(8, "big")
    reps = -(-size // 8)
    return (pattern * reps)[:size]


def gen_trace(cfg: WorkloadConfig, layout: RegionLayout) -> Iterator[WriteRequest]:
    """Yield cfg.num_writes requests in seq order.

    Each write targets the start of a region drawn from Zipf(num_regions,
    skew); dest/stag follow the layout, payload encodes seq.  Lazily
    generated so multi-million-write runs stay memory-flat; regenerating
    with the same config is bit-identical.
    """
    if layout.num_regions != cfg.num_regions:
        raise ConfigMismatch(
            f"layout has {layout.num_regions} regions, config wants {cfg.num_regions}"
        )
    if cfg.write_size > layout.region_size:
        raise ConfigMismatch("write_size exceeds region_size")
    dist = ZipfDist(cfg.num_regions, cfg.skew)
    rng = Rng(cfg.seed, stream=0)
    cdf = dist.cdf
    origin = layout.origin
    stride = layout.stride
    size = cfg.write_size
    for seq in range(cfg.num_writes):
        idx = bisect_right(cdf, rng.next_float())
        yield WriteRequest(
            dest=origin + idx * stride,
            stag=idx + 1,
            payload=payload_for_seq(seq, size),
            seq=seq,
        )


# Trace-dump record: seq (8 B), dest (8 B), stag (4 B), payload length (4 B),
# all big-endian, followed by the payload bytes.
_TRACE_HEADER = struct.Struct(">QQII")


def write_trace(requests: Iterable[WriteRequest], fp: BinaryIO) -> int:
    """Dump requests in the binary trace format; returns the record count."""
    count = 0
    for req in requests:
        fp.write(_TRACE_HEADER.pack(req.seq, req.dest, req.stag, len(req.payload)))
        fp.write(req.payload)
        count += 1
    return count


def read_trace(fp: BinaryIO) -> Iterator[WriteRequest]:
    """Inverse of write_trace."""
    while True:
        head = fp.read(_TRACE_HEADER.size)
        if not head:
            return
        if len(head) < _TRACE_HEADER.size:
            raise ValueError("truncated trace record header")
        seq, dest, stag, length = _TRACE_HEADER.unpack(head)
        payload = fp.read(length)
        if len(payload) < length:
            raise ValueError("truncated trace record payload")
        yield WriteRequest(dest=dest, stag=stag, payload=payload, seq=seq)
