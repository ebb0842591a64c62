"""The unload delivery path and its target-side state.

An unloaded write is rewritten at the initiator into a write-with-immediate
aimed at the next slot of a per-queue-pair temporary buffer: the slot bytes
carry an 8-byte big-endian destination-address header followed by the
original payload, the 32-bit stag rides in the immediate value, and the
payload length is recovered from the record's total length (header + data),
exactly as a receiver recovers it from a work completion.  The target side
validates (stag known, remote-write permitted, range in bounds -- in that
order) against a local map of registered regions and only then copies the
payload to its final destination, so a rejected write never touches memory.

Temporary-buffer slots are assumed translation-resident at the NIC and are
therefore invisible to the MTT model; unloaded writes never install their
final destination's page there either.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .core import (
    DEFAULT_PAGE_SIZE,
    MemoryRegion,
    Permission,
    WriteRequest,
    check_addr_range,
)

SLOT_HEADER_LEN = 8
DEFAULT_NUM_SLOTS = 128
DEFAULT_SLOT_SIZE = DEFAULT_PAGE_SIZE + SLOT_HEADER_LEN


class DuplicateStag(ValueError):
    """A stag was registered twice."""


class UnknownStag(KeyError):
    """Deregistration of a stag that is not registered."""


class PayloadTooLarge(ValueError):
    """Payload plus header does not fit one temporary-buffer slot."""


class MalformedRecord(ValueError):
    """A slot record too short to hold the header plus one payload byte."""


class Verdict(enum.Enum):
    """Outcome of the target-side security check."""

    OK = "ok"
    UNKNOWN_STAG = "unknown_stag"
    PERMISSION_DENIED = "permission_denied"
    OUT_OF_BOUNDS = "out_of_bounds"


@dataclass(frozen=True)
class WriteImmRecord:
    """One slot's wire content: header + payload bytes, stag as immediate."""

    slot_index: int
    data: bytes
    immediate: int
    seq: int

    @property
    def total_length(self) -> int:
        return len(self.data)

    @property
    def dest(self) -> int:
        return int.from_bytes(self.data[:SLOT_HEADER_LEN], "big")

    @property
    def payload(self) -> bytes:
        return self.data[SLOT_HEADER_LEN:]


def encode_unloaded(req: WriteRequest, slot_index: int, slot_size: int) -> WriteImmRecord:
    """Rewrite a request into its slot record (header + payload)."""
    if len(req.payload) + SLOT_HEADER_LEN > slot_size:
        raise PayloadTooLarge(
            f"payload of {len(req.payload)} B exceeds slot capacity "
            f"{slot_size - SLOT_HEADER_LEN} B"
        )
    header = req.dest.to_bytes(SLOT_HEADER_LEN, "big")
    return WriteImmRecord(
        slot_index=slot_index,
        data=header + req.payload,
        immediate=req.stag,
        seq=req.seq,
    )


class UmttMap:
    """Registered-region metadata (stag -> region) backing the security check."""

    def __init__(self):
        self._regions: dict[int, MemoryRegion] = {}

    def __len__(self) -> int:
        return len(self._regions)

    def __contains__(self, stag: int) -> bool:
        return stag in self._regions

    def register(self, region: MemoryRegion) -> None:
        if region.stag in self._regions:
            raise DuplicateStag(f"stag {region.stag} already registered")
        self._regions[region.stag] = region

    def deregister(self, stag: int) -> None:
        if stag not in self._regions:
            raise UnknownStag(stag)
        del self._regions[stag]

    def get(self, stag: int) -> MemoryRegion | None:
        return self._regions.get(stag)

    def validate(self, dest: int, length: int, stag: int) -> Verdict:
        """Check (address, size, stag, permission); never mutates."""
        region = self._regions.get(stag)
        if region is None:
            return Verdict.UNKNOWN_STAG
        if not region.permissions & Permission.REMOTE_WRITE:
            return Verdict.PERMISSION_DENIED
        if not region.covers(dest, length):
            return Verdict.OUT_OF_BOUNDS
        return Verdict.OK


class TempBuffer:
    """Per-queue-pair slot ring with credit accounting.

    The initiator owns the cursor and the credit count; the target frees a
    slot once its copy (or rejection) is done.  Completions are consumed in
    ring order, so with credits available the cursor slot is always free.
    """

    def __init__(self, num_slots: int = DEFAULT_NUM_SLOTS, slot_size: int = DEFAULT_SLOT_SIZE):
        if num_slots < 1:
            raise ValueError("num_slots must be >= 1")
        if slot_size < SLOT_HEADER_LEN + 1:
            raise ValueError(f"slot_size must be > {SLOT_HEADER_LEN}")
        self.num_slots = num_slots
        self.slot_size = slot_size
        self.next_slot = 0
        self.free_credits = num_slots
        self._slots: list[WriteImmRecord | None] = [None] * num_slots

    @property
    def occupied(self) -> int:
        return self.num_slots - self.free_credits

    def slot(self, index: int) -> WriteImmRecord | None:
        return self._slots[index]

    def post(self, req: WriteRequest) -> WriteImmRecord | None:
        """Initiator-side unload: emit the record for the next slot and
        advance the cursor, or return None (caller falls back to the
        offload path) when no credit is left.  Exhaustion never blocks."""
        if self.free_credits == 0:
            return None
        index = self.next_slot
        if self._slots[index] is not None:
            raise RuntimeError(f"slot {index} still occupied; frees must follow ring order")
        record = encode_unloaded(req, index, self.slot_size)
        self._slots[index] = record
        self.next_slot = (index + 1) % self.num_slots
        self.free_credits -= 1
        return record

    def free_slot(self, index: int) -> None:
        if self._slots[index] is None:
            raise ValueError(f"slot {index} is not occupied")
        self._slots[index] = None
        self.free_credits += 1


class TargetMemory:
    """Sparse byte store over the virtual address space.

    Pages materialize lazily and only up to their highest written offset;
    reads of never-written bytes return 0.
    """

    def __init__(self, page_size: int = DEFAULT_PAGE_SIZE):
        if page_size <= 0 or page_size & (page_size - 1):
            raise ValueError("page_size must be a power of two")
        self.page_size = page_size
        self._shift = page_size.bit_length() - 1
        self._mask = page_size - 1
        self._pages: dict[int, bytearray] = {}

    def write(self, dest: int, data: bytes) -> None:
        if not data:
            return
        check_addr_range(dest, len(data))
        pages = self._pages
        pos = 0
        addr = dest
        total = len(data)
        while pos < total:
            page = addr >> self._shift
            off = addr & self._mask
            n = min(self.page_size - off, total - pos)
            end = off + n
            buf = pages.get(page)
            if buf is None:
                buf = bytearray(end)
                pages[page] = buf
            elif len(buf) < end:
                buf.extend(bytes(end - len(buf)))
            buf[off:end] = data[pos : pos + n]
            pos += n
            addr += n

    def read(self, dest: int, length: int) -> bytes:
        if length < 1:
            raise ValueError("length must be >= 1")
        check_addr_range(dest, length)
        out = bytearray(length)
        pos = 0
        addr = dest
        while pos < length:
            page = addr >> self._shift
            off = addr & self._mask
            n = min(self.page_size - off, length - pos)
            buf = self._pages.get(page)
            if buf is not None and off < len(buf):
                chunk = buf[off : min(off + n, len(buf))]
                out[pos : pos + len(chunk)] = chunk
            pos += n
            addr += n
        return bytes(out)

    def nonzero_items(self):
        """(address, byte) for every nonzero stored byte; a zero byte is
        indistinguishable from a never-written one, matching read()."""
        for page, buf in self._pages.items():
            base = page << self._shift
            for off, b in enumerate(buf):
                if b:
                    yield base + off, b

    def digest(self) -> int:
        """Order-independent 64-bit checksum of the memory's read view:
        sum of mix64(address * 256 + byte) over all nonzero bytes, mod 2**64.
        """
        pages = self._pages
        if not pages:
            return 0
        ids = list(pages)
        data = b"".join(pages[p] for p in ids)
        vals = np.frombuffer(data, dtype=np.uint8)
        lens = np.fromiter((len(pages[p]) for p in ids), dtype=np.int64, count=len(ids))
        bases = np.fromiter(ids, dtype=np.uint64, count=len(ids)) * np.uint64(self.page_size)
        starts = np.cumsum(lens) - lens
        offsets = np.arange(len(vals), dtype=np.uint64) - np.repeat(
            starts.astype(np.uint64), lens
        )
        addrs = np.repeat(bases, lens) + offsets
        nz = vals != 0
        z = addrs[nz] * np.uint64(256) + vals[nz].astype(np.uint64)
        z ^= z >> np.uint64(30)
        z *= np.uint64(0xBF58476D1CE4E5B9)
        z ^= z >> np.uint64(27)
        z *= np.uint64(0x94D049BB133111EB)
        z ^= z >> np.uint64(31)
        return int(np.sum(z, dtype=np.uint64))


@dataclass(frozen=True)
class ApplyResult:
    """Target-side outcome of one unloaded write."""

    verdict: Verdict
    dest: int
    length: int

    @property
    def applied(self) -> bool:
        return self.verdict is Verdict.OK


def apply_unloaded(
    rec: WriteImmRecord,
    umtt: UmttMap,
    mem: TargetMemory,
    buf: TempBuffer | None = None,
) -> ApplyResult:
    """Target-side unload: decode the slot record, validate, copy on success.

    The slot is freed whether or not the write passes validation; a rejected
    write leaves memory untouched.  Pass buf=None to apply a record outside
    any slot ring (protocol-level tests).
    """
    if rec.total_length < SLOT_HEADER_LEN + 1:
        raise MalformedRecord(
            f"record of {rec.total_length} B cannot hold header plus payload"
        )
    dest = rec.dest
    length = rec.total_length - SLOT_HEADER_LEN
    verdict = umtt.validate(dest, length, rec.immediate)
    if verdict is Verdict.OK:
        mem.write(dest, rec.payload)
    if buf is not None:
        buf.free_slot(rec.slot_index)
    return ApplyResult(verdict=verdict, dest=dest, length=length)


def apply_offloaded(req: WriteRequest, mem: TargetMemory) -> None:
    """Offload path semantics: the NIC writes payload bytes at dest.

    Registration is hardware-enforced on this path, so no map lookup is
    modeled; traces are assumed well-formed here.
    """
    mem.write(req.dest, req.payload)
