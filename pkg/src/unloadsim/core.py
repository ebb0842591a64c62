"""Shared vocabulary: addresses, memory regions, write requests, completions.

Addresses are plain ints in a 64-bit virtual address space.  Regions are
laid out non-contiguously (stride >= region size) starting at a nonzero
origin so that address 0 is never valid and null-address bugs surface.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

ADDR_BITS = 64
ADDR_MASK = (1 << ADDR_BITS) - 1
STAG_MASK = 0xFFFFFFFF

DEFAULT_PAGE_SIZE = 4096
DEFAULT_REGION_SIZE = 4096
DEFAULT_ORIGIN = 4096

# Region bases must stay 8-byte aligned so 64-bit header stores never split.
REGION_ALIGNMENT = 8


class InvalidLayout(ValueError):
    """Region layout parameters are inconsistent (empty, overlapping, ...)."""


class AddressOverflow(ValueError):
    """An address range wraps around the 64-bit address space."""


class Route(enum.Enum):
    """The two ways a write can reach target memory."""

    OFFLOAD = "offload"
    UNLOAD = "unload"


class Permission(enum.Flag):
    """Access rights attached to a registered memory region."""

    NONE = 0
    REMOTE_WRITE = enum.auto()


def check_addr_range(dest: int, length: int) -> None:
    """Reject [dest, dest+length) ranges that leave or wrap the 64-bit space."""
    if dest < 0 or dest > ADDR_MASK:
        raise AddressOverflow(f"address {dest:#x} outside 64-bit space")
    if dest + length > ADDR_MASK + 1:
        raise AddressOverflow(
            f"range {dest:#x}+{length} wraps the 64-bit address space"
        )


def page_of(addr: int, page_size: int = DEFAULT_PAGE_SIZE) -> int:
    """Page id of an address: floor(addr / page_size)."""
    return addr // page_size


def pages_for(dest: int, length: int, page_size: int = DEFAULT_PAGE_SIZE) -> list[int]:
    """Every page overlapped by [dest, dest+length), ascending, no duplicates."""
    if length < 1:
        raise ValueError("length must be >= 1")
    if page_size <= 0 or page_size & (page_size - 1):
        raise ValueError("page_size must be a power of two")
    check_addr_range(dest, length)
    first = dest // page_size
    last = (dest + length - 1) // page_size
    return list(range(first, last + 1))


@dataclass(frozen=True)
class MemoryRegion:
    """A registered remote-writable window: stag, base, length, permissions."""

    stag: int
    base: int
    length: int
    permissions: Permission = Permission.REMOTE_WRITE

    def __post_init__(self):
        if not 0 <= self.stag <= STAG_MASK:
            raise ValueError(f"stag {self.stag} not a 32-bit id")
        if self.length <= 0:
            raise ValueError("region length must be > 0")
        check_addr_range(self.base, self.length)

    @property
    def end(self) -> int:
        return self.base + self.length

    def covers(self, dest: int, length: int) -> bool:
        return self.base <= dest and dest + length <= self.end


@dataclass(frozen=True)
class RegionLayout:
    """Geometry of the registered regions: region i starts at origin + i*stride.

    Stags are assigned 1-based by region index (stag 0 is never used), so the
    i-th most popular region of a skewed workload is also the i-th stag.
    """

    num_regions: int
    region_size: int = DEFAULT_REGION_SIZE
    page_size: int = DEFAULT_PAGE_SIZE
    stride: int = 2 * DEFAULT_REGION_SIZE
    origin: int = DEFAULT_ORIGIN

    def region_base(self, index: int) -> int:
        if not 0 <= index < self.num_regions:
            raise IndexError(f"region index {index} out of range")
        return self.origin + index * self.stride

    def stag_of(self, index: int) -> int:
        if not 0 <= index < self.num_regions:
            raise IndexError(f"region index {index} out of range")
        return index + 1

    def index_of_stag(self, stag: int) -> int:
        index = stag - 1
        if not 0 <= index < self.num_regions:
            raise ValueError(f"stag {stag} does not name a region of this layout")
        return index

    def regions(self, permissions: Permission = Permission.REMOTE_WRITE):
        """Yield one MemoryRegion per layout slot, ready for registration."""
        for i in range(self.num_regions):
            yield MemoryRegion(
                stag=self.stag_of(i),
                base=self.region_base(i),
                length=self.region_size,
                permissions=permissions,
            )

    @property
    def span_pages(self) -> int:
        """Number of pages from the origin page to the end of the last region."""
        end = self.region_base(self.num_regions - 1) + self.region_size
        first_page = self.origin // self.page_size
        last_page = (end - 1) // self.page_size
        return last_page - first_page + 1


def build_layout(
    num_regions: int,
    region_size: int = DEFAULT_REGION_SIZE,
    page_size: int = DEFAULT_PAGE_SIZE,
    stride: int | None = None,
    origin: int = DEFAULT_ORIGIN,
) -> RegionLayout:
    """Validated RegionLayout; stride defaults to 2*region_size (non-contiguous)."""
    if stride is None:
        stride = 2 * region_size
    if num_regions < 1:
        raise InvalidLayout("num_regions must be >= 1")
    if stride < region_size:
        raise InvalidLayout(f"stride {stride} < region_size {region_size}")
    if region_size % REGION_ALIGNMENT:
        raise InvalidLayout(f"region_size must be a multiple of {REGION_ALIGNMENT}")
    if page_size <= 0 or page_size & (page_size - 1):
        raise InvalidLayout("page_size must be a power of two")
    # The last region must fit the 64-bit space.
    check_addr_range(origin + (num_regions - 1) * stride, region_size)
    return RegionLayout(
        num_regions=num_regions,
        region_size=region_size,
        page_size=page_size,
        stride=stride,
        origin=origin,
    )


@dataclass(slots=True)
class WriteRequest:
    """One posted write.  Treated as an immutable value everywhere but in
    hint annotation, which fills `hint` before the request enters the engine.
    """

    dest: int
    stag: int
    payload: bytes
    seq: int
    hint: Route | None = None

    def validate(self) -> "WriteRequest":
        if len(self.payload) < 1:
            raise ValueError("payload must be at least 1 byte")
        check_addr_range(self.dest, len(self.payload))
        return self


class CompletionKind(enum.Enum):
    OFFLOAD_DONE = "offload_done"
    UNLOAD_IMM_RECEIVED = "unload_imm_received"
    UNLOAD_COPY_DONE = "unload_copy_done"
    SECURITY_REJECT = "security_reject"


@dataclass(frozen=True)
class CompletionEvent:
    """Observable outcome of one write step; timestamps are derived from the
    simulated clock and are never used for ordering (seq is the authority)."""

    kind: CompletionKind
    seq: int
    byte_length: int
    immediate: int | None = None
    timestamp_ns: int = 0

    def __post_init__(self):
        if self.kind is not CompletionKind.SECURITY_REJECT and self.byte_length <= 0:
            raise ValueError("byte_length must be > 0 for non-reject completions")
