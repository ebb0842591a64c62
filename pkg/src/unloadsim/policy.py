"""Per-request routing between the offload and unload paths.

Policies must stay cheap enough for a per-request critical path: deciding
for a request reads one counter per touched page and nothing else, so the
cost is O(pages touched) with no allocation proportional to trace length.
Threshold selection is the expensive part and runs off the critical path on
a monitor snapshot.
"""

from __future__ import annotations

import enum
import heapq
from array import array
from dataclasses import dataclass
from typing import Iterable, Iterator

from .core import DEFAULT_PAGE_SIZE, RegionLayout, Route, WriteRequest, pages_for

DEFAULT_MAX_UNLOAD_SIZE = 4096

# compute_threshold(capacity=0) sentinel: strictly above every relative
# frequency, so `r < threshold` holds for all pages and everything unloads.
UNLOAD_ALL_THRESHOLD = 1.0 + 1e-9


class PageOutOfWindow(ValueError):
    """A request touches pages outside the monitored address window."""


class EmptyHistogram(ValueError):
    """Frequency statistics were requested before any page was recorded."""


class Reason(enum.Enum):
    """Why a decision chose its route."""

    HINT = "hint"
    BELOW_THRESHOLD = "below_threshold"
    AT_OR_ABOVE_THRESHOLD = "at_or_above_threshold"
    TOO_LARGE = "too_large"
    POLICY_CONSTANT = "policy_constant"


@dataclass(frozen=True)
class Decision:
    route: Route
    reason: Reason


_OFFLOAD_CONSTANT = Decision(Route.OFFLOAD, Reason.POLICY_CONSTANT)
_UNLOAD_CONSTANT = Decision(Route.UNLOAD, Reason.POLICY_CONSTANT)
_OFFLOAD_HINT = Decision(Route.OFFLOAD, Reason.HINT)
_UNLOAD_HINT = Decision(Route.UNLOAD, Reason.HINT)
_OFFLOAD_TOO_LARGE = Decision(Route.OFFLOAD, Reason.TOO_LARGE)
_UNLOAD_BELOW = Decision(Route.UNLOAD, Reason.BELOW_THRESHOLD)
_OFFLOAD_AT_OR_ABOVE = Decision(Route.OFFLOAD, Reason.AT_OR_ABOVE_THRESHOLD)


class FreqMonitor:
    """Exact per-page write-frequency counters over a fixed address window.

    One 64-bit counter per page, dense, no decay: recording a request
    increments the counter of every page its byte range touches.
    """

    def __init__(self, first_page: int, num_pages: int, page_size: int = DEFAULT_PAGE_SIZE):
        if num_pages < 1:
            raise ValueError("num_pages must be >= 1")
        self.first_page = first_page
        self.num_pages = num_pages
        self.page_size = page_size
        self.total = 0
        self._counters = array("Q", bytes(8 * num_pages))

    @classmethod
    def for_layout(cls, layout: RegionLayout) -> "FreqMonitor":
        return cls(
            first_page=layout.origin // layout.page_size,
            num_pages=layout.span_pages,
            page_size=layout.page_size,
        )

    def record(self, req: WriteRequest) -> None:
        for page in pages_for(req.dest, len(req.payload), self.page_size):
            idx = page - self.first_page
            if not 0 <= idx < self.num_pages:
                raise PageOutOfWindow(f"page {page} outside monitored window")
            self._counters[idx] += 1
            self.total += 1

    def count(self, page: int) -> int:
        idx = page - self.first_page
        if not 0 <= idx < self.num_pages:
            raise PageOutOfWindow(f"page {page} outside monitored window")
        return self._counters[idx]

    def rel_freq(self, page: int) -> float:
        if self.total == 0:
            raise EmptyHistogram("no pages recorded yet")
        return self.count(page) / self.total

    def counts(self) -> array:
        """Snapshot view of the raw counters (index 0 = first_page)."""
        return self._counters

    def scale(self, factor: int) -> None:
        """Multiply every counter by a positive integer (test/aging aid);
        relative frequencies, and hence decisions, are unchanged."""
        if factor < 1:
            raise ValueError("factor must be >= 1")
        for i, c in enumerate(self._counters):
            self._counters[i] = c * factor
        self.total *= factor


def compute_threshold(mon: FreqMonitor, capacity: int) -> float:
    """Relative frequency of the capacity-th most-frequent page.

    At most `capacity` pages have rel_freq >= the returned threshold (ties
    can push past that); capacity >= the number of nonzero pages yields 0
    (nothing unloads), capacity 0 yields the unload-everything sentinel.
    Runs on a snapshot, off the request path.
    """
    if capacity < 0:
        raise ValueError("capacity must be >= 0")
    if mon.total == 0:
        raise EmptyHistogram("cannot derive a threshold from an empty histogram")
    if capacity == 0:
        return UNLOAD_ALL_THRESHOLD
    nonzero = [c for c in mon.counts() if c]
    if capacity >= len(nonzero):
        return 0.0
    kth = heapq.nlargest(capacity, nonzero)[-1]
    return kth / mon.total


class Policy:
    """Base routing policy; subclasses decide per request."""

    needs_monitor = False

    def decide(self, req: WriteRequest, mon: FreqMonitor | None = None) -> Decision:
        raise NotImplementedError


class AlwaysOffload(Policy):
    def decide(self, req, mon=None) -> Decision:
        return _OFFLOAD_CONSTANT


class AlwaysUnload(Policy):
    def decide(self, req, mon=None) -> Decision:
        return _UNLOAD_CONSTANT


class HintBased(Policy):
    """Follow the application-provided hint; unhinted requests keep the
    unmodified-application behavior and stay offloaded.

    top_k is not consulted per request: it records how many of the most
    popular regions the trace annotator should mark for offload.
    """

    def __init__(self, top_k: int | None = None):
        if top_k is not None and top_k < 0:
            raise ValueError("top_k must be >= 0")
        self.top_k = top_k

    def decide(self, req, mon=None) -> Decision:
        if req.hint is Route.UNLOAD:
            return _UNLOAD_HINT
        return _OFFLOAD_HINT


class FrequencyBased(Policy):
    """Unload only small writes whose touched pages are all below a relative
    frequency threshold; a multi-page request is judged by its hottest page
    (most conservative toward offloading).

    Requires record-then-decide ordering: the monitor must already reflect
    the request being decided.
    """

    needs_monitor = True

    def __init__(
        self,
        threshold: float,
        max_unload_size: int = DEFAULT_MAX_UNLOAD_SIZE,
    ):
        if not 0.0 <= threshold <= UNLOAD_ALL_THRESHOLD:
            raise ValueError("threshold must be a relative frequency in [0, 1]")
        if max_unload_size < 1:
            raise ValueError("max_unload_size must be >= 1")
        self.threshold = threshold
        self.max_unload_size = max_unload_size

    def decide(self, req, mon=None) -> Decision:
        if len(req.payload) > self.max_unload_size:
            return _OFFLOAD_TOO_LARGE
        if mon is None:
            raise ValueError("frequency-based policy needs a monitor")
        r = 0.0
        for page in pages_for(req.dest, len(req.payload), mon.page_size):
            f = mon.rel_freq(page)
            if f > r:
                r = f
        if r < self.threshold:
            return _UNLOAD_BELOW
        return _OFFLOAD_AT_OR_ABOVE


def parse_policy(text: str) -> Policy:
    """Parse a policy selector: offload | unload | hint:K | freq:THETA[:MAXSZ]."""
    name, _, rest = text.partition(":")
    if name == "offload" and not rest:
        return AlwaysOffload()
    if name == "unload" and not rest:
        return AlwaysUnload()
    if name == "hint":
        if not rest:
            raise ValueError("hint policy needs a region count: hint:K")
        return HintBased(top_k=int(rest))
    if name == "freq":
        if not rest:
            raise ValueError("freq policy needs a threshold: freq:THETA[:MAXSZ]")
        theta, _, maxsz = rest.partition(":")
        if maxsz:
            return FrequencyBased(float(theta), max_unload_size=int(maxsz))
        return FrequencyBased(float(theta))
    raise ValueError(f"unknown policy {text!r}")


def top_k_stags(k: int, pmf: Iterable[float], layout: RegionLayout) -> set[int]:
    """Stags of the k most-probable regions; ties broken by lower index."""
    ranked = sorted(range(layout.num_regions), key=lambda i: (-pmf[i], i))
    return {layout.stag_of(i) for i in ranked[: max(0, k)]}


def hint_annotate_topk(
    trace: Iterable[WriteRequest],
    k: int,
    pmf,
    layout: RegionLayout,
) -> Iterator[WriteRequest]:
    """Annotate requests with hints: offload for the k most-probable regions,
    unload for everything else.  Yields the requests in order."""
    if len(pmf) != layout.num_regions:
        raise ValueError("pmf length must match the layout's region count")
    offload_stags = top_k_stags(k, pmf, layout)
    for req in trace:
        req.hint = Route.OFFLOAD if req.stag in offload_stags else Route.UNLOAD
        yield req
