"""Model of the target NIC's translation cache (MTT): fixed capacity,
page-granular entries, LRU eviction.

The real NIC's replacement policy is not public; LRU is the standard proxy
and reproduces the qualitative behavior (thrash once the working set of
pages outgrows the entry count).  One cache instance belongs to exactly one
simulation and starts cold.
"""

from __future__ import annotations

from collections import OrderedDict

DEFAULT_MTT_CAPACITY = 4096


class MttCache:
    """LRU set of page ids with hit/miss counters."""

    def __init__(self, capacity: int = DEFAULT_MTT_CAPACITY):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.hits = 0
        self.misses = 0
        self._entries: OrderedDict[int, None] = OrderedDict()

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, page: int) -> bool:
        # Pure inspection: recency order and counters are untouched.
        return page in self._entries

    def access(self, page: int) -> bool:
        """Touch a page; returns True on hit.

        The page is present and most-recently-used afterwards; a miss on a
        full cache evicts the least-recently-used entry.
        """
        entries = self._entries
        if page in entries:
            entries.move_to_end(page)
            self.hits += 1
            return True
        self.misses += 1
        entries[page] = None
        if len(entries) > self.capacity:
            entries.popitem(last=False)
        return False

    @property
    def accesses(self) -> int:
        return self.hits + self.misses

    def hit_rate(self) -> float:
        total = self.hits + self.misses
        return self.hits / total if total else 0.0

    def pages(self) -> list[int]:
        """Cached pages from least- to most-recently-used (inspection aid)."""
        return list(self._entries)
