"""Closed-loop trace execution over the two delivery paths.

Latency is an additive analytic model, not a queueing simulation: the
workload keeps exactly one write outstanding, so each write's RTT is
independent of its neighbors.  The default constants are calibrated so the
offload path costs 2600 ns on an MTT hit and 5100 ns on a miss, and a 16 B
unloaded write costs 3402 ns (base + fixed unload overhead + per-byte copy).
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

from .core import (
    CompletionEvent,
    CompletionKind,
    RegionLayout,
    Route,
    WriteRequest,
    build_layout,
)
from .mtt import DEFAULT_MTT_CAPACITY, MttCache
from .policy import FreqMonitor, HintBased, Policy, hint_annotate_topk
from .unload import (
    DEFAULT_NUM_SLOTS,
    DEFAULT_SLOT_SIZE,
    TargetMemory,
    TempBuffer,
    UmttMap,
    apply_offloaded,
    apply_unloaded,
)
from .workload import WorkloadConfig, ZipfDist, gen_trace

DEFAULT_WARMUP_FRACTION = 0.01
DEFAULT_MIN_WARMUP = 1000


@dataclass(frozen=True)
class LatencyParams:
    """Calibrated latency constants, all nanoseconds (copy cost ns/byte)."""

    base_rtt_ns: int = 2600
    mtt_miss_penalty_ns: int = 2500
    unload_overhead_ns: int = 800
    copy_cost_ns_per_byte: float = 0.1
    cpu_tlb_penalty_ns: int = 0

    def __post_init__(self):
        for name in (
            "base_rtt_ns",
            "mtt_miss_penalty_ns",
            "unload_overhead_ns",
            "copy_cost_ns_per_byte",
            "cpu_tlb_penalty_ns",
        ):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


def offload_rtt(miss: bool, params: LatencyParams) -> int:
    """RTT of an offloaded write: base plus the translation-fetch penalty on
    a cache miss."""
    rtt = params.base_rtt_ns
    if miss:
        rtt += params.mtt_miss_penalty_ns
    return rtt


def unload_rtt(payload_length: int, params: LatencyParams) -> int:
    """RTT of an unloaded write: base, fixed rerouting/validation overhead,
    per-byte copy cost (rounded up), and the optional CPU TLB penalty.
    Independent of any cache state, hence flat across working-set sizes."""
    if payload_length < 1:
        raise ValueError("payload_length must be >= 1")
    return (
        params.base_rtt_ns
        + params.unload_overhead_ns
        + math.ceil(payload_length * params.copy_cost_ns_per_byte)
        + params.cpu_tlb_penalty_ns
    )


@dataclass
class RunStats:
    """Aggregates of one run.

    Route counters, security rejects, and MTT hit/miss counters cover every
    executed write; the RTT aggregates (histogram, sum, count) cover only
    post-warmup writes, so cold-cache transients don't distort latency.
    """

    writes: int = 0
    warmup_excluded: int = 0
    rtt_count: int = 0
    rtt_sum: int = 0
    rtt_hist: Counter = field(default_factory=Counter)
    mtt_hits: int = 0
    mtt_misses: int = 0
    offload_count: int = 0
    unload_count: int = 0
    fallback_count: int = 0
    security_rejects: int = 0

    def record_rtt(self, rtt_ns: int) -> None:
        self.rtt_count += 1
        self.rtt_sum += rtt_ns
        self.rtt_hist[rtt_ns] += 1

    def mean_rtt_ns(self) -> int:
        """Mean reported RTT in integer nanoseconds, rounded half-up."""
        if self.rtt_count == 0:
            return 0
        return (2 * self.rtt_sum + self.rtt_count) // (2 * self.rtt_count)

    def percentile_ns(self, q: float) -> int:
        """Nearest-rank percentile of the reported RTTs."""
        if self.rtt_count == 0:
            return 0
        rank = max(1, math.ceil(q / 100.0 * self.rtt_count))
        seen = 0
        value = 0
        for value in sorted(self.rtt_hist):
            seen += self.rtt_hist[value]
            if seen >= rank:
                return value
        return value

    def mtt_hit_rate(self) -> float:
        total = self.mtt_hits + self.mtt_misses
        return self.mtt_hits / total if total else 0.0

    def unload_fraction(self) -> float:
        return self.unload_count / self.writes if self.writes else 0.0


@dataclass
class SimState:
    """Single-owner mutable state of one simulation instance."""

    layout: RegionLayout
    mtt: MttCache
    umtt: UmttMap
    temp: TempBuffer
    mem: TargetMemory
    monitor: FreqMonitor | None
    stats: RunStats
    clock_ns: int = 0
    completions: list[CompletionEvent] | None = None


def make_state(
    layout: RegionLayout,
    policy: Policy,
    mtt_capacity: int = DEFAULT_MTT_CAPACITY,
    num_slots: int = DEFAULT_NUM_SLOTS,
    slot_size: int = DEFAULT_SLOT_SIZE,
    collect_completions: bool = False,
) -> SimState:
    """Fresh simulation state with every layout region registered."""
    umtt = UmttMap()
    for region in layout.regions():
        umtt.register(region)
    return SimState(
        layout=layout,
        mtt=MttCache(mtt_capacity),
        umtt=umtt,
        temp=TempBuffer(num_slots, slot_size),
        mem=TargetMemory(layout.page_size),
        monitor=FreqMonitor.for_layout(layout) if policy.needs_monitor else None,
        stats=RunStats(),
        completions=[] if collect_completions else None,
    )


def simulate_write(
    req: WriteRequest,
    policy: Policy,
    state: SimState,
    params: LatencyParams,
) -> int:
    """Route and execute one write; returns its RTT and advances the clock.

    Offload route: every touched page goes through the MTT cache (a miss on
    any of them charges one miss penalty), then the payload lands in target
    memory.  Unload route: the write is posted to the slot ring and applied
    by the target-CPU model; on credit exhaustion the write falls back to
    the offload route and is counted as a fallback.
    """
    stats = state.stats
    monitor = state.monitor
    if policy.needs_monitor:
        monitor.record(req)
    decision = policy.decide(req, monitor)

    fallback = False
    if decision.route is Route.UNLOAD:
        rec = state.temp.post(req)
        if rec is None:
            fallback = True
        else:
            result = apply_unloaded(rec, state.umtt, state.mem, state.temp)
            rtt = unload_rtt(len(req.payload), params)
            stats.unload_count += 1
            if not result.applied:
                stats.security_rejects += 1
            state.clock_ns += rtt
            if state.completions is not None:
                now = state.clock_ns
                state.completions.append(
                    CompletionEvent(
                        CompletionKind.UNLOAD_IMM_RECEIVED,
                        req.seq,
                        rec.total_length,
                        immediate=rec.immediate,
                        timestamp_ns=now,
                    )
                )
                if result.applied:
                    state.completions.append(
                        CompletionEvent(
                            CompletionKind.UNLOAD_COPY_DONE,
                            req.seq,
                            result.length,
                            timestamp_ns=now,
                        )
                    )
                else:
                    state.completions.append(
                        CompletionEvent(
                            CompletionKind.SECURITY_REJECT,
                            req.seq,
                            0,
                            timestamp_ns=now,
                        )
                    )
            return rtt

    # Offload route (chosen directly or via slot-exhaustion fallback).
    page_size = state.layout.page_size
    first = req.dest // page_size
    last = (req.dest + len(req.payload) - 1) // page_size
    mtt_access = state.mtt.access
    miss = False
    for page in range(first, last + 1):
        if not mtt_access(page):
            miss = True
    apply_offloaded(req, state.mem)
    rtt = offload_rtt(miss, params)
    if fallback:
        stats.fallback_count += 1
    else:
        stats.offload_count += 1
    state.clock_ns += rtt
    if state.completions is not None:
        state.completions.append(
            CompletionEvent(
                CompletionKind.OFFLOAD_DONE,
                req.seq,
                len(req.payload),
                timestamp_ns=state.clock_ns,
            )
        )
    return rtt


def resolve_warmup(
    num_writes: int,
    warmup: int | None = None,
    warmup_fraction: float = DEFAULT_WARMUP_FRACTION,
    min_warmup: int = DEFAULT_MIN_WARMUP,
) -> int:
    """Writes to exclude from RTT aggregates; at least one write is always
    reported, so tiny runs still produce defined statistics."""
    if warmup is None:
        warmup = max(min_warmup, int(num_writes * warmup_fraction))
    return min(warmup, max(0, num_writes - 1))


@dataclass(frozen=True)
class RunResult:
    stats: RunStats
    digest: int


def run(
    cfg: WorkloadConfig,
    policy: Policy,
    mtt_capacity: int = DEFAULT_MTT_CAPACITY,
    params: LatencyParams | None = None,
    *,
    num_slots: int = DEFAULT_NUM_SLOTS,
    slot_size: int = DEFAULT_SLOT_SIZE,
    warmup: int | None = None,
    layout: RegionLayout | None = None,
    collect_completions: bool = False,
) -> RunResult:
    """Generate the configured trace, execute it in seq order, and return
    aggregates plus the final memory digest.  Deterministic for fixed
    inputs, including across concurrent sweep executions."""
    if params is None:
        params = LatencyParams()
    if layout is None:
        layout = build_layout(cfg.num_regions)
    trace = gen_trace(cfg, layout)
    if isinstance(policy, HintBased) and policy.top_k is not None:
        pmf = ZipfDist(cfg.num_regions, cfg.skew).pmf
        trace = hint_annotate_topk(trace, policy.top_k, pmf, layout)
    state = make_state(
        layout,
        policy,
        mtt_capacity=mtt_capacity,
        num_slots=num_slots,
        slot_size=slot_size,
        collect_completions=collect_completions,
    )
    stats = state.stats
    warmup_writes = resolve_warmup(cfg.num_writes, warmup)
    for req in trace:
        rtt = simulate_write(req, policy, state, params)
        if req.seq < warmup_writes:
            stats.warmup_excluded += 1
        else:
            stats.record_rtt(rtt)
    stats.writes = cfg.num_writes
    stats.mtt_hits = state.mtt.hits
    stats.mtt_misses = state.mtt.misses
    return RunResult(stats=stats, digest=state.mem.digest())
