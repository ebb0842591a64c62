"""unloadsim: a deterministic functional simulator for routing small remote
writes between a NIC-offloaded path (with an LRU translation-cache model)
and a CPU-assisted unload path (temporary-buffer slots plus validated copy),
under pluggable per-request policies and a calibrated latency model.
"""

from .core import (
    CompletionEvent,
    CompletionKind,
    MemoryRegion,
    Permission,
    RegionLayout,
    Route,
    WriteRequest,
    build_layout,
    pages_for,
)
from .engine import LatencyParams, RunResult, RunStats, SimState, run, simulate_write
from .mtt import MttCache
from .policy import (
    AlwaysOffload,
    AlwaysUnload,
    Decision,
    FreqMonitor,
    FrequencyBased,
    HintBased,
    Policy,
    compute_threshold,
    hint_annotate_topk,
    parse_policy,
)
from .unload import (
    TargetMemory,
    TempBuffer,
    UmttMap,
    Verdict,
    WriteImmRecord,
    apply_offloaded,
    apply_unloaded,
    encode_unloaded,
)
from .workload import Rng, WorkloadConfig, ZipfDist, gen_trace, read_trace, write_trace

__version__ = "0.1.0"

__all__ = [
    "AlwaysOffload",
    "AlwaysUnload",
    "CompletionEvent",
    "CompletionKind",
    "Decision",
    "FreqMonitor",
    "FrequencyBased",
    "HintBased",
    "LatencyParams",
    "MemoryRegion",
    "MttCache",
    "Permission",
    "Policy",
    "RegionLayout",
    "Rng",
    "Route",
    "RunResult",
    "RunStats",
    "SimState",
    "TargetMemory",
    "TempBuffer",
    "UmttMap",
    "Verdict",
    "WorkloadConfig",
    "WriteImmRecord",
    "WriteRequest",
    "ZipfDist",
    "apply_offloaded",
    "apply_unloaded",
    "build_layout",
    "compute_threshold",
    "encode_unloaded",
    "gen_trace",
    "hint_annotate_topk",
    "pages_for",
    "parse_policy",
    "read_trace",
    "run",
    "simulate_write",
    "write_trace",
]
