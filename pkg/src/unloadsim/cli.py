"""Command-line front end: single runs, region-count sweeps, CSV output.

Exit codes: 0 success, 2 configuration error, 3 simulation fault.
"""

from __future__ import annotations

import argparse
import sys
from concurrent.futures import ProcessPoolExecutor

from .core import build_layout
from .engine import LatencyParams, run
from .mtt import DEFAULT_MTT_CAPACITY
from .policy import PageOutOfWindow, parse_policy
from .unload import DEFAULT_NUM_SLOTS, MalformedRecord
from .workload import WorkloadConfig, gen_trace, write_trace

CSV_HEADER = (
    "policy,regions,skew,write_size,writes,mean_rtt_ns,p50_rtt_ns,p99_rtt_ns,"
    "mtt_hit_rate,unload_fraction,fallback_count,security_rejects,seed"
)

# Sweep default: powers of 4 spanning one region up to 2**20 regions.
DEFAULT_SWEEP_REGIONS = [4**i for i in range(11)]
DEFAULT_SWEEP_POLICIES = ["offload", "unload", "hint:4096"]
DEFAULT_WRITES = 500_000

SIMULATION_FAULTS = (MalformedRecord, PageOutOfWindow)


class ConfigError(Exception):
    pass


def load_config_file(path: str) -> dict[str, str]:
    """Flat key=value file mirroring the CLI flags; '#' starts a comment."""
    values: dict[str, str] = {}
    try:
        with open(path, "r", encoding="utf-8") as fp:
            for lineno, raw in enumerate(fp, 1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
                key, _, value = line.partition("=")
                values[key.strip()] = value.strip()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return values


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--writes", type=int, default=None, help="writes per point")
    common.add_argument("--write-size", type=int, default=None, help="payload bytes per write")
    common.add_argument("--skew", type=float, default=None, help="Zipf skew exponent")
    common.add_argument("--mtt-capacity", type=int, default=None, help="MTT cache entries")
    common.add_argument("--slots", type=int, default=None, help="temporary-buffer slots")
    common.add_argument("--seed", type=int, default=None, help="workload seed")
    common.add_argument("--config", default=None, metavar="PATH", help="key=value config file")
    common.add_argument("--out", default=None, metavar="PATH", help="CSV output path (default stdout)")
    common.add_argument("--jobs", type=int, default=None, metavar="N", help="concurrent sweep points")

    parser = argparse.ArgumentParser(
        prog="unloadsim",
        description="Simulate offload/unload routing of small writes over an "
        "LRU translation-cache model with a calibrated latency model.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", parents=[common], help="execute one configuration")
    p_run.add_argument("--regions", type=int, default=None, help="number of memory regions")
    p_run.add_argument(
        "--policy", default=None, help="offload | unload | hint:K | freq:THETA[:MAXSZ]"
    )
    p_run.add_argument(
        "--dump-trace", default=None, metavar="PATH", help="dump the generated trace (binary)"
    )

    p_sweep = sub.add_parser("sweep", parents=[common], help="sweep region counts and policies")
    p_sweep.add_argument(
        "--region-sweep",
        default=None,
        metavar="A,B,C",
        help="comma-separated region counts (default powers of 4 up to 2^20)",
    )
    p_sweep.add_argument(
        "--policy",
        default=None,
        help="comma-separated policies (default offload,unload,hint:4096)",
    )
    return parser


def _pick(args_value, file_cfg: dict[str, str], key: str, cast, default):
    """Flag value if given, else config-file value, else default."""
    if args_value is not None:
        return args_value
    if key in file_cfg:
        raw = file_cfg[key]
        try:
            return cast(raw)
        except ValueError as exc:
            raise ConfigError(f"config key {key}: bad value {raw!r}: {exc}") from exc
    return default


def _execute_point(point: tuple) -> str:
    """One (policy, regions) simulation; returns its CSV row."""
    policy_text, regions, writes, write_size, skew, seed, mtt_capacity, slots = point
    policy = parse_policy(policy_text)
    cfg = WorkloadConfig(
        num_regions=regions,
        write_size=write_size,
        num_writes=writes,
        skew=skew,
        seed=seed,
    )
    result = run(cfg, policy, mtt_capacity, LatencyParams(), num_slots=slots)
    stats = result.stats
    return ",".join(
        [
            policy_text,
            str(regions),
            format(skew, "g"),
            str(write_size),
            str(writes),
            str(stats.mean_rtt_ns()),
            str(stats.percentile_ns(50)),
            str(stats.percentile_ns(99)),
            f"{stats.mtt_hit_rate():.6f}",
            f"{stats.unload_fraction():.6f}",
            str(stats.fallback_count),
            str(stats.security_rejects),
            str(seed),
        ]
    )


def _emit(rows: list[str], out_path: str | None) -> None:
    text = "\n".join([CSV_HEADER, *rows]) + "\n"
    if out_path is None:
        sys.stdout.write(text)
    else:
        with open(out_path, "w", encoding="utf-8", newline="") as fp:
            fp.write(text)


def _common_values(args, file_cfg):
    writes = _pick(args.writes, file_cfg, "writes", int, DEFAULT_WRITES)
    write_size = _pick(args.write_size, file_cfg, "write-size", int, 16)
    skew = _pick(args.skew, file_cfg, "skew", float, 0.5)
    mtt_capacity = _pick(args.mtt_capacity, file_cfg, "mtt-capacity", int, DEFAULT_MTT_CAPACITY)
    slots = _pick(args.slots, file_cfg, "slots", int, DEFAULT_NUM_SLOTS)
    seed = _pick(args.seed, file_cfg, "seed", int, 1)
    jobs = _pick(args.jobs, file_cfg, "jobs", int, 1)
    out = _pick(args.out, file_cfg, "out", str, None)
    if writes < 1:
        raise ConfigError("writes must be >= 1")
    if write_size < 1:
        raise ConfigError("write-size must be >= 1")
    if skew < 0:
        raise ConfigError("skew must be >= 0")
    if mtt_capacity < 1:
        raise ConfigError("mtt-capacity must be >= 1")
    if slots < 1:
        raise ConfigError("slots must be >= 1")
    if jobs < 1:
        raise ConfigError("jobs must be >= 1")
    return writes, write_size, skew, mtt_capacity, slots, seed, jobs, out


def _cmd_run(args) -> int:
    file_cfg = load_config_file(args.config) if args.config else {}
    writes, write_size, skew, mtt_capacity, slots, seed, _jobs, out = _common_values(
        args, file_cfg
    )
    regions = _pick(args.regions, file_cfg, "regions", int, 1)
    policy_text = _pick(args.policy, file_cfg, "policy", str, "offload")
    if regions < 1:
        raise ConfigError("regions must be >= 1")
    try:
        parse_policy(policy_text)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    dump_path = _pick(args.dump_trace, file_cfg, "dump-trace", str, None)
    if dump_path:
        cfg = WorkloadConfig(
            num_regions=regions, write_size=write_size, num_writes=writes, skew=skew, seed=seed
        )
        layout = build_layout(regions)
        with open(dump_path, "wb") as fp:
            write_trace(gen_trace(cfg, layout), fp)

    row = _execute_point(
        (policy_text, regions, writes, write_size, skew, seed, mtt_capacity, slots)
    )
    _emit([row], out)
    return 0


def _cmd_sweep(args) -> int:
    file_cfg = load_config_file(args.config) if args.config else {}
    writes, write_size, skew, mtt_capacity, slots, seed, jobs, out = _common_values(
        args, file_cfg
    )
    sweep_text = _pick(args.region_sweep, file_cfg, "region-sweep", str, None)
    if sweep_text:
        try:
            region_counts = [int(tok) for tok in sweep_text.split(",") if tok.strip()]
        except ValueError as exc:
            raise ConfigError(f"bad region sweep {sweep_text!r}: {exc}") from exc
    else:
        region_counts = list(DEFAULT_SWEEP_REGIONS)
    if not region_counts:
        raise ConfigError("region sweep must not be empty")
    if any(r < 1 for r in region_counts):
        raise ConfigError("regions must be >= 1")

    policy_text = _pick(args.policy, file_cfg, "policy", str, None)
    policies = (
        [tok.strip() for tok in policy_text.split(",") if tok.strip()]
        if policy_text
        else list(DEFAULT_SWEEP_POLICIES)
    )
    if not policies:
        raise ConfigError("policy list must not be empty")
    for text in policies:
        try:
            parse_policy(text)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    # Rows ordered by policy then region count; execution may be concurrent
    # but assembly preserves this order, so output is jobs-independent.
    points = [
        (text, regions, writes, write_size, skew, seed, mtt_capacity, slots)
        for text in policies
        for regions in sorted(region_counts)
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_execute_point, points))
    else:
        rows = [_execute_point(p) for p in points]
    _emit(rows, out)
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        return _cmd_sweep(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SIMULATION_FAULTS as exc:
        print(f"simulation fault: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
