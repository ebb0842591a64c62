"""Routing policies, frequency monitor, and threshold selection."""

from collections import Counter

import pytest

from unloadsim.core import Route, WriteRequest, build_layout, pages_for
from unloadsim.policy import (
    UNLOAD_ALL_THRESHOLD,
    AlwaysOffload,
    AlwaysUnload,
    EmptyHistogram,
    FreqMonitor,
    FrequencyBased,
    HintBased,
    PageOutOfWindow,
    Reason,
    compute_threshold,
    hint_annotate_topk,
    parse_policy,
    top_k_stags,
)
from unloadsim.workload import Rng, ZipfDist


def page_req(page, length=16, offset=0, seq=0, hint=None):
    return WriteRequest(dest=page * 4096 + offset, stag=1, payload=b"p" * length, seq=seq, hint=hint)


def monitor(first_page=0, num_pages=64):
    return FreqMonitor(first_page=first_page, num_pages=num_pages)


# --- monitor ----------------------------------------------------------------


def test_record_single_page():
    mon = monitor()
    mon.record(page_req(3))
    assert mon.count(3) == 1
    assert mon.total == 1


def test_record_boundary_crossing_updates_both_pages():
    mon = monitor()
    mon.record(WriteRequest(dest=0x1FF8, stag=1, payload=b"x" * 16, seq=0))
    assert mon.count(1) == 1
    assert mon.count(2) == 1
    assert mon.total == 2


def test_record_page_aligned_full_page():
    mon = monitor()
    mon.record(page_req(5, length=4096))
    assert mon.count(5) == 1
    assert mon.total == 1


def test_record_out_of_window():
    mon = FreqMonitor(first_page=10, num_pages=4)
    with pytest.raises(PageOutOfWindow):
        mon.record(page_req(3))
    with pytest.raises(PageOutOfWindow):
        mon.record(page_req(14))


def test_monitor_exactness_against_bruteforce():
    mon = monitor(num_pages=32)
    oracle = Counter()
    rng = Rng(seed=13, stream=11)
    for seq in range(3000):
        dest = rng.next_u64() % (30 * 4096)
        length = 1 + rng.next_u64() % 8192
        length = min(length, 32 * 4096 - dest)
        req = WriteRequest(dest=dest, stag=1, payload=b"z" * length, seq=seq)
        mon.record(req)
        oracle.update(pages_for(dest, length, 4096))
    for page in range(32):
        assert mon.count(page) == oracle[page]
    assert mon.total == sum(oracle.values())


def test_monitor_scale_preserves_relative_frequencies():
    mon = monitor()
    for page, n in ((0, 5), (1, 3), (2, 2)):
        for _ in range(n):
            mon.record(page_req(page))
    before = [mon.rel_freq(p) for p in range(3)]
    mon.scale(7)
    assert [mon.rel_freq(p) for p in range(3)] == before
    assert mon.total == 70


def test_rel_freq_empty():
    with pytest.raises(EmptyHistogram):
        monitor().rel_freq(0)


# --- decide -----------------------------------------------------------------


def fill_monitor(counts):
    """Monitor whose page i holds counts[i] single-page touches."""
    mon = monitor(num_pages=max(64, len(counts)))
    for page, n in enumerate(counts):
        for _ in range(n):
            mon.record(page_req(page))
    return mon


def test_always_policies():
    off, unl = AlwaysOffload(), AlwaysUnload()
    req = page_req(0)
    assert off.decide(req).route is Route.OFFLOAD
    assert off.decide(req).reason is Reason.POLICY_CONSTANT
    assert unl.decide(req).route is Route.UNLOAD
    assert unl.decide(req).reason is Reason.POLICY_CONSTANT


def test_hint_passthrough():
    policy = HintBased()
    assert policy.decide(page_req(0, hint=Route.UNLOAD)).route is Route.UNLOAD
    assert policy.decide(page_req(0, hint=Route.UNLOAD)).reason is Reason.HINT
    assert policy.decide(page_req(0, hint=Route.OFFLOAD)).route is Route.OFFLOAD


def test_hint_missing_defaults_offload():
    assert HintBased().decide(page_req(0)).route is Route.OFFLOAD


def test_freq_below_threshold_unloads():
    # page counter 5 of total 1000: r = 0.005 < 0.01
    mon = fill_monitor([5] + [199] * 5)
    assert mon.total == 1000
    decision = FrequencyBased(0.01).decide(page_req(0), mon)
    assert decision.route is Route.UNLOAD
    assert decision.reason is Reason.BELOW_THRESHOLD


def test_freq_at_or_above_threshold_offloads():
    # page counter 50 of total 1000: r = 0.05 >= 0.01
    mon = fill_monitor([50] + [190] * 5)
    assert mon.total == 1000
    decision = FrequencyBased(0.01).decide(page_req(0), mon)
    assert decision.route is Route.OFFLOAD
    assert decision.reason is Reason.AT_OR_ABOVE_THRESHOLD


def test_freq_large_write_offloads_regardless():
    mon = fill_monitor([1])
    decision = FrequencyBased(0.01, max_unload_size=4096).decide(
        page_req(0, length=8192), mon
    )
    assert decision.route is Route.OFFLOAD
    assert decision.reason is Reason.TOO_LARGE


def test_freq_multi_page_uses_hottest_page():
    mon = monitor()
    for _ in range(99):
        mon.record(page_req(2))
    boundary = WriteRequest(dest=0x1FF8, stag=1, payload=b"x" * 16, seq=0)
    mon.record(boundary)  # pages 1 and 2: counts 1 and 100, total 101
    policy = FrequencyBased(0.5)
    decision = policy.decide(boundary, mon)
    assert decision.route is Route.OFFLOAD  # hottest page r = 100/101


def test_freq_decision_deterministic():
    mon = fill_monitor([5, 10])
    policy = FrequencyBased(0.3)
    req = page_req(0)
    assert policy.decide(req, mon) == policy.decide(req, mon)


def test_freq_scale_invariance():
    mon = fill_monitor([7, 3, 25, 1, 9])
    policy = FrequencyBased(0.13)
    before = [policy.decide(page_req(p), mon) for p in range(5)]
    mon.scale(13)
    assert [policy.decide(page_req(p), mon) for p in range(5)] == before


def test_freq_decide_reads_one_counter_per_page():
    calls = []

    class SpyMonitor(FreqMonitor):
        def rel_freq(self, page):
            calls.append(page)
            return super().rel_freq(page)

    mon = SpyMonitor(first_page=0, num_pages=64)
    one_page = page_req(3)
    three_pages = WriteRequest(dest=0x1FF8, stag=1, payload=b"x" * 8200, seq=0)
    mon.record(one_page)
    mon.record(three_pages)
    policy = FrequencyBased(0.5, max_unload_size=1 << 20)
    calls.clear()
    policy.decide(one_page, mon)
    assert len(calls) == 1
    calls.clear()
    policy.decide(three_pages, mon)
    assert len(calls) == 3


def test_freq_policy_validation():
    with pytest.raises(ValueError):
        FrequencyBased(-0.1)
    with pytest.raises(ValueError):
        FrequencyBased(1.5)
    with pytest.raises(ValueError):
        FrequencyBased(0.5, max_unload_size=0)
    FrequencyBased(UNLOAD_ALL_THRESHOLD)  # sentinel is accepted


# --- threshold --------------------------------------------------------------


def test_threshold_second_most_frequent():
    mon = fill_monitor([50, 30, 20])
    assert compute_threshold(mon, 2) == pytest.approx(0.30)


def test_threshold_everything_fits():
    mon = fill_monitor([50, 30, 20])
    assert compute_threshold(mon, 3) == 0.0
    assert compute_threshold(mon, 100) == 0.0


def test_threshold_zero_capacity_unloads_all():
    mon = fill_monitor([50, 30, 20])
    theta = compute_threshold(mon, 0)
    assert theta > 1.0
    # end to end: every page's relative frequency is below the sentinel
    policy = FrequencyBased(theta)
    for page in range(3):
        assert policy.decide(page_req(page), mon).route is Route.UNLOAD


def test_threshold_empty_histogram():
    with pytest.raises(EmptyHistogram):
        compute_threshold(monitor(), 2)


def test_threshold_matches_sort_oracle():
    rng = Rng(seed=41, stream=12)
    for _ in range(30):
        counts = [rng.next_u64() % 20 for _ in range(24)]
        if not any(counts):
            counts[0] = 1
        mon = fill_monitor(counts)
        total = sum(counts)
        ranked = sorted((c for c in counts if c), reverse=True)
        for capacity in range(0, 30):
            theta = compute_threshold(mon, capacity)
            if capacity == 0:
                assert theta > 1.0
            elif capacity >= len(ranked):
                assert theta == 0.0
            else:
                assert theta == ranked[capacity - 1] / total
            # at most `capacity` pages sit at or above theta, up to ties
            if 0 < capacity < len(ranked):
                strictly_above = sum(1 for c in ranked if c / total > theta)
                assert strictly_above <= capacity


def test_threshold_monotone_in_capacity():
    mon = fill_monitor([13, 7, 7, 2, 1, 40])
    thetas = [compute_threshold(mon, cap) for cap in range(8)]
    for a, b in zip(thetas, thetas[1:]):
        assert b <= a


# --- hint annotation --------------------------------------------------------


def test_annotate_all_offload_when_k_covers_regions():
    layout = build_layout(4)
    pmf = ZipfDist(4, 0.5).pmf
    trace = [
        WriteRequest(dest=layout.region_base(i % 4), stag=layout.stag_of(i % 4), payload=b"x", seq=i)
        for i in range(8)
    ]
    out = list(hint_annotate_topk(trace, 4, pmf, layout))
    assert all(r.hint is Route.OFFLOAD for r in out)


def test_annotate_all_unload_when_k_zero():
    layout = build_layout(4)
    pmf = ZipfDist(4, 0.5).pmf
    trace = [
        WriteRequest(dest=layout.region_base(i % 4), stag=layout.stag_of(i % 4), payload=b"x", seq=i)
        for i in range(8)
    ]
    out = list(hint_annotate_topk(trace, 0, pmf, layout))
    assert all(r.hint is Route.UNLOAD for r in out)


def test_annotate_topk_zipf_picks_first_regions():
    # Zipf pmf decreases with index, so top-2 of 4 regions are stags 1 and 2.
    layout = build_layout(4)
    pmf = ZipfDist(4, 0.5).pmf
    assert top_k_stags(2, pmf, layout) == {1, 2}
    trace = [
        WriteRequest(dest=layout.region_base(i), stag=layout.stag_of(i), payload=b"x", seq=i)
        for i in range(4)
    ]
    hints = [r.hint for r in hint_annotate_topk(trace, 2, pmf, layout)]
    assert hints == [Route.OFFLOAD, Route.OFFLOAD, Route.UNLOAD, Route.UNLOAD]


def test_annotate_ties_break_by_lower_index():
    layout = build_layout(4)
    uniform = ZipfDist(4, 0.0).pmf
    assert top_k_stags(2, uniform, layout) == {1, 2}


def test_annotate_pmf_length_mismatch():
    layout = build_layout(4)
    with pytest.raises(ValueError):
        list(hint_annotate_topk([], 2, [0.5, 0.5], layout))


# --- parsing ----------------------------------------------------------------


def test_parse_policy_variants():
    assert isinstance(parse_policy("offload"), AlwaysOffload)
    assert isinstance(parse_policy("unload"), AlwaysUnload)
    hint = parse_policy("hint:4096")
    assert isinstance(hint, HintBased) and hint.top_k == 4096
    freq = parse_policy("freq:0.01")
    assert isinstance(freq, FrequencyBased)
    assert freq.threshold == 0.01 and freq.max_unload_size == 4096
    freq2 = parse_policy("freq:0.25:128")
    assert freq2.threshold == 0.25 and freq2.max_unload_size == 128


def test_parse_policy_errors():
    for bad in ("", "hint", "freq", "adaptive", "offload:2", "freq:x"):
        with pytest.raises(ValueError):
            parse_policy(bad)
