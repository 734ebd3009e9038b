import math
import statistics

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ransec import bench, wire
from ransec.bench import (BENCH_COLUMNS, CHUNK_SIZE, KIB, MIB, BenchCurve, BenchPoint, DataPath,
                          aes_acceleration_active, analyze_ordering, bench_runtime_1gib,
                          bench_suite, bench_suites, bench_uu_breakdown, compare_uu_composite,
                          demo_parallel_ctr, parallel_nea2, plot_data, random_buffer)
from ransec.links import DtlsEndpoint, PdcpEntity, SecurityAssociation, derive_static_key
from ransec.suites import ESP_SUITES, UuSecurityInputs, get_suite, nea2_crypt, suite_names

CURVE_SUITES = [s.id for s in ESP_SUITES] + ["NIA2+NEA2"]


def _curve(name, pairs):
    return BenchCurve(name, [BenchPoint(size, tp, size / tp) for size, tp in pairs])


# -- curve shape --------------------------------------------------------------------

def test_curve_rejects_unordered_sizes():
    with pytest.raises(ValueError):
        _curve("x", [(2048, 1.0), (1024, 1.0)])
    with pytest.raises(ValueError):
        _curve("x", [(1024, 1.0), (1024, 2.0)])


@pytest.mark.parametrize("suite", suite_names())
def test_curve_invariants(suite):
    c = bench_suite(suite, [KIB, 4 * KIB, 64 * KIB], repetitions=3)
    assert c.sizes == [KIB, 4 * KIB, 64 * KIB] and not c.truncated
    for p in c.points:
        assert p.runtime > 0
        assert math.isclose(p.throughput, p.size / p.runtime, rel_tol=1e-12)
    assert c.aes_acceleration_active == aes_acceleration_active()
    rows = c.rows()
    assert [tuple(r) for r in rows] == [BENCH_COLUMNS] * 3
    assert rows[0]["suite"] == suite and rows[0]["size_bytes"] == KIB


def test_single_repetition_on_1kib():
    c = bench_suite("AES-GCM-128", [KIB], repetitions=1)
    assert len(c.points) == 1 and c.points[0].runtime > 0


@pytest.mark.parametrize("sizes", [[], [0], [2048, 1024], [1024, 1024]])
def test_bad_sizes_rejected(sizes):
    with pytest.raises(ValueError):
        bench_suite("AES-GCM-128", sizes, 1)


def test_zero_repetitions_rejected():
    with pytest.raises(ValueError):
        bench_suite("AES-GCM-128", [KIB], 0)


def test_allocation_failure_truncates(monkeypatch):
    real = bench.DataPath

    def path(suite, payload, seed=0):
        if len(payload) > 8 * KIB:
            raise MemoryError
        return real(suite, payload, seed)

    monkeypatch.setattr(bench, "DataPath", path)
    c = bench_suite("AES-GCM-128", [KIB, 8 * KIB, 64 * KIB, MIB], 3)
    assert c.truncated and c.sizes == [KIB, 8 * KIB]


def test_source_allocation_failure_falls_back(monkeypatch):
    real = bench.random_buffer
    calls = []

    def buf(size, seed=0):
        calls.append(size)
        if len(calls) == 1:
            raise MemoryError
        return real(size, seed)

    monkeypatch.setattr(bench, "random_buffer", buf)
    c = bench_suite("AES-GCM-128", [KIB, 2 * KIB], 1)
    assert c.truncated and c.sizes == [KIB, 2 * KIB]


def test_suites_take_turns_at_each_size(monkeypatch):
    order = []
    real = bench._samples

    def spy(path, count, seq, fresh=True):
        order.append((path.suite.id, path.size, fresh))
        return real(path, count, seq, fresh)

    monkeypatch.setattr(bench, "_samples", spy)
    monkeypatch.setattr(bench, "_KEEP_BYTES", KIB)
    names = ["AES-GCM-128", "NULL+AES-GMAC-128"]
    curves = bench_suites(names, [KIB, 4 * KIB], 2)
    assert [c.suite for c in curves] == names
    assert all(c.sizes == [KIB, 4 * KIB] for c in curves)
    one_pass = [(n, size) for size in (KIB, 4 * KIB) for n in names]
    assert [(n, size) for n, size, _ in order] == one_pass * 2
    # small paths are kept across passes, larger ones rebuilt fresh
    assert [f for n, size, f in order[4:]] == [False, False, True, True]


def test_bench_suites_rejects_empty():
    with pytest.raises(ValueError):
        bench_suites([], [KIB], 1)


def _violations(curve, band=0.10):
    """Points that fall more than ``band`` below the running maximum before the
    curve first reaches (1 - band) of its overall maximum."""
    top = max(p.throughput for p in curve.points)
    best, bad = 0.0, []
    for p in curve.points:
        if p.throughput >= (1 - band) * top:
            break
        if p.throughput < (1 - band) * best:
            bad.append((p.size, p.throughput / best))
        best = max(best, p.throughput)
    return bad


@pytest.mark.parametrize("suite", CURVE_SUITES)
def test_throughput_rises_to_plateau(suite):
    c = bench_suite(suite, [KIB << i for i in range(15)], 9)
    assert _violations(c) == []
    # the rising part spans at least an order of magnitude of throughput
    assert c.points[0].throughput * 10 < max(p.throughput for p in c.points)


def test_violation_helper_on_fixtures():
    rising = _curve("r", [(1, 1.0), (2, 2.0), (4, 1.9), (8, 4.0), (16, 3.5)])
    assert _violations(rising) == []
    dip = _curve("d", [(1, 1.0), (2, 2.0), (4, 1.0), (8, 4.0)])
    assert _violations(dip) == [(4, 0.5)]


# -- benchmarked path is the real path ---------------------------------------------------

@settings(max_examples=30, deadline=None)
@given(st.sampled_from([s.id for s in ESP_SUITES]), st.integers(1, 5000))
def test_esp_path_matches_link_output(suite_id, size):
    s = get_suite(suite_id)
    payload = random_buffer(size, 3)
    path = DataPath(s, payload, seed=3)
    key = derive_static_key(3, f"bench/{s.id}/enc", s.key_bytes)
    auth = derive_static_key(3, f"bench/{s.id}/auth", s.auth_key_len)
    tx = SecurityAssociation(0xBE00, s, key, auth)
    expected = tx.protect(payload.tobytes())
    assert path.packet(1) == expected
    # the timed call writes the same body into its preallocated buffer
    iv, body, icv = path.run(1)
    assert b"".join((wire._ESP.pack(0xBE00, 1), bytes(iv), bytes(body), bytes(icv))) == expected
    rx = SecurityAssociation(0xBE00, s, key, auth, direction="unprotect")
    assert rx.unprotect(expected) == payload.tobytes()


@pytest.mark.parametrize("size", [1, 1024, 4097, 70_000])
def test_uu_path_matches_link_output(size):
    payload = random_buffer(size, 4).tobytes()
    path = DataPath("NIA2+NEA2", payload, seed=4)
    ik = derive_static_key(4, "bench/uu/ik", 16)
    ck = derive_static_key(4, "bench/NIA2+NEA2/enc", get_suite("NIA2+NEA2").key_bytes)[:16]
    ue = PdcpEntity(1, ik, ck)
    expected = ue.protect(payload)
    assert path.packet(0) == expected
    assert bytes(path.run(0)) == expected
    gnb = PdcpEntity(1, ik, ck, tx_direction=1)
    assert gnb.unprotect(expected) == payload


@pytest.mark.parametrize("size", [1, 1024, 1 << 14, (1 << 14) + 1, 50_000])
def test_dtls_path_matches_link_output(size):
    payload = random_buffer(size, 5).tobytes()
    path = DataPath("DTLS-1.2-AES-GCM-128", payload, seed=5)
    s = get_suite("DTLS-1.2-AES-GCM-128")
    key = derive_static_key(5, f"bench/{s.id}/enc", s.key_bytes)
    salt = derive_static_key(5, "bench/dtls/salt", s.salt_len)
    ep = DtlsEndpoint(key[:16], salt, key[:16], salt)
    step = wire.DTLS_MAX_PLAINTEXT
    records = [ep.protect(payload[o:o + step]) for o in range(0, size, step)]
    assert path.packet(0) == b"".join(records)
    assert len(records) == -(-size // step)
    peer = DtlsEndpoint(key[:16], salt, key[:16], salt)
    assert b"".join(peer.unprotect(r) for r in records) == payload


# -- ordering -----------------------------------------------------------------------------

def test_ordering_crossing_at_small_sizes_follows_large_regime():
    sizes = [KIB << i for i in range(10)]
    a = _curve("A", [(s, 10.0 if s < 64 * KIB else 50.0) for s in sizes])
    b = _curve("B", [(s, 20.0 if s < 64 * KIB else 30.0) for s in sizes])
    r = analyze_ordering([a, b])
    assert r.per_size[("A", "B")][KIB] == "<"
    assert r.per_size[("A", "B")][64 * KIB] == ">"
    assert r.summary[("A", "B")] == ">" and r.dominates("A", "B") and not r.dominates("B", "A")
    assert r.ranking() == ["A", "B"]


def test_self_comparison_shows_no_dominance():
    c = _curve("C", [(KIB << i, 1.0 + i) for i in range(8)])
    twin = _curve("C'", [(p.size, p.throughput) for p in c.points])
    r = analyze_ordering([c, twin])
    assert set(r.per_size[("C", "C'")].values()) == {"="}
    assert r.summary[("C", "C'")] == "~"
    assert not r.dominates("C", "C'") and not r.dominates("C'", "C")


def test_mixed_large_regime_is_undecided():
    a = _curve("A", [(64 * KIB, 2.0), (128 * KIB, 1.0)])
    b = _curve("B", [(64 * KIB, 1.0), (128 * KIB, 2.0)])
    assert analyze_ordering([a, b]).summary[("A", "B")] == "~"


def test_ordering_tolerance():
    a = _curve("A", [(64 * KIB, 1.05)])
    b = _curve("B", [(64 * KIB, 1.0)])
    assert analyze_ordering([a, b]).summary[("A", "B")] == ">"
    assert analyze_ordering([a, b], tolerance=0.1).summary[("A", "B")] == "~"


def test_ordering_errors():
    a = _curve("A", [(64 * KIB, 1.0)])
    with pytest.raises(ValueError):
        analyze_ordering([a])
    with pytest.raises(ValueError):
        analyze_ordering([a, _curve("B", [(128 * KIB, 1.0)])])
    with pytest.raises(ValueError):
        analyze_ordering([_curve("A", [(KIB, 1.0)]), _curve("B", [(KIB, 2.0)])])


def test_measured_large_size_ordering():
    if not aes_acceleration_active():
        pytest.skip("ordering only applies with AES acceleration")
    sizes = [64 * KIB, 256 * KIB, MIB, 4 * MIB]
    curves = bench_suites(["NULL+AES-GMAC-128", "AES-GCM-128", "AES-CBC-128+HMAC-SHA256-128"],
                          sizes, 9)
    r = analyze_ordering(curves)
    assert r.ranking() == ["NULL+AES-GMAC-128", "AES-GCM-128", "AES-CBC-128+HMAC-SHA256-128"]
    assert r.dominates("AES-GCM-128", "AES-CBC-128+HMAC-SHA256-128")


# -- runtime at 1 GiB ----------------------------------------------------------------------

@pytest.mark.parametrize("suite", ["AES-GCM-128", "NULL+AES-GMAC-128"])
def test_runtime_scales_linearly_at_large_sizes(suite):
    c = bench_suite(suite, [MIB << i for i in range(9)], 9)
    slope, intercept, r2 = c.fit(MIB, 256 * MIB)
    assert r2 >= 0.99 and slope > 0


def test_chunked_and_single_buffer_agree():
    # consecutive 1 GiB runs on a shared host drift by up to ~15%; alternating
    # the two layouts and comparing medians lets the drift hit both alike
    for suite in ("AES-GCM-128", "NIA2+NEA2"):
        single, chunked = [], []
        for _ in range(3):
            single.append(bench_runtime_1gib(suite))
            chunked.append(bench_runtime_1gib(suite, CHUNK_SIZE))
        assert statistics.median(chunked) == pytest.approx(statistics.median(single),
                                                           rel=0.10), (suite, single, chunked)


def test_runtime_total_must_divide():
    with pytest.raises(ValueError):
        bench_runtime_1gib("AES-GCM-128", chunk_size=3 * MIB, total=64 * MIB)


def test_runtime_falls_back_to_chunks(monkeypatch):
    real = bench.random_buffer
    seen = []

    def buf(size, seed=0):
        seen.append(size)
        if size > 4 * MIB:
            raise MemoryError
        return real(size, seed)

    monkeypatch.setattr(bench, "random_buffer", buf)
    monkeypatch.setattr(bench, "CHUNK_SIZE", 2 * MIB)
    assert bench_runtime_1gib("AES-GCM-128", total=8 * MIB, repetitions=1) > 0
    assert seen == [8 * MIB, 2 * MIB]


# -- Uu composition ------------------------------------------------------------------------

def test_uu_breakdown_composite_is_slowest():
    sizes = [KIB << i for i in range(6, 11)]
    curves = bench_uu_breakdown(sizes, 9)
    assert set(curves) == {"NIA2+NEA2", "NIA2", "NEA2"}
    for size in sizes:
        comp = curves["NIA2+NEA2"].throughput_at(size)
        assert comp < curves["NIA2"].throughput_at(size)
        assert comp < curves["NEA2"].throughput_at(size)


def test_composite_costs_more_than_one_aead_pass():
    r = compare_uu_composite(1024, 2000)
    assert r.composite.n == r.aead.n == 2000
    assert r.composite.mean > r.aead.mean
    assert r.report.delta_mean == pytest.approx(r.composite.mean - r.aead.mean)
    assert r.report.verdict == "distinguishable"


# -- parallel CTR ---------------------------------------------------------------------------

@settings(max_examples=60, deadline=None)
@given(st.binary(min_size=1, max_size=3000), st.integers(1, 7), st.integers(0, 2**32 - 1))
def test_parallel_nea2_identical(data, workers, count):
    key = bytes(range(16))
    inputs = UuSecurityInputs(count, 3, 1, key)
    block = inputs.block() + bytes(8)
    assert parallel_nea2(key, block, data, workers) == nea2_crypt(inputs, data)


def test_parallel_demo_output_identical():
    demo = demo_parallel_ctr(2 * MIB, workers=4)
    assert demo.identical and demo.workers == 4
    assert demo.sequential_s > 0 and demo.parallel_s > 0


# -- plot data -------------------------------------------------------------------------------

def test_plot_data_columns():
    a = _curve("A", [(KIB, 1.5), (2 * KIB, 2.5)])
    b = _curve("B", [(2 * KIB, 4.0)])
    lines = plot_data([a, b]).splitlines()
    assert lines[0] == '# size_bytes "A" "B"'
    assert lines[1:] == ["1024 1.5 NaN", "2048 2.5 4.0"]
    parsed = np.genfromtxt(lines[1:])
    assert parsed.shape == (2, 3) and np.isnan(parsed[0, 2])


def test_acceleration_flag_reads_cpuinfo():
    try:
        with open("/proc/cpuinfo") as fh:
            flags = next((line for line in fh if line.lower().startswith(("flags", "features"))),
                         "")
    except OSError:
        pytest.skip("no /proc/cpuinfo")
    assert aes_acceleration_active() == ("aes" in flags.partition(":")[2].split())
