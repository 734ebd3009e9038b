"""Throughput and runtime of each suite's protect path across payload sizes.

Every benchmark drives the same functions the links use (``SecurityAssociation.seal``,
``PdcpEntity.protect_count``, ``DtlsEndpoint.protect``), on buffers generated
before the clock starts.
"""

from __future__ import annotations

import gc
import itertools
import os
import platform
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import _aes, wire
from .links import (GMAC_HEADROOM, DtlsEndpoint, PdcpEntity, SecurityAssociation,
                    derive_static_key)
from .stats import OverheadReport, StatsSummary, compare_scenarios, linear_fit, summarize_ns
from .suites import (AES_GCM_128, UU_NIA2_NEA2, SecuritySuite, UuSecurityInputs, get_suite,
                     nea2_crypt, nia2_mac)

KIB, MIB, GIB = 1 << 10, 1 << 20, 1 << 30
DEFAULT_SIZES = tuple(KIB << i for i in range(19))  # 1 KiB .. 256 MiB
DEFAULT_REPETITIONS = 9
LARGE_SIZE = 64 * KIB
CHUNK_SIZE = 64 * MIB
_BATCH_BYTES = MIB  # small sizes are averaged over several calls per sample...
_BATCH_CALLS = 16  # ...but few enough that the per-call eviction stays cheap
_PASSES = 5  # size sweeps that share the repetitions
_KEEP_BYTES = 16 * MIB  # larger paths are rebuilt each pass
_WARMUP_MAX = 30  # batches
_WARMUP_FRESH_NS = 50_000_000  # first use of a newly allocated path
_EVICT_BYTES = 4 * MIB  # twice the L2 of the reference host
_SCRATCH = None
BENCH_COLUMNS = ("suite", "size_bytes", "runtime_s", "throughput_Bps", "accel_flag")


def aes_acceleration_active() -> bool:
    """True when the CPU advertises AES instructions (x86 'aes' flag, Arm 'aes' feature)."""
    try:
        with open("/proc/cpuinfo") as fh:
            for line in fh:
                key, _, value = line.partition(":")
                if key.strip().lower() in ("flags", "features"):
                    return "aes" in value.split()
    except OSError:
        pass
    return platform.machine() == "arm64" and platform.system() == "Darwin"


@dataclass(frozen=True)
class BenchPoint:
    size: int
    throughput: float  # bytes per second
    runtime: float  # seconds per protect call


@dataclass
class BenchCurve:
    suite: str
    points: list = field(default_factory=list)
    aes_acceleration_active: bool = False
    truncated: bool = False

    def __post_init__(self):
        sizes = self.sizes
        if any(b <= a for a, b in zip(sizes, sizes[1:])):
            raise ValueError("bench sizes must be strictly increasing")

    @property
    def sizes(self) -> list:
        return [p.size for p in self.points]

    def throughput_at(self, size: int) -> float:
        for p in self.points:
            if p.size == size:
                return p.throughput
        raise KeyError(size)

    def fit(self, min_size: int = MIB, max_size: int = 256 * MIB):
        """Linear runtime-vs-size fit over the given range: (slope, intercept, r2)."""
        pts = [(p.size, p.runtime) for p in self.points if min_size <= p.size <= max_size]
        return linear_fit(pts)

    def rows(self) -> list[dict]:
        return [{"suite": self.suite, "size_bytes": p.size, "runtime_s": p.runtime,
                 "throughput_Bps": p.throughput, "accel_flag": self.aes_acceleration_active}
                for p in self.points]


class DataPath:
    """The protect path of one suite with fixed keys. ``run(i)`` protects the
    prepared payload with sequence/COUNT ``i``; ``packet(i)`` is the full wire form."""

    def __init__(self, suite, payload: bytes | np.ndarray, seed: int = 0):
        self.suite = get_suite(suite) if isinstance(suite, str) else suite
        s = self.suite
        key = derive_static_key(seed, f"bench/{s.id}/enc", s.key_bytes)
        self.size = len(payload)
        if s.kind == "esp":
            self.sa = SecurityAssociation(0xBE00, s, key,
                                          derive_static_key(seed, f"bench/{s.id}/auth",
                                                            s.auth_key_len))
            self.payload = self._padded(payload)
            self.out = None if s.is_gmac else bytearray(len(self.payload) + 16)
            self.run = self._run_esp
        elif s.kind == "uu":
            self.entity = PdcpEntity(1, derive_static_key(seed, "bench/uu/ik", 16), key[:16])
            self.payload = payload
            self.out = bytearray(len(payload) + 3 + 4 + 16)
            self.run = lambda i: self.entity.protect_count(i, self.payload, self.out)
        elif s.kind == "dtls":
            salt = derive_static_key(seed, "bench/dtls/salt", s.salt_len)
            self.endpoint = DtlsEndpoint(key[:16], salt, key[:16], salt)
            self.payload = payload
            view = memoryview(payload)
            step = wire.DTLS_MAX_PLAINTEXT
            self.fragments = [view[o:o + step] for o in range(0, len(view), step)] or [view]
            self.run = self._run_dtls
        else:  # pragma: no cover - catalog only has the three kinds
            raise ValueError(f"cannot benchmark suite kind {s.kind}")

    def _padded(self, payload):
        """ESP trailer appended outside the timed region; returns a numpy buffer.

        GMAC payloads get the same headroom the link path lays out, kept in
        ``self.frame``."""
        n = len(payload)
        padlen = -(n + 2) % int(np.lcm(self.suite.pad_block, 4))
        room = GMAC_HEADROOM if self.suite.is_gmac else 0
        frame = np.zeros(room + n + padlen + 2, np.uint8)
        self.frame = frame if room else None
        buf = frame[room:]
        buf[:n] = payload if isinstance(payload, np.ndarray) else np.frombuffer(payload, np.uint8)
        buf[n:n + padlen] = np.arange(1, padlen + 1, dtype=np.uint8)
        buf[n + padlen:] = (padlen, self.sa.next_header)
        return buf

    def _run_dtls(self, i: int):
        # payloads above the record limit go out as consecutive full records
        protect = self.endpoint.protect
        return [protect(f) for f in self.fragments]

    def _run_esp(self, i: int):
        return self.sa.seal(i, self.payload, self.out, self.frame)

    def packet(self, i: int) -> bytes:
        if self.suite.kind == "esp":
            iv, body, icv = self.sa.seal(i, self.payload)
            return b"".join((wire._ESP.pack(self.sa.spi, i), iv, bytes(body), icv))
        out = self.run(i)
        return b"".join(out) if isinstance(out, list) else bytes(out)


def random_buffer(size: int, seed: int = 0) -> np.ndarray:
    return np.random.default_rng(seed).integers(0, 256, size, dtype=np.uint8)


def _batch(path: DataPath) -> int:
    return max(1, min(_BATCH_CALLS, _BATCH_BYTES // max(path.size, 1)))


def _evict() -> None:
    """Stream a scratch buffer larger than L2, so every call starts from the same
    cache state; otherwise a buffer that fits L2 is flattered against one that does not."""
    global _SCRATCH
    if _SCRATCH is None:
        _SCRATCH = np.ones(_EVICT_BYTES // 8, np.int64)
    _SCRATCH.sum()


def _timed(run, batch: int, seq) -> float:
    """Mean nanoseconds per call over ``batch`` calls, each after an untimed eviction."""
    clock = time.perf_counter_ns
    total = 0
    for _ in range(batch):
        _evict()
        start = clock()
        run(next(seq))
        total += clock() - start
    return total / batch


def _warm_up(run, batch: int, seq, min_ns: int = 0) -> None:
    """Untimed batches until the time per call stops falling.

    On a VM a freshly allocated large buffer keeps getting faster for several
    calls (the host maps it in gradually), so a fixed count is not enough.
    Stops once two successive batches each improve by less than 5% and at
    least ``min_ns`` has passed.
    """
    t0 = time.perf_counter_ns()
    prev, steady = _timed(run, batch, seq), 0
    for _ in range(_WARMUP_MAX - 1):
        cur = _timed(run, batch, seq)
        steady = steady + 1 if cur >= 0.95 * prev else 0
        if steady >= 2 and time.perf_counter_ns() - t0 >= min_ns:
            return
        prev = cur


def _samples(path: DataPath, count: int, seq, fresh: bool = True) -> list[float]:
    """``count`` back-to-back samples of nanoseconds per protect call."""
    batch = _batch(path)
    _warm_up(path.run, batch, seq, _WARMUP_FRESH_NS if fresh else 0)
    return [_timed(path.run, batch, seq) for _ in range(count)]


def _time_path(path: DataPath, repetitions: int, seq) -> float:
    """Median seconds per protect call."""
    return statistics.median(_samples(path, repetitions, seq)) / 1e9


def bench_suite(suite, sizes: Sequence[int] = DEFAULT_SIZES,
                repetitions: int = DEFAULT_REPETITIONS, seed: int = 0) -> BenchCurve:
    """Median runtime per size; throughput = size / runtime. See ``bench_suites``."""
    return bench_suites([suite], sizes, repetitions, seed)[0]


def bench_suites(suites: Sequence, sizes: Sequence[int] = DEFAULT_SIZES,
                 repetitions: int = DEFAULT_REPETITIONS, seed: int = 0) -> list[BenchCurve]:
    """One curve per suite, measured interleaved so the curves can be compared.

    One random buffer of the largest size is generated up front and sliced.
    The size sweep runs in up to five passes that split the repetitions, and
    within a pass the suites take turns at each size. A slow spell on the host
    therefore lands on different sizes in each pass, and on neighbouring
    suites alike; the pooled median absorbs it. Paths up to ``_KEEP_BYTES``
    are built once and kept for all passes; larger ones are rebuilt per pass
    to bound memory. If allocation fails the curves stop at the last size that
    fit and are flagged ``truncated``.
    """
    found = [get_suite(x) if isinstance(x, str) else x for x in suites]
    if not found:
        raise ValueError("no suites to benchmark")
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    sizes = list(sizes)
    if not sizes or any(b <= a for a, b in zip(sizes, sizes[1:])) or sizes[0] < 1:
        raise ValueError("sizes must be positive and strictly increasing")
    curves = [BenchCurve(s.id, [], aes_acceleration_active()) for s in found]
    truncated = False
    try:
        source = random_buffer(sizes[-1], seed)
    except MemoryError:
        source, truncated = None, True
    passes = min(_PASSES, repetitions)
    shares = [repetitions // passes + (i < repetitions % passes) for i in range(passes)]
    samples = {(i, size): [] for i in range(len(found)) for size in sizes}
    seq = itertools.count(1)
    gc_was = gc.isenabled()
    gc.disable()
    try:
        kept: dict[tuple, DataPath] = {}
        for share in shares:
            for size in list(sizes):
                for i, s in enumerate(found):
                    path = kept.get((i, size))
                    fresh = path is None
                    if fresh:
                        try:
                            buf = source[:size] if source is not None else random_buffer(size, seed)
                            path = DataPath(s, buf if s.kind == "esp" else buf.tobytes(), seed)
                        except MemoryError:
                            truncated = True
                            break
                        if size <= _KEEP_BYTES:
                            kept[(i, size)] = path
                    samples[(i, size)] += _samples(path, share, seq, fresh)
                    if size > _KEEP_BYTES:
                        # paths hold their buffers in cycles (run is a bound method)
                        del path
                        gc.collect()
                else:
                    continue
                sizes = [x for x in sizes if x < size]
                break
        del kept
    finally:
        if gc_was:
            gc.enable()
    gc.collect()
    for i, curve in enumerate(curves):
        curve.truncated = truncated
        for size in sizes:
            runtime = statistics.median(samples[(i, size)]) / 1e9
            curve.points.append(BenchPoint(size, size / runtime, runtime))
    return curves


def bench_runtime_1gib(suite, chunk_size: Optional[int] = None, total: int = GIB,
                       seed: int = 0, repetitions: int = 3) -> float:
    """Seconds to protect ``total`` bytes (median of ``repetitions`` passes after
    one untimed pass).

    ``chunk_size=None`` protects one buffer of ``total`` bytes, falling back to
    64 MiB chunks if it cannot be allocated; otherwise ``total/chunk_size``
    packets of ``chunk_size`` bytes each.
    """
    s = get_suite(suite) if isinstance(suite, str) else suite
    gc.collect()  # the payload, its padded copy and the output coexist briefly
    if chunk_size is None:
        try:
            path = DataPath(s, _as_input(s, random_buffer(total, seed)), seed)
        except MemoryError:
            return bench_runtime_1gib(s, CHUNK_SIZE, total, seed, repetitions)
        count = 1
    else:
        if chunk_size < 1 or total % chunk_size:
            raise ValueError("chunk_size must divide the total")
        path = DataPath(s, _as_input(s, random_buffer(chunk_size, seed)), seed)
        count = total // chunk_size
    gc.collect()
    seq = itertools.count(1)
    for _ in range(count):  # untimed pass: fresh memory is slow on first use
        path.run(next(seq))
    times = []
    gc_was = gc.isenabled()
    gc.disable()
    try:
        for _ in range(repetitions):
            start = time.perf_counter_ns()
            for _ in range(count):
                path.run(next(seq))
            times.append((time.perf_counter_ns() - start) / 1e9)
    finally:
        if gc_was:
            gc.enable()
    del path
    gc.collect()
    return statistics.median(times)


def _as_input(suite: SecuritySuite, buf: np.ndarray):
    return buf if suite.kind == "esp" else buf.tobytes()


# -- ordering -------------------------------------------------------------------

@dataclass
class OrderingReport:
    sizes: list
    per_size: dict  # (a, b) -> {size: ">" | "<" | "="}
    summary: dict  # (a, b) -> ">" | "<" | "~" over sizes >= min_size
    min_size: int

    def dominates(self, a: str, b: str) -> bool:
        if (a, b) in self.summary:
            return self.summary[(a, b)] == ">"
        return self.summary.get((b, a)) == "<"

    def ranking(self) -> list:
        """Suites sorted by how many others they dominate in the large-size regime."""
        names = sorted({n for pair in self.summary for n in pair})
        return sorted(names, key=lambda n: -sum(self.dominates(n, o) for o in names if o != n))


def analyze_ordering(curves: Sequence[BenchCurve], min_size: int = LARGE_SIZE,
                     tolerance: float = 0.0) -> OrderingReport:
    """Pairwise throughput dominance per common size, plus a large-size verdict.

    ``a > b`` at a size when a's throughput exceeds b's by more than
    ``tolerance`` (relative). The summary says ``>`` only if that holds at every
    common size >= ``min_size``.
    """
    if len(curves) < 2:
        raise ValueError("ordering needs at least two curves")
    common = set(curves[0].sizes)
    for c in curves[1:]:
        common &= set(c.sizes)
    if not common:
        raise ValueError("curves share no sizes")
    sizes = sorted(common)
    large = [s for s in sizes if s >= min_size]
    if not large:
        raise ValueError(f"no common size >= {min_size} bytes")
    per_size, summary = {}, {}
    for a, b in itertools.combinations(curves, 2):
        verdicts = {}
        for size in sizes:
            ta, tb = a.throughput_at(size), b.throughput_at(size)
            if ta > tb * (1 + tolerance):
                verdicts[size] = ">"
            elif tb > ta * (1 + tolerance):
                verdicts[size] = "<"
            else:
                verdicts[size] = "="
        per_size[(a.suite, b.suite)] = verdicts
        big = {verdicts[s] for s in large}
        summary[(a.suite, b.suite)] = big.pop() if big in ({">"}, {"<"}) else "~"
    return OrderingReport(sizes, per_size, summary, min_size)


# -- Uu composition --------------------------------------------------------------

def bench_uu_breakdown(sizes: Sequence[int] = DEFAULT_SIZES[:13],
                       repetitions: int = DEFAULT_REPETITIONS, seed: int = 0) -> dict:
    """The MAC-then-encrypt composite next to its two primitives run alone."""
    curves = {"NIA2+NEA2": bench_suite(UU_NIA2_NEA2, sizes, repetitions, seed)}
    accel = aes_acceleration_active()
    ik = derive_static_key(seed, "bench/uu/ik", 16)
    ck = derive_static_key(seed, "bench/uu/ck", 16)
    for name in ("NIA2", "NEA2"):
        curve = BenchCurve(name, [], accel)
        for size in sizes:
            data = random_buffer(size, seed).tobytes()
            if name == "NIA2":
                fn = lambda i, d=data: nia2_mac(UuSecurityInputs(i, 1, 0, ik), d)  # noqa: E731
            else:
                fn = lambda i, d=data: nea2_crypt(UuSecurityInputs(i, 1, 0, ck), d)  # noqa: E731
            shim = _FnPath(fn, size)
            runtime = _time_path(shim, repetitions, itertools.count(1))
            curve.points.append(BenchPoint(size, size / runtime, runtime))
        curves[name] = curve
    return curves


class _FnPath:
    def __init__(self, fn, size):
        self.run, self.size = fn, size


@dataclass
class CompositeComparison:
    composite: StatsSummary
    aead: StatsSummary
    report: OverheadReport


def compare_uu_composite(payload_size: int = 1024, repetitions: int = 2000,
                         seed: int = 0) -> CompositeComparison:
    """Per-packet protect+unprotect time of the Uu composite vs one AES-GCM pass.

    Both paths handle the same bytes; samples interleave so drift hits both.
    """
    data = random_buffer(payload_size, seed).tobytes()
    ik = derive_static_key(seed, "cmp/ik", 16)
    ck = derive_static_key(seed, "cmp/ck", 16)
    ue = PdcpEntity(1, ik, ck, tx_direction=0)
    gnb = PdcpEntity(1, ik, ck, tx_direction=1)
    gcm_key = derive_static_key(seed, "cmp/gcm", AES_GCM_128.key_bytes)
    tx = SecurityAssociation(0xC0, AES_GCM_128, gcm_key)
    rx = SecurityAssociation(0xC0, AES_GCM_128, gcm_key, direction="unprotect")
    comp, aead = [], []
    clock = time.perf_counter_ns
    gc_was = gc.isenabled()
    gc.disable()
    try:
        for _ in range(repetitions + 50):
            t0 = clock()
            gnb.unprotect(ue.protect(data))
            t1 = clock()
            rx.unprotect(tx.protect(data))
            t2 = clock()
            comp.append(t1 - t0)
            aead.append(t2 - t1)
    finally:
        if gc_was:
            gc.enable()
    a = summarize_ns(aead[50:], payload_size=payload_size)
    c = summarize_ns(comp[50:], payload_size=payload_size)
    return CompositeComparison(c, a, compare_scenarios(a, c))


# -- parallelism demonstration --------------------------------------------------

@dataclass
class ParallelDemo:
    workers: int
    sequential_s: float
    parallel_s: float
    identical: bool


def parallel_nea2(key: bytes, counter_block: bytes, data: bytes, workers: int) -> bytes:
    """NEA2 over ``data`` split into independent counter-offset segments.

    CTR keystream blocks depend only on the counter, so segments can be computed
    in any order; CMAC's chaining offers no such split.
    """
    n = len(data)
    seg = -(-n // workers // 16) * 16 or 16
    base = int.from_bytes(counter_block, "big")

    def work(off):
        ctr = ((base + off // 16) % (1 << 128)).to_bytes(16, "big")
        return _aes.ctr_xor(key, ctr, data[off:off + seg])

    with ThreadPoolExecutor(workers) as pool:
        return b"".join(pool.map(work, range(0, n, seg)))


def demo_parallel_ctr(size: int = 16 * MIB, workers: Optional[int] = None,
                      seed: int = 0) -> ParallelDemo:
    workers = workers or max(2, os.cpu_count() or 1)
    data = random_buffer(size, seed).tobytes()
    key = derive_static_key(seed, "par/ck", 16)
    block = UuSecurityInputs(7, 1, 0, key).block() + bytes(8)
    t0 = time.perf_counter_ns()
    seq = nea2_crypt(UuSecurityInputs(7, 1, 0, key), data)
    t1 = time.perf_counter_ns()
    par = parallel_nea2(key, block, data, workers)
    t2 = time.perf_counter_ns()
    return ParallelDemo(workers, (t1 - t0) / 1e9, (t2 - t1) / 1e9, seq == par)


def plot_data(curves: Sequence[BenchCurve]) -> str:
    """gnuplot columns: size then one throughput column per suite (blank line = gap)."""
    names = [c.suite for c in curves]
    sizes = sorted({s for c in curves for s in c.sizes})
    lines = ["# size_bytes " + " ".join(f'"{n}"' for n in names)]
    for size in sizes:
        cols = [str(size)]
        for c in curves:
            try:
                cols.append(repr(c.throughput_at(size)))
            except KeyError:
                cols.append("NaN")
        lines.append(" ".join(cols))
    return "\n".join(lines) + "\n"
