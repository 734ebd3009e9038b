"""Descriptive statistics, confidence intervals, least-squares fits and CSV output.

Shared by the measurement harness and the crypto benchmark.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, fields
from statistics import NormalDist
from typing import Iterable, Optional, Sequence


def z_value(level: float = 0.99) -> float:
    """Two-sided standard-normal quantile; 2.5758... for 99%."""
    if not 0 < level < 1:
        raise ValueError(f"confidence level must be in (0, 1), got {level}")
    return NormalDist().inv_cdf(0.5 + level / 2)


def mean(samples: Sequence[float]) -> float:
    if not samples:
        raise ValueError("mean of empty sample")
    return math.fsum(samples) / len(samples)


def sample_std(samples: Sequence[float]) -> float:
    """Standard deviation with the n-1 divisor; 0 for a single sample."""
    n = len(samples)
    if n == 0:
        raise ValueError("std of empty sample")
    if n == 1:
        return 0.0
    m = mean(samples)
    return math.sqrt(math.fsum((x - m) ** 2 for x in samples) / (n - 1))


def confidence_interval(samples: Sequence[float], level: float = 0.99):
    """Normal-approximation interval for the mean: (mean, low, high).

    With fewer than two samples the interval degenerates to the mean.
    """
    m = mean(samples)
    n = len(samples)
    if n < 2:
        return m, m, m
    half = z_value(level) * sample_std(samples) / math.sqrt(n)
    return m, m - half, m + half


def percentile(samples: Sequence[float], q: float) -> float:
    """Nearest-rank percentile: the smallest value with at least q% of samples <= it.

    q=0 returns the minimum. No interpolation, so results are always sample values.
    """
    if not samples:
        raise ValueError("percentile of empty sample")
    if not 0 <= q <= 100:
        raise ValueError(f"q must be in [0, 100], got {q}")
    ordered = sorted(samples)
    rank = max(1, math.ceil(q / 100 * len(ordered)))
    return ordered[rank - 1]


@dataclass(frozen=True)
class StatsSummary:
    """Aggregate of one campaign. All durations are microseconds."""

    n: int
    mean: float
    std_dev: float
    ci99_low: float
    ci99_high: float
    min: float
    max: float
    p50: float
    p99: float
    payload_size: Optional[int] = None

    @property
    def ci_half_width(self) -> float:
        return (self.ci99_high - self.ci99_low) / 2


def summarize(samples_us: Sequence[float], level: float = 0.99,
              payload_size: Optional[int] = None) -> StatsSummary:
    m, lo, hi = confidence_interval(samples_us, level)
    ordered = sorted(samples_us)
    return StatsSummary(
        n=len(ordered), mean=m, std_dev=sample_std(ordered), ci99_low=lo, ci99_high=hi,
        min=ordered[0], max=ordered[-1], p50=percentile(ordered, 50),
        p99=percentile(ordered, 99), payload_size=payload_size)


def summarize_ns(samples_ns: Iterable[int], level: float = 0.99,
                 payload_size: Optional[int] = None) -> StatsSummary:
    return summarize([s / 1000 for s in samples_ns], level, payload_size)


@dataclass(frozen=True)
class OverheadReport:
    delta_mean: float
    delta_ci: tuple
    verdict: str  # "distinguishable" | "overlapping"


def compare_scenarios(baseline: StatsSummary, secured: StatsSummary) -> OverheadReport:
    """Difference of means; the interval pairs opposite CI ends, so it never understates.

    Verdict follows CI overlap: overlapping intervals mean the configurations
    cannot be told apart.
    """
    if baseline.n != secured.n or baseline.payload_size != secured.payload_size:
        raise ValueError(
            f"experiment shape differs: n {baseline.n} vs {secured.n}, payload "
            f"{baseline.payload_size} vs {secured.payload_size}")
    delta = secured.mean - baseline.mean
    low = secured.ci99_low - baseline.ci99_high
    high = secured.ci99_high - baseline.ci99_low
    overlap = secured.ci99_low <= baseline.ci99_high and baseline.ci99_low <= secured.ci99_high
    return OverheadReport(delta, (low, high), "overlapping" if overlap else "distinguishable")


def linear_fit(points: Sequence[tuple]):
    """Ordinary least squares y = slope*x + intercept; returns (slope, intercept, r2).

    Constant y is fitted exactly and reports r2 = 1.
    """
    if len(points) < 3:
        raise ValueError("linear fit needs at least 3 points")
    xs = [float(p[0]) for p in points]
    ys = [float(p[1]) for p in points]
    mx, my = mean(xs), mean(ys)
    sxx = math.fsum((x - mx) ** 2 for x in xs)
    if sxx == 0 or min(xs) == max(xs):
        raise ValueError("linear fit needs non-constant x")
    sxy = math.fsum((x - mx) * (y - my) for x, y in zip(xs, ys))
    slope = sxy / sxx
    intercept = my - slope * mx
    if min(ys) == max(ys):
        return slope, intercept, 1.0
    # r2 is scale-free; unit-scaling y keeps tiny values from underflowing when squared
    k = max(abs(y) for y in ys)
    ys = [y / k for y in ys]
    my = mean(ys)
    b, a = slope / k, my - slope / k * mx
    ss_tot = math.fsum((y - my) ** 2 for y in ys)
    ss_res = math.fsum((y - (b * x + a)) ** 2 for x, y in zip(xs, ys))
    r2 = min(1.0, max(0.0, 1 - ss_res / ss_tot)) if ss_tot else 1.0
    return slope, intercept, r2


# -- CSV -----------------------------------------------------------------------

SUMMARY_COLUMNS = ("scenario_id", "n", "mean_us", "std_us", "ci_low_us", "ci_high_us",
                   "min_us", "max_us", "p50_us", "p99_us", "crypto_ops")
TIMING_COLUMNS = frozenset(SUMMARY_COLUMNS[2:10]) | {"runtime_s", "throughput_Bps"}


def summary_row(scenario_id: str, summary: StatsSummary, crypto_ops: int, **extra) -> dict:
    row = {
        "scenario_id": scenario_id, "n": summary.n, "mean_us": summary.mean,
        "std_us": summary.std_dev, "ci_low_us": summary.ci99_low,
        "ci_high_us": summary.ci99_high, "min_us": summary.min, "max_us": summary.max,
        "p50_us": summary.p50, "p99_us": summary.p99, "crypto_ops": crypto_ops,
    }
    row.update(extra)
    return row


def summary_from_row(row: dict) -> StatsSummary:
    def num(key):
        return float(row[key])
    payload = row.get("payload_size")
    return StatsSummary(int(row["n"]), num("mean_us"), num("std_us"), num("ci_low_us"),
                        num("ci_high_us"), num("min_us"), num("max_us"), num("p50_us"),
                        num("p99_us"), int(payload) if payload not in (None, "") else None)


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(round(value, 6))
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def write_csv(path_or_file, rows: Sequence[dict], columns: Sequence[str], append=False) -> None:
    """RFC 4180 output (CRLF line ends, minimal quoting) in a fixed column order."""
    opened = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
    fh = open(path_or_file, "a" if append else "w", newline="") if opened else path_or_file
    try:
        writer = csv.writer(fh, lineterminator="\r\n")
        if not append or fh.tell() == 0:
            writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row.get(c, "")) for c in columns])
    finally:
        if opened:
            fh.close()


def read_csv(path_or_text) -> tuple[list[str], list[dict]]:
    if isinstance(path_or_text, str) and "\n" in path_or_text:
        fh = io.StringIO(path_or_text)
    else:
        fh = open(path_or_text, newline="")
    with fh:
        reader = csv.DictReader(fh)
        return list(reader.fieldnames or []), list(reader)


def as_dict(summary: StatsSummary) -> dict:
    return asdict(summary)


STATS_FIELDS = tuple(f.name for f in fields(StatsSummary))
