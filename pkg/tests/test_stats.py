import io
import math
import random
import statistics

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st
from scipy import stats as sps

from ransec.stats import (SUMMARY_COLUMNS, StatsSummary, compare_scenarios, confidence_interval,
                          linear_fit, percentile, read_csv, sample_std, summarize,
                          summarize_ns, summary_from_row, summary_row, write_csv, z_value)

REL = 1e-9


def oracle_ci(samples, level=0.99):
    m = statistics.fmean(samples)
    half = sps.norm.ppf(0.5 + level / 2) * statistics.stdev(samples) / math.sqrt(len(samples))
    return m, m - half, m + half


def close(a, b, rel=REL):
    return math.isclose(a, b, rel_tol=rel, abs_tol=1e-12)


def test_z_value():
    assert round(z_value(0.99), 4) == 2.5758
    assert close(z_value(0.99), sps.norm.ppf(0.995))
    assert close(z_value(0.95), 1.959963984540054)
    for bad in (0, 1, 1.5):
        with pytest.raises(ValueError):
            z_value(bad)


def test_ci_matches_oracle_on_100_fixtures():
    rng = random.Random(2024)
    for _ in range(100):
        n = rng.randrange(2, 5000)
        scale = 10 ** rng.uniform(-1, 4)
        samples = [rng.lognormvariate(0, 0.5) * scale for _ in range(n)]
        for got, want in zip(confidence_interval(samples), oracle_ci(samples)):
            assert close(got, want), (got, want)


def test_ci_one_to_hundred():
    samples = list(range(1, 101))
    m, lo, hi = confidence_interval(samples)
    assert m == 50.5
    s = statistics.stdev(samples)
    assert close(hi - m, 2.5758293035489004 * s / 10)
    assert close(m - lo, hi - m)


def test_ci_constant_samples():
    assert confidence_interval([7.25] * 50) == (7.25, 7.25, 7.25)


def test_ci_single_sample_degenerate():
    assert confidence_interval([3.0]) == (3.0, 3.0, 3.0)
    s = summarize([3.0])
    assert s.ci99_low == s.mean == s.ci99_high and s.std_dev == 0


def test_ci_empty_raises():
    with pytest.raises(ValueError):
        confidence_interval([])


def test_quadrupling_n_halves_expected_width():
    rng = np.random.default_rng(11)
    widths = {}
    for n in (500, 2000):
        w = []
        for _ in range(400):
            _, lo, hi = confidence_interval(rng.exponential(100.0, n).tolist())
            w.append(hi - lo)
        widths[n] = statistics.fmean(w)
    assert widths[2000] / widths[500] == pytest.approx(0.5, rel=0.03)


@settings(max_examples=300)
@given(st.lists(st.floats(0, 1e6), min_size=2, max_size=200), st.randoms())
def test_summary_permutation_invariant(samples, rnd):
    shuffled = samples[:]
    rnd.shuffle(shuffled)
    a, b = summarize(samples), summarize(shuffled)
    for f in ("n", "std_dev", "min", "max", "p50", "p99"):
        assert close(getattr(a, f), getattr(b, f), 1e-9)
    assert close(a.mean, b.mean, 1e-12)


@settings(max_examples=300)
@given(st.lists(st.floats(0, 1e6), min_size=1, max_size=200))
def test_summary_invariants(samples):
    s = summarize(samples)
    assert s.ci99_low <= s.mean + 1e-9 and s.mean <= s.ci99_high + 1e-9
    assert s.min <= s.p50 <= s.p99 <= s.max
    assert s.n == len(samples)


@settings(max_examples=500)
@given(st.lists(st.integers(-10**6, 10**6), min_size=1, max_size=300), st.floats(0, 100))
def test_percentile_matches_numpy_inverted_cdf(samples, q):
    want = np.percentile(samples, q, method="inverted_cdf")
    if q == 0:
        want = min(samples)
    assert percentile(samples, q) == want


def test_percentile_examples():
    data = list(range(1, 101))
    assert percentile(data, 50) == 50
    assert percentile(data, 100) == 100
    assert percentile(data, 99) == 99
    assert percentile([5], 1) == 5
    with pytest.raises(ValueError):
        percentile(data, 101)


def test_std_uses_n_minus_one():
    assert close(sample_std([1, 2, 3, 4]), statistics.stdev([1, 2, 3, 4]))
    assert sample_std([9]) == 0.0


def test_summarize_ns_converts_to_us():
    s = summarize_ns([1000, 2000, 3000], payload_size=1024)
    assert (s.mean, s.min, s.max, s.payload_size) == (2.0, 1.0, 3.0, 1024)


# -- comparison ------------------------------------------------------------------------

def _summary(samples, payload=1024):
    return summarize(samples, payload_size=payload)


def test_compare_identical():
    s = _summary([10.0, 11.0, 12.0, 13.0])
    r = compare_scenarios(s, s)
    assert r.delta_mean == 0 and r.verdict == "overlapping"
    assert r.delta_ci[0] < 0 < r.delta_ci[1]


def test_compare_disjoint():
    a, b = _summary([10.0, 10.1, 9.9] * 10), _summary([50.0, 50.1, 49.9] * 10)
    r = compare_scenarios(a, b)
    assert r.verdict == "distinguishable" and r.delta_mean == pytest.approx(40)


def test_compare_synthetic_120us_shift():
    rng = random.Random(3)
    base = [rng.gauss(11_000, 5) for _ in range(20_000)]
    sec = [x + 120 + rng.gauss(0, 1) for x in base]
    r = compare_scenarios(_summary(base), _summary(sec))
    assert r.delta_ci[0] <= r.delta_mean <= r.delta_ci[1]
    assert r.delta_ci[0] <= 120 <= r.delta_ci[1]
    assert r.delta_mean == pytest.approx(120, abs=0.5)
    assert r.verdict == "distinguishable"


def test_compare_shape_mismatch():
    with pytest.raises(ValueError):
        compare_scenarios(_summary([1.0, 2.0]), _summary([1.0, 2.0, 3.0]))
    with pytest.raises(ValueError):
        compare_scenarios(_summary([1.0, 2.0]), _summary([1.0, 2.0], payload=64))


# -- linear fit -----------------------------------------------------------------------

@settings(max_examples=300)
@given(st.lists(st.tuples(st.floats(0, 1e4), st.floats(-1e4, 1e4)), min_size=3, max_size=40))
def test_linear_fit_matches_scipy(points):
    xs, ys = [p[0] for p in points], [p[1] for p in points]
    assume(max(xs) - min(xs) > 1e-3)
    slope, intercept, r2 = linear_fit(points)
    ref = sps.linregress(xs, ys)
    assert slope == pytest.approx(ref.slope, rel=1e-6, abs=1e-6)
    assert intercept == pytest.approx(ref.intercept, rel=1e-6, abs=1e-4)
    if min(ys) == max(ys):
        assert r2 == 1.0  # exact fit; scipy reports r = 0 here
    else:
        # scipy squares raw deviations, which underflow for tiny y; r is scale-free
        k = max(abs(y) for y in ys)
        ref = sps.linregress(xs, [y / k for y in ys])
        assert r2 == pytest.approx(ref.rvalue ** 2, abs=1e-6)


def test_linear_fit_exact_line_and_scaling():
    pts = [(x, 3 * x + 7) for x in range(1, 20)]
    assert linear_fit(pts) == pytest.approx((3, 7, 1))
    scaled = [(1000 * x, 1000 * y) for x, y in pts]
    s2, i2, r2 = linear_fit(scaled)
    assert s2 == pytest.approx(3) and i2 == pytest.approx(7000) and r2 == pytest.approx(1)
    polyfit = np.polyfit([p[0] for p in pts], [p[1] for p in pts], 1)
    assert linear_fit(pts)[:2] == pytest.approx(tuple(polyfit))


def test_linear_fit_errors():
    with pytest.raises(ValueError):
        linear_fit([(1, 1), (1, 2), (1, 3)])
    with pytest.raises(ValueError):
        linear_fit([(1, 1), (2, 2)])


# -- CSV --------------------------------------------------------------------------------

def test_csv_fixed_order_and_crlf(tmp_path):
    s = summarize([1.0, 2.0, 3.0])
    path = tmp_path / "out.csv"
    write_csv(path, [summary_row('weird "id", with comma', s, 0)], SUMMARY_COLUMNS)
    raw = path.read_bytes()
    assert raw.startswith(b"scenario_id,n,mean_us,std_us,ci_low_us,ci_high_us,min_us,max_us,"
                          b"p50_us,p99_us,crypto_ops\r\n")
    assert b'"weird ""id"", with comma"' in raw
    cols, rows = read_csv(path)
    assert tuple(cols) == SUMMARY_COLUMNS
    assert rows[0]["scenario_id"] == 'weird "id", with comma'
    back = summary_from_row(rows[0])
    assert back.mean == s.mean and back.n == 3


def test_csv_append_writes_header_once(tmp_path):
    path = tmp_path / "a.csv"
    s = summarize([1.0, 2.0])
    for i in range(3):
        write_csv(path, [summary_row(f"s{i}", s, i)], SUMMARY_COLUMNS, append=True)
    cols, rows = read_csv(path)
    assert [r["scenario_id"] for r in rows] == ["s0", "s1", "s2"]
    assert path.read_text().count("scenario_id") == 1


def test_csv_to_file_object_and_text_roundtrip():
    buf = io.StringIO()
    write_csv(buf, [{"a": 1.5, "b": True}], ("a", "b"))
    cols, rows = read_csv(buf.getvalue())
    assert cols == ["a", "b"] and rows == [{"a": "1.5", "b": "true"}]


def test_summary_dataclass_fields():
    assert StatsSummary(1, 1.0, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0).ci_half_width == 0
