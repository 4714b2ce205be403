import json
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import ecdf_ks, ecdf_ks_exact
from tdprobe.detector import (
    DetectConfig,
    DetectionVerdict,
    Direction,
    Reason,
    ThroughputSeries,
    area_gap,
    detect,
    ks_statistic,
    per_bin_rates,
    running_average,
    series_from_csv,
    series_to_csv,
    write_series_csv,
)
from tdprobe.errors import ConfigError, InsufficientRuns, SeriesTooShort


def const(bytes_per_bin, n=50, width=100):
    return ThroughputSeries(width, (bytes_per_bin,) * n)


def test_running_average_constant():
    assert running_average(const(12_500, 10)) == [1_000_000.0] * 10


def test_running_average_arithmetic():
    assert running_average(ThroughputSeries(100, (0, 25_000))) == [0.0, 1_000_000.0]


def test_running_average_final_element():
    s = ThroughputSeries(100, (5, 0, 700, 12, 3))
    assert running_average(s)[-1] == pytest.approx(8 * 720 / 0.5)


def test_per_bin_rates_trims_warmup():
    rates = per_bin_rates(const(1000, 100))
    assert len(rates) == 95 and len(set(rates)) == 1


def test_per_bin_rates_too_short():
    with pytest.raises(SeriesTooShort):
        per_bin_rates(const(1000, 14))


def test_per_bin_rates_sum_check():
    s = ThroughputSeries(100, tuple(range(40)))
    rates = per_bin_rates(s)
    assert sum(rates) * 0.1 / 8 == pytest.approx(sum(range(5, 40)))


def test_ks_examples():
    assert ks_statistic([1, 2, 3], [1, 2, 3]) == 0.0
    assert ks_statistic([0, 0, 0], [1, 5, 2]) == 1.0
    # oracle: ECDF enumeration gives 1/3
    assert ecdf_ks_exact([1, 2, 3], [2, 3, 4]) == pytest.approx(1 / 3)
    assert ks_statistic([1, 2, 3], [2, 3, 4]) == pytest.approx(1 / 3, abs=1e-15)


def test_area_gap():
    assert area_gap([1e6, 1e6], [1e6]) == 0.0
    assert area_gap([2e6], [1e6]) == 0.5
    assert area_gap([1e6], [2e6]) == 0.5
    assert area_gap([0.0], [0.0]) == 0.0


samples = st.lists(st.integers(0, 30).map(float), min_size=1, max_size=60)


@settings(max_examples=200, deadline=None)
@given(samples, samples)
def test_ks_matches_oracle_and_is_symmetric(a, b):
    assert ks_statistic(a, b) == ecdf_ks(a, b)
    assert ks_statistic(a, b) == ks_statistic(b, a)
    assert ks_statistic(a, a) == 0.0


@settings(max_examples=100, deadline=None)
@given(samples, samples, st.floats(0.01, 1000))
def test_ks_scale_invariance(a, b, k):
    assert ks_statistic([k * x for x in a], [k * x for x in b]) == ks_statistic(a, b)


@settings(max_examples=100, deadline=None)
@given(samples, samples, st.floats(1, 1000))
def test_area_gap_scale_invariance(a, b, k):
    # shift off zero so both means clear the eps floor before and after scaling
    a1, b1 = [x + 1 for x in a], [x + 1 for x in b]
    assert area_gap([k * x for x in a1], [k * x for x in b1]) == pytest.approx(area_gap(a1, b1), rel=1e-9)


def test_area_gap_scale_free():
    a, b = [3e6, 4e6, 5e6], [1e6, 2e6]
    assert area_gap([7 * x for x in a], [7 * x for x in b]) == pytest.approx(area_gap(a, b))


# -- detect ----------------------------------------------------------------

def noisy(mean_bytes, n=60, seed=0, spread=0.05):
    rng = random.Random(seed)
    return ThroughputSeries(100, tuple(max(0, int(mean_bytes * (1 + rng.uniform(-spread, spread)))) for _ in range(n)))


def test_detects_original_slower():
    pairs = [(noisy(25_000, seed=i), noisy(100_000, seed=100 + i)) for i in range(3)]  # 2 vs 8 Mbit/s
    v = detect(pairs, 8e6)
    assert (v.differentiated, v.direction, v.reason) == (True, Direction.ORIGINAL_SLOWER, Reason.DETECTED)
    assert v.runs_flagged == 3 and v.runs_total == 3


def test_detects_control_slower():
    pairs = [(noisy(100_000, seed=i), noisy(25_000, seed=100 + i)) for i in range(3)]
    assert detect(pairs, 8e6).direction is Direction.CONTROL_SLOWER


def test_identical_series_no_difference():
    s = noisy(50_000)
    v = detect([(s, s)] * 3, None)
    assert (v.differentiated, v.reason, v.direction) == (False, Reason.NO_DIFFERENCE, Direction.NONE)


def test_offered_rate_below_path():
    s = const(12_500, 40)  # 1 Mbit/s
    v = detect([(s, s)] * 3, 1e6)
    assert (v.differentiated, v.reason) == (False, Reason.OFFERED_RATE_BELOW_PATH)


def test_inconsistent_directions_are_volatility():
    slow, fast = noisy(25_000, seed=1), noisy(100_000, seed=2)
    v = detect([(slow, fast), (fast, slow), (slow, fast), (fast, slow)], None)
    assert v.reason is Reason.HIGH_VOLATILITY and not v.differentiated


def test_minority_flagged_is_no_difference():
    slow, fast, same = noisy(25_000, seed=1), noisy(100_000, seed=2), noisy(60_000, seed=3)
    v = detect([(slow, fast), (same, same), (same, same)], None)
    assert v.reason is Reason.NO_DIFFERENCE and v.runs_flagged == 1


def test_insufficient_runs():
    with pytest.raises(InsufficientRuns) as err:
        detect([(const(1), const(1))] * 2)
    assert err.value.verdict.reason is Reason.INSUFFICIENT_RUNS
    with pytest.raises(InsufficientRuns):
        detect([])


def test_incomplete_runs_do_not_count():
    class R:
        def __init__(self, s, ok):
            self.throughput, self.completed = s, ok
    s = noisy(50_000)
    with pytest.raises(InsufficientRuns):
        detect([(R(s, True), R(s, True)), (R(s, False), R(s, True)), (R(s, True), R(s, True))])


def test_detect_is_order_invariant():
    pairs = [(noisy(25_000, seed=i), noisy(100_000 - 20_000 * i, seed=9 + i)) for i in range(5)]
    v = detect(pairs, 8e6)
    for _ in range(5):
        random.shuffle(pairs)
        assert detect(pairs, 8e6) == v


def test_mismatched_widths():
    with pytest.raises(ConfigError):
        detect([(const(1, width=100), const(1, width=50))] * 3)


def test_verdict_json_shape():
    v = DetectionVerdict(True, Direction.ORIGINAL_SLOWER, 1.0, 0.75, 3, 3, Reason.DETECTED)
    assert json.loads(v.to_json()) == {"differentiated": True, "direction": "OriginalSlower", "ks": 1.0,
                                      "area_gap": 0.75, "runs_flagged": 3, "runs_total": 3, "reason": "Detected"}
    assert list(json.loads(v.to_json())) == ["differentiated", "direction", "ks", "area_gap", "runs_flagged",
                                             "runs_total", "reason"]
    assert DetectionVerdict.from_dict(v.to_dict()) == v


def test_csv_round_trip(tmp_path):
    s = ThroughputSeries(100, (0, 12_500, 3, 0))
    assert series_to_csv(s).splitlines()[:2] == ["bin_index,bytes,bps", "0,0,0.0"]
    write_series_csv(s, tmp_path / "a.csv")
    assert series_from_csv(tmp_path / "a.csv") == s
    f = ThroughputSeries(100, (0.5, 1234.125, 1e-3))
    write_series_csv(f, tmp_path / "b.csv")
    assert series_from_csv(tmp_path / "b.csv") == f


def test_csv_width_mismatch(tmp_path):
    write_series_csv(ThroughputSeries(50, (10, 20)), tmp_path / "a.csv")
    with pytest.raises(ConfigError):
        series_from_csv(tmp_path / "a.csv", bin_width_ms=100)


def test_thresholds_are_configurable():
    a, b = noisy(60_000, seed=1), noisy(50_000, seed=2)  # about a 17% gap
    assert detect([(a, b)] * 3).reason is Reason.NO_DIFFERENCE
    v = detect([(a, b)], config=DetectConfig(area_threshold=0.1, min_runs=1))
    assert v.reason is Reason.DETECTED and v.direction is Direction.CONTROL_SLOWER
