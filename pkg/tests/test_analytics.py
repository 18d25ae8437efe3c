import math

import pytest

from iotsim.analytics import (
    BadAlpha,
    EmptyWindow,
    SeriesWindow,
    ewma,
    window_stats,
    zscore,
    zscore_values,
)


def window_of(values, capacity=64):
    w = SeriesWindow(("dev", "prop"), capacity)
    for i, v in enumerate(values):
        w.push(i, v)
    return w


def test_stats_example():
    stats = window_stats(window_of([20, 21, 19, 20, 22]))
    assert stats["mean"] == pytest.approx(20.4, abs=1e-12)
    assert stats["min"] == 19
    assert stats["max"] == 22
    # population stddev: sqrt(((20-20.4)^2+... )/5) = sqrt(1.04)
    assert stats["stddev"] == pytest.approx(math.sqrt(1.04), abs=1e-9)
    assert stats["stddev"] == pytest.approx(1.0198039027185568, abs=1e-9)


def test_single_sample():
    stats = window_stats(window_of([5.0]))
    assert stats["mean"] == 5.0
    assert stats["stddev"] == 0.0


def test_recency_rule():
    stats = window_stats(window_of([1, 2, 3, 4, 5]), n=3)
    assert stats["mean"] == pytest.approx(4.0)
    assert stats["min"] == 3 and stats["max"] == 5


def test_empty_window_error():
    with pytest.raises(EmptyWindow):
        window_stats(window_of([]))


def test_ring_capacity():
    w = window_of(range(100), capacity=10)
    assert len(w) == 10
    assert w.values() == [float(v) if isinstance(v, float) else v for v in range(90, 100)]


def test_ewma_alpha_one_is_last_value():
    assert ewma(window_of([3.5, 9.25, -2.0]), 1.0) == -2.0


def test_ewma_two_values():
    assert ewma(window_of([10.0, 20.0]), 0.5) == 15.0


def test_ewma_three_values():
    # s0=10, s1=15, s2=0.5*30+0.5*15=22.5
    assert ewma(window_of([10.0, 20.0, 30.0]), 0.5) == 22.5


def test_ewma_bad_alpha():
    with pytest.raises(BadAlpha):
        ewma(window_of([1.0]), 0.0)
    with pytest.raises(BadAlpha):
        ewma(window_of([1.0]), 1.5)
    with pytest.raises(EmptyWindow):
        ewma(window_of([]), 0.5)


def test_zscore_anomaly_example():
    w = window_of([20, 21, 19, 20, 22])
    z = zscore(w, 30.0)
    assert z == pytest.approx(abs(30 - 20.4) / math.sqrt(1.04), abs=1e-9)
    assert z > 3.0


def test_zscore_normal_value():
    z = zscore(window_of([20, 21, 19, 20, 22]), 21.0)
    assert z == pytest.approx(0.5883, abs=1e-3)
    assert z < 3.0


def test_zscore_degenerate_cases():
    assert zscore(window_of([5, 5, 5, 5, 5]), 9.0) is None  # zero spread
    assert zscore(window_of([1, 2, 3, 4]), 9.0) is None  # too few samples
    assert zscore_values([], 1.0) is None


def test_brute_force_equivalence_randomized():
    import random

    rng = random.Random(7)
    for _ in range(200):
        vals = [rng.uniform(-50, 50) for _ in range(rng.randrange(1, 30))]
        n = rng.randrange(1, len(vals) + 1)
        w = window_of(vals)
        stats = window_stats(w, n)
        recent = vals[len(vals) - n:]
        mean = sum(recent) / len(recent)
        assert stats["mean"] == pytest.approx(mean, rel=1e-9)
        assert stats["min"] == min(recent) and stats["max"] == max(recent)
        var = sum((v - mean) ** 2 for v in recent) / len(recent)
        assert stats["stddev"] == pytest.approx(math.sqrt(var), rel=1e-9, abs=1e-12)
