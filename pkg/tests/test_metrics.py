import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qtrend.errors import DimensionError
from qtrend.metrics import (ContingencyCounts, caa, classify, nearest_rank, quantile_thresholds,
                            rmse, vi)

labels = st.lists(st.integers(0, 1), min_size=1, max_size=200)


def _entropy_vi(a, b):
    # VI = 2 H(A, B) - H(A) - H(B), computed from joint counts
    a, b = np.asarray(a), np.asarray(b)
    n = a.size

    def h(*cols):
        _, counts = np.unique(np.stack(cols, axis=1), axis=0, return_counts=True)
        p = counts / n
        return -float(np.sum(p * np.log(p)))

    return 2 * h(a, b) - h(a) - h(b)


def test_rmse_examples(rng):
    v = rng.normal(size=10)
    assert rmse(v, v) == 0.0
    assert rmse(v + 0.3, v) == pytest.approx(0.3)
    assert rmse([1.0, 2.0], [0.0, 0.0]) == pytest.approx(math.sqrt(2.5))
    with pytest.raises(DimensionError):
        rmse([1.0], [1.0, 2.0])


def test_rmse_detects_translation(rng):
    for _ in range(20):
        e, t, c = rng.normal(size=30), rng.normal(size=30), rng.normal()
        assert rmse(e + c, t) >= abs(c) - rmse(e, t) - 1e-12


def test_caa_examples():
    t = np.array([1, 0, 0, 0, 1])
    assert caa(t, t) == 1.0
    assert caa(t, np.zeros(5, dtype=int)) == 0.5
    assert caa([1, 0, 0, 0], [0, 1, 1, 1]) == 0.0
    with pytest.raises(ValueError):
        caa([0, 0, 0], [0, 1, 0])


def test_caa_label_swap(rng):
    for _ in range(20):
        t = rng.integers(0, 2, size=50)
        t[:2] = [0, 1]
        e = rng.integers(0, 2, size=50)
        assert caa(t, 1 - e) == pytest.approx(1.0 - caa(t, e))


def test_vi_examples(rng):
    a = rng.integers(0, 2, size=100)
    assert vi(a, a) == 0.0
    b = rng.integers(0, 2, size=100)
    assert vi(a, b) == vi(b, a)
    big = np.random.default_rng(7)
    x, y = big.integers(0, 2, size=100_000), big.integers(0, 2, size=100_000)
    assert abs(vi(x, y) - 2 * math.log(2)) <= 0.02


@given(a=labels, data=st.data())
@settings(max_examples=80, deadline=None)
def test_vi_matches_entropy_identity(a, data):
    b = data.draw(st.lists(st.integers(0, 1), min_size=len(a), max_size=len(a)))
    assert vi(a, b) == pytest.approx(_entropy_vi(a, b), abs=1e-12)


def test_vi_is_a_pseudo_metric(rng):
    for _ in range(100):
        n = int(rng.integers(1, 1001))
        a, b, c = (rng.integers(0, 2, size=n) for _ in range(3))
        assert vi(a, b) >= 0
        assert vi(a, c) <= vi(a, b) + vi(b, c) + 1e-12


def test_contingency_counts():
    c = ContingencyCounts.from_labels([0, 0, 1, 1], [0, 1, 1, 1])
    np.testing.assert_allclose(c.r, [[0.25, 0.25], [0.0, 0.5]])
    assert c.r.sum() == pytest.approx(1.0)
    np.testing.assert_allclose(c.row, [0.5, 0.5])
    np.testing.assert_allclose(c.col, [0.25, 0.75])


def test_classify_and_thresholds(rng):
    y = rng.normal(size=1000)
    th = np.zeros(1000)
    assert not classify(y, th, 10.0).any()
    t90, t95, t99 = quantile_thresholds(y, th)
    assert t90 <= t95 <= t99
    assert classify(y, th, t95).sum() == 50  # nearest rank: 950th value is the cut
    assert nearest_rank([3.0, 1.0, 2.0], 0.5) == 2.0
    with pytest.raises(ValueError):
        nearest_rank([1.0], 0.0)


def test_classify_reproduces_signal_labels():
    sig = np.array([0.0, 0.2, 0.6, 3.0, 0.5])
    np.testing.assert_array_equal(classify(sig, np.zeros(5), 0.5), [0, 0, 1, 1, 0])
