import math

import numpy as np
import pytest

from compcaps import metrics
from compcaps.errors import DimensionError, DomainError, LabelError

from _oracles import roc_oracle


def test_confusion_examples():
    m = metrics.confusion([0, 0, 1], [0, 1, 1], 2)
    np.testing.assert_array_equal(m.counts, [[1, 1], [0, 1]])
    m = metrics.confusion([0, 1, 2, 2], [0, 1, 2, 2], 3)
    assert np.array_equal(m.counts, np.diag([1, 1, 2]))
    with pytest.raises(DimensionError):
        metrics.confusion([], [], 2)
    with pytest.raises(LabelError):
        metrics.confusion([0, 2], [0, 1], 2)
    with pytest.raises(LabelError):
        metrics.confusion([0, 1], [0, -1], 2)


def test_confusion_invariants(rng):
    t = rng.integers(0, 5, 200)
    p = rng.integers(0, 5, 200)
    m = metrics.confusion(t, p, 5)
    assert m.counts.sum(axis=1).sum() == 200
    assert m.accuracy == np.mean(t == p)
    pct = m.row_percent()
    assert np.all(np.abs(pct.sum(axis=1) - 100) <= 1e-9)


def test_precision_recall_examples():
    # class 0: TP=8, FP=2, FN=0
    m = metrics.ConfusionMatrix(np.array([[8, 0], [2, 5]]))
    r = metrics.precision_recall(m)
    assert r.precision[0] == pytest.approx(0.8) and r.recall[0] == 1.0
    perfect = metrics.precision_recall(metrics.confusion([0, 1, 2], [0, 1, 2], 3))
    assert np.all(perfect.precision == 1) and np.all(perfect.recall == 1) and perfect.accuracy == 1
    never = metrics.precision_recall(metrics.confusion([0, 1, 2], [0, 1, 1], 3))
    assert never.precision[2] == 0 and 2 in never.undefined_precision
    assert never.undefined_recall == ()


def test_precision_recall_brute_force_oracle():
    rng = np.random.default_rng(11)
    for _ in range(10_000):
        k = int(rng.integers(2, 6))
        n = int(rng.integers(1, 25))
        t = rng.integers(0, k, n)
        p = rng.integers(0, k, n)
        r = metrics.precision_recall(metrics.confusion(t, p, k))
        for c in range(k):
            tp = sum(1 for a, b in zip(t, p) if a == c and b == c)
            fp = sum(1 for a, b in zip(t, p) if a != c and b == c)
            fn = sum(1 for a, b in zip(t, p) if a == c and b != c)
            assert r.precision[c] == (tp / (tp + fp) if tp + fp else 0.0)
            assert r.recall[c] == (tp / (tp + fn) if tp + fn else 0.0)
        assert 0 <= r.macro_precision <= 1 and 0 <= r.macro_recall <= 1


def test_roc_extremes():
    y = [0, 0, 1, 1]
    pts = metrics.roc_points([0.9, 0.8, 0.2, 0.1], y, 0)
    assert metrics.auc(pts) == 1.0
    pts = metrics.roc_points([0.5] * 4, y, 0)
    assert pts == [(0.0, 0.0), (1.0, 1.0)]
    assert metrics.auc(pts) == 0.5
    with pytest.raises(LabelError):
        metrics.roc_points([0.1, 0.2], [1, 1], 0)


@pytest.mark.parametrize("seed", range(50))
def test_roc_matches_threshold_oracle(seed):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 3, 20)
    y[:2] = [0, 1]
    scores = np.round(rng.uniform(size=(20, 3)), 1)  # rounding creates ties
    pts = metrics.roc_points(scores, y, 0)
    assert set(pts) == roc_oracle(list(scores[:, 0]), list(y == 0))
    assert pts[0] == (0.0, 0.0) and pts[-1] == (1.0, 1.0)
    assert all(b[0] >= a[0] and b[1] >= a[1] for a, b in zip(pts, pts[1:]))


def test_t_test_examples():
    r = metrics.t_test([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
    assert r.t == 0 and not r.significant
    r = metrics.t_test([4.0, 5.0, 6.0], [3.0, 4.0, 5.0])
    assert r.t == pytest.approx(1.0) and r.sd_pooled == pytest.approx(1.0)
    assert metrics.is_significant(3.21)
    assert not metrics.is_significant(3.17)
    r = metrics.t_test([2.0, 2.0], [1.0, 1.0])
    assert r.infinite and r.t == math.inf and r.significant
    with pytest.raises(DimensionError):
        metrics.t_test([1.0], [2.0])
    with pytest.raises(DimensionError):
        metrics.t_test([1.0, 2.0], [2.0, 3.0, 4.0])


def test_t_test_antisymmetric(rng):
    for _ in range(50):
        a, b = rng.normal(size=8), rng.normal(size=8)
        assert metrics.t_test(a, b).t == pytest.approx(-metrics.t_test(b, a).t, rel=1e-14)


@pytest.mark.parametrize("related,expected", [(83.97, 6.35), (77.80, 14.78), (72.73, 22.78), (71.55, 24.81),
                                              (76.25, 17.11), (62.08, 43.85), (66.92, 33.44),
                                              (72.75, 22.75)])
def test_relative_improvement_reference_values(related, expected):
    assert metrics.relative_improvement(89.3, related) == pytest.approx(expected, abs=0.01)


def test_relative_improvement_rules():
    assert metrics.relative_improvement(70.0, 70.0) == 0.0
    with pytest.raises(DomainError):
        metrics.relative_improvement(80.0, 0.0)
    rows = metrics.compare(89.3, {"a": 84.7})
    assert rows == [("a", 84.7, 5.43)]


def test_csv_rendering():
    m = metrics.confusion([0, 0, 1], [0, 1, 1], 2)
    text = m.to_csv(["happy", "sad"])
    assert text.splitlines()[1] == "happy,1,1"
    assert "50.0000" in m.to_csv(percent=True)
    assert metrics.precision_recall(m).to_csv().startswith("class,precision")
