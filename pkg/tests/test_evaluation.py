import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tonefair import evaluation as ev
from tonefair.errors import DegenerateRange, TooFewBins


def naive_ranks(v):
    """Average ranks by counting, O(n^2)."""
    v = list(v)
    out = []
    for a in v:
        below = sum(1 for b in v if b < a)
        equal = sum(1 for b in v if b == a)
        out.append(below + (equal + 1) / 2)
    return out


def naive_spearman(x, y):
    rx, ry = naive_ranks(x), naive_ranks(y)
    mx, my = sum(rx) / len(rx), sum(ry) / len(ry)
    num = sum((a - mx) * (b - my) for a, b in zip(rx, ry))
    den = math.sqrt(sum((a - mx) ** 2 for a in rx) * sum((b - my) ** 2 for b in ry))
    return num / den


def rec(i, ita, correct, split="test", true=0, dists=None):
    return ev.PredictionRecord(f"r{i}", true, true if correct else true + 1, ita, dists or {}, split)


def test_fitzpatrick_examples():
    assert ev.fitzpatrick_type(56) == 1
    assert ev.fitzpatrick_type(55) == 1
    assert ev.fitzpatrick_type(54.99) == 2
    assert ev.fitzpatrick_type(41) == 2
    assert ev.fitzpatrick_type(28) == 3
    assert ev.fitzpatrick_type(10) == 4
    assert ev.fitzpatrick_type(-30) == 5
    assert ev.fitzpatrick_type(-31) == 6
    with pytest.raises(ValueError):
        ev.fitzpatrick_type(float("nan"))


@given(st.floats(-180, 180), st.floats(-180, 180))
def test_fitzpatrick_monotone(a, b):
    lo, hi = min(a, b), max(a, b)
    assert 1 <= ev.fitzpatrick_type(hi) <= ev.fitzpatrick_type(lo) <= 6


def test_sturges():
    assert ev.sturges_bins(1) == 1
    assert ev.sturges_bins(1024) == 11
    assert ev.sturges_bins(9013) == 15
    for n in range(1, 5000):
        assert ev.sturges_bins(n) == math.ceil(math.log2(n)) + 1


def test_bin_edges_and_assignment(rng):
    assert np.allclose(ev.bin_edges([0, 0.3, 1], 4), [0, 0.25, 0.5, 0.75, 1])
    edges = ev.bin_edges([0, 1], 4)
    assert ev.assign_bins([1.7], edges)[0] == 3
    assert ev.assign_bins([-0.5], edges)[0] == 0
    assert ev.assign_bins([1.0], edges)[0] == 3
    vals = rng.normal(size=777)
    edges = ev.bin_edges(vals, ev.sturges_bins(vals.size))
    idx = ev.assign_bins(vals, edges)
    for v, j in zip(vals, idx):
        inside = [k for k in range(len(edges) - 1)
                  if edges[k] <= v < edges[k + 1] or (k == len(edges) - 2 and v == edges[-1])]
        assert inside == [j]
    with pytest.raises(DegenerateRange):
        ev.bin_edges([2.0, 2.0], 3)


def test_spearman_examples():
    assert ev.density_accuracy_spearman([1, 2, 3], [0.1, 0.2, 0.3]) == pytest.approx(1.0)
    assert ev.density_accuracy_spearman([1, 2, 3], [0.3, 0.2, 0.1]) == pytest.approx(-1.0)


def test_spearman_drops_empty_bins():
    rho = ev.density_accuracy_spearman([5, 1, 2, 3], [0.0, np.nan, 0.2, 0.3])
    assert rho == pytest.approx(ev.spearman([5, 2, 3], [0.0, 0.2, 0.3]))
    with pytest.raises(TooFewBins):
        ev.density_accuracy_spearman([1, 2], [np.nan, 0.5])


def test_spearman_naive_oracle(rng):
    for _ in range(50):
        n = int(rng.integers(3, 40))
        x = rng.integers(0, 6, n).astype(float)
        y = rng.random(n).round(1)
        if len(set(x)) < 2 or len(set(y)) < 2:
            continue
        assert abs(ev.spearman(x, y) - naive_spearman(x, y)) < 1e-12


def test_spearman_constant_is_nan():
    assert math.isnan(ev.spearman([1, 1, 1], [1, 2, 3]))


@settings(max_examples=50)
@given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 5)), min_size=3, max_size=30), st.randoms())
def test_spearman_permutation_and_bounds(pairs, rnd):
    x = [p[0] for p in pairs]
    y = [p[1] for p in pairs]
    rho = ev.spearman(x, y)
    if math.isnan(rho):
        return
    assert -1 <= rho <= 1
    perm = list(range(len(x)))
    rnd.shuffle(perm)
    assert abs(ev.spearman([x[i] for i in perm], [y[i] for i in perm]) - rho) < 1e-12


def naive_f1(yt, yp):
    labels = sorted(set(yt) | set(yp))
    scores = []
    for c in labels:
        tp = sum(1 for a, b in zip(yt, yp) if a == c and b == c)
        fp = sum(1 for a, b in zip(yt, yp) if a != c and b == c)
        fn = sum(1 for a, b in zip(yt, yp) if a == c and b != c)
        prec = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        scores.append(2 * prec * recall / (prec + recall) if prec + recall else 0.0)
    return sum(scores) / len(scores)


def test_macro_f1_oracle(rng):
    for _ in range(100):
        n = int(rng.integers(1, 25))
        yt = list(rng.integers(0, 4, n))
        yp = list(rng.integers(0, 4, n))
        assert ev.f1_score(yt, yp) == pytest.approx(naive_f1(yt, yp), abs=1e-12)


def test_f1_matches_sklearn(rng):
    skm = pytest.importorskip("sklearn.metrics")
    yt = rng.integers(0, 5, 200)
    yp = rng.integers(0, 5, 200)
    for avg in ("macro", "weighted"):
        assert ev.f1_score(yt, yp, avg) == pytest.approx(skm.f1_score(yt, yp, average=avg), abs=1e-12)


def test_gap_summaries():
    assert ev.gap_summaries([0.9, 0.7]) == pytest.approx((0.2, 0.2))
    assert ev.gap_summaries([0.6]) == (0.0, 0.0)
    assert ev.gap_summaries([0.5, 0.5, 0.5]) == (0.0, 0.0)


def test_published_type_accuracy_mean():
    # published per-type baseline accuracies of one reference network
    acc = [0.837, 0.928, 0.900, 0.911, 0.917, 0.250]
    # entries are rounded to 3 places, so their mean can drift by half a unit
    assert np.mean(acc) == pytest.approx(0.790, abs=1e-3)
    assert np.mean([1585, 223, 100, 56, 12, 4]) == 330


def test_group_report_single_type():
    recs = [rec(i, 60.0, i % 3 != 0) for i in range(9)]
    r = ev.group_report(recs)
    assert r.max_abs_gap_acc == 0 and r.sum_abs_mean_gap_acc == 0
    assert list(r.per_type) == [1]


def test_group_report_two_types():
    recs = [rec(i, 60.0, i < 9) for i in range(10)] + [rec(10 + i, 45.0, i < 7) for i in range(10)]
    r = ev.group_report(recs)
    assert r.per_type[1]["accuracy"] == pytest.approx(0.9)
    assert r.per_type[2]["accuracy"] == pytest.approx(0.7)
    assert r.max_abs_gap_acc == pytest.approx(0.2)
    assert r.sum_abs_mean_gap_acc == pytest.approx(0.2)
    d = r.to_dict()
    assert d["schema_version"] == ev.SCHEMA_VERSION
    assert set(d["per_type"]) == {"1", "2"}


@pytest.fixture
def reference_type_counts():
    """Records sized like a published per-type test split."""
    counts = {1: 1585, 2: 223, 3: 100, 4: 56, 5: 12, 6: 4}
    ita = {1: 60.0, 2: 50.0, 3: 35.0, 4: 20.0, 5: 0.0, 6: -40.0}
    recs = []
    for t, n in counts.items():
        recs += [rec(len(recs), ita[t], j % 5 != 0) for j in range(n)]
    return counts, recs


def test_group_sizes_follow_fixture(reference_type_counts):
    counts, recs = reference_type_counts
    r = ev.group_report(recs)
    assert {t: v["n"] for t, v in r.per_type.items()} == counts


def test_report_uses_train_counts_for_bins(rng):
    recs = []
    for i in range(400):
        d = float(rng.random())
        recs.append(rec(i, 40.0 + 20 * d, True, "train", dists={"WD": d}))
    for i in range(200):
        d = float(rng.random())
        recs.append(rec(400 + i, 40.0 + 20 * d, rng.random() < 1 - 0.5 * d, "test", dists={"WD": d}))
    r = ev.group_report(recs)
    b = r.binned["WD"]
    assert b.train_counts.sum() == 400 and b.test_counts.sum() == 200
    assert len(b.train_counts) == ev.sturges_bins(400)
    assert -1 <= r.per_metric_spearman["WD"] <= 1


def test_trend_all_correct_is_separated():
    t = ev.logistic_ita_trend([rec(i, 55 + i, True) for i in range(40)])
    assert t.separated and math.isnan(t.drop_pct)


def test_trend_zero_slope():
    recs = []
    for i, x in enumerate(np.repeat(np.linspace(60, 120, 7), 10)):
        recs.append(rec(i, float(x), i % 10 < 8))
    t = ev.logistic_ita_trend(recs)
    assert abs(t.acc_at_60 - t.acc_at_120) < 1e-6
    assert t.acc_at_60 == pytest.approx(0.8, abs=1e-6)


def test_trend_ignores_non_type1(rng):
    recs = [rec(i, 30.0, False) for i in range(50)]
    x = rng.uniform(55, 125, 500)
    recs += [rec(50 + i, float(v), rng.random() < 0.7) for i, v in enumerate(x)]
    assert ev.logistic_ita_trend(recs).n == 500
