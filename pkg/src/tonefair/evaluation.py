"""Fairness analytics over prediction records: Fitzpatrick typing, per-type
scores and gap summaries, binned density/accuracy correlation and the
logistic accuracy-versus-ITA trend."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .errors import DegenerateRange, TooFewBins

SCHEMA_VERSION = "1.0"

# lower ITA bounds of types 1..5; anything below the last is type 6
FITZPATRICK_THRESHOLDS = (55.0, 41.0, 28.0, 10.0, -30.0)


@dataclass
class PredictionRecord:
    sample_id: str
    true_class: int
    predicted_class: int
    median_ita: float
    distances: dict = field(default_factory=dict)
    split: str = "test"

    @property
    def correct(self):
        return self.true_class == self.predicted_class


def fitzpatrick_type(median_ita, thresholds=FITZPATRICK_THRESHOLDS):
    if not math.isfinite(median_ita):
        raise ValueError("ITA must be finite")
    for t, lower in enumerate(thresholds, start=1):
        if median_ita >= lower:
            return t
    return len(thresholds) + 1


def sturges_bins(n):
    """ceil(log2 n) + 1, computed exactly on integers."""
    n = int(n)
    if n < 1:
        raise ValueError("Sturges' rule needs n >= 1")
    return (n - 1).bit_length() + 1


def bin_edges(training_values, k):
    v = np.asarray(training_values, dtype=np.float64)
    lo, hi = float(v.min()), float(v.max())
    if not hi > lo:
        raise DegenerateRange(f"training values span a single point ({lo})")
    return np.linspace(lo, hi, int(k) + 1)


def assign_bins(values, edges):
    """Bin index per value; values outside the training range go to the edge bins."""
    idx = np.searchsorted(edges, np.asarray(values, dtype=np.float64), side="right") - 1
    return np.clip(idx, 0, len(edges) - 2)


def spearman(x, y):
    """Spearman rho with average ranks for ties; nan if either side is constant."""
    rx = rankdata(x)
    ry = rankdata(y)
    rx = rx - rx.mean()
    ry = ry - ry.mean()
    denom = math.sqrt((rx * rx).sum() * (ry * ry).sum())
    if denom == 0:
        return float("nan")
    return float(np.clip((rx * ry).sum() / denom, -1.0, 1.0))


def density_accuracy_spearman(train_counts_per_bin, test_accuracy_per_bin):
    """Spearman rho between training counts and test accuracy per bin.

    Bins without test samples carry ``nan`` accuracy and are dropped.
    """
    counts = np.asarray(train_counts_per_bin, dtype=np.float64)
    acc = np.asarray(test_accuracy_per_bin, dtype=np.float64)
    if counts.shape != acc.shape:
        raise ValueError("counts and accuracies must have equal length")
    keep = ~np.isnan(acc)
    if keep.sum() < 2:
        raise TooFewBins(f"only {int(keep.sum())} bins hold test samples")
    return spearman(counts[keep], acc[keep])


@dataclass
class BinnedAccuracy:
    edges: np.ndarray
    train_counts: np.ndarray
    test_counts: np.ndarray
    test_accuracy: np.ndarray
    rho: float


def binned_density_accuracy(train_values, test_values, test_correct, k=None):
    """Equal-width bins frozen on the training values (Sturges count by default)."""
    train_values = np.asarray(train_values, dtype=np.float64)
    test_values = np.asarray(test_values, dtype=np.float64)
    test_correct = np.asarray(test_correct, dtype=np.float64)
    if k is None:
        k = sturges_bins(train_values.size)
    edges = bin_edges(train_values, k)
    k = len(edges) - 1
    train_counts = np.bincount(assign_bins(train_values, edges), minlength=k)
    tb = assign_bins(test_values, edges)
    test_counts = np.bincount(tb, minlength=k)
    hits = np.bincount(tb, weights=test_correct, minlength=k)
    with np.errstate(invalid="ignore", divide="ignore"):
        acc = np.where(test_counts > 0, hits / np.maximum(test_counts, 1), np.nan)
    try:
        rho = density_accuracy_spearman(train_counts, acc)
    except TooFewBins:
        rho = float("nan")
    return BinnedAccuracy(edges, train_counts, test_counts, acc, rho)


def f1_score(y_true, y_pred, average="macro"):
    """Multiclass F1 over the labels seen in either vector."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    labels = np.union1d(y_true, y_pred)
    if labels.size == 0:
        return 0.0
    scores = np.empty(labels.size)
    support = np.empty(labels.size)
    for i, c in enumerate(labels):
        tp = np.sum((y_true == c) & (y_pred == c))
        fp = np.sum((y_true != c) & (y_pred == c))
        fn = np.sum((y_true == c) & (y_pred != c))
        scores[i] = 2 * tp / (2 * tp + fp + fn) if tp else 0.0
        support[i] = np.sum(y_true == c)
    if average == "macro":
        return float(scores.mean())
    if average == "weighted":
        return float((scores * support).sum() / support.sum()) if support.sum() else 0.0
    raise ValueError(f"unknown F1 average {average!r}")


def gap_summaries(scores):
    """(max - min, sum of |score - mean|) over per-type scores."""
    s = np.asarray(list(scores), dtype=np.float64)
    if s.size == 0:
        return 0.0, 0.0
    return float(s.max() - s.min()), float(np.abs(s - s.mean()).sum())


@dataclass
class TrendResult:
    acc_at_60: float
    acc_at_120: float
    drop_pct: float
    intercept: float
    slope: float
    n: int
    separated: bool = False
    converged: bool = True

    def to_dict(self):
        d = self.__dict__.copy()
        for k, v in d.items():
            if isinstance(v, float) and not math.isfinite(v):
                d[k] = None
        return d


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def fit_logistic(x, y, tol=1e-8, max_iter=500):
    """Unregularised univariate logistic regression by Newton-Raphson.

    Returns (intercept, slope, converged, separated) on the original x scale.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    mu, sd = x.mean(), x.std()
    if sd == 0:
        sd = 1.0
    z = (x - mu) / sd
    X = np.column_stack([np.ones_like(z), z])
    beta = np.zeros(2)
    converged = False
    for _ in range(max_iter):
        p = _sigmoid(X @ beta)
        grad = X.T @ (y - p)
        W = p * (1 - p)
        H = X.T @ (X * W[:, None])
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            break
        beta = beta + step
        if np.max(np.abs(step)) < tol:
            converged = True
            break
        if np.max(np.abs(beta)) > 50:
            break
    separated = not converged or bool(np.max(np.abs(beta)) > 30)
    slope = beta[1] / sd
    return beta[0] - slope * mu, slope, converged, separated


def _is_separable(x, y):
    pos = x[y == 1]
    neg = x[y == 0]
    if pos.size == 0 or neg.size == 0:
        return True
    return pos.max() <= neg.min() or neg.max() <= pos.min()


def logistic_ita_trend(records, type1_threshold=FITZPATRICK_THRESHOLDS[0], lo=60.0, hi=120.0):
    """Correctness-on-ITA logistic fit over type-1 records; P(correct) at 60 and 120 degrees.

    ``drop_pct`` is ``100 * (p60 - p120) / p60``.
    """
    x = np.array([r.median_ita for r in records if r.median_ita >= type1_threshold], dtype=np.float64)
    y = np.array([float(r.correct) for r in records if r.median_ita >= type1_threshold])
    nan = float("nan")
    if x.size < 10 or _is_separable(x, y):
        return TrendResult(nan, nan, nan, nan, nan, int(x.size), separated=True, converged=False)
    b0, b1, converged, separated = fit_logistic(x, y)
    p_lo = float(_sigmoid(b0 + b1 * lo))
    p_hi = float(_sigmoid(b0 + b1 * hi))
    drop = 100.0 * (p_lo - p_hi) / p_lo if p_lo > 0 else nan
    return TrendResult(p_lo, p_hi, drop, float(b0), float(b1), int(x.size),
                       separated=separated, converged=converged)


def type_scores(records, thresholds=FITZPATRICK_THRESHOLDS, f1_mode="macro"):
    groups = {}
    for r in records:
        groups.setdefault(fitzpatrick_type(r.median_ita, thresholds), []).append(r)
    out = {}
    for t in sorted(groups):
        rs = groups[t]
        yt = [r.true_class for r in rs]
        yp = [r.predicted_class for r in rs]
        out[t] = {
            "n": len(rs),
            "accuracy": float(np.mean([r.correct for r in rs])),
            "f1": f1_score(yt, yp, f1_mode),
        }
    return out


@dataclass
class FairnessReport:
    per_type: dict
    max_abs_gap_acc: float
    max_abs_gap_f1: float
    sum_abs_mean_gap_acc: float
    sum_abs_mean_gap_f1: float
    per_metric_spearman: dict
    ita_spearman: float
    ita_trend: TrendResult
    overall_accuracy: float
    overall_f1: float
    f1_mode: str = "macro"
    binned: dict = field(default_factory=dict, repr=False)

    def to_dict(self):
        def num(v):
            return None if v is None or (isinstance(v, float) and not math.isfinite(v)) else v

        return {
            "schema_version": SCHEMA_VERSION,
            "f1_mode": self.f1_mode,
            "overall": {"accuracy": self.overall_accuracy, "f1": self.overall_f1},
            "per_type": {str(t): v for t, v in self.per_type.items()},
            "max_abs_gap_acc": self.max_abs_gap_acc,
            "max_abs_gap_f1": self.max_abs_gap_f1,
            "sum_abs_mean_gap_acc": self.sum_abs_mean_gap_acc,
            "sum_abs_mean_gap_f1": self.sum_abs_mean_gap_f1,
            "per_metric_spearman": {k: num(v) for k, v in self.per_metric_spearman.items()},
            "ita_spearman": num(self.ita_spearman),
            "ita_trend": self.ita_trend.to_dict(),
        }


def group_report(records, thresholds=FITZPATRICK_THRESHOLDS, f1_mode="macro"):
    """Fairness summary of the test records; train records only feed the bin counts."""
    test = [r for r in records if r.split == "test"]
    train = [r for r in records if r.split == "train"]
    if not test:
        raise ValueError("group_report needs at least one test record")
    per_type = type_scores(test, thresholds, f1_mode)
    gap_acc = gap_summaries(v["accuracy"] for v in per_type.values())
    gap_f1 = gap_summaries(v["f1"] for v in per_type.values())

    correct = np.array([r.correct for r in test], dtype=np.float64)
    binned = {}
    metrics = sorted({m for r in test for m in r.distances})
    for m in metrics:
        tr = [r.distances[m] for r in train if m in r.distances]
        te_idx = [i for i, r in enumerate(test) if m in r.distances]
        te = [test[i].distances[m] for i in te_idx]
        if len(tr) < 2 or len(te) < 2:
            continue
        try:
            binned[m] = binned_density_accuracy(tr, te, correct[te_idx])
        except DegenerateRange:
            continue
    ita_binned = None
    if len(train) >= 2:
        try:
            ita_binned = binned_density_accuracy([r.median_ita for r in train],
                                                 [r.median_ita for r in test], correct)
            binned["ITA"] = ita_binned
        except DegenerateRange:
            pass

    return FairnessReport(
        per_type=per_type,
        max_abs_gap_acc=gap_acc[0],
        max_abs_gap_f1=gap_f1[0],
        sum_abs_mean_gap_acc=gap_acc[1],
        sum_abs_mean_gap_f1=gap_f1[1],
        per_metric_spearman={m: b.rho for m, b in binned.items() if m != "ITA"},
        ita_spearman=ita_binned.rho if ita_binned is not None else float("nan"),
        ita_trend=logistic_ita_trend(test, thresholds[0]),
        overall_accuracy=float(correct.mean()),
        overall_f1=f1_score([r.true_class for r in test], [r.predicted_class for r in test], f1_mode),
        f1_mode=f1_mode,
        binned=binned,
    )
