"""Inverse-density (KDE) sample weights, categorical reweighing and the
weighted cross-entropy used for training."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import EmptySupport, NonDistributionPrediction, ShapeMismatch

MIN_BANDWIDTH = 1e-3
PROB_FLOOR = 1e-12


def silverman_bandwidth(x):
    """0.9 * min(std, IQR / 1.34) * n ** (-1/5), floored at ``MIN_BANDWIDTH``."""
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    std = x.std(ddof=1) if n > 1 else 0.0
    q75, q25 = np.percentile(x, [75, 25])
    spread = min(std, (q75 - q25) / 1.34)
    if spread <= 0:
        spread = std
    return max(0.9 * spread * n ** (-0.2), MIN_BANDWIDTH)


@dataclass(frozen=True)
class KdeModel:
    support: np.ndarray
    bandwidth: float
    f_min: float
    f_max: float

    def __call__(self, d):
        return kde_eval(self, d)


def kde_fit(distances, bandwidth=None):
    """Gaussian KDE over training distances with cached support extrema."""
    support = np.ascontiguousarray(distances, dtype=np.float64).ravel()
    if support.size == 0:
        raise EmptySupport("KDE needs at least one distance")
    if bandwidth is None:
        h = silverman_bandwidth(support)
    else:
        if not bandwidth > 0:
            raise ValueError(f"bandwidth must be positive, got {bandwidth}")
        h = max(float(bandwidth), MIN_BANDWIDTH)
    dens = _kernels.gaussian_kde(support, support, h)
    support.setflags(write=False)
    return KdeModel(support, h, float(dens.min()), float(dens.max()))


def kde_eval(model, d):
    out = _kernels.gaussian_kde(d, model.support, model.bandwidth)
    return float(out[0]) if np.ndim(d) == 0 else out


def drw_from_density(model, density):
    density = np.asarray(density, dtype=np.float64)
    span = model.f_max - model.f_min
    if span <= 0:
        w = np.ones_like(density)
    else:
        w = np.clip(1.0 - (density - model.f_min) / span, 0.0, 1.0)
    return float(w) if w.ndim == 0 else w


def drw_weight(model, d):
    """1 - min-max normalised density: rare distances get weights near 1."""
    return drw_from_density(model, kde_eval(model, d))


class GroupClassTable:
    """Observed counts of (skin type, class) pairs."""

    def __init__(self, counts):
        self.counts = {k: int(v) for k, v in counts.items() if v}
        if not self.counts:
            raise ValueError("empty group/class table")
        self.total = sum(self.counts.values())
        self.group_totals = Counter()
        self.class_totals = Counter()
        for (s, y), c in self.counts.items():
            self.group_totals[s] += c
            self.class_totals[y] += c

    @classmethod
    def from_pairs(cls, groups, classes):
        return cls(Counter(zip(groups, classes)))

    def p_obs(self, s, y):
        return self.counts.get((s, y), 0) / self.total


def carw_weights(table):
    """Expected / observed joint probability for every (group, class) cell.

    Cells over all observed groups x classes are returned; unobserved cells get 1.
    """
    n = table.total
    out = {}
    for s, ns in table.group_totals.items():
        for y, ny in table.class_totals.items():
            c = table.counts.get((s, y), 0)
            # (ns/n)(ny/n) / (c/n) == ns*ny / (n*c)
            out[(s, y)] = ns * ny / (n * c) if c else 1.0
    return out


def combined_weight(w_r, w):
    return w_r * w


def _prepare(predictions, targets, weights, class_weights):
    pred = np.asarray(predictions, dtype=np.float64)
    tgt = np.asarray(targets, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64).ravel()
    if pred.ndim != 2 or pred.shape != tgt.shape or w.shape[0] != pred.shape[0]:
        raise ShapeMismatch(f"predictions {pred.shape}, targets {tgt.shape}, weights {w.shape}")
    if class_weights is not None:
        cw = np.asarray(class_weights, dtype=np.float64).ravel()
        if cw.shape[0] != pred.shape[1]:
            raise ShapeMismatch(f"{cw.shape[0]} class weights for {pred.shape[1]} classes")
        w = w * (tgt @ cw)
    return pred, tgt, w, np.asarray(weights, dtype=np.float64).ravel()


def fair_cross_entropy(predictions, targets, weights, class_weights=None):
    """Weighted mean cross-entropy: sum(c_n w_n ce_n) / sum(w_n)."""
    pred, tgt, w_eff, w = _prepare(predictions, targets, weights, class_weights)
    if not np.allclose(pred.sum(axis=1), 1.0, rtol=0, atol=1e-6):
        raise NonDistributionPrediction("every prediction must sum to 1")
    ce = -(tgt * np.log(np.maximum(pred, PROB_FLOOR))).sum(axis=1)
    denom = w.sum()
    if denom == 0:
        return 0.0
    return float((w_eff * ce).sum() / denom)


def softmax(logits):
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def fair_cross_entropy_logits(logits, targets, weights, class_weights=None):
    """Loss and gradient with respect to the logits.

    The gradient ignores the probability floor, which only binds for
    saturated predictions.
    """
    pred = softmax(logits)
    pred, tgt, w_eff, w = _prepare(pred, targets, weights, class_weights)
    denom = w.sum()
    if denom == 0:
        return 0.0, np.zeros_like(pred)
    ce = -(tgt * np.log(np.maximum(pred, PROB_FLOOR))).sum(axis=1)
    loss = float((w_eff * ce).sum() / denom)
    grad = (w_eff / denom)[:, None] * (pred - tgt)
    return loss, grad


@dataclass(frozen=True)
class WeightRecord:
    sample_id: str
    metric: str
    distance: float
    density: float
    drw: float
    carw: float
    combined: float


WEIGHT_FIELDS = ("sample_id", "metric", "distance", "density", "drw", "carw", "combined")
