"""Distances and similarities between binned ITA distributions, CDFs and
train-split min-max scaling."""
from __future__ import annotations

import csv
import enum
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import MixedBinning
from .tone import Binning, ItaHistogram


class MetricKind(str, enum.Enum):
    AD = "AD"    # Anderson-Darling
    CVM = "CVM"  # Cramer-von Mises
    FS = "FS"    # fidelity (Bhattacharyya coefficient)
    HS = "HS"    # harmonic mean similarity
    HM = "HM"    # Hellinger
    KL = "KL"    # Kullback-Leibler
    KS = "KS"    # Kolmogorov-Smirnov
    KP = "KP"    # Kuiper
    KD = "KD"    # Kruglov
    PF = "PF"    # Patrick-Fisher
    WD = "WD"    # 1-D Wasserstein

    @property
    def similarity(self):
        return self in (MetricKind.FS, MetricKind.HS)

    @property
    def code(self):
        return getattr(_kernels, self.value)

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).upper())
        except ValueError:
            raise ValueError(f"unknown metric {value!r}; choose from {[m.value for m in cls]}") from None


ALL_METRICS = tuple(MetricKind)
SYMMETRIC_METRICS = tuple(m for m in MetricKind if m not in (MetricKind.KL, MetricKind.AD))


@dataclass(frozen=True)
class Cdf:
    binning: Binning | None
    values: np.ndarray


def cdf(h):
    """Prefix sums of a histogram's mass (or of a bare mass vector)."""
    if isinstance(h, ItaHistogram):
        return Cdf(h.binning, np.cumsum(h.mass))
    return Cdf(None, np.cumsum(np.asarray(h, dtype=np.float64)))


def _mass(x):
    if isinstance(x, ItaHistogram):
        return x.binning, x.mass
    return None, np.asarray(x, dtype=np.float64)


def distance(kind, p, q):
    """Raw distance (or similarity for FS/HS) between two binned distributions.

    ``p`` and ``q`` are histograms or plain mass vectors on the same 1-degree
    grid. Integral forms are left Riemann sums over the bins.
    """
    kind = MetricKind.parse(kind)
    bp, p = _mass(p)
    bq, q = _mass(q)
    if (bp is not None and bq is not None and bp != bq) or p.shape != q.shape:
        raise MixedBinning("distributions do not share a binning")
    return float(_kernels.batch_distances(p[None, :], q, kind.code, 1.0)[0])


def batch_distance(kind, P, q):
    """Distance of every row of ``P`` (n, K) to the reference ``q``."""
    kind = MetricKind.parse(kind)
    _, q = _mass(q)
    P = np.asarray(P, dtype=np.float64)
    if P.ndim != 2 or P.shape[1] != q.shape[0]:
        raise MixedBinning(f"histogram matrix {P.shape} does not match reference of {q.shape[0]} bins")
    return _kernels.batch_distances(P, q, kind.code, 1.0)


@dataclass(frozen=True)
class MinMaxScaler:
    metric: MetricKind
    lo: float
    hi: float

    def __call__(self, raw):
        return apply_scaler(self, raw)

    def to_dict(self):
        return {"metric": self.metric.value, "lo": self.lo, "hi": self.hi}

    @classmethod
    def from_dict(cls, d):
        return cls(MetricKind.parse(d["metric"]), float(d["lo"]), float(d["hi"]))


def fit_scaler(kind, training_raws):
    raws = np.asarray(training_raws, dtype=np.float64)
    if raws.size == 0:
        raise ValueError("cannot fit a scaler on no values")
    return MinMaxScaler(MetricKind.parse(kind), float(raws.min()), float(raws.max()))


def apply_scaler(s, raw):
    raw = np.asarray(raw, dtype=np.float64)
    if s.hi == s.lo:
        out = np.zeros_like(raw)
    else:
        with np.errstate(over="ignore"):
            out = np.clip((raw - s.lo) / (s.hi - s.lo), 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class DistanceRecord:
    sample_id: str
    metric: MetricKind
    raw: float
    normalized: float


DISTANCE_FIELDS = ("sample_id", "metric", "raw", "normalized")


def write_distance_csv(path, records):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DISTANCE_FIELDS)
        for r in records:
            w.writerow([r.sample_id, r.metric.value, repr(float(r.raw)), repr(float(r.normalized))])
