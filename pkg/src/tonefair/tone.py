"""CIELab conversion, Individual Typology Angle, per-image histograms and the
median reference distribution."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptySample, MixedBinning

# sRGB (IEC 61966-2-1) primaries, D65 white
_RGB_TO_XYZ = np.array([
    [0.412453, 0.357580, 0.180423],
    [0.212671, 0.715160, 0.072169],
    [0.019334, 0.119193, 0.950227],
])
_XYZ_TO_RGB = np.linalg.inv(_RGB_TO_XYZ)
D65_WHITE = np.array([0.95047, 1.0, 1.08883])

_DELTA = 6.0 / 29.0


def _srgb_to_linear(c):
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def _linear_to_srgb(c):
    c = np.clip(c, 0.0, 1.0)
    return np.where(c <= 0.0031308, 12.92 * c, 1.055 * np.power(c, 1 / 2.4) - 0.055)


def _f(t):
    return np.where(t > _DELTA ** 3, np.cbrt(t), t / (3 * _DELTA ** 2) + 4.0 / 29.0)


def _f_inv(t):
    return np.where(t > _DELTA, t ** 3, 3 * _DELTA ** 2 * (t - 4.0 / 29.0))


def rgb_to_lab(rgb):
    """Convert 8-bit sRGB to CIELab (D65, 2 degree observer).

    ``rgb`` is any array whose last axis has length 3 with values in
    [0, 255]; the result has the same shape.
    """
    rgb = np.asarray(rgb, dtype=np.float64) / 255.0
    xyz = _srgb_to_linear(rgb) @ _RGB_TO_XYZ.T
    fx, fy, fz = np.moveaxis(_f(xyz / D65_WHITE), -1, 0)
    L = 116.0 * fy - 16.0
    a = 500.0 * (fx - fy)
    b = 200.0 * (fy - fz)
    return np.stack([L, a, b], axis=-1)


def lab_to_rgb(lab):
    """Inverse of :func:`rgb_to_lab`, returning clipped floats in [0, 255]."""
    lab = np.asarray(lab, dtype=np.float64)
    L, a, b = np.moveaxis(lab, -1, 0)
    fy = (L + 16.0) / 116.0
    fx = fy + a / 500.0
    fz = fy - b / 200.0
    xyz = np.stack([_f_inv(fx), _f_inv(fy), _f_inv(fz)], axis=-1) * D65_WHITE
    return _linear_to_srgb(xyz @ _XYZ_TO_RGB.T) * 255.0


def ita(L, b):
    """Individual Typology Angle in degrees.

    Uses ``atan2(L - 50, b)`` so that ``b == 0`` maps to +/-90 degrees.
    Works elementwise on arrays.
    """
    out = np.degrees(np.arctan2(np.asarray(L, dtype=np.float64) - 50.0, b))
    return float(out) if np.ndim(out) == 0 else out


def lightness_for_ita(angle, b=15.0):
    """L* that realises ``angle`` at a fixed b* (inverse of :func:`ita`)."""
    return 50.0 + b * np.tan(np.radians(angle))


@dataclass(frozen=True)
class Binning:
    """Integer-degree bins ``[theta_min + j, theta_min + j + 1)``."""

    theta_min: int
    theta_max: int
    width: int = 1

    def __post_init__(self):
        if self.width != 1:
            raise ValueError("only 1-degree bins are supported")
        if not self.theta_min < self.theta_max:
            raise ValueError(f"theta_min ({self.theta_min}) must be < theta_max ({self.theta_max})")

    @property
    def n_bins(self):
        return self.theta_max - self.theta_min

    @property
    def edges(self):
        return np.arange(self.theta_min, self.theta_max + 1, self.width, dtype=np.float64)

    @property
    def centers(self):
        return self.edges[:-1] + 0.5 * self.width

    def index(self, values):
        idx = np.floor((np.asarray(values, dtype=np.float64) - self.theta_min) / self.width)
        return np.clip(idx, 0, self.n_bins - 1).astype(np.intp)

    def to_dict(self):
        return {"theta_min": self.theta_min, "theta_max": self.theta_max, "width": self.width}

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["theta_min"]), int(d["theta_max"]), int(d.get("width", 1)))

    @classmethod
    def from_values(cls, values):
        """Smallest integer binning covering ``values`` (training split)."""
        values = np.asarray(values, dtype=np.float64)
        if values.size == 0:
            raise EmptySample("cannot fix a binning from no values")
        lo = int(math.floor(values.min()))
        hi = int(math.ceil(values.max()))
        if hi <= lo:
            hi = lo + 1
        return cls(lo, hi)


@dataclass
class ItaHistogram:
    binning: Binning
    mass: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.mass = np.asarray(self.mass, dtype=np.float64)
        if self.mass.shape != (self.binning.n_bins,):
            raise ValueError(f"mass has {self.mass.shape} entries, binning needs {self.binning.n_bins}")

    def to_dict(self):
        d = dict(self.meta)
        d["binning"] = self.binning.to_dict()
        d["mass"] = [float(m) for m in self.mass]
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        binning = Binning.from_dict(d.pop("binning"))
        mass = np.asarray(d.pop("mass"), dtype=np.float64)
        return cls(binning, mass, d)


class ReferenceDistribution(ItaHistogram):
    """Bin-wise median of training histograms, renormalised to sum to one."""


def ita_histogram(values, binning):
    """Normalised histogram of ITA values; out-of-range values go to the edge bins."""
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size == 0:
        raise EmptySample("ITA sample is empty")
    counts = np.bincount(binning.index(values), minlength=binning.n_bins).astype(np.float64)
    return ItaHistogram(binning, counts / values.size)


def _check_shared(histograms):
    if not histograms:
        raise EmptySample("no histograms to aggregate")
    binning = histograms[0].binning
    for h in histograms[1:]:
        if h.binning != binning:
            raise MixedBinning(f"{h.binning} differs from {binning}")
    return binning


def median_stack(histograms):
    """Raw (unnormalised) bin-wise median."""
    _check_shared(histograms)
    return np.median(np.stack([h.mass for h in histograms]), axis=0)


def aggregate_reference(histograms):
    binning = _check_shared(histograms)
    med = median_stack(histograms)
    total = med.sum()
    meta = {"n_histograms": len(histograms), "aggregate": "median"}
    if total <= 0:
        # every bin has a zero median: the histograms barely overlap
        med = np.mean(np.stack([h.mass for h in histograms]), axis=0)
        total = med.sum()
        meta["aggregate"] = "mean-fallback"
    return ReferenceDistribution(binning, med / total, meta)


def median_ita(values):
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size == 0:
        raise EmptySample("ITA sample is empty")
    return float(np.median(values))
