"""Skin-tone distribution analysis and density-based reweighting for
dermatology classifiers."""
from .errors import TonefairError
from .metrics import MetricKind, ALL_METRICS, distance, batch_distance
from .tone import Binning, ItaHistogram, ita, ita_histogram, aggregate_reference
from .weighting import kde_fit, drw_weight, carw_weights, fair_cross_entropy
from .evaluation import fitzpatrick_type, group_report, spearman

__version__ = "0.1.0"
