"""File-based pipeline stages behind the command line.

Every stage reads the previous stage's files and writes its own. Work is
computed fully in memory before anything is written, so a failing stage
leaves no partial outputs behind.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import evaluation as ev
from . import imaging, tone, weighting
from .errors import EmptySkinRegion, EmptySample, MixedBinning, SchemaError, TonefairError
from .metrics import MetricKind, batch_distance, fit_scaler, apply_scaler, MinMaxScaler, \
    DistanceRecord, write_distance_csv, DISTANCE_FIELDS
from .toytrain import SynthSpec, TrainConfig, ToyModel, generate_synthetic, make_features, train_toy
from .weighting import WEIGHT_FIELDS

log = logging.getLogger("tonefair")

MANIFEST_FIELDS = ("sample_id", "image_path", "lesion_mask_path", "label", "split")
SPLITS = ("train", "test")
WEIGHT_MODES = ("none", "drw", "carw", "combined")
PREDICTION_FIELDS = ("sample_id", "split", "true_class", "predicted_class", "median_ita")


# ---------------------------------------------------------------------------
# small io helpers


def write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n")


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def _fmt(v):
    """Stable text form of a float for CSV output."""
    v = float(v)
    if not math.isfinite(v):
        return "nan"
    return repr(round(v, 12))


def _clean(obj):
    """Round floats and replace non-finite values with None, recursively."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return round(v, 12) if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _read_csv(path, required):
    """Rows as dicts plus their 1-based file line numbers."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise SchemaError(f"{path}: empty file")
        missing = [c for c in required if c not in reader.fieldnames]
        if missing:
            raise SchemaError(f"{path}:1: missing columns {missing}")
        return [(reader.line_num, row) for row in reader]


# ---------------------------------------------------------------------------
# manifest


@dataclass(frozen=True)
class ManifestRow:
    sample_id: str
    image_path: Path
    lesion_mask_path: Path
    label: int
    split: str


def _parse_row(raw, where, base):
    missing = [c for c in MANIFEST_FIELDS if raw.get(c) in (None, "")]
    if missing:
        raise SchemaError(f"{where}: missing values for {missing}")
    try:
        label = int(raw["label"])
    except (TypeError, ValueError):
        raise SchemaError(f"{where}: label must be an integer, got {raw['label']!r}") from None
    if label < 0:
        raise SchemaError(f"{where}: label must be >= 0")
    split = str(raw["split"]).strip()
    if split not in SPLITS:
        raise SchemaError(f"{where}: split must be one of {SPLITS}, got {split!r}")
    return ManifestRow(str(raw["sample_id"]).strip(), base / str(raw["image_path"]),
                       base / str(raw["lesion_mask_path"]), label, split)


def load_manifest(path):
    """CSV or JSONL manifest; relative paths resolve against the manifest's folder."""
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"{path}: manifest not found")
    base = path.parent
    rows = []
    if path.suffix in (".jsonl", ".ndjson"):
        with open(path) as fh:
            for i, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    raw = json.loads(line)
                except json.JSONDecodeError as e:
                    raise SchemaError(f"{path}:{i}: invalid JSON ({e.msg})") from None
                if not isinstance(raw, dict):
                    raise SchemaError(f"{path}:{i}: expected an object")
                rows.append(_parse_row(raw, f"{path}:{i}", base))
    else:
        for line, raw in _read_csv(path, MANIFEST_FIELDS):
            rows.append(_parse_row(raw, f"{path}:{line}", base))
    if not rows:
        raise SchemaError(f"{path}: manifest has no rows")
    seen = set()
    for r in rows:
        if r.sample_id in seen:
            raise SchemaError(f"{path}: duplicate sample_id {r.sample_id!r}")
        seen.add(r.sample_id)
    return rows


def write_manifest(path, rows):
    _write_csv(path, MANIFEST_FIELDS,
               [[r["sample_id"], r["image_path"], r["lesion_mask_path"], r["label"], r["split"]]
                for r in rows])


# ---------------------------------------------------------------------------
# run configuration


@dataclass
class RunConfig:
    theta_min: int | None = None
    theta_max: int | None = None
    hair: imaging.HairParams = field(default_factory=imaging.HairParams)
    bandwidth: float | None = None
    metrics: tuple = ("FS", "WD")
    weighting: str = "none"
    metric: str = "WD"
    thresholds: tuple = ev.FITZPATRICK_THRESHOLDS
    f1_mode: str = "macro"
    seed: int = 0
    workers: int = 4

    def validate(self):
        if (self.theta_min is None) != (self.theta_max is None):
            raise TonefairError("theta_min and theta_max must be given together")
        if self.theta_min is not None:
            tone.Binning(int(self.theta_min), int(self.theta_max))
        if self.bandwidth is not None and not self.bandwidth > 0:
            raise TonefairError(f"bandwidth must be positive, got {self.bandwidth}")
        self.metrics = tuple(MetricKind.parse(m).value for m in self.metrics)
        self.metric = MetricKind.parse(self.metric).value
        if self.weighting not in WEIGHT_MODES:
            raise TonefairError(f"weighting must be one of {WEIGHT_MODES}, got {self.weighting!r}")
        th = tuple(float(t) for t in self.thresholds)
        if len(th) != 5 or any(a <= b for a, b in zip(th, th[1:])):
            raise TonefairError(f"need 5 strictly decreasing Fitzpatrick thresholds, got {th}")
        self.thresholds = th
        if self.f1_mode not in ("macro", "weighted"):
            raise TonefairError(f"f1 mode must be macro or weighted, got {self.f1_mode!r}")
        if self.workers < 1:
            raise TonefairError("workers must be >= 1")
        return self

    def to_dict(self):
        d = asdict(self)
        d["hair"] = self.hair.to_dict()
        d["metrics"] = list(self.metrics)
        d["thresholds"] = list(self.thresholds)
        return d


# ---------------------------------------------------------------------------
# extract


def _measure(row, hair_params):
    """Skin ITA values and lesion colour of one manifest row, or a skip reason."""
    try:
        image = imaging.read_rgb(row.image_path)
        lesion = imaging.read_mask(row.lesion_mask_path)
    except OSError as e:
        return None, ("unreadable_input", str(e))
    if lesion.shape != image.shape[:2]:
        return None, ("shape_mismatch", f"mask {lesion.shape} vs image {image.shape[:2]}")
    hair = imaging.detect_hair_mask(image, hair_params)
    try:
        lab = imaging.extract_skin_pixels(image, lesion, hair)
    except EmptySkinRegion as e:
        return None, ("empty_skin_region", str(e))
    les = imaging.lesion_lab(image, lesion & ~hair)
    if les is None:
        les = imaging.lesion_lab(image, lesion)
    return {"ita": tone.ita(lab[:, 0], lab[:, 2]), "lesion_lab": les}, None


def extract(manifest_path, out_dir, config):
    """Per-sample ITA histograms on one binning frozen from the training split."""
    config.validate()
    rows = load_manifest(manifest_path)
    with ThreadPoolExecutor(max_workers=config.workers) as pool:
        results = list(pool.map(lambda r: _measure(r, config.hair), rows))

    kept, skipped = [], []
    for row, (res, why) in zip(rows, results):
        if res is None:
            skipped.append({"sample_id": row.sample_id, "reason": why[0], "detail": why[1]})
            log.warning("skip %s: %s", row.sample_id, why[0])
        else:
            kept.append((row, res))

    if config.theta_min is not None:
        binning = tone.Binning(int(config.theta_min), int(config.theta_max))
    else:
        train_vals = [res["ita"] for row, res in kept if row.split == "train"]
        if not train_vals:
            raise EmptySample("no training sample survived extraction; cannot fix the binning")
        binning = tone.Binning.from_values(np.concatenate(train_vals))

    docs = {}
    for row, res in kept:
        h = tone.ita_histogram(res["ita"], binning)
        les = res["lesion_lab"]
        h.meta = {
            "sample_id": row.sample_id,
            "split": row.split,
            "label": row.label,
            "median_ita": tone.median_ita(res["ita"]),
            "n_pixels": int(res["ita"].size),
            "lesion_lab": None if les is None else [float(v) for v in les],
        }
        docs[row.sample_id] = _clean(h.to_dict())

    out = Path(out_dir)
    hist_dir = out / "histograms"
    hist_dir.mkdir(parents=True, exist_ok=True)
    for sid, doc in docs.items():
        write_json(hist_dir / f"{sid}.json", doc)
    run_log = {
        "stage": "extract",
        "manifest": str(manifest_path),
        "config": config.to_dict(),
        "binning": binning.to_dict(),
        "n_rows": len(rows),
        "n_written": len(docs),
        "n_skipped": len(skipped),
        "skipped": skipped,
    }
    write_json(out / "extract_log.json", run_log)
    return run_log


def load_histograms(hist_dir):
    """Histogram documents sorted by sample id; all must share one binning."""
    paths = sorted(Path(hist_dir).glob("*.json"))
    if not paths:
        raise EmptySample(f"no histogram files in {hist_dir}")
    hists = []
    for p in paths:
        try:
            hists.append(tone.ItaHistogram.from_dict(read_json(p)))
        except (KeyError, ValueError, json.JSONDecodeError) as e:
            raise SchemaError(f"{p}: malformed histogram ({e})") from None
    binning = hists[0].binning
    for h in hists[1:]:
        if h.binning != binning:
            raise MixedBinning(f"{h.meta.get('sample_id')}: {h.binning} differs from {binning}")
    hists.sort(key=lambda h: str(h.meta.get("sample_id")))
    return hists


# ---------------------------------------------------------------------------
# reference and distances


def reference(hist_dir, out_path):
    hists = load_histograms(hist_dir)
    train = [h for h in hists if h.meta.get("split") == "train"]
    ref = tone.aggregate_reference(train)
    write_json(out_path, _clean(ref.to_dict()))
    return ref


def load_reference(path):
    d = read_json(path)
    return tone.ReferenceDistribution(tone.Binning.from_dict(d.pop("binning")),
                                      np.asarray(d.pop("mass"), dtype=np.float64), d)


def distance(hist_dir, reference_path, metrics, out_dir):
    """Raw distances to the reference plus min-max normalisation fitted on training rows."""
    hists = load_histograms(hist_dir)
    ref = load_reference(reference_path)
    if hists[0].binning != ref.binning:
        raise MixedBinning(f"histograms use {hists[0].binning}, reference uses {ref.binning}")
    P = np.stack([h.mass for h in hists])
    train = np.array([h.meta.get("split") == "train" for h in hists])
    if not train.any():
        raise EmptySample("no training histograms to fit the scalers on")
    records, scalers = [], {}
    for name in metrics:
        kind = MetricKind.parse(name)
        raw = batch_distance(kind, P, ref.mass)
        sc = fit_scaler(kind, raw[train])
        norm = apply_scaler(sc, raw)
        scalers[kind.value] = sc.to_dict()
        for h, r, n in zip(hists, raw, norm):
            records.append(DistanceRecord(h.meta["sample_id"], kind, round(float(r), 12), round(float(n), 12)))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_distance_csv(out / "distances.csv", records)
    write_json(out / "scalers.json", _clean(scalers))
    return records


def load_distances(path):
    """{metric: {sample_id: (raw, normalized)}}"""
    out = {}
    for line, row in _read_csv(path, DISTANCE_FIELDS):
        try:
            kind = MetricKind.parse(row["metric"]).value
            out.setdefault(kind, {})[row["sample_id"]] = (float(row["raw"]), float(row["normalized"]))
        except (ValueError, KeyError) as e:
            raise SchemaError(f"{path}:{line}: {e}") from None
    if not out:
        raise SchemaError(f"{path}: no distance rows")
    return out


# ---------------------------------------------------------------------------
# weights


def weights(distances_path, hist_dir, out_path, config):
    """Weight sidecar for one metric.

    ``drw`` is computed for modes drw/combined and ``carw`` for carw/combined;
    a column the mode does not use is written as 1. Groups for CARW are the
    Fitzpatrick types of the samples' median ITA.
    """
    config.validate()
    dist = load_distances(distances_path)
    if config.metric not in dist:
        raise SchemaError(f"{distances_path}: no rows for metric {config.metric}")
    hists = {h.meta["sample_id"]: h for h in load_histograms(hist_dir)}
    ids = sorted(dist[config.metric])
    missing = [s for s in ids if s not in hists]
    if missing:
        raise SchemaError(f"{len(missing)} distance rows have no histogram, e.g. {missing[0]!r}")
    d = np.array([dist[config.metric][s][1] for s in ids])
    train = np.array([hists[s].meta.get("split") == "train" for s in ids])
    if not train.any():
        raise EmptySample("no training rows to fit the weights on")

    model = weighting.kde_fit(d[train], config.bandwidth)
    dens = weighting.kde_eval(model, d)
    mode = config.weighting
    drw = weighting.drw_from_density(model, dens) if mode in ("drw", "combined") else np.ones_like(d)

    carw = np.ones_like(d)
    table_doc = None
    if mode in ("carw", "combined"):
        groups = [ev.fitzpatrick_type(hists[s].meta["median_ita"], config.thresholds) for s in ids]
        labels = [int(hists[s].meta["label"]) for s in ids]
        table = weighting.GroupClassTable.from_pairs([g for g, t in zip(groups, train) if t],
                                                     [c for c, t in zip(labels, train) if t])
        cw = weighting.carw_weights(table)
        carw = np.array([cw.get((g, c), 1.0) for g, c in zip(groups, labels)])
        table_doc = {f"{g}|{c}": w for (g, c), w in sorted(cw.items())}
    combined = weighting.combined_weight(carw, drw)

    rows = [[s, config.metric, _fmt(a), _fmt(b), _fmt(c), _fmt(e), _fmt(f)]
            for s, a, b, c, e, f in zip(ids, d, dens, drw, carw, combined)]
    _write_csv(out_path, WEIGHT_FIELDS, rows)
    meta = {"stage": "weights", "mode": mode, "metric": config.metric,
            "bandwidth": model.bandwidth, "f_min": model.f_min, "f_max": model.f_max,
            "carw_table": table_doc, "seed": config.seed}
    write_json(Path(out_path).with_suffix(".json"), _clean(meta))
    return meta


def load_weights(path):
    """{sample_id: {column: value}} from a weight sidecar."""
    out = {}
    for line, row in _read_csv(path, WEIGHT_FIELDS):
        try:
            out[row["sample_id"]] = {k: float(row[k]) for k in WEIGHT_FIELDS[2:]}
        except ValueError as e:
            raise SchemaError(f"{path}:{line}: {e}") from None
    return out


# ---------------------------------------------------------------------------
# synthetic data


def synth(spec, out_dir, workers=4):
    """Render a synthetic dataset in the manifest layout."""
    spec.validate()
    samples = generate_synthetic(spec)
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)

    def save(s):
        imaging.write_rgb(out / "images" / f"{s.sample_id}.png", s.image)
        imaging.write_mask(out / "masks" / f"{s.sample_id}.png", s.lesion)

    with ThreadPoolExecutor(max_workers=workers) as pool:
        list(pool.map(save, samples))
    write_manifest(out / "manifest.csv", [
        {"sample_id": s.sample_id, "image_path": f"images/{s.sample_id}.png",
         "lesion_mask_path": f"masks/{s.sample_id}.png", "label": s.label, "split": s.split}
        for s in samples])
    _write_csv(out / "ground_truth.csv",
               ("sample_id", "tone", "component", "true_label", "label", "flipped", "hair_pixels", "split"),
               [[s.sample_id, _fmt(s.tone), s.component, s.true_label, s.label, int(s.flipped),
                 int(s.hair.sum()), s.split] for s in samples])
    write_json(out / "spec.json", spec.to_dict())
    return samples


# ---------------------------------------------------------------------------
# training


def _features(h):
    les = h.meta.get("lesion_lab")
    return make_features(h.mass, float(h.meta["median_ita"]), les)


def train(hist_dir, out_dir, config, weights_path=None, distances_path=None, train_config=None):
    """Fit the toy classifier on training histograms and predict every sample."""
    config.validate()
    train_config = train_config or TrainConfig(seed=config.seed)
    hists = load_histograms(hist_dir)
    if any(h.meta.get("lesion_lab") is None for h in hists) and \
            not all(h.meta.get("lesion_lab") is None for h in hists):
        raise SchemaError("lesion colour is present for some histograms but not all")
    X = np.stack([_features(h) for h in hists])
    y = np.array([int(h.meta["label"]) for h in hists])
    is_train = np.array([h.meta.get("split") == "train" for h in hists])
    if not is_train.any():
        raise EmptySample("no training histograms")
    ids = [h.meta["sample_id"] for h in hists]

    w = None
    if config.weighting != "none":
        if weights_path is None:
            raise TonefairError(f"weighting {config.weighting!r} needs a weight sidecar")
        table = load_weights(weights_path)
        col = {"drw": "drw", "carw": "carw", "combined": "combined"}[config.weighting]
        lost = [s for s, t in zip(ids, is_train) if t and s not in table]
        if lost:
            raise SchemaError(f"{len(lost)} training samples have no weight, e.g. {lost[0]!r}")
        w = np.array([table[s][col] for s, t in zip(ids, is_train) if t])

    n_classes = int(y.max()) + 1
    model = train_toy(X[is_train], y[is_train], n_classes, w, train_config)
    pred = model.predict(X)

    dist = load_distances(distances_path) if distances_path else {}
    metric_names = sorted(dist)
    rows = []
    for i, h in enumerate(hists):
        sid = ids[i]
        row = [sid, h.meta["split"], int(y[i]), int(pred[i]), _fmt(h.meta["median_ita"])]
        row += [_fmt(dist[m][sid][1]) if sid in dist[m] else "nan" for m in metric_names]
        rows.append(row)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "predictions.csv", PREDICTION_FIELDS + tuple(f"d_{m}" for m in metric_names), rows)
    doc = model.to_dict()
    doc.update({"weighting": config.weighting, "train_config": train_config.to_dict(),
                "n_train": int(is_train.sum()), "n_classes": n_classes})
    write_json(out / "model.json", _clean(doc))
    if model.non_convergence:
        log.warning("training loss did not decrease over the final 10%% of iterations")
    return model, pred


# ---------------------------------------------------------------------------
# evaluation


def load_predictions(path):
    path = Path(path)
    out = []
    for line, row in _read_csv(path, PREDICTION_FIELDS):
        try:
            dists = {k[2:]: float(v) for k, v in row.items() if k.startswith("d_") and v not in ("", "nan")}
            split = row["split"]
            if split not in SPLITS:
                raise ValueError(f"bad split {split!r}")
            out.append(ev.PredictionRecord(row["sample_id"], int(row["true_class"]),
                                           int(row["predicted_class"]), float(row["median_ita"]),
                                           dists, split))
        except ValueError as e:
            raise SchemaError(f"{path}:{line}: {e}") from None
    if not out:
        raise SchemaError(f"{path}: no prediction rows")
    return out


def evaluate(predictions_path, out_dir, config, manifest_path=None):
    """FairnessReport JSON plus plot-ready CSV tables."""
    config.validate()
    records = load_predictions(predictions_path)
    if manifest_path is not None:
        splits = {r.sample_id: r.split for r in load_manifest(manifest_path)}
        for r in records:
            if r.sample_id not in splits:
                raise SchemaError(f"{r.sample_id!r} is not in the manifest")
            if splits[r.sample_id] != r.split:
                raise SchemaError(f"{r.sample_id!r}: split disagrees with the manifest")
    report = ev.group_report(records, config.thresholds, config.f1_mode)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "report.json", _clean(report.to_dict()))

    rows = []
    for m, b in report.binned.items():
        for j in range(len(b.train_counts)):
            rows.append([m, j, _fmt(b.edges[j]), _fmt(b.edges[j + 1]), int(b.train_counts[j]),
                         int(b.test_counts[j]), _fmt(b.test_accuracy[j])])
    _write_csv(out / "binned_accuracy.csv",
               ("metric", "bin", "lo", "hi", "train_count", "test_count", "accuracy"), rows)
    _write_csv(out / "per_type.csv", ("type", "n", "accuracy", "f1"),
               [[t, v["n"], _fmt(v["accuracy"]), _fmt(v["f1"])] for t, v in report.per_type.items()])
    tr = report.ita_trend
    grid = np.arange(60.0, 121.0, 5.0)
    if math.isfinite(tr.intercept):
        curve = 1.0 / (1.0 + np.exp(-(tr.intercept + tr.slope * grid)))
    else:
        curve = np.full_like(grid, np.nan)
    _write_csv(out / "trend.csv", ("ita", "p_correct"), [[_fmt(g), _fmt(p)] for g, p in zip(grid, curve)])
    return report


# ---------------------------------------------------------------------------
# end-to-end experiment

ARMS = (("none", None), ("carw", None), ("drw", "FS"), ("drw", "WD"), ("combined", "WD"))


def experiment(spec, out_dir, config, train_config=None):
    """synth -> extract -> reference -> distance -> weights -> train -> evaluate for every arm."""
    config.validate()
    out = Path(out_dir)
    synth(spec, out / "data", config.workers)
    extract(out / "data" / "manifest.csv", out / "extract", config)
    hist_dir = out / "extract" / "histograms"
    reference(hist_dir, out / "reference.json")
    distance(hist_dir, out / "reference.json", ("FS", "WD"), out / "distances")
    dist_csv = out / "distances" / "distances.csv"

    summary = {}
    for mode, metric in ARMS:
        name = mode if metric is None else f"{mode}_{metric}"
        cfg = RunConfig(**{**asdict(config), "hair": config.hair, "weighting": mode,
                           "metric": metric or config.metric})
        arm = out / "arms" / name
        wpath = None
        if mode != "none":
            wpath = arm / "weights.csv"
            weights(dist_csv, hist_dir, wpath, cfg)
        train(hist_dir, arm, cfg, wpath, dist_csv, train_config)
        rep = evaluate(arm / "predictions.csv", arm, cfg)
        summary[name] = {
            "overall_accuracy": rep.overall_accuracy,
            "per_metric_spearman": rep.per_metric_spearman,
            "sum_abs_mean_gap_acc": rep.sum_abs_mean_gap_acc,
            "max_abs_gap_acc": rep.max_abs_gap_acc,
        }
    write_json(out / "summary.json", _clean(summary))
    return summary


def setup_logging(verbose=False):
    logging.basicConfig(level=logging.DEBUG if verbose or os.environ.get("TONEFAIR_DEBUG") else logging.INFO,
                        format="%(levelname)s %(message)s")
