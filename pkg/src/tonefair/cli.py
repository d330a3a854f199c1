"""Command line entry point: ``tonefair <subcommand> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import sys

from . import pipeline
from .errors import InvalidSpec, TonefairError
from .imaging import HairParams
from .metrics import ALL_METRICS
from .toytrain import SynthSpec, TrainConfig

log = logging.getLogger("tonefair")


def _common(p):
    p.add_argument("--seed", type=int, help="overrides the seed of a spec file (default 0)")
    p.add_argument("--workers", type=int, default=4, help="size of the per-sample worker pool")
    p.add_argument("-v", "--verbose", action="store_true")


def _hair_flags(p):
    d = HairParams()
    p.add_argument("--theta-min", type=int, help="override the ITA binning (degrees)")
    p.add_argument("--theta-max", type=int)
    p.add_argument("--clahe-clip", type=float, default=d.clahe_clip)
    p.add_argument("--clahe-tiles", type=int, default=d.clahe_tiles)
    p.add_argument("--kernel-size", type=int, default=d.kernel_size)
    p.add_argument("--kernel-shape", choices=("cross", "rect", "ellipse"), default=d.kernel_shape)
    p.add_argument("--hair-threshold", type=int, default=d.threshold)
    p.add_argument("--dilation", type=int, default=d.dilation)


def _weight_flags(p):
    p.add_argument("--mode", "--weighting", dest="weighting", choices=pipeline.WEIGHT_MODES, default="none")
    p.add_argument("--metric", default="WD", help="metric whose distances drive DRW")
    p.add_argument("--bandwidth", type=float, help="KDE bandwidth (default: Silverman)")


def _eval_flags(p):
    p.add_argument("--thresholds", type=float, nargs=5, default=None,
                   metavar="T", help="lower ITA bounds of Fitzpatrick types 1..5")
    p.add_argument("--f1", dest="f1_mode", choices=("macro", "weighted"), default="macro")


def _train_flags(p):
    d = TrainConfig()
    p.add_argument("--iterations", type=int, default=d.iterations)
    p.add_argument("--learning-rate", type=float, default=d.learning_rate)
    p.add_argument("--l2", type=float, default=d.l2)


def build_parser():
    ap = argparse.ArgumentParser(prog="tonefair", description="Skin-tone distribution fairness toolkit")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("extract", help="per-sample ITA histograms from a manifest")
    p.add_argument("manifest")
    p.add_argument("-o", "--out", required=True)
    _hair_flags(p)
    _common(p)

    p = sub.add_parser("reference", help="median reference distribution of training histograms")
    p.add_argument("histograms")
    p.add_argument("-o", "--out", required=True, help="output JSON file")
    _common(p)

    p = sub.add_parser("distance", help="distances of every histogram to the reference")
    p.add_argument("histograms")
    p.add_argument("reference")
    p.add_argument("--metrics", nargs="+", default=[m.value for m in ALL_METRICS])
    p.add_argument("-o", "--out", required=True, help="output directory")
    _common(p)

    p = sub.add_parser("weights", help="DRW / CARW weight sidecar")
    p.add_argument("distances")
    p.add_argument("--histograms", required=True, help="histogram directory (skin types, labels, splits)")
    p.add_argument("-o", "--out", required=True, help="output CSV file")
    _weight_flags(p)
    _eval_flags(p)
    _common(p)

    p = sub.add_parser("synth", help="render a seeded synthetic dataset")
    p.add_argument("spec", nargs="?", help="SynthSpec JSON (defaults when omitted)")
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--n-samples", type=int)
    _common(p)

    p = sub.add_parser("train-toy", help="train the toy classifier and predict")
    p.add_argument("histograms")
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--weights", help="weight sidecar CSV")
    p.add_argument("--distances", help="distance CSV to carry into the predictions")
    _weight_flags(p)
    _train_flags(p)
    _common(p)

    p = sub.add_parser("evaluate", help="fairness report from predictions")
    p.add_argument("predictions")
    p.add_argument("--manifest", help="cross-check sample ids and splits")
    p.add_argument("-o", "--out", required=True)
    _eval_flags(p)
    _common(p)

    p = sub.add_parser("experiment", help="run every stage for all weighting arms on synthetic data")
    p.add_argument("spec", nargs="?")
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--n-samples", type=int)
    _hair_flags(p)
    _train_flags(p)
    _eval_flags(p)
    p.add_argument("--bandwidth", type=float)
    _common(p)
    return ap


def _config(a):
    kw = {"seed": a.seed or 0, "workers": a.workers}
    if hasattr(a, "clahe_clip"):
        kw["hair"] = HairParams(a.clahe_clip, a.clahe_tiles, a.kernel_size, a.kernel_shape,
                                a.hair_threshold, a.dilation)
        kw["theta_min"], kw["theta_max"] = a.theta_min, a.theta_max
    for name in ("weighting", "metric", "bandwidth", "f1_mode"):
        if getattr(a, name, None) is not None:
            kw[name] = getattr(a, name)
    if getattr(a, "thresholds", None):
        kw["thresholds"] = tuple(a.thresholds)
    return pipeline.RunConfig(**kw).validate()


def _spec(a):
    spec = SynthSpec.from_json(a.spec) if a.spec else SynthSpec()
    if a.seed is not None:
        spec.seed = a.seed
    if a.n_samples is not None:
        spec.n_samples = a.n_samples
    return spec.validate()


def _train_config(a):
    return TrainConfig(a.iterations, a.learning_rate, a.l2, a.seed or 0)


def run(a):
    if a.cmd == "extract":
        res = pipeline.extract(a.manifest, a.out, _config(a))
        print(f"wrote {res['n_written']} histograms, skipped {res['n_skipped']}")
        if res["n_skipped"]:
            log.warning("%d sample(s) skipped; see %s/extract_log.json", res["n_skipped"], a.out)
    elif a.cmd == "reference":
        _config(a)
        ref = pipeline.reference(a.histograms, a.out)
        print(f"reference over {ref.meta['n_histograms']} training histograms -> {a.out}")
    elif a.cmd == "distance":
        _config(a)
        recs = pipeline.distance(a.histograms, a.reference, a.metrics, a.out)
        print(f"wrote {len(recs)} distance rows")
    elif a.cmd == "weights":
        meta = pipeline.weights(a.distances, a.histograms, a.out, _config(a))
        print(f"weights ({meta['mode']}, {meta['metric']}) -> {a.out}")
    elif a.cmd == "synth":
        samples = pipeline.synth(_spec(a), a.out, a.workers)
        print(f"rendered {len(samples)} samples -> {a.out}")
    elif a.cmd == "train-toy":
        model, _ = pipeline.train(a.histograms, a.out, _config(a), a.weights, a.distances, _train_config(a))
        print(f"final loss {model.loss_history[-1]:.6f}")
    elif a.cmd == "evaluate":
        rep = pipeline.evaluate(a.predictions, a.out, _config(a), a.manifest)
        print(json.dumps({"accuracy": round(rep.overall_accuracy, 4),
                          "sum_abs_mean_gap_acc": round(rep.sum_abs_mean_gap_acc, 4)}))
    elif a.cmd == "experiment":
        summary = pipeline.experiment(_spec(a), a.out, _config(a), _train_config(a))
        for name, s in summary.items():
            rho = ", ".join(f"{k}={v:+.3f}" for k, v in sorted(s["per_metric_spearman"].items()))
            print(f"{name:12s} acc={s['overall_accuracy']:.3f} gap_sum={s['sum_abs_mean_gap_acc']:.3f} {rho}")


def main(argv=None):
    a = build_parser().parse_args(argv)
    pipeline.setup_logging(a.verbose)
    try:
        run(a)
    except (TonefairError, InvalidSpec, OSError, ValueError) as e:
        log.error("%s: %s", type(e).__name__, e)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
