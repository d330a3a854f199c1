import csv
import json
import shutil
from pathlib import Path

import pytest

from tonefair import pipeline
from tonefair.cli import main
from tonefair.errors import MixedBinning

GOLDEN = Path(__file__).parent / "golden"
N = 80
SEED = 7


def run_chain(root, n=N, seed=SEED, workers=2):
    """synth -> extract -> reference -> distance -> weights -> train-toy -> evaluate."""
    data, out = root / "data", root / "out"
    w = ["--workers", str(workers)]
    assert main(["synth", "-o", str(data), "--n-samples", str(n), "--seed", str(seed)] + w) == 0
    assert main(["extract", str(data / "manifest.csv"), "-o", str(out / "ext")] + w) == 0
    hist = out / "ext" / "histograms"
    assert main(["reference", str(hist), "-o", str(out / "reference.json")]) == 0
    assert main(["distance", str(hist), str(out / "reference.json"), "-o", str(out / "dist")]) == 0
    dist = out / "dist" / "distances.csv"
    assert main(["weights", str(dist), "--histograms", str(hist), "--mode", "combined",
                 "--metric", "WD", "-o", str(out / "weights.csv")]) == 0
    assert main(["train-toy", str(hist), "--weights", str(out / "weights.csv"), "--mode", "drw",
                 "--distances", str(dist), "--iterations", "300", "-o", str(out / "model")]) == 0
    assert main(["evaluate", str(out / "model" / "predictions.csv"), "--manifest", str(data / "manifest.csv"),
                 "-o", str(out / "eval")]) == 0
    return data, out


@pytest.fixture(scope="module")
def chain(tmp_path_factory):
    return run_chain(tmp_path_factory.mktemp("chain"))


def test_chain_outputs(chain):
    data, out = chain
    rows = list(csv.DictReader(open(data / "manifest.csv")))
    assert len(rows) == N
    assert len(list((out / "ext" / "histograms").glob("*.json"))) == N
    with open(out / "dist" / "distances.csv") as fh:
        assert fh.readline().strip() == "sample_id,metric,raw,normalized"
        assert sum(1 for _ in fh) == 11 * N
    with open(out / "weights.csv") as fh:
        assert fh.readline().strip() == "sample_id,metric,distance,density,drw,carw,combined"
    report = json.loads((out / "eval" / "report.json").read_text())
    assert report["schema_version"] == "1.0"
    assert {"overall", "per_type", "per_metric_spearman", "ita_trend"} <= set(report)
    for name in ("binned_accuracy.csv", "per_type.csv", "trend.csv"):
        assert (out / "eval" / name).exists()
    h = json.loads(next((out / "ext" / "histograms").glob("*.json")).read_text())
    assert {"sample_id", "split", "median_ita", "n_pixels", "binning", "mass", "lesion_lab"} <= set(h)


def test_weights_columns_by_mode(chain, tmp_path):
    _, out = chain
    hist, dist = out / "ext" / "histograms", out / "dist" / "distances.csv"
    assert main(["weights", str(dist), "--histograms", str(hist), "--mode", "drw", "-o", str(tmp_path / "w.csv")]) == 0
    rows = list(csv.DictReader(open(tmp_path / "w.csv")))
    assert all(float(r["carw"]) == 1.0 for r in rows)
    assert all(0.0 <= float(r["drw"]) <= 1.0 for r in rows)
    assert min(float(r["drw"]) for r in rows) == 0.0


def test_rerun_is_byte_identical(chain, tmp_path):
    _, out = chain
    _, out2 = run_chain(tmp_path)
    for rel in ("ext/extract_log.json", "reference.json", "dist/distances.csv", "weights.csv",
                "model/model.json", "model/predictions.csv", "eval/report.json", "eval/binned_accuracy.csv"):
        a = (out / rel).read_text().replace(str(out.parent), "")
        b = (out2 / rel).read_text().replace(str(out2.parent), "")
        assert a == b, rel


def test_golden_report(chain):
    _, out = chain
    for name in ("report.json", "per_type.csv", "binned_accuracy.csv"):
        assert (out / "eval" / name).read_text() == (GOLDEN / name).read_text(), name


def test_corrupt_image_is_skipped(chain, tmp_path):
    data, _ = chain
    rows = list(csv.DictReader(open(data / "manifest.csv")))[:6]
    for r in rows:
        r["image_path"] = str(data / r["image_path"])
        r["lesion_mask_path"] = str(data / r["lesion_mask_path"])
    rows[0]["image_path"] = str(tmp_path / "missing.png")
    (tmp_path / "junk.png").write_bytes(b"garbage")
    rows[1]["lesion_mask_path"] = str(tmp_path / "junk.png")
    pipeline.write_manifest(tmp_path / "m.csv", rows)
    assert main(["extract", str(tmp_path / "m.csv"), "-o", str(tmp_path / "ext")]) == 0
    log = json.loads((tmp_path / "ext" / "extract_log.json").read_text())
    assert log["n_skipped"] == 2 and log["n_written"] == 4
    assert {s["reason"] for s in log["skipped"]} == {"unreadable_input"}


def test_empty_manifest_leaves_no_outputs(tmp_path):
    (tmp_path / "m.csv").write_text("sample_id,image_path,lesion_mask_path,label,split\n")
    assert main(["extract", str(tmp_path / "m.csv"), "-o", str(tmp_path / "out")]) == 2
    assert not (tmp_path / "out").exists()


def test_schema_error_has_line_number(tmp_path):
    (tmp_path / "m.csv").write_text("sample_id,image_path,lesion_mask_path,label,split\n"
                                    "a,a.png,a_m.png,0,train\n"
                                    "b,b.png,b_m.png,0,validation\n")
    with pytest.raises(pipeline.SchemaError, match=r"m\.csv:3"):
        pipeline.load_manifest(tmp_path / "m.csv")
    (tmp_path / "m.jsonl").write_text('{"sample_id": "a", "image_path": "x", "lesion_mask_path": "y", '
                                      '"label": 1, "split": "test"}\n{bad json\n')
    with pytest.raises(pipeline.SchemaError, match=r"m\.jsonl:2"):
        pipeline.load_manifest(tmp_path / "m.jsonl")
    (tmp_path / "d.csv").write_text("sample_id,image_path,lesion_mask_path,label,split\n"
                                    "a,a.png,a_m.png,0,train\na,b.png,b_m.png,1,test\n")
    with pytest.raises(pipeline.SchemaError, match="duplicate"):
        pipeline.load_manifest(tmp_path / "d.csv")


def test_jsonl_manifest(chain, tmp_path):
    data, _ = chain
    rows = list(csv.DictReader(open(data / "manifest.csv")))[:5]
    with open(tmp_path / "m.jsonl", "w") as fh:
        for r in rows:
            r["image_path"] = str(data / r["image_path"])
            r["lesion_mask_path"] = str(data / r["lesion_mask_path"])
            fh.write(json.dumps(r) + "\n")
    assert len(pipeline.load_manifest(tmp_path / "m.jsonl")) == 5


def test_mixed_binning_aborts(chain, tmp_path):
    _, out = chain
    hist = tmp_path / "h"
    shutil.copytree(out / "ext" / "histograms", hist)
    one = sorted(hist.glob("*.json"))[0]
    doc = json.loads(one.read_text())
    doc["binning"]["theta_max"] += 1
    doc["mass"].append(0.0)
    one.write_text(json.dumps(doc))
    with pytest.raises(MixedBinning):
        pipeline.reference(hist, tmp_path / "r.json")
    assert main(["reference", str(hist), "-o", str(tmp_path / "r.json")]) == 2
    assert not (tmp_path / "r.json").exists()


def test_bad_config_is_rejected(chain, tmp_path):
    data, _ = chain
    assert main(["extract", str(data / "manifest.csv"), "-o", str(tmp_path / "x"), "--theta-min", "5"]) == 2
    assert main(["weights", "nope.csv", "--histograms", "h", "--metric", "ZZ", "-o", "w.csv"]) == 2


def test_help_lists_subcommands(capsys):
    with pytest.raises(SystemExit):
        main(["--help"])
    text = capsys.readouterr().out
    for cmd in ("extract", "reference", "distance", "weights", "synth", "train-toy", "evaluate"):
        assert cmd in text
