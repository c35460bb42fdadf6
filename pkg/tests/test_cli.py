import json

import numpy as np
import pytest

from seqmix.cli import main

SMALL_SPEC = {
    "means": [[0.0, 0.0], [4.0, 4.0]],
    "covariances": [[[0.3, 0.0], [0.0, 0.3]], [[0.3, 0.0], [0.0, 0.3]]],
    "beta": [5.0],
    "gamma": [0.05],
    "counts": [150, 150],
    "tau_indices": [100],
}


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture()
def small(tmp_path):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps(SMALL_SPEC))
    assert run("generate", "--spec", spec, "--out", tmp_path / "gen", "--seed", 3) == 0
    return tmp_path / "gen"


def outputs(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir()) if p.name != "run_manifest.json"}


def test_generate_default(tmp_path):
    assert run("generate", "--paper-default", "--out", tmp_path) == 0
    lines = (tmp_path / "data.csv").read_text().splitlines()
    assert len(lines) == 6001
    manifest = json.loads((tmp_path / "run_manifest.json").read_text())
    assert manifest["command"] == "generate" and manifest["seed"] == 0
    assert set(manifest["versions"]) >= {"seqmix", "numpy", "scipy"}


def test_fit_writes_report_and_curves(small, tmp_path):
    out = tmp_path / "fit"
    assert run("fit", small / "data.csv", "-K", 2, "--restarts", 1, "--out", out) == 0
    report = json.loads((out / "fit_report.json").read_text())
    assert len(report["model"]["tau"]) == 1
    rows = (out / "proportions.csv").read_text().splitlines()
    assert rows[0] == "t,pi0,pi1" and len(rows) == 301


def test_fit_single_component(small, tmp_path):
    out = tmp_path / "fit1"
    assert run("fit", small / "data.csv", "-K", 1, "--out", out) == 0
    rows = (out / "proportions.csv").read_text().splitlines()
    assert rows[0] == "t,pi0"
    assert {r.split(",")[1] for r in rows[1:]} == {"1.0"}


def test_repeat_runs_are_identical(small, tmp_path):
    for name in ("a", "b"):
        assert run("fit", small / "data.csv", "-K", 2, "--restarts", 2, "--out", tmp_path / name) == 0
    assert outputs(tmp_path / "a") == outputs(tmp_path / "b")


def test_seed_from_environment(monkeypatch, tmp_path):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps(SMALL_SPEC))
    monkeypatch.setenv("SEQMIX_SEED", "7")
    assert run("generate", "--spec", spec, "--out", tmp_path / "env") == 0
    monkeypatch.delenv("SEQMIX_SEED")
    assert run("generate", "--spec", spec, "--out", tmp_path / "flag", "--seed", 7) == 0
    assert outputs(tmp_path / "env") == outputs(tmp_path / "flag")
    monkeypatch.setenv("SEQMIX_SEED", "x")
    assert run("generate", "--spec", spec, "--out", tmp_path / "bad") == 2


def test_sweep_single_k(small, tmp_path):
    out = tmp_path / "sw"
    assert run("sweep", small / "data.csv", "--k-range", "3..3", "--restarts", 1, "--out", out) == 0
    rows = (out / "criteria.csv").read_text().splitlines()
    assert len(rows) == 2 and rows[1].startswith("3,")
    assert json.loads((out / "selection.json").read_text())["chosen_k"]["bic"] == 3


@pytest.mark.parametrize("bad", ["5..2", "x..3", "0..2", "3"])
def test_bad_k_range(small, tmp_path, bad):
    assert run("sweep", small / "data.csv", "--k-range", bad, "--out", tmp_path / "o") == 2


def test_usage_errors(tmp_path):
    assert run("fit", tmp_path / "missing.csv", "-K", 2, "--out", tmp_path / "o") == 2
    assert run("generate", "--out", tmp_path / "o") == 2
    assert run("fit") == 2
    assert run("nope") == 2


def test_evaluate(small, tmp_path):
    fit_dir = tmp_path / "fit"
    assert run("fit", small / "data.csv", "-K", 2, "--restarts", 1, "--out", fit_dir) == 0
    out = tmp_path / "ev"
    code = run("evaluate", "--truth", small / "data_truth.json", "--data", small / "data.csv",
           "--report", f"gmmseq={fit_dir / 'fit_report.json'}", "--tol", 20, "--bin-width", 10, "--out", out)
    assert code == 0
    header, row = (out / "metrics.csv").read_text().splitlines()
    assert header == "method,precision,recall,entropy,ari"
    name, prec, rec, _, ari = row.split(",")
    assert name == "gmmseq" and float(prec) == 1.0 and float(rec) == 1.0 and float(ari) > 0.9
    assert (out / "onset_histogram.csv").exists()


def test_evaluate_without_reports(tmp_path):
    truth = tmp_path / "onsets.json"
    truth.write_text("[1.0, 2.0]")
    assert run("evaluate", "--truth", truth, "--out", tmp_path / "ev") == 0
    assert (tmp_path / "ev" / "metrics.csv").read_text() == "method,precision,recall,entropy,ari\n"


def test_detect_hits(tmp_path):
    x = np.zeros(5000, dtype="<f4")
    x[100:150] = 0.01
    x[3000:3010] = -0.01
    x.tofile(tmp_path / "s.f32")
    for chunk in (1, 7, 4096):
        out = tmp_path / f"h{chunk}"
        assert run("detect-hits", tmp_path / "s.f32", "--sample-rate", 1e6, "--chunk-size", chunk,
                   "--out", out) == 0
    rows = (tmp_path / "h1" / "hits.csv").read_text().splitlines()
    assert rows[1:] == ["0.0001,100,149,0", "0.003,3000,3009,0"]
    assert outputs(tmp_path / "h1") == outputs(tmp_path / "h7") == outputs(tmp_path / "h4096")
    assert run("detect-hits", tmp_path / "s.f32", "--sample-rate", 1e6, "--chunk-size", 0,
               "--out", tmp_path / "z") == 2
