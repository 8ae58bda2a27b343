import csv
import json
import shutil

import numpy as np
import pytest

from hybridloc.cli import main
from hybridloc.model import parse

GEN = ["--n", "10", "--anchors", "3", "--region", "7", "--sigma", "0.5", "--bearing-deg", "2",
       "--comm-radius", "5", "--seed", "1"]
# a low-noise campaign that meets every small-network threshold
QUIET = ["--n", "10", "--comm-radius", "5", "--sigma", "0.02", "--bearing-deg", "0.05",
         "--metrics", "E1,E2,angles,loc_error", "--min-trials", "100", "--max-trials", "100"]


def run(*argv):
    try:
        return main([str(a) for a in argv])
    except SystemExit as exc:
        return exc.code


@pytest.fixture(scope="module")
def flow(tmp_path_factory):
    d = tmp_path_factory.mktemp("flow")
    assert run("generate", *GEN, "-o", d / "inst.json") == 0
    assert run("solve", d / "inst.json", "-o", d / "sol.json") == 0
    return d


def test_generate_writes_valid_instance(flow, capsys):
    inst, truth = parse((flow / "inst.json").read_text())
    assert inst.n == 10 and inst.num_anchors == 3 and truth is not None


def test_generate_reports_radius_and_retries(tmp_path, capsys):
    assert run("generate", *GEN, "-o", tmp_path / "i.json") == 0
    out = capsys.readouterr().out
    assert "comm_radius=5 m" in out and "retries" in out


def test_generate_is_deterministic(flow, tmp_path):
    run("generate", *GEN, "-o", tmp_path / "again.json")
    assert (tmp_path / "again.json").read_text() == (flow / "inst.json").read_text()


def test_generate_usage_errors(tmp_path):
    assert run("generate", *GEN) == 2
    assert run("generate", "--n", "0", "-o", tmp_path / "x.json") == 2
    assert run() == 2


def test_generate_exhaustion_exit_1(tmp_path):
    assert run("generate", "--n", "10", "--comm-radius", "0.2", "--max-attempts", "2",
               "-o", tmp_path / "x.json") == 1


def test_solve_converges(flow):
    doc = json.loads((flow / "sol.json").read_text())
    assert doc["converged"] and doc["mode"] == "unit"
    assert len(doc["x"]) == 10


def test_solve_full_ml_and_refine(flow, tmp_path):
    out = tmp_path / "sol.json"
    assert run("solve", flow / "inst.json", "--mode", "full-ml", "--refine", "-o", out) == 0
    doc = json.loads(out.read_text())
    assert doc["mode"] == "full-ml" and doc["refined"]["converged"]
    unit = json.loads((flow / "sol.json").read_text())
    assert doc["objective"] != unit["objective"]


def test_solve_nonconvergence_exit_4(flow, tmp_path):
    assert run("solve", flow / "inst.json", "--max-iters", "1", "-o", tmp_path / "s.json") == 4


def test_solve_corrupt_instance(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"dim": 2, "n": ')
    assert run("solve", bad, "-o", tmp_path / "s.json") == 1
    assert "line 1" in capsys.readouterr().err
    assert run("solve", tmp_path / "missing.json", "-o", tmp_path / "s.json") == 1


def test_certify_with_truth(flow, tmp_path):
    out = tmp_path / "cert.json"
    assert run("certify", flow / "inst.json", flow / "sol.json", "-o", out) == 0
    rep = json.loads(out.read_text())
    assert rep["E2"] < 1e-9 and rep["loc_error"] > 0


def test_certify_without_truth(flow, tmp_path):
    doc = json.loads((flow / "inst.json").read_text())
    doc.pop("truth")
    inst = tmp_path / "notruth.json"
    inst.write_text(json.dumps(doc))
    out = tmp_path / "cert.json"
    assert run("certify", inst, flow / "sol.json", "-o", out) == 0
    assert "loc_error" not in json.loads(out.read_text())


def test_certify_halved_auxiliaries(flow, tmp_path):
    sol = json.loads((flow / "sol.json").read_text())
    sol["y"] = (np.array(sol["y"]) / 2).tolist()
    sol["w"] = []
    (tmp_path / "half.json").write_text(json.dumps(sol))
    inst, _ = parse((flow / "inst.json").read_text())
    # the anchor-link block no longer matches, which is a data error
    assert run("certify", flow / "inst.json", tmp_path / "half.json") == 1
    sol["w"] = json.loads((flow / "sol.json").read_text())["w"]
    (tmp_path / "half.json").write_text(json.dumps(sol))
    out = tmp_path / "cert.json"
    assert run("certify", flow / "inst.json", tmp_path / "half.json", "-o", out) == 0
    E2 = json.loads(out.read_text())["E2"]
    # every edge term is d/2 while anchor terms stay ~0
    assert E2 == pytest.approx(inst.d.mean() / 2, rel=1e-6)


def test_mc_smoke(tmp_path, capsys):
    out = tmp_path / "mc"
    assert run("mc", "--n", "10", "--comm-radius", "5", "--max-trials", "5",
               "--min-trials", "5", "-o", out) == 0
    assert {"campaign.json", "trials.csv"} <= {p.name for p in out.iterdir()}
    text = capsys.readouterr().out
    for metric in ("E1", "E2", "loc_error", "ml_gap", "angles"):
        assert metric in text


def test_mc_jobs_matches_serial(tmp_path):
    args = ["mc", "--n", "6", "--comm-radius", "5", "--max-trials", "4", "--min-trials", "4"]
    run(*args, "-o", tmp_path / "a")
    run(*args, "--jobs", "2", "-o", tmp_path / "b")
    assert (tmp_path / "a/trials.csv").read_text() == (tmp_path / "b/trials.csv").read_text()


def test_mc_bad_settings(tmp_path):
    assert run("mc", "--min-trials", "10", "--max-trials", "5", "-o", tmp_path / "x") == 2
    assert run("mc", "--metrics", "E1,nope", "-o", tmp_path / "x") == 2


def test_mc_config_file(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"gen": {"n": 6, "comm_radius": 5.0}, "min_trials": 3,
                               "max_trials": 3, "metrics": ["E1", "E2"]}))
    assert run("mc", "--config", cfg, "-o", tmp_path / "mc") == 0
    camp = json.loads((tmp_path / "mc/campaign.json").read_text())
    assert camp["config"]["gen"]["n"] == 6 and camp["trials_run"] == 3


@pytest.fixture(scope="module")
def quiet(tmp_path_factory):
    out = tmp_path_factory.mktemp("quiet") / "mc"
    assert run("mc", *QUIET, "-o", out) == 0
    return out


def test_report_check_passes_on_compliant_campaign(quiet, capsys):
    assert run("report", quiet, "--check") == 0
    assert "[FAIL]" not in capsys.readouterr().out


def test_report_check_fails_on_tampered_loc_error(quiet, tmp_path, capsys):
    bad = tmp_path / "tampered"
    shutil.copytree(quiet, bad)
    with open(bad / "trials.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        r["loc_error"] = repr(float(r["loc_error"]) * 10)
    with open(bad / "trials.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
    assert run("report", bad, "--check") == 3
    assert "[FAIL] localization error" in capsys.readouterr().out


def test_report_json(quiet, capsys):
    assert run("report", quiet, "--json") == 0
    out = capsys.readouterr().out
    doc = json.loads(out[out.index("{"):])
    assert doc["trials_ok"] == 100


def test_report_empty_directory(tmp_path, capsys):
    assert run("report", tmp_path) == 1
    assert "not a results directory" in capsys.readouterr().err
