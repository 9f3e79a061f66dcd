import json
from pathlib import Path

import numpy as np
import pytest

from attrition.cli import main

ABM_DOC = {
    "schema": 1,
    "diffusion": {"kind": "abm", "mu": -0.1, "sigma": 1.0},
    "discount": 0.2,
    "profit": {"family": "affine", "a": 0.0, "b": 1.0},
    "winner": {"family": "exp", "a": 10.0, "b": 0.3, "c": 2.0},
    "exit_payoffs": [1.0, 1.5],
    "center": 0.25,
    "x0": 2.0,
}


@pytest.fixture()
def doc_path(tmp_path):
    p = tmp_path / "model.json"
    p.write_text(json.dumps(ABM_DOC))
    return str(p)


def _runs(out_dir, command):
    return sorted(Path(out_dir).glob(f"{command}-*"))


def test_validate_pass(doc_path, tmp_path, capsys):
    code = main(["validate", "--model", doc_path, "--out", str(tmp_path / "out")])
    assert code == 0
    run = _runs(tmp_path / "out", "validate")[-1]
    report = json.loads((run / "validation.json").read_text())
    assert report["report"]["ok"] is True
    assert report["config"]["document"]["discount"] == 0.2


def test_validate_failure_exit_code(tmp_path):
    bad = dict(ABM_DOC)
    bad["winner"] = {"family": "const", "c": 1.5}  # w == l2
    p = tmp_path / "bad.json"
    p.write_text(json.dumps(bad))
    code = main(["validate", "--model", str(p), "--out", str(tmp_path / "out")])
    assert code == 2


def test_malformed_document_exit_code(tmp_path, capsys):
    p = tmp_path / "broken.json"
    p.write_text("{not json")
    code = main(["validate", "--model", str(p), "--out", str(tmp_path / "out")])
    assert code == 1
    err = capsys.readouterr().err
    assert "broken.json" in err

    q = tmp_path / "missing.json"
    q.write_text(json.dumps({k: v for k, v in ABM_DOC.items() if k != "profit"}))
    code = main(["validate", "--model", str(q), "--out", str(tmp_path / "out")])
    assert code == 1
    assert "profit" in capsys.readouterr().err


def test_solve_outputs(doc_path, tmp_path):
    code = main(["solve", "--model", doc_path, "--out", str(tmp_path / "out"), "--grid", "41"])
    assert code == 0
    run = _runs(tmp_path / "out", "solve")[-1]
    assert (run / "curves.csv").exists()
    assert (run / "curves.png").exists()
    payload = json.loads((run / "solve.json").read_text())
    assert payload["solutions"]["1"]["threshold"] == pytest.approx(-1.15078, abs=1e-4)
    header = (run / "curves.csv").read_text().splitlines()[0]
    assert header == "x,R,beta_1,beta_2,beta_prime_1,beta_prime_2,V1,V2"


def test_equilibria_certify(doc_path, tmp_path):
    code = main(["equilibria", "--model", doc_path, "--out", str(tmp_path / "out"),
                 "--certify", "--grid", "4001"])
    assert code == 0
    run = _runs(tmp_path / "out", "equilibria")[-1]
    payload = json.loads((run / "equilibria.json").read_text())
    assert payload["report"]["classification"] == "pure-only"
    gains = payload["report"]["oracle"]["pure_weak"]
    assert gains["deviation_gain_firm1"] <= 1e-3
    assert gains["deviation_gain_firm2"] <= 1e-3 * 1.5


def test_equilibria_mixed_outputs_hazards(tmp_path):
    doc = dict(ABM_DOC)
    doc["exit_payoffs"] = [1.0, 1.0]
    p = tmp_path / "homog.json"
    p.write_text(json.dumps(doc))
    code = main(["equilibria", "--model", str(p), "--out", str(tmp_path / "out")])
    assert code == 0
    run = _runs(tmp_path / "out", "equilibria")[-1]
    assert (run / "hazards.csv").exists()
    assert (run / "hazards.png").exists()
    payload = json.loads((run / "equilibria.json").read_text())
    assert payload["report"]["classification"] == "mixed+pure"


def test_simulate_summary(doc_path, tmp_path):
    code = main(["simulate", "--model", doc_path, "--out", str(tmp_path / "out"),
                 "--paths", "2000", "--dt", "5e-3", "--bridge", "--per-path",
                 "--horizon", "400"])
    assert code == 0
    run = _runs(tmp_path / "out", "simulate")[-1]
    payload = json.loads((run / "summary.json").read_text())
    assert payload["outcomes"]["n_paths"] == 2000
    assert (run / "outcomes.csv").exists()
    assert (run / "outcomes.png").exists()
    n_lines = len((run / "outcomes.csv").read_text().splitlines())
    assert n_lines == 2001


def test_sweep_l2_ladder(doc_path, tmp_path):
    code = main(["sweep", "--model", doc_path, "--out", str(tmp_path / "out"),
                 "--param", "l2", "--start", "1.0", "--stop", "1.6", "--steps", "4"])
    assert code == 0
    run = _runs(tmp_path / "out", "sweep")[-1]
    payload = json.loads((run / "sweep.json").read_text())
    rows = payload["rows"]
    assert [r["class"] for r in rows] == ["mixed+pure", "pure-only", "pure-only", "pure-only"]
    theta2 = [r["theta2"] for r in rows]
    assert np.all(np.diff(theta2) > 0)
    assert (run / "sweep.csv").exists() and (run / "sweep.png").exists()


def test_sweep_l1_ladder_kappa_constant(doc_path, tmp_path):
    code = main(["sweep", "--model", doc_path, "--out", str(tmp_path / "out"),
                 "--param", "l1", "--start", "0.4", "--stop", "1.3", "--steps", "4"])
    assert code == 0
    run = _runs(tmp_path / "out", "sweep")[-1]
    rows = json.loads((run / "sweep.json").read_text())["rows"]
    kappas = [r["kappa"] for r in rows]
    assert max(kappas) - min(kappas) <= 1e-10 * max(1.0, abs(kappas[0]))


def test_deterministic_equilibria(tmp_path):
    doc = {
        "schema": 1,
        "diffusion": {"kind": "abm", "mu": -0.005, "sigma": 0.0, "deterministic": True},
        "discount": 0.2,
        "profit": {"family": "affine", "a": 0.0, "b": 1.0},
        "winner": {"family": "const", "c": 15.0},
        "exit_payoffs": [0.2, 0.21],
        "x0": 0.3,
    }
    p = tmp_path / "det.json"
    p.write_text(json.dumps(doc))
    code = main(["equilibria", "--model", str(p), "--out", str(tmp_path / "out")])
    assert code == 0
    run = _runs(tmp_path / "out", "equilibria")[-1]
    payload = json.loads((run / "equilibria.json").read_text())
    assert payload["deterministic"]["feasible_q_interval"] is not None


def test_reports_are_reproducible(doc_path, tmp_path):
    main(["solve", "--model", doc_path, "--out", str(tmp_path / "a"), "--grid", "31"])
    main(["solve", "--model", doc_path, "--out", str(tmp_path / "b"), "--grid", "31"])
    ja = (_runs(tmp_path / "a", "solve")[-1] / "solve.json").read_text()
    jb = (_runs(tmp_path / "b", "solve")[-1] / "solve.json").read_text()
    assert ja == jb
    ca = (_runs(tmp_path / "a", "solve")[-1] / "curves.csv").read_text()
    cb = (_runs(tmp_path / "b", "solve")[-1] / "curves.csv").read_text()
    assert ca == cb


def test_hetero_mode(tmp_path):
    doc = {
        "schema": 1,
        "diffusion": {"kind": "abm", "mu": -0.1, "sigma": 1.0},
        "center": 0.3,
        "firms": [
            {"discount": 0.2, "profit": {"family": "affine", "a": 0.0, "b": 1.0},
             "winner": {"family": "exp", "a": 10.0, "b": 0.3, "c": 2.0},
             "exit": {"family": "const", "c": 1.0}},
            {"discount": 0.25, "profit": {"family": "affine", "a": 0.1, "b": 1.1},
             "winner": {"family": "exp", "a": 11.0, "b": 0.3, "c": 2.2},
             "exit": {"family": "affine", "a": 1.2, "b": 0.05}},
        ],
        "x0": 2.0,
    }
    p = tmp_path / "hetero.json"
    p.write_text(json.dumps(doc))
    assert main(["validate", "--model", str(p), "--out", str(tmp_path / "out"), "--hetero"]) == 0
    assert main(["solve", "--model", str(p), "--out", str(tmp_path / "out"), "--hetero", "--grid", "31"]) == 0
    run = _runs(tmp_path / "out", "solve")[-1]
    payload = json.loads((run / "solve.json").read_text())
    assert "threshold" in payload["solutions"]["1"]
    assert "threshold" in payload["solutions"]["2"]
