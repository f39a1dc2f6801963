import json

import numpy as np
import pytest

from calmech.cli import main, resolve_input


def run(tmp_path, *argv, out="out"):
    d = tmp_path / out
    return main([*argv, "--out", str(d)]), d


def test_solve_cml(tmp_path, capsys):
    code, d = run(tmp_path, "solve", "cml")
    assert code == 0
    doc = json.loads((d / "mechanisms.json").read_text())
    assert doc["value"] == pytest.approx(7 / 12, abs=1e-6)
    np.testing.assert_allclose(sorted(map(tuple, doc["atoms"])), [(0, 1), (1, 0)], atol=1e-9)
    summary = (d / "summary.txt").read_text()
    assert "cav W(prior) = 0.583333333333" in summary
    assert "posted price 0.5" in summary and "posted price 1\n" in summary
    for name in ("value_curve.csv", "envelope.csv", "split.json", "split.csv"):
        assert (d / name).exists()
    assert "0.583333333333" in capsys.readouterr().out


def test_solve_horizontal(tmp_path):
    code, d = run(tmp_path, "solve", "horizontal")
    assert code == 0
    doc = json.loads((d / "mechanisms.json").read_text())
    assert doc["value"] == pytest.approx(19 / 12, abs=1e-6)
    atoms = sorted(a[1] for a in doc["atoms"])
    np.testing.assert_allclose(atoms, [0, 2 / 3], atol=1e-9)


@pytest.mark.parametrize("mech,expected", [("surplus_extraction", 1), ("cml_optimal", 0)])
def test_audit_exit_codes(tmp_path, mech, expected):
    code, d = run(tmp_path, "audit", "cml", mech)
    assert code == expected
    text = (d / "audit.txt").read_text()
    assert ("IR" in text) == bool(expected)
    json.loads((d / "structure.json").read_text())


def test_audit_horizontal_myerson(tmp_path):
    code, _ = run(tmp_path, "audit", "horizontal", "horizontal_myerson")
    assert code == 1


def test_malformed_problem_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    doc = json.loads(resolve_input("cml").read_text())
    doc["type_pmf"] = [[0.5, 0.6], [0.5, 0.5]]
    bad.write_text(json.dumps(doc))
    code, d = run(tmp_path, "solve", str(bad))
    assert code == 2
    assert "type_pmf" in capsys.readouterr().err
    assert not (d / "summary.txt").exists()
    assert (d / "manifest.jsonl").exists()


def test_not_json_exits_2(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{states: ")
    assert run(tmp_path, "validate", str(bad))[0] == 2


def test_zero_horizon_exits_2(tmp_path):
    code, d = run(tmp_path, "simulate", "cml", "cml_optimal", "--horizon", "0")
    assert code == 2
    assert not (d / "diagnostics.txt").exists()


def test_repeated_simulation_reproducible(tmp_path):
    argv = ["simulate", "cml", "cml_optimal", "--horizon", "2000", "--seed", "7", "--policy", "learning:10"]
    c1, d1 = run(tmp_path, *argv, out="a")
    c2, d2 = run(tmp_path, *argv, out="b")
    assert c1 == c2 == 0
    for name in ("occupation.csv", "trace.log"):
        assert (d1 / name).read_bytes() == (d2 / name).read_bytes()
    diag = (d1 / "diagnostics.txt").read_text()
    assert "martingale" in diag
    rec = json.loads((d1 / "manifest.jsonl").read_text().splitlines()[-1])
    assert rec["command"] == "simulate" and rec["seed"] == 7 and rec["exit"] == 0


def test_dynamic_simulation_from_solve_output(tmp_path):
    code, d = run(tmp_path, "solve", "cml", out="solve")
    assert code == 0
    code, d2 = run(tmp_path, "simulate", "cml", str(d / "mechanisms.json"), "--mode", "dynamic", "--horizon", "5000", out="dyn")
    assert code == 0
    diag = (d2 / "diagnostics.txt").read_text()
    assert "TV to analytic outcome distribution" in diag
    assert (d2 / "blocks.csv").read_text().startswith("n,L,N,")


def test_dynamic_mode_needs_two_stage(tmp_path):
    code, _ = run(tmp_path, "simulate", "cml", "cml_optimal", "--mode", "dynamic", "--horizon", "10")
    assert code == 2


def test_manifest_is_append_only(tmp_path):
    run(tmp_path, "validate", "cml")
    _, d = run(tmp_path, "validate", "cml", "cml_optimal")
    assert len((d / "manifest.jsonl").read_text().splitlines()) == 2
