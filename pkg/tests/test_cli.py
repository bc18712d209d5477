import json
import subprocess
import sys

import pytest

from daeire import __version__
from daeire.cli import main
from daeire.model_io import read_trajectory_csv

from conftest import fixture_path


def run(*argv):
    return main([str(a) for a in argv])


def test_analyze_example4(capsys):
    assert run("analyze", fixture_path("example4.dae")) == 0
    doc = json.loads(capsys.readouterr().out)
    st = doc["structure"]
    assert st["c"] == [0, 2] and st["d"] == [2, 2] and st["delta"] == 2
    assert st["signature"] == [[2, 2], [0, 0]]


def test_analyze_writes_report_file(tmp_path):
    assert run("analyze", fixture_path("pendulum.dae"), "--out", tmp_path) == 0
    doc = json.loads((tmp_path / "report.json").read_text())
    assert doc["structure"]["c"] == [0, 0, 1, 0, 0]
    assert doc["structure"]["signature"][0][1] == 0
    assert doc["structure"]["signature"][2][3] is None


def test_nonsquare_exits_with_one(capsys):
    assert run("analyze", fixture_path("nonsquare.dae")) == 1
    err = capsys.readouterr().err
    assert "error [validate]" in err and "not square" in err


def test_missing_file_and_syntax_error(tmp_path, capsys):
    assert run("analyze", tmp_path / "absent.dae") == 1
    bad = tmp_path / "bad.dae"
    bad.write_text("var x;\nx' - = 0;\n")
    assert run("analyze", bad) == 1
    assert "error [parse]" in capsys.readouterr().err


def test_no_matching_exits_with_one(tmp_path, capsys):
    src = tmp_path / "nomatch.dae"
    src.write_text("var x, y;\nx' - 1 = 0;\nx - 2 = 0;\n")
    assert run("analyze", src) == 1
    assert "perfect matching" in capsys.readouterr().err


def test_no_solution_is_reported(tmp_path, capsys):
    src = tmp_path / "nosol.dae"
    src.write_text("var x, y;\nx*y = 0;\nx - y = 0;\n")
    point = tmp_path / "p.json"
    point.write_text(json.dumps({"t": 0, "values": {"x": 0, "y": 0}}))
    assert run("reduce", src, "--initial", point, "--out", tmp_path) == 2
    doc = json.loads((tmp_path / "report.json").read_text())
    assert doc["components"][0]["status"] == "failed"
    assert "does not have a solution" in doc["components"][0]["error"]
    assert "index reduction" in capsys.readouterr().err


def test_non_polynomial_needs_initial_point(capsys):
    assert run("witness", fixture_path("pendulum.dae")) == 1
    assert "supply an initial point" in capsys.readouterr().err


def test_witness_report(tmp_path):
    assert run("witness", fixture_path("beam.dae"), "--out", tmp_path) == 0
    w = json.loads((tmp_path / "witness.json").read_text())["witness"]
    assert w["seed"] == 0 and len(w["points"]) == len(w["residuals"]) == len(w["ranks"])
    assert max(w["residuals"]) <= 1e-6
    assert len(set(w["components"])) >= 2


def test_reduce_amplifier_with_initial_point(tmp_path):
    assert run("reduce", fixture_path("amplifier.dae"), "--initial",
               fixture_path("amplifier.json"), "--out", tmp_path) == 0
    comp = json.loads((tmp_path / "report.json").read_text())["components"][0]
    assert [(it["n"], it["r"]) for it in comp["iterations"]] == [(8, 5)]
    assert len(comp["xi"][0]) == 3 and len(comp["replaced"][0]) == 5
    assert len(comp["regularized"]["equations"]) == 13
    assert comp["regularized"]["variables"][-5:] == ["u1", "u2", "u3", "u4", "u5"]


def test_solve_beam(tmp_path):
    assert run("solve", fixture_path("beam.dae"), "--seed", 0, "--out", tmp_path) == 0
    csvs = sorted(tmp_path.glob("component_*.csv"))
    assert [p.name for p in csvs] == ["component_0.csv", "component_1.csv"]
    for k, p in enumerate(csvs):
        tr = read_trajectory_csv(p.read_text())
        assert tr.names == ["y1", "y2"] and len(tr) == 151
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["status"] == "ok"
    assert all(c["status"] == "ok" for c in report["components"])


def test_solve_is_deterministic(tmp_path):
    outs = []
    for k in range(2):
        d = tmp_path / f"run{k}"
        assert run("solve", fixture_path("example4.dae"), "--tend", 1, "--out", d) == 0
        outs.append({p.name: p.read_bytes() for p in sorted(d.iterdir())})
    assert outs[0] == outs[1]
    assert set(outs[0]) == {"component_0.csv", "report.json"}


def test_partial_failure_exits_with_two(tmp_path):
    # the singular beam solution -(1 - sin t)/5 reaches zero at pi/2
    assert run("solve", fixture_path("beam.dae"), "--tend", 2, "--out", tmp_path) == 2
    report = json.loads((tmp_path / "report.json").read_text())
    failed = [c for c in report["components"] if c["status"] == "failed"]
    assert len(failed) == 1 and failed[0]["failure_time"] is not None
    assert report["status"] == "partial"


def test_version_and_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "daeire", "--version"],
                         capture_output=True, text=True)
    assert out.returncode == 0 and __version__ in out.stdout
    with pytest.raises(SystemExit):
        main(["bogus"])
