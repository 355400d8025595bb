from __future__ import annotations

import csv
import json
import os
import subprocess
import sys
import xml.etree.ElementTree as ET

import jsonschema
import pytest

from slowfast.cli import DEFAULT_OUT, OUT_ENV, RunConfig, load_schema, parse_config, run


@pytest.fixture(autouse=True)
def _isolated(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv(OUT_ENV, raising=False)


def _json(path):
    return json.loads(path.read_text())


def _rows(path):
    with path.open() as fh:
        return list(csv.reader(fh))


def _valid(doc, name):
    jsonschema.validate(doc, load_schema(name))


def test_list_models(capsys):
    assert run(["list-models"]) == 0
    out = capsys.readouterr().out
    for mid in ("gause", "fear", "enso", "foodweb", "goodwin", "hiv", "sir-epidemic", "sir-secondary"):
        assert mid in out


def test_simulate_writes_csv_svg_config(tmp_path):
    out = tmp_path / "sim"
    assert run(["simulate", "--model", "gause", "--set", "eps=0.1", "--tspan", "0:50", "--out", str(out)]) == 0
    rows = _rows(out / "trajectory.csv")
    assert rows[0] == ["t", "x", "y"] and len(rows) > 10
    assert float(rows[-1][0]) == pytest.approx(50.0)
    ET.fromstring((out / "trajectory.svg").read_text())
    cfg = _json(out / "config.json")
    _valid(cfg, "config")
    assert cfg["params"]["eps"] == 0.1


def test_equilibria_schema(tmp_path):
    assert run(["equilibria", "--model", "fear", "--out", str(tmp_path)]) == 0
    doc = _json(tmp_path / "equilibria.json")
    _valid(doc, "equilibria")
    assert len(doc["equilibria"]) == 3
    # roots with negative populations are reported separately
    assert all(min(e["state"]) > -1e-6 for e in doc["equilibria"])


def test_branch_outputs(tmp_path):
    assert run(["branch", "--model", "gause", "--range", "0:0.6", "--out", str(tmp_path)]) == 0
    doc = _json(tmp_path / "events.json")
    _valid(doc, "events")
    hopf = [e for e in doc["events"] if e["kind"] == "Hopf"]
    assert len(hopf) == 1 and hopf[0]["param_at"] == pytest.approx(0.2, abs=1e-8)
    assert _rows(tmp_path / "branch.csv")[0] == ["eps", "x", "y", "stability"]
    assert 'id="hopf-0"' in (tmp_path / "bifurcation.svg").read_text()


def test_negative_range_parses():
    cfg = parse_config(["branch", "--model", "foodweb", "--range", "-0.1:1.0"])
    assert cfg.range == [-0.1, 1.0]


def test_scan_csv(tmp_path):
    assert run(["scan", "--model", "gause", "--grid", "0.1,0.05,0.0", "--out", str(tmp_path)]) == 0
    rows = _rows(tmp_path / "scan.csv")
    assert rows[0][:2] == ["param", "class"]
    cls = {float(r[0]): r[1] for r in rows[1:]}
    assert cls[0.1] == "sustained" and cls[0.0] == "none"


def test_cycle_json(tmp_path):
    assert run(["cycle", "--model", "gause", "--set", "eps=0.1", "--out", str(tmp_path)]) == 0
    doc = _json(tmp_path / "cycle.json")
    _valid(doc, "cycle")
    assert doc["period"] > 0 and not doc["degenerate"]


def test_plot_timeseries(tmp_path):
    assert run(["plot", "--what", "timeseries", "--model", "enso", "--tspan", "0:100", "--out", str(tmp_path)]) == 0
    assert 'id="timeseries"' in (tmp_path / "trajectory.svg").read_text()


def test_criterion_command(tmp_path, capsys):
    assert run(["criterion", "--model", "gause", "--out", str(tmp_path)]) == 0
    doc = _json(tmp_path / "criterion.json")
    _valid(doc, "criterion")
    assert doc["verdict"] == "recurrence"
    svg = (tmp_path / "bifurcation.svg").read_text()
    assert 'id="hopf-0"' in svg and 'id="stop-0"' in svg
    assert "verdict" in capsys.readouterr().out


@pytest.mark.parametrize("argv", [
    [],
    ["simulate"],
    ["simulate", "--model", "nosuch"],
    ["simulate", "--model", "gause", "--set", "eps=-1"],
    ["simulate", "--model", "gause", "--set", "nosuch=1"],
    ["simulate", "--model", "gause", "--x0", "1,2,3"],
    ["branch", "--model", "gause", "--range", "0.6:0.1"],
    ["branch", "--model", "gause", "--range", "abc"],
    ["simulate", "--model", "gause", "--config", "missing.json"],
])
def test_usage_errors_exit_2(argv, capsys):
    assert run(argv) == 2
    assert capsys.readouterr().err


def test_unknown_config_key(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"model": "gause", "colour": "red"}))
    assert run(["simulate", "--config", str(p)]) == 2


def test_numerical_failure_exit_3(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"model": "gause", "integrator": {"blowup": 1.0}}))
    assert run(["simulate", "--config", str(p), "--out", str(tmp_path / "o")]) == 3


def test_config_roundtrip_and_precedence(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"model": "gause", "params": {"eps": 0.3}, "tspan": [0, 20], "grid_density": 5}))
    cfg = parse_config(["simulate", "--config", str(p), "--set", "eps=0.05"])
    assert cfg.params["eps"] == 0.05          # command line wins
    assert cfg.tspan == [0, 20]               # file beats defaults
    assert cfg.grid_density == 5
    again = RunConfig.from_json(cfg.to_json())
    assert again == cfg


def test_rerun_from_written_config(tmp_path):
    out = tmp_path / "a"
    assert run(["simulate", "--model", "gause", "--set", "eps=0.1", "--tspan", "0:30", "--out", str(out)]) == 0
    out2 = tmp_path / "b"
    assert run(["simulate", "--config", str(out / "config.json"), "--out", str(out2)]) == 0
    assert (out / "trajectory.csv").read_text() == (out2 / "trajectory.csv").read_text()


def test_output_dir_env_and_default(tmp_path, monkeypatch):
    assert run(["equilibria", "--model", "gause"]) == 0
    assert (tmp_path / DEFAULT_OUT / "equilibria.json").exists()
    monkeypatch.setenv(OUT_ENV, str(tmp_path / "env"))
    assert run(["equilibria", "--model", "gause"]) == 0
    assert (tmp_path / "env" / "equilibria.json").exists()


def test_writes_only_inside_out_dir(tmp_path):
    out = tmp_path / "only"
    before = set(os.listdir(tmp_path))
    assert run(["branch", "--model", "fear", "--out", str(out)]) == 0
    assert set(os.listdir(tmp_path)) - before == {"only"}


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "slowfast", "list-models"], capture_output=True, text=True,
                       cwd=tmp_path, timeout=120)
    assert r.returncode == 0 and "gause" in r.stdout
    r = subprocess.run([sys.executable, "-m", "slowfast", "simulate", "--model", "nosuch"], capture_output=True,
                       text=True, cwd=tmp_path, timeout=120)
    assert r.returncode == 2
