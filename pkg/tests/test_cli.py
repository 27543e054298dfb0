import argparse
import csv
import json
import shutil
import subprocess

import numpy as np
import pytest

from misoloc.cli import main, parse_sweep
from misoloc.scenario import ScenarioConfig


def test_parse_sweep():
    assert parse_sweep("snr_db=-10:5:20") == ("snr_db", [-10, -5, 0, 5, 10, 15, 20])
    assert parse_sweep("mu=0.1:0.3:1.0")[1] == pytest.approx([0.1, 0.4, 0.7, 1.0])
    for bad in ("snr_db", "x=1:1:2", "snr_db=1:0:2", "snr_db=3:1:2"):
        with pytest.raises(argparse.ArgumentTypeError):
            parse_sweep(bad)


def test_pipeline_noiseless(tmp_path):
    obs, est, loc = tmp_path / "obs.json", tmp_path / "est.json", tmp_path / "loc.json"
    assert main(["simulate", "--noiseless", "--seed", "2", "--out", str(obs)]) == 0
    d = json.loads(obs.read_text())
    assert "truth" in d
    assert main(["estimate", "--obs", str(obs), "--out", str(est)]) == 0
    e = json.loads(est.read_text())
    assert np.allclose(e["theta_rad"], d["truth"]["theta_rad"], atol=1e-8)
    assert main(["locmap", "--estimate", str(est), "--out", str(loc)]) == 0
    r = json.loads(loc.read_text())
    assert r["frame"] == "world"
    assert np.allclose(r["position"], [10, 4], atol=1e-6)
    assert np.allclose(r["scatterers"][0], [8, 13], atol=1e-6)
    csv_out = tmp_path / "loc.csv"
    assert main(["locmap", "--estimate", str(est), "--out", str(csv_out)]) == 0
    rows = list(csv.reader(open(csv_out)))
    assert rows[0] == ["kind", "index", "x", "y", "valid"] and rows[1][0] == "ms"


def test_simulate_csv(tmp_path):
    out = tmp_path / "y.csv"
    assert main(["simulate", "--out", str(out)]) == 0
    assert len(out.read_text().strip().splitlines()) > 1


def test_crlb_with_config(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    ScenarioConfig(snr_db=10.0).to_json(cfg)
    assert main(["crlb", "--config", str(cfg)]) == 0
    out = json.loads(capsys.readouterr().out)
    assert 0 < out["peb_m"] < 0.1
    assert len(out["map_bounds_m"]) == 1 and len(out["crlb_channel"]) == 2


def test_sweep_bounds_only(tmp_path, capsys):
    assert main(["sweep", "--sweep", "snr_db=0:10:10", "--method", "bounds-only"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "value,method,quantity,rmse,bound,trials_ok,trials_failed"
    assert len(lines) == 1 + 2 * 6
    out = tmp_path / "s.csv"
    assert main(["sweep", "--sweep", "snr_db=20:1:20", "--trials", "2", "--method", "joint,sp-grid",
                 "--out", str(out)]) == 0
    rows = list(csv.DictReader(open(out)))
    assert {r["method"] for r in rows} == {"joint", "sp-grid"}


def test_errors(tmp_path, capsys):
    assert main(["estimate", "--obs", str(tmp_path / "missing.json")]) == 2
    assert "error" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        main(["sweep", "--sweep", "snr_db=0:1:1", "--method", "magic"])
    with pytest.raises(SystemExit):
        main(["estimate", "--obs", "x", "--grid", "8by8"])


@pytest.mark.skipif(shutil.which("miso-locmap") is None, reason="console script not installed")
def test_console_script():
    r = subprocess.run(["miso-locmap", "--help"], capture_output=True, text=True)
    assert r.returncode == 0
    for cmd in ("simulate", "crlb", "estimate", "locmap", "sweep"):
        assert cmd in r.stdout
