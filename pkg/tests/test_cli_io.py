import json
import subprocess
import sys

import pytest

from twoscale import config as cfg
from twoscale.cli_io import SERIES_HEADER, main, write_outputs


def write_cfg(tmp_path, config, name="c.cfg"):
    path = tmp_path / name
    path.write_text(config.render())
    return path


@pytest.fixture
def short_config(default_config):
    return default_config.with_values("macro", t_end=0.1, n_outputs=2, n_cells=[8, 8]).with_values(
        "geometry", h=0.05).with_values("micro", eps_list=[2, 4], t_end=0.01, dt=2e-3, macro_cells=16)


def test_validate_default(capsys):
    assert main(["validate", "--config", str(cfg.DEFAULT_CONFIG)]) == 0
    assert "A4" in capsys.readouterr().out


def test_cell_writes_effective_csv(tmp_path, short_config):
    path = write_cfg(tmp_path, short_config)
    assert main(["cell", "--config", str(path), "--out", str(tmp_path / "o")]) == 0
    lines = (tmp_path / "o" / "effective.csv").read_bytes().split(b"\n")
    assert lines[0] == b"species,i,j,value"
    assert b"\r" not in (tmp_path / "o" / "effective.csv").read_bytes()
    assert any(l.startswith(b"k1,,,") for l in lines)


def test_run_outputs_and_manifest(tmp_path, short_config):
    path = write_cfg(tmp_path, short_config)
    assert main(["run", "--config", str(path), "--out", str(tmp_path / "o"), "--dt", "0.02"]) == 0
    series = (tmp_path / "o" / "series.csv").read_text().splitlines()
    assert series[0].split(",") == SERIES_HEADER and "S_total" in series[0]
    assert len(series) == 4
    manifest = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert set(manifest["files"]) == {p.name for p in (tmp_path / "o").glob("*.csv")}
    assert manifest["metadata"]["config_sha256"]


def test_identical_runs_identical_digests(tmp_path, short_config):
    path = write_cfg(tmp_path, short_config)
    for out in ("a", "b"):
        assert main(["run", "--config", str(path), "--out", str(tmp_path / out)]) == 0
    files = lambda d: json.loads((tmp_path / d / "manifest.json").read_text())["files"]
    assert files("a") == files("b")


def test_micro_writes_convergence(tmp_path, short_config):
    path = write_cfg(tmp_path, short_config)
    assert main(["micro", "--config", str(path), "--out", str(tmp_path / "m"), "--eps-list", "2,4"]) == 0
    rows = (tmp_path / "m" / "convergence.csv").read_text().splitlines()
    assert rows[0] == "eps,species,error" and len(rows) == 11


def test_exit_codes(tmp_path, short_config, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("[geometry]\nr_solid = 0.1\nr_solid = 0.2\n")
    assert main(["validate", "--config", str(bad)]) == 2
    assert "r_solid" in capsys.readouterr().err
    strict = write_cfg(tmp_path, short_config.with_values("kinetics", a=0.9), "strict.cfg")
    assert main(["run", "--config", str(strict), "--strict-a4", "--out", str(tmp_path / "s")]) == 2
    assert main(["validate", "--config", str(write_cfg(tmp_path, short_config.with_values(
        "geometry", r_solid=-0.1), "neg.cfg"))]) == 2
    coarse = write_cfg(tmp_path, short_config.with_values("geometry", h=0.2), "coarse.cfg")
    assert main(["cell", "--config", str(coarse), "--out", str(tmp_path / "x")]) == 3
    missing = tmp_path / "missing.cfg"
    missing.write_text("[geometry]\n")
    assert main(["run", "--config", str(missing)]) == 2


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "twoscale", "validate", "--config", str(cfg.DEFAULT_CONFIG)],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and "OK" in proc.stdout


def test_write_outputs_rejects_unwritable(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        write_outputs(blocker / "sub")
