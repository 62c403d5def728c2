import subprocess
import sys

import pytest

from pfc_iga.cli import main
from pfc_iga.output import read_raw_snapshot, read_timeseries

SMALL = """
epsilon = 0.25
phi_bar = 0.07
L = 12.566370614359172
m = 16
dt = 0.5
T = 2.0
ic = constant_noise(0.05, seed=1)
snapshot_every = 2
formats = vtk_structured, raw_binary
output_dir = {out}
"""


@pytest.fixture
def cfg(tmp_path):
    path = tmp_path / "small.cfg"
    path.write_text(SMALL.format(out=tmp_path / "out"))
    return path


def test_run_writes_outputs(cfg, tmp_path, capsys):
    assert main(["run", str(cfg)]) == 0
    out = tmp_path / "out"
    rows = read_timeseries(out / "timeseries.csv")
    assert [r["step"] for r in rows] == [1, 2, 3, 4]
    assert rows[-1]["t"] == 2.0
    names = sorted(p.name for p in out.iterdir())
    assert names == sorted(
        ["timeseries.csv"] + [f"phi_{n:06d}.{ext}" for n in (0, 2, 4) for ext in ("vtk", "bin")]
    )
    assert read_raw_snapshot(out / "phi_000004.bin").shape == (17, 17)
    assert "completed 4 steps" in capsys.readouterr().out


def test_run_is_deterministic(cfg, tmp_path):
    assert main(["run", str(cfg)]) == 0
    first = (tmp_path / "out" / "timeseries.csv").read_bytes()
    assert main(["run", str(cfg)]) == 0
    assert (tmp_path / "out" / "timeseries.csv").read_bytes() == first


def test_stability(cfg, capsys):
    assert main(["stability", str(cfg), "--dts", "0.1,10", "--steps", "3"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 2 and all(line.endswith("ok") for line in lines)


def test_converge(tmp_path, capsys):
    path = tmp_path / "c.cfg"
    path.write_text(SMALL.format(out=tmp_path).replace("constant_noise(0.05, seed=1)", "single_mode(0.3, k=(1, 0))").replace("T = 2.0", "T = 0.4"))
    assert main(["converge", str(path), "--dts", "0.1,0.05", "--ref-factor", "4"]) == 0
    out = capsys.readouterr().out
    assert "fitted slope" in out
    slope = float(out.strip().split()[-1])
    assert 1.5 < slope < 2.5


def test_dispersion(tmp_path, capsys):
    path = tmp_path / "d.cfg"
    text = SMALL.format(out=tmp_path).replace("phi_bar = 0.07", "phi_bar = 0.0").replace("L = 12.566370614359172", "L = 6.283185307179586")
    path.write_text(text.replace("m = 16", "m = 32").replace("dt = 0.5", "dt = 0.01"))
    assert main(["dispersion", str(path), "--k", "1", "--time", "0.5"]) == 0
    out = capsys.readouterr().out
    assert "analytic omega = 0.25" in out
    ratio = float(out.strip().splitlines()[-1].split()[-1])
    assert ratio == pytest.approx(1.0, abs=0.02)


def test_bad_config(tmp_path, capsys):
    path = tmp_path / "bad.cfg"
    path.write_text(SMALL.format(out=tmp_path).replace("epsilon = 0.25", "epsilon = 1.5"))
    assert main(["run", str(path)]) == 1
    assert "epsilon must lie in (0, 1]" in capsys.readouterr().err


def test_missing_config(tmp_path, capsys):
    assert main(["run", str(tmp_path / "nope.cfg")]) == 1
    assert "cannot read config" in capsys.readouterr().err


def test_usage_errors(cfg):
    for argv in ([], ["launch", str(cfg)], ["converge", str(cfg)], ["stability", str(cfg), "--dts", "0,-1"]):
        with pytest.raises(SystemExit) as info:
            main(argv)
        assert info.value.code == 2


def test_module_entry_point(cfg):
    proc = subprocess.run([sys.executable, "-m", "pfc_iga", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "dispersion" in proc.stdout
