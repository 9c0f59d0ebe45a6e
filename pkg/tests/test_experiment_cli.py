import csv
import json
import os

import numpy as np
import pytest

from cpanfiber.cli import main
from cpanfiber.errors import ConfigError
from cpanfiber.experiment import (ExperimentConfig, RateCurve, load_config, read_curve_csv,
                                  simulate_bursts)
from cpanfiber.rates import RatePoint

TINY = """\
[physical]
link_length_km = 100

[plan]
channels = -1, 0, 1
subcarriers = 2

[ssfm]
max_nonlinear_phase_per_step = 0.03

[run]
models = memoryless, cpan
powers_dbm = -4, -2
train_bursts = 2
test_bursts = 2
symbols_per_burst = 256
particles = 32
fit_particles = 16
"""


@pytest.fixture(scope="module")
def tiny_ini(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "tiny.ini"
    path.write_text(TINY)
    return path


@pytest.fixture(scope="module")
def sweeps(tiny_ini, tmp_path_factory):
    """The same tiny sweep run serially and on a two-process pool."""
    a = tmp_path_factory.mktemp("a")
    b = tmp_path_factory.mktemp("b")
    assert main(["sweep", "--config", str(tiny_ini), "--out", str(a), "--fdpa"]) == 0
    assert main(["sweep", "--config", str(tiny_ini), "--out", str(b), "--fdpa",
                 "--workers", "2"]) == 0
    return a, b


def test_ini_parsing(tiny_ini):
    cfg = load_config(tiny_ini)
    assert cfg.params.link_length_km == 100.0
    assert cfg.plan.channels == (-1, 0, 1) and cfg.plan.subcarriers == 2
    assert cfg.ssfm.max_nonlinear_phase_per_step == 0.03
    assert cfg.models == ("memoryless", "cpan")
    assert cfg.powers_dbm == (-4.0, -2.0)
    assert cfg.symbols_per_subcarrier == 128


@pytest.mark.parametrize("text", [
    "[run]\nbogus = 1\n",
    "[extra]\nx = 1\n",
    "[run]\ntrain_bursts = many\n",
    "[run]\nfdpa = maybe\n",
    "[run]\npowers_dbm = -2, -4\n",
    "[run]\nmodels = gauss\n",
    "[plan]\nchannels = 1, 2\n",
    "not an ini file",
])
def test_ini_errors(tmp_path, text):
    path = tmp_path / "bad.ini"
    path.write_text(text)
    with pytest.raises(ConfigError):
        load_config(path)


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.ini")


def test_presets():
    desk = load_config(preset="desk")
    assert desk.plan.channels == (-1, 0, 1)
    assert desk.ssfm.max_nonlinear_phase_per_step == 0.03
    assert desk.symbols_per_burst == 2048
    table1 = load_config(preset="table1")
    assert table1 == ExperimentConfig()
    assert table1.ssfm.max_nonlinear_phase_per_step == 0.01
    assert table1.symbols_per_burst == 6912 and table1.plan.num_channels == 5
    with pytest.raises(ConfigError):
        load_config(preset="lab")


def test_config_hash():
    cfg = ExperimentConfig()
    assert cfg.config_hash() == ExperimentConfig().config_hash()
    assert cfg.replace(out_dir="x", workers=4).config_hash() == cfg.config_hash()
    assert cfg.replace(seed=2).config_hash() != cfg.config_hash()
    assert len(cfg.config_hash()) == 16


def test_config_validation():
    for kw in ({"memory": 1}, {"particles": 1}, {"eps": 0.0}, {"test_bursts": 0},
               {"symbols_per_burst": 8}, {"fdpa": True}, {"workers": 0}, {"models": ()}):
        with pytest.raises(ConfigError):
            ExperimentConfig(**kw)


def test_simulate_bursts_cached(tiny_ini, tmp_path):
    cfg = load_config(tiny_ini).replace(out_dir=str(tmp_path), train_bursts=1)
    x, y = simulate_bursts(cfg, -4.0, "train")
    assert x.shape == y.shape == (1, 2, 128)
    files = list((tmp_path / "bursts").glob("train_*.npz"))
    assert len(files) == 1
    stamp = os.stat(files[0]).st_mtime_ns
    x2, y2 = simulate_bursts(cfg, -4.0, "train")
    assert os.stat(files[0]).st_mtime_ns == stamp
    assert np.array_equal(x, x2) and np.array_equal(y, y2)
    # the symbols carry the subcarrier energy
    assert np.mean(np.abs(x) ** 2) == pytest.approx(cfg.plan.replace(power_dbm=-4.0)
                                                    .subcarrier_energy(0, 0), rel=0.3)
    with pytest.raises(ConfigError):
        simulate_bursts(cfg, -4.0, "validate")


def test_sweep_outputs(sweeps):
    a, _ = sweeps
    names = {p.name for p in (a / "curves").glob("*.csv")}
    assert {"cpan.csv", "memoryless.csv", "cpan-fdpa.csv", "cpan_sc1.csv",
            "cpan_sc2.csv"} <= names
    manifest = json.loads((a / "manifest.json").read_text())
    assert set(manifest["fdpa_weights"]) == {"-4.00", "-2.00"}
    for w in manifest["fdpa_weights"].values():
        assert np.mean(w) == pytest.approx(1.0)
    model = json.loads((a / "models" / "cpan_p-4.00_s0.json").read_text())
    assert model["meta"]["config_hash"] == manifest["config_hash"]
    assert model["model_kind"] == "mpn" and len(model["r_theta"]) == 3
    with open(a / "combined.csv") as fh:
        rows = list(csv.reader(r for r in fh if not r.startswith("#")))
    assert rows[0][:2] == ["power_dbm", "awgn"] and len(rows) == 3
    summary = (a / "summary.md").read_text()
    assert manifest["config_hash"] in summary and "| memoryless |" in summary


def test_sweep_is_deterministic(sweeps):
    a, b = sweeps
    for rel in ["combined.csv", "summary.md"] + [f"curves/{p.name}"
                                                  for p in (a / "curves").glob("*.csv")]:
        assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel


def test_curve_csv_round_trip(sweeps):
    a, _ = sweeps
    c = read_curve_csv(a / "curves" / "cpan.csv")
    assert c.label == "cpan" and list(c.powers) == [-4.0, -2.0]
    assert "config_hash" in c.manifest


def test_report_rebuilds_summary(sweeps, tiny_ini):
    a, _ = sweeps
    before = (a / "summary.md").read_text()
    (a / "summary.md").unlink()
    assert main(["report", "--config", str(tiny_ini), "--out", str(a)]) == 0
    assert (a / "summary.md").read_text() == before


def test_rate_curve_helpers():
    pts = [RatePoint(p, r, 0.0, 0.01, "m") for p, r in ((-6, 8.0), (-4, 9.0), (-2, 8.5))]
    c = RateCurve("m", pts[::-1])
    assert list(c.powers) == [-6, -4, -2]
    assert c.peak() == (-4.0, 9.0)
    assert c.power_at_rate(8.5) == pytest.approx(-5.0)
    assert c.power_at_rate(7.0) is None and c.power_at_rate(9.5) is None
    with pytest.raises(ConfigError):
        RateCurve("m", pts + pts[:1])


def test_cli_exit_codes(tmp_path, capsys):
    assert main(["sweep", "--config", str(tmp_path / "missing.ini")]) == 2
    bad = tmp_path / "bad.ini"
    bad.write_text("[run]\nparticles = 1\n")
    assert main(["simulate", "--config", str(bad)]) == 2
    util = tmp_path / "u.csv"
    util.write_text("subcarrier,power_dbm,rate\n1,-10,1\n1,-8,2\n2,-10,1\n2,-8,2\n")
    # 10 dBm per subcarrier is far outside the sampled utilities
    assert main(["fdpa", "--utilities", str(util), "--total-dbm", "13", "--out",
                 str(tmp_path)]) == 3
    assert main(["fdpa", "--utilities", str(tmp_path / "none.csv"), "--total-dbm", "0"]) == 2
    assert main(["fdpa", "--utilities", str(util), "--total-dbm", "-6", "--out",
                 str(tmp_path)]) == 0
    assert (tmp_path / "fdpa.csv").exists()
    with pytest.raises(SystemExit) as exc:
        main(["sweep", "--preset", "lab"])
    assert exc.value.code == 2
    capsys.readouterr()
