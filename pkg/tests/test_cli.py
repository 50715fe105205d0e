import json

import numpy as np

from vbattery import cli
from vbattery.bundle import load_model_bundle, read_matrix_csv
from vbattery.timeseries import read_csv

SHORT = {"horizon_s": 7200.0, "subgroups": 1, "disturbance": {"amplitude_mw": 500.0}}


def write_cfg(tmp_path, **kw):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps({**SHORT, **kw}))
    return str(p)


def test_build_model_deterministic(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["build-model", "--class", "ac", "--seed", "0", "--out", str(a)]) == 0
    assert cli.main(["build-model", "--class", "ac", "--seed", "0", "--out", str(b)]) == 0
    for f in sorted(a.iterdir()):
        assert f.read_bytes() == (b / f.name).read_bytes(), f.name
    m = load_model_bundle(a)
    assert m.d == 40
    S0, rows, cols = read_matrix_csv(a / "S0.csv")
    assert rows == cols and len(rows) == 40
    np.testing.assert_allclose(S0.sum(axis=1), 1.0, atol=1e-12)
    meta = json.loads((a / "model.json").read_text())
    assert meta["seed"] == 0 and "tcl_params" in meta


def test_build_model_d_half(tmp_path):
    out = tmp_path / "m"
    assert cli.main(["build-model", "--class", "ac", "--d-half", "10", "--out", str(out)]) == 0
    assert load_model_bundle(out).d == 20


def test_build_model_bad_inputs(tmp_path):
    assert cli.main(["build-model", "--class", "fridge", "--out", str(tmp_path / "x")]) == cli.EXIT_CONFIG
    bad = tmp_path / "p.json"
    bad.write_text("{not json")
    assert cli.main(["build-model", "--class", "ac", "--params", str(bad), "--out", str(tmp_path / "y")]) == 2


def test_build_model_identification_failure(tmp_path, capsys):
    # far more temperature bins than the sample budget can cover
    out = tmp_path / "fail"
    assert cli.main(["build-model", "--class", "ac", "--d-half", "1000", "--out", str(out)]) == cli.EXIT_IDENT
    assert "visited fewer than" in capsys.readouterr().err


def test_design_filters_and_failure(tmp_path):
    bdir = tmp_path / "ac"
    cli.main(["build-model", "--class", "ac", "--out", str(bdir)])
    assert cli.main(["design-filters", "--bundle", str(bdir)]) == 0
    report = json.loads((bdir / "flatness.json").read_text())
    assert report["band_cyc_per_hr"] == [1.0, 5.0]
    assert report["inverse_mag_dev_db"] < 1.0
    assert (bdir / "filter.json").exists()
    assert cli.main(["design-filters", "--bundle", str(bdir), "--band", "200", "1000",
                     "--out", str(tmp_path / "f")]) == cli.EXIT_DESIGN
    assert cli.main(["design-filters", "--bundle", str(tmp_path / "nothing")]) == cli.EXIT_CONFIG


def test_run_closed_loop_reproducible(tmp_path):
    cfg = write_cfg(tmp_path)
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["run", "--preset", "closed_loop", "--config", cfg, "--seed", "0", "--out", str(a)]) == 0
    assert cli.main(["run", "--preset", "closed_loop", "--config", cfg, "--seed", "0", "--out", str(b)]) == 0
    assert (a / "summary.json").read_bytes() == (b / "summary.json").read_bytes()
    s = json.loads((a / "summary.json").read_text())
    assert s["max_abs_freq_dev_hz"] < s["open_loop_max_abs_freq_dev_hz"]
    f = read_csv(a / "freq_dev.csv")
    assert f.dt == 20.0
    resolved = json.loads((a / "config_resolved.json").read_text())
    assert resolved["preset"] == "closed_loop" and resolved["horizon_s"] == 7200.0
    assert (a / "timeseries.dat").exists()


def test_run_zero_disturbance_rests(tmp_path):
    z = tmp_path / "zero.csv"
    z.write_text("t,value\n0,0\n10000,0\n")
    cfg = write_cfg(tmp_path, disturbance={"csv": str(z)})
    out = tmp_path / "r"
    assert cli.main(["run", "--preset", "closed_loop", "--config", cfg, "--out", str(out)]) == 0
    s = json.loads((out / "summary.json").read_text())
    assert s["max_abs_freq_dev_hz"] == 0.0


def test_run_divergence_exit_code(tmp_path):
    cfg = write_cfg(tmp_path, divergence_hz=1e-4)
    assert cli.main(["run", "--preset", "closed_loop", "--config", cfg, "--out", str(tmp_path / "d")]) == 5


def test_run_config_errors(tmp_path):
    assert cli.main(["run", "--preset", "closed_loop", "--config", str(tmp_path / "missing.json")]) == 2
    assert cli.main(["run", "--config", write_cfg(tmp_path)]) == 2  # no preset anywhere
    assert cli.main(["run", "--preset", "closed_loop", "--config", write_cfg(tmp_path, zoh=2.5),
                     "--out", str(tmp_path / "z")]) == 2
    short = tmp_path / "short.csv"
    short.write_text("t,value\n0,0\n10,0\n")
    cfg = write_cfg(tmp_path, disturbance={"csv": str(short)})
    assert cli.main(["run", "--preset", "closed_loop", "--config", cfg, "--out", str(tmp_path / "s")]) == 2


def test_default_output_root(tmp_path, monkeypatch):
    monkeypatch.setenv("VBATTERY_OUT", str(tmp_path / "root"))
    assert cli.main(["build-model", "--class", "pool"]) == 0
    assert (tmp_path / "root" / "model_pool" / "model.json").exists()


def test_run_other_presets(tmp_path):
    cfg = write_cfg(tmp_path, alphas=[0.0, 1.0], open_loop={"classes": ["ac"], "horizon_s": 7200.0})
    assert cli.main(["run", "--preset", "alpha_sweep", "--config", cfg, "--out", str(tmp_path / "as")]) == 0
    rows = json.loads((tmp_path / "as" / "summary.json").read_text())
    assert (tmp_path / "as" / "alpha_sweep.dat").exists() and rows["preset"] == "alpha_sweep"
    assert cli.main(["run", "--preset", "tv_gain", "--config", cfg, "--out", str(tmp_path / "tv")]) == 0
    assert cli.main(["run", "--preset", "open_loop", "--config", cfg, "--out", str(tmp_path / "ol")]) == 0
    assert (tmp_path / "ol" / "ac_y_dev.csv").exists()
