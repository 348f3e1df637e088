import json

import numpy as np
import pytest

from dressedspin.cli import bundled_config_names, main
from dressedspin.config import ConfigError, config_from_dict, sweep_values_from_dict
from dressedspin.experiments import SignalTrace
from dressedspin.fitting import damped_sinusoid_model, exp_decay_model, gaussian_dips_model

TINY_CONFIG = {
    "schema_version": 1,
    "experiment": "spin_lock",
    "seed": 77,
    "n_realizations": 2,
    "b0_gauss": 132.0,
    "bath": {"density_ppm": 40.0, "n_spins": 2, "exclusion_nm": 1.5},
    "sweep": {"values": [0.0, 4.0]},
    "rf": "both",
}


def _write_config(tmp_path, doc=TINY_CONFIG, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return path


# ---------------------------------------------------------------------------
# Config loading
# ---------------------------------------------------------------------------

def test_sweep_forms():
    assert sweep_values_from_dict({"values": [3.0, 1.0]}) == (3.0, 1.0)
    lin = sweep_values_from_dict({"start": 0.0, "stop": 1.0, "num": 5})
    assert lin == (0.0, 0.25, 0.5, 0.75, 1.0)
    win = sweep_values_from_dict(
        {"windows": [{"center": 10.0, "halfwidth": 2.0, "step": 1.0}],
         "baseline": {"start": 0.0, "stop": 4.0, "step": 2.0}}
    )
    assert win == (0.0, 2.0, 4.0, 8.0, 9.0, 10.0, 11.0, 12.0)


def test_config_rejects_unknown_keys():
    doc = dict(TINY_CONFIG, banana=1)
    with pytest.raises(ConfigError, match="banana"):
        config_from_dict(doc)
    doc = dict(TINY_CONFIG, bath={"density_ppm": 1.0, "n_spins": 2, "oops": 3})
    with pytest.raises(ConfigError, match="oops"):
        config_from_dict(doc)


def test_config_requires_schema_version():
    doc = dict(TINY_CONFIG)
    doc["schema_version"] = 99
    with pytest.raises(ConfigError, match="unsupported"):
        config_from_dict(doc)


def test_config_maps_fields():
    cfg, rf_mode = config_from_dict(TINY_CONFIG)
    assert cfg.experiment == "spin_lock"
    assert cfg.bath.seed == 77  # master seed flows into the bath spec
    assert rf_mode == "both"


# ---------------------------------------------------------------------------
# sim run
# ---------------------------------------------------------------------------

def test_run_writes_outputs_and_is_reproducible(tmp_path, capsys):
    cfg = _write_config(tmp_path)
    out1 = tmp_path / "out1"
    assert main(["run", str(cfg), "--out", str(out1)]) == 0
    listing = json.loads(capsys.readouterr().out)
    assert "trace_rf_on.csv" in listing["outputs"]
    assert "trace_rf_off.csv" in listing["outputs"]
    assert (out1 / "manifest.json").exists()
    assert (out1 / "plot.svg").exists()

    out2 = tmp_path / "out2"
    assert main(["run", str(cfg), "--out", str(out2)]) == 0
    for name in ("trace_rf_on.csv", "trace_rf_off.csv"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()

    manifest = json.loads((out1 / "manifest.json").read_text())
    import hashlib

    assert manifest["config_hash_sha256"] == hashlib.sha256(cfg.read_bytes()).hexdigest()
    assert manifest["master_seed"] == 77


def test_run_seed_override_changes_output(tmp_path):
    cfg = _write_config(tmp_path)
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert main(["run", str(cfg), "--out", str(out1), "--no-plot"]) == 0
    assert main(["run", str(cfg), "--out", str(out2), "--seed", "78", "--no-plot"]) == 0
    assert (out1 / "trace_rf_on.csv").read_bytes() != (out2 / "trace_rf_on.csv").read_bytes()


def test_run_missing_config_exits_2(tmp_path, capsys):
    assert main(["run", str(tmp_path / "nope.json")]) == 2
    assert "config not found" in capsys.readouterr().err


def test_run_malformed_json_exits_2(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    assert main(["run", str(path)]) == 2
    assert "not valid JSON" in capsys.readouterr().err


def test_run_bad_schema_exits_2(tmp_path, capsys):
    path = _write_config(tmp_path, dict(TINY_CONFIG, experiment="warp_drive"))
    assert main(["run", str(path)]) == 2
    assert "config error" in capsys.readouterr().err


def test_workers_flag_keeps_bytes_identical(tmp_path):
    cfg = _write_config(tmp_path)
    out1, out2 = tmp_path / "w1", tmp_path / "w2"
    assert main(["run", str(cfg), "--out", str(out1), "--no-plot"]) == 0
    assert main(["run", str(cfg), "--out", str(out2), "--no-plot", "--workers", "2"]) == 0
    assert (out1 / "trace_rf_on.csv").read_bytes() == (out2 / "trace_rf_on.csv").read_bytes()


# ---------------------------------------------------------------------------
# sim fit
# ---------------------------------------------------------------------------

def _trace_csv(tmp_path, x, y, name="trace.csv"):
    path = tmp_path / name
    SignalTrace(np.asarray(x), np.asarray(y), np.zeros(len(x))).to_csv(path)
    return path


def test_fit_gauss5(tmp_path, capsys):
    x = np.linspace(220, 500, 600)
    p = [1.0]
    for a, mu, sig in ((0.1, 244.4, 5.0), (0.25, 268.4, 5.0), (0.33, 358.4, 5.0),
                       (0.25, 448.4, 5.0), (0.1, 472.4, 5.0)):
        p += [a, mu, sig]
    csv = _trace_csv(tmp_path, x, gaussian_dips_model(x, np.array(p)))
    assert main(["fit", str(csv), "--model", "gauss5"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["converged"]
    assert report["parameters"]["mu3"]["value"] == pytest.approx(358.4, abs=1e-3)
    assert "fwhm_mhz" in report


def test_fit_exp_and_sinusoid(tmp_path, capsys):
    t = np.linspace(0, 50, 60)
    csv = _trace_csv(tmp_path, t, exp_decay_model(t, np.array([0.5, 12.0, 0.4])))
    assert main(["fit", str(csv), "--model", "exp"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["parameters"]["T"]["value"] == pytest.approx(12.0, rel=1e-4)

    t = np.linspace(0, 0.6, 120)
    y = damped_sinusoid_model(t, np.array([0.2, 0.5, 8.0, 0.0, 0.6]))
    csv = _trace_csv(tmp_path, t, y, "sine.csv")
    assert main(["fit", str(csv), "--model", "sinusoid"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["parameters"]["f"]["value"] == pytest.approx(8.0, rel=1e-4)


def test_fit_flat_exp_exits_5(tmp_path, capsys):
    t = np.linspace(0, 10, 30)
    csv = _trace_csv(tmp_path, t, np.full_like(t, 0.7))
    assert main(["fit", str(csv), "--model", "exp"]) == 5


def test_fit_malformed_csv_exits_2(tmp_path, capsys):
    path = tmp_path / "bad.csv"
    path.write_text("a,b\n1,2\n")
    assert main(["fit", str(path), "--model", "exp"]) == 2
    assert "malformed CSV" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# sim predict / validate
# ---------------------------------------------------------------------------

def test_predict_p1_lines(capsys):
    assert main(["predict", "--what", "p1-lines", "--b0", "128"]) == 0
    out = json.loads(capsys.readouterr().out)
    freqs = [l["frequency_mhz"] for l in out["lines"]]
    assert freqs == pytest.approx([244.4, 268.4, 358.4, 448.4, 472.4])
    weights = [l["weight"] for l in out["lines"]]
    assert sum(weights) == pytest.approx(1.0)


def test_predict_p1_lines_requires_b0(capsys):
    assert main(["predict", "--what", "p1-lines"]) == 2


def test_predict_lac(capsys):
    assert main(["predict", "--what", "lac"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["lac_field_gauss"] == pytest.approx(512.5)


def test_predict_budget_default(capsys):
    assert main(["predict", "--what", "budget"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["cycles"] == 250


def test_validate_bundled_configs(capsys):
    names = bundled_config_names()
    assert {"fig2b_deer_spectrum.json", "fig2c_deer_rabi.json", "fig3b_spinlock.json",
            "fig4a_hh_frequency.json", "fig4b_hh_power.json"} <= set(names)
    for name in names:
        assert main(["validate", name]) == 0
        json.loads(capsys.readouterr().out)


def test_validate_rejects_bad_config(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(dict(TINY_CONFIG, sweep={"values": []})))
    assert main(["validate", str(path)]) == 2


def test_run_simulation_failure_exits_3(tmp_path, capsys, monkeypatch):
    import dressedspin.bath as bath_mod

    monkeypatch.setattr(bath_mod, "_MAX_ATTEMPTS", 1)
    doc = dict(TINY_CONFIG,
               bath={"density_ppm": 500.0, "n_spins": 8, "exclusion_nm": 2.4,
                     "max_radius_nm": 2.5})
    path = _write_config(tmp_path, doc)
    assert main(["run", str(path), "--out", str(tmp_path / "o"), "--no-plot"]) == 3
    assert "simulation failed" in capsys.readouterr().err


def test_run_unwritable_out_exits_4(tmp_path, capsys):
    cfg = _write_config(tmp_path)
    blocker = tmp_path / "blocked"
    blocker.write_text("a file, not a directory")
    assert main(["run", str(cfg), "--out", str(blocker)]) == 4
    assert "output directory" in capsys.readouterr().err
