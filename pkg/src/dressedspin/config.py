"""Versioned JSON experiment configs and their validation."""

from __future__ import annotations

import math

import numpy as np

from .bath import BathSpec
from .experiments import EXPERIMENTS, ExperimentConfig, ExtraSpecies
from .models import NVParams, P1Params

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Config document is malformed; message carries the offending key."""


def _require(d: dict, key: str, types, path: str):
    if key not in d:
        raise ConfigError(f"{path}{key}: missing required key")
    v = d[key]
    if not isinstance(v, types):
        raise ConfigError(f"{path}{key}: expected {types}, got {type(v).__name__}")
    return v


def _optional(d: dict, key: str, types, default, path: str):
    if key not in d or d[key] is None:
        return default
    v = d[key]
    if not isinstance(v, types):
        raise ConfigError(f"{path}{key}: expected {types}, got {type(v).__name__}")
    return v


def _check_known(d: dict, known: set[str], path: str):
    for key in d:
        if key not in known:
            raise ConfigError(f"{path}{key}: unknown key")


_NUM = (int, float)


def sweep_values_from_dict(d: dict) -> tuple[float, ...]:
    """Sweep axis: explicit values, a linear range, or windows plus baseline."""
    _check_known(d, {"values", "start", "stop", "num", "windows", "baseline"}, "sweep.")
    if "values" in d:
        vals = _require(d, "values", list, "sweep.")
        if not vals or not all(isinstance(v, _NUM) and math.isfinite(v) for v in vals):
            raise ConfigError("sweep.values: need a non-empty list of finite numbers")
        return tuple(float(v) for v in vals)
    if "windows" in d:
        out: set[float] = set()
        for i, w in enumerate(_require(d, "windows", list, "sweep.")):
            if not isinstance(w, dict):
                raise ConfigError(f"sweep.windows[{i}]: expected an object")
            _check_known(w, {"center", "halfwidth", "step"}, f"sweep.windows[{i}].")
            c = _require(w, "center", _NUM, f"sweep.windows[{i}].")
            h = _require(w, "halfwidth", _NUM, f"sweep.windows[{i}].")
            s = _require(w, "step", _NUM, f"sweep.windows[{i}].")
            if h <= 0 or s <= 0:
                raise ConfigError(f"sweep.windows[{i}]: halfwidth and step must be > 0")
            n = int(round(2 * h / s))
            out.update(round(c - h + k * s, 9) for k in range(n + 1))
        if "baseline" in d:
            b = d["baseline"]
            _check_known(b, {"start", "stop", "step"}, "sweep.baseline.")
            start = _require(b, "start", _NUM, "sweep.baseline.")
            stop = _require(b, "stop", _NUM, "sweep.baseline.")
            step = _require(b, "step", _NUM, "sweep.baseline.")
            if step <= 0 or stop <= start:
                raise ConfigError("sweep.baseline: need stop > start and step > 0")
            k = start
            while k <= stop + 1e-9:
                out.add(round(k, 9))
                k += step
        return tuple(sorted(out))
    start = _require(d, "start", _NUM, "sweep.")
    stop = _require(d, "stop", _NUM, "sweep.")
    num = _require(d, "num", int, "sweep.")
    if num < 1:
        raise ConfigError("sweep.num: must be >= 1")
    return tuple(float(v) for v in np.linspace(start, stop, num))


def config_from_dict(doc: dict) -> tuple[ExperimentConfig, str]:
    """Parse a config document; returns (config, rf_mode).

    ``rf_mode`` is "on", "off" or "both" and only matters for spin_lock
    runs ("both" expands to two traces).
    """
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    version = _require(doc, "schema_version", int, "")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"schema_version: unsupported version {version}")
    _check_known(
        doc,
        {"schema_version", "experiment", "seed", "n_realizations", "b0_gauss",
         "nv", "p1", "bath", "drive", "sequence", "sweep", "rf", "t1_rho_us",
         "readout", "extra_species", "comment"},
        "",
    )
    experiment = _require(doc, "experiment", str, "")
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"experiment: unknown experiment {experiment!r}")
    seed = _require(doc, "seed", int, "")
    n_realizations = _require(doc, "n_realizations", int, "")
    b0 = float(_require(doc, "b0_gauss", _NUM, ""))

    nv_d = _optional(doc, "nv", dict, {}, "")
    _check_known(nv_d, {"zfs_mhz", "gamma_mhz_per_g"}, "nv.")
    nv = NVParams(
        zfs_mhz=float(_optional(nv_d, "zfs_mhz", _NUM, 2870.0, "nv.")),
        gamma_mhz_per_g=float(_optional(nv_d, "gamma_mhz_per_g", _NUM, 2.8, "nv.")),
    )

    p1_d = _optional(doc, "p1", dict, {}, "")
    _check_known(p1_d, {"gamma_mhz_per_g", "hyperfine_on_axis_mhz", "hyperfine_off_axis_mhz"}, "p1.")
    p1 = P1Params(
        gamma_mhz_per_g=float(_optional(p1_d, "gamma_mhz_per_g", _NUM, 2.8, "p1.")),
        hyperfine_on_axis_mhz=float(
            _optional(p1_d, "hyperfine_on_axis_mhz", _NUM, 114.0, "p1.")
        ),
        hyperfine_off_axis_mhz=float(
            _optional(p1_d, "hyperfine_off_axis_mhz", _NUM, 90.0, "p1.")
        ),
    )

    bath_d = _require(doc, "bath", dict, "")
    _check_known(
        bath_d,
        {"density_ppm", "n_spins", "exclusion_nm", "max_radius_nm", "t2_star_ns",
         "detuning_model", "include_p1_p1"},
        "bath.",
    )
    try:
        bath = BathSpec(
            density_ppm=float(_require(bath_d, "density_ppm", _NUM, "bath.")),
            n_spins=_require(bath_d, "n_spins", int, "bath."),
            exclusion_nm=float(_optional(bath_d, "exclusion_nm", _NUM, 1.0, "bath.")),
            max_radius_nm=_optional(bath_d, "max_radius_nm", _NUM, None, "bath."),
            seed=seed,
            t2_star_ns=float(_optional(bath_d, "t2_star_ns", _NUM, 110.0, "bath.")),
            detuning_model=_optional(bath_d, "detuning_model", str, "gaussian-static", "bath."),
            include_p1_p1=_optional(bath_d, "include_p1_p1", bool, True, "bath."),
        )
    except ValueError as exc:
        raise ConfigError(f"bath: {exc}") from None

    drive_d = _optional(doc, "drive", dict, {}, "")
    _check_known(drive_d, {"omega_nv_mhz", "omega_p1_mhz", "rf_width_ns", "rf_frequency_mhz"}, "drive.")
    seq_d = _optional(doc, "sequence", dict, {}, "")
    _check_known(seq_d, {"tau_ns", "lock_us", "pump_us"}, "sequence.")
    readout_d = _optional(doc, "readout", dict, {}, "")
    _check_known(readout_d, {"a", "b", "noise_snr"}, "readout.")

    rf_mode = _optional(doc, "rf", str, "on", "")
    if rf_mode not in ("on", "off", "both"):
        raise ConfigError(f"rf: expected on|off|both, got {rf_mode!r}")

    extra = None
    if doc.get("extra_species") is not None:
        xs = _require(doc, "extra_species", dict, "")
        _check_known(xs, {"frequency_mhz", "coupling_mhz"}, "extra_species.")
        extra = ExtraSpecies(
            frequency_mhz=float(_require(xs, "frequency_mhz", _NUM, "extra_species.")),
            coupling_mhz=float(_require(xs, "coupling_mhz", _NUM, "extra_species.")),
        )

    sweep = sweep_values_from_dict(_require(doc, "sweep", dict, ""))
    try:
        config = ExperimentConfig(
            experiment=experiment,
            b0_gauss=b0,
            seed=seed,
            n_realizations=n_realizations,
            sweep_values=sweep,
            nv=nv,
            p1=p1,
            bath=bath,
            omega_nv_mhz=float(_optional(drive_d, "omega_nv_mhz", _NUM, 8.0, "drive.")),
            omega_p1_mhz=_optional(drive_d, "omega_p1_mhz", _NUM, None, "drive."),
            rf_width_ns=float(_optional(drive_d, "rf_width_ns", _NUM, 65.0, "drive.")),
            rf_frequency_mhz=_optional(drive_d, "rf_frequency_mhz", _NUM, None, "drive."),
            tau_ns=float(_optional(seq_d, "tau_ns", _NUM, 350.0, "sequence.")),
            lock_us=float(_optional(seq_d, "lock_us", _NUM, 50.0, "sequence.")),
            pump_us=float(_optional(seq_d, "pump_us", _NUM, 2.0, "sequence.")),
            rf_on=rf_mode != "off",
            t1_rho_us=_optional(doc, "t1_rho_us", _NUM, None, ""),
            readout_a=float(_optional(readout_d, "a", _NUM, 0.0, "readout.")),
            readout_b=float(_optional(readout_d, "b", _NUM, 1.0, "readout.")),
            noise_snr=_optional(readout_d, "noise_snr", _NUM, None, "readout."),
            extra_species=extra,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return config, rf_mode


def expand_runs(config: ExperimentConfig, rf_mode: str):
    """Expand one config into its named runs (rf "both" yields two traces)."""
    from dataclasses import replace

    if config.experiment == "spin_lock" and rf_mode == "both":
        return [
            ("rf_on", replace(config, rf_on=True)),
            ("rf_off", replace(config, rf_on=False)),
        ]
    return [("", config)]
