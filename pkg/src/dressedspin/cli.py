"""Command line front end: ``sim run|fit|predict|validate``.

stdout carries machine-readable results (JSON or CSV paths), stderr carries
diagnostics.  Exit codes: 0 success, 2 config/input parse error,
3 simulation failure, 4 I/O error, 5 fit non-convergence.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, config_from_dict, expand_runs
from .experiments import SignalTrace, SimulationError, cooling_budget, ensemble_average
from .fitting import FitResult, fit_damped_sinusoid, fit_exp_decay, fit_gaussians, fwhm
from .models import NVParams, P1Params, lac_field, p1_transition_frequencies
from .svg import write_line_chart

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SIMULATION = 3
EXIT_IO = 4
EXIT_NONCONVERGED = 5


def _err(msg: str):
    print(f"sim: {msg}", file=sys.stderr)


def _resolve_config_path(name: str) -> Path | None:
    p = Path(name)
    if p.exists():
        return p
    if not name.endswith(".json"):
        name = name + ".json"
    try:
        bundle = resources.files("dressedspin").joinpath("configs", name)
        if bundle.is_file():
            return Path(str(bundle))
    except (FileNotFoundError, ModuleNotFoundError):
        pass
    return None


def bundled_config_names() -> list[str]:
    try:
        root = resources.files("dressedspin").joinpath("configs")
        return sorted(p.name for p in root.iterdir() if p.name.endswith(".json"))
    except FileNotFoundError:
        return []


def cmd_run(args) -> int:
    path = _resolve_config_path(args.config)
    if path is None:
        _err(f"config not found: {args.config!r} (bundled: {', '.join(bundled_config_names())})")
        return EXIT_CONFIG
    try:
        raw = path.read_bytes()
    except OSError as exc:
        _err(f"cannot read config: {exc}")
        return EXIT_IO
    config_hash = hashlib.sha256(raw).hexdigest()
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        _err(f"config is not valid JSON: line {exc.lineno}, column {exc.colno}: {exc.msg}")
        return EXIT_CONFIG
    try:
        config, rf_mode = config_from_dict(doc)
    except ConfigError as exc:
        _err(f"config error: {exc}")
        return EXIT_CONFIG

    if args.seed is not None:
        from dataclasses import replace

        config = replace(config, seed=args.seed)

    out_dir = Path(args.out)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        _err(f"cannot create output directory: {exc}")
        return EXIT_IO

    started = datetime.now(timezone.utc)
    t0 = time.perf_counter()
    outputs: list[str] = []
    series = []
    try:
        for suffix, cfg in expand_runs(config, rf_mode):
            trace = ensemble_average(cfg, workers=args.workers)
            stem = f"trace_{suffix}" if suffix else "trace"
            csv_path = out_dir / f"{stem}.csv"
            trace.to_csv(csv_path)
            outputs.append(csv_path.name)
            series.append((suffix or config.experiment,
                           list(trace.sweep_values), list(trace.mean)))
    except SimulationError as exc:
        _err(f"simulation failed: {exc}")
        return EXIT_SIMULATION
    except OSError as exc:
        _err(f"cannot write outputs: {exc}")
        return EXIT_IO
    wall = time.perf_counter() - t0

    if not args.no_plot:
        try:
            plot_path = out_dir / "plot.svg"
            write_line_chart(
                plot_path, series, title=config.experiment,
                xlabel=_sweep_label(config.experiment), ylabel="signal",
            )
            outputs.append(plot_path.name)
        except OSError as exc:
            _err(f"cannot write plot: {exc}")
            return EXIT_IO

    manifest = {
        "schema_version": 1,
        "tool": "dressedspin",
        "tool_version": __version__,
        "versions": {"python": sys.version.split()[0], "numpy": np.__version__},
        "experiment": config.experiment,
        "config_file": str(path),
        "config_hash_sha256": config_hash,
        "master_seed": config.seed,
        "n_realizations": config.n_realizations,
        "workers": args.workers,
        "started_at": started.isoformat(),
        "finished_at": datetime.now(timezone.utc).isoformat(),
        "wall_time_s": wall,
        "outputs": outputs,
    }
    try:
        (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    except OSError as exc:
        _err(f"cannot write manifest: {exc}")
        return EXIT_IO
    print(json.dumps({"out_dir": str(out_dir), "outputs": outputs + ["manifest.json"]}))
    return EXIT_OK


def _sweep_label(experiment: str) -> str:
    return {
        "deer_spectrum": "RF frequency (MHz)",
        "deer_rabi": "RF pulse width (ns)",
        "spin_lock": "lock duration (us)",
        "hh_frequency_sweep": "RF frequency (MHz)",
        "hh_power_sweep": "P1 Rabi amplitude (MHz)",
    }.get(experiment, "sweep value")


def _fit_for_model(model: str, x, y, components: int) -> FitResult:
    if model == "gauss5":
        return fit_gaussians(x, y, components)
    if model == "exp":
        return fit_exp_decay(x, y)
    if model == "sinusoid":
        return fit_damped_sinusoid(x, y)
    raise ValueError(f"unknown model {model!r}")


def cmd_fit(args) -> int:
    try:
        trace = SignalTrace.from_csv(args.csv)
    except OSError as exc:
        _err(f"cannot read CSV: {exc}")
        return EXIT_IO
    except ValueError as exc:
        _err(f"malformed CSV: {exc}")
        return EXIT_CONFIG
    try:
        fit = _fit_for_model(args.model, trace.sweep_values, trace.mean, args.components)
    except ValueError as exc:
        _err(str(exc))
        return EXIT_CONFIG
    report = fit.to_dict()
    if fit.converged and fit.model == "gaussian-dips":
        widths = {}
        for i in range(args.components):
            w, werr = fwhm(fit, i)
            widths[f"fwhm{i + 1}"] = {"value": w, "uncertainty": werr}
        report["fwhm_mhz"] = widths
    print(json.dumps(report, indent=2))
    if not fit.converged or fit.degenerate:
        _err("fit did not converge to a usable result")
        return EXIT_NONCONVERGED
    return EXIT_OK


def cmd_predict(args) -> int:
    nv = NVParams(zfs_mhz=args.zfs, gamma_mhz_per_g=args.gamma_nv)
    p1 = P1Params(gamma_mhz_per_g=args.gamma_p1)
    if args.what == "p1-lines":
        if args.b0 is None or args.b0 <= 0:
            _err("--b0 (gauss, > 0) is required for p1-lines")
            return EXIT_CONFIG
        lines = p1_transition_frequencies(p1, args.b0)
        print(json.dumps({
            "b0_gauss": args.b0,
            "lines": [{"frequency_mhz": f, "weight": w} for f, w in lines],
        }, indent=2))
        return EXIT_OK
    if args.what == "lac":
        print(json.dumps({"lac_field_gauss": lac_field(nv, p1)}))
        return EXIT_OK
    if args.what == "budget":
        try:
            cycles = cooling_budget(args.t1_us, args.transfer_us, args.init_us)
        except ValueError as exc:
            _err(str(exc))
            return EXIT_CONFIG
        print(json.dumps({
            "t1_p1_us": args.t1_us,
            "t_transfer_us": args.transfer_us,
            "t_init_us": args.init_us,
            "cycles": cycles,
        }))
        return EXIT_OK
    _err(f"unknown prediction {args.what!r}")
    return EXIT_CONFIG


def cmd_validate(args) -> int:
    path = _resolve_config_path(args.config)
    if path is None:
        _err(f"config not found: {args.config!r}")
        return EXIT_CONFIG
    try:
        doc = json.loads(path.read_bytes())
    except OSError as exc:
        _err(f"cannot read config: {exc}")
        return EXIT_IO
    except json.JSONDecodeError as exc:
        _err(f"config is not valid JSON: line {exc.lineno}, column {exc.colno}: {exc.msg}")
        return EXIT_CONFIG
    try:
        config, rf_mode = config_from_dict(doc)
    except ConfigError as exc:
        _err(f"config error: {exc}")
        return EXIT_CONFIG
    print(json.dumps({
        "valid": True,
        "experiment": config.experiment,
        "n_realizations": config.n_realizations,
        "sweep_points": len(config.sweep_values),
        "runs": [name or "trace" for name, _ in expand_runs(config, rf_mode)],
    }))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sim",
        description="Dressed-state NV-P1 polarization transfer simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a configured experiment")
    p_run.add_argument("config", help="config path or bundled config name")
    p_run.add_argument("--seed", type=int, default=None, help="override the master seed")
    p_run.add_argument("--out", default="out", help="output directory")
    p_run.add_argument("--workers", type=int, default=1, help="parallel workers")
    p_run.add_argument("--no-plot", action="store_true", help="skip the SVG plot")
    p_run.set_defaults(fn=cmd_run)

    p_fit = sub.add_parser("fit", help="fit a trace CSV")
    p_fit.add_argument("csv")
    p_fit.add_argument("--model", required=True, choices=("gauss5", "exp", "sinusoid"))
    p_fit.add_argument("--components", type=int, default=5,
                       help="number of Gaussian components (gauss5 model)")
    p_fit.set_defaults(fn=cmd_fit)

    p_pred = sub.add_parser("predict", help="closed-form calculators")
    p_pred.add_argument("--what", required=True, choices=("p1-lines", "lac", "budget"))
    p_pred.add_argument("--b0", type=float, default=None, help="static field (gauss)")
    p_pred.add_argument("--zfs", type=float, default=2870.0)
    p_pred.add_argument("--gamma-nv", type=float, default=2.8)
    p_pred.add_argument("--gamma-p1", type=float, default=2.8)
    p_pred.add_argument("--t1-us", dest="t1_us", type=float, default=1000.0)
    p_pred.add_argument("--transfer-us", dest="transfer_us", type=float, default=2.0)
    p_pred.add_argument("--init-us", dest="init_us", type=float, default=2.0)
    p_pred.set_defaults(fn=cmd_predict)

    p_val = sub.add_parser("validate", help="check a config document")
    p_val.add_argument("config")
    p_val.set_defaults(fn=cmd_validate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
