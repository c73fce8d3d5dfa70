"""Command-line front end.

Subcommands: budget, sweep, simulate, fit, calibrate. Exit codes: 0 success,
2 configuration error, 3 no optical cooling, 4 unstable or unthermalised
simulation, 1 any other library error. Errors are printed to stderr as one
JSON object.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from . import __version__
from .config import PRESETS, SWEEP_UNITS, ExperimentConfig
from .dynamics import read_trajectory, simulate, write_trajectory
from .errors import (
    ConfigError,
    DivergentOptimum,
    NoCooling,
    NotThermalized,
    SidebandError,
    Unstable,
)
from .physics import intracavity_power, temperature_from_phonons
from .spectral import (
    DEFAULT_HALF_WIDTH,
    DEFAULT_REPEATS,
    DEFAULT_SEGMENT,
    averaged_psd,
    calibrate,
    measure_temperature,
    temperature_from_variance,
    write_spectrum,
)
from .sweeps import FIGURES, SweepSpec, figure_spec, fit_phase_noise, sweep

EXIT_CONFIG = 2
EXIT_NO_COOLING = 3
EXIT_SIMULATION = 4


# --- argument parsing ---------------------------------------------------------


def _common(p):
    g = p.add_argument_group("configuration")
    g.add_argument("--preset", default="paper-defaults", choices=sorted(PRESETS))
    g.add_argument("--config", help="YAML file overriding the preset")
    g.add_argument("--pressure-mbar", type=float)
    g.add_argument("--s-phi", type=float, metavar="X", help="phase noise S_phi = 2 pi X Hz^2/Hz")
    g.add_argument("--ncav", help="intracavity photon number or 'opt'")
    g.add_argument("--intracavity-power-mw", type=float)
    g.add_argument("--input-power-mw", type=float)
    g.add_argument("--detuning-khz", type=float)
    g.add_argument("--position-nm", type=float)
    g.add_argument("--no-trap", action="store_true", help="drop the tweezer recoil channel")
    g.add_argument("--position-average", action="store_true", help="average coupling over the thermal spread")
    g.add_argument("--seed", type=int)
    g.add_argument("--output-dir", default=".")
    g.add_argument("--format", choices=("csv", "json"), default="csv")
    g.add_argument("--dump-config", metavar="PATH", help="write the resolved YAML config")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sidebandsim", description="Cavity sideband cooling of a levitated particle.")
    parser.add_argument("--version", action="version", version=f"sidebandsim {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("budget", help="phonon budget at one operating point")
    _common(p)
    p.add_argument("--json", action="store_true", help="print only the JSON report")

    p = sub.add_parser("sweep", help="one-dimensional parameter scan")
    _common(p)
    p.add_argument("--figure", choices=FIGURES)
    p.add_argument("--variable", choices=sorted(SWEEP_UNITS))
    p.add_argument("--start", type=float, help="first grid value in lab units")
    p.add_argument("--stop", type=float, help="last grid value in lab units")
    p.add_argument("--points", type=int)
    p.add_argument("--spacing", choices=("lin", "log"))
    p.add_argument("--mode", choices=("analytic", "stochastic"))
    p.add_argument("-o", "--output", help="output file (default: <output-dir>/sweep_<name>.<format>)")

    p = sub.add_parser("simulate", help="time-domain simulation and PSD thermometry")
    _common(p)
    p.add_argument("--duration-s", type=float)
    p.add_argument("--trajectory-format", choices=("binary", "csv"), default="binary")

    p = sub.add_parser("fit", help="fit S_phi to (n_cav, T, stderr) data")
    _common(p)
    p.add_argument("data", help="CSV with columns n_cav,t_com_k,stderr_k")

    p = sub.add_parser("calibrate", help="metres per detector unit from a reference trace")
    _common(p)
    p.add_argument("trajectory", help="raw trace recorded at the configured reference pressure")
    p.add_argument("--half-width-khz", type=float, default=DEFAULT_HALF_WIDTH / 1e3)
    p.add_argument("--no-lineshape-correction", action="store_true")
    return parser


def _overrides(args) -> dict:
    o = {"environment": {}, "noise": {}, "drive": {}, "trap": {}, "sim": {}, "sweep": {}}
    if args.pressure_mbar is not None:
        o["environment"]["pressure_mbar"] = args.pressure_mbar
    if args.s_phi is not None:
        o["noise"]["s_phi_hz2_per_hz"] = args.s_phi
    photon = {
        "n_cav": _parse_ncav(args.ncav),
        "intracavity_power_mw": args.intracavity_power_mw,
        "input_power_mw": args.input_power_mw,
    }
    chosen = {k: v for k, v in photon.items() if v is not None}
    if len(chosen) > 1:
        raise ConfigError("give at most one of --ncav, --intracavity-power-mw, --input-power-mw")
    if chosen:
        o["drive"].update({k: None for k in photon})
        o["drive"].update(chosen)
    if args.detuning_khz is not None:
        o["drive"]["detuning_khz"] = args.detuning_khz
    if args.position_nm is not None:
        o["drive"]["position_nm"] = args.position_nm
    if args.position_average:
        o["drive"]["position_average"] = True
    if args.no_trap:
        o["trap"]["include_recoil"] = False
    if args.seed is not None:
        o["sim"]["seed"] = args.seed
        o["sweep"]["seed"] = args.seed
    if getattr(args, "duration_s", None) is not None:
        o["sim"]["duration_s"] = args.duration_s
    for key in ("variable", "start", "stop", "points", "spacing", "mode"):
        val = getattr(args, key, None)
        if val is not None:
            o["sweep"][key] = val
    return o


def _parse_ncav(value):
    if value is None or value == "opt":
        return value
    try:
        return float(value)
    except ValueError:
        raise ConfigError(f"--ncav must be a number or 'opt', got {value!r}") from None


def load_config(args) -> ExperimentConfig:
    if args.config:
        cfg = ExperimentConfig.load(args.config, args.preset)
    else:
        cfg = ExperimentConfig.from_dict({}, args.preset)
    return cfg.updated(_overrides(args))


# --- output helpers -----------------------------------------------------------


def _provenance(cfg: ExperimentConfig) -> dict:
    return {"tool": "sidebandsim", "version": __version__, "config_sha256": cfg.digest()}


def _write_json(path, doc):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")
        fh.flush()
        os.fsync(fh.fileno())


def _jsonable(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serialisable: {type(obj)!r}")


def _out(args, name):
    os.makedirs(args.output_dir, exist_ok=True)
    return os.path.join(args.output_dir, name)


# --- subcommands --------------------------------------------------------------


def budget_report(cfg: ExperimentConfig) -> dict:
    """Budget at the configured point plus the analytic optimum.

    The approximated budget is used when valid, else the exact-ratio form.
    """
    system = cfg.system()
    try:
        b = system.budget()
    except NoCooling:
        b = system.budget(exact=True)
    report = {"budget": b.as_dict(), "intracavity_power_w": intracavity_power(system.cavity, b.n_cav)}
    try:
        n_opt = system.optimal_photon_number()
        n_fmin = system.min_phonon_occupation()
        report["optimum"] = {
            "n_cav_opt": n_opt,
            "intracavity_power_opt_w": intracavity_power(system.cavity, n_opt),
            "n_f_min": n_fmin,
            "t_com_min": temperature_from_phonons(n_fmin, system.omega_m),
        }
    except (DivergentOptimum, NoCooling) as exc:
        report["optimum"] = {"unavailable": str(exc)}
    report.update(_provenance(cfg))
    report["config"] = cfg.data
    return report


def format_table(report) -> str:
    b = report["budget"]
    lines = [f"{'channel':<12}{'phonons':>16}"]
    for key in ("n_min", "n_m", "n_rad_cav", "n_phase", "n_rad_t"):
        lines.append(f"{key:<12}{b[key]:>16.6g}")
    lines.append(f"{'n_f':<12}{b['n_f']:>16.6g}")
    lines.append(f"{'T_com [K]':<12}{b['t_com']:>16.6g}")
    lines.append(f"{'n_cav':<12}{b['n_cav']:>16.6g}")
    lines.append(f"{'form':<12}{'exact ratio' if b['exact'] else 'approximated':>16}")
    opt = report["optimum"]
    if "n_cav_opt" in opt:
        lines.append(f"{'n_cav,opt':<12}{opt['n_cav_opt']:>16.6g}")
        lines.append(f"{'n_f,min':<12}{opt['n_f_min']:>16.6g}")
        lines.append(f"{'T_min [K]':<12}{opt['t_com_min']:>16.6g}")
    else:
        lines.append(f"optimum: {opt['unavailable']}")
    return "\n".join(lines)


def cmd_budget(args, cfg) -> int:
    report = budget_report(cfg)
    if args.json:
        print(json.dumps(report, indent=2, sort_keys=True))
    else:
        print(format_table(report))
        print(json.dumps(report["budget"], sort_keys=True))
    if args.output_dir != ".":
        _write_json(_out(args, "budget.json"), report)
    return 0


def _sweep_spec(args, cfg) -> SweepSpec:
    system = cfg.system()
    sw = cfg.data["sweep"]
    if args.figure:
        return figure_spec(args.figure, system, mode=sw["mode"], seed=sw["seed"])
    return SweepSpec(
        variable=sw["variable"],
        grid=cfg.sweep_grid(system),
        fixed=system,
        noise_band=(system.noise.band_low_mult, system.noise.band_high_mult),
        mode=sw["mode"],
        sim=cfg.sim_config(),
        seed=sw["seed"],
        label=sw["variable"],
    )


def cmd_sweep(args, cfg) -> int:
    spec = _sweep_spec(args, cfg)
    result = sweep(spec)
    path = args.output or _out(args, f"sweep_{spec.label}.{args.format}")
    fmt = "json" if path.endswith(".json") else "csv" if path.endswith(".csv") else args.format
    extra = _provenance(cfg)
    extra["config"] = cfg.data
    if fmt == "json":
        result.write_json(path, extra)
    else:
        result.write_csv(path, extra)
    print(json.dumps({"output": path, "rows": len(result.rows)}))
    return 0


def cmd_simulate(args, cfg) -> int:
    system = cfg.system()
    sim = cfg.sim_config()
    traj = simulate(system, sim)
    gamma_tot = traj.metadata["gamma_tot"]
    if gamma_tot * sim.duration < 5:
        raise NotThermalized(f"duration x Gamma_tot = {gamma_tot * sim.duration:.3g} < 5; simulate longer")
    prov = _provenance(cfg)
    n_segments = int(sim.duration / (DEFAULT_SEGMENT * DEFAULT_REPEATS))
    roi = measure_temperature(traj, system.particle, system.omega_m, segment_duration=DEFAULT_SEGMENT, n_segments=n_segments)
    spec = averaged_psd(traj, DEFAULT_SEGMENT, DEFAULT_REPEATS * n_segments)
    try:
        analytic = system.budget(exact=True).t_com
    except NoCooling:
        analytic = system.environment.temperature
    se = roi.stderr / math.sqrt(DEFAULT_REPEATS)
    summary = {
        "t_com_roi_k": roi.t_com,
        "t_com_roi_stderr_k": se,
        "t_com_full_band_k": temperature_from_variance(spec.total_power(), system.particle, system.omega_m),
        "t_com_analytic_k": analytic,
        "ratio_roi_to_analytic": roi.t_com / analytic,
        "roi_hz": list(roi.roi),
        "repeat_temperatures_k": roi.temperatures,
        "gamma_tot": gamma_tot,
        "n_cav": system.n_cav,
        "sim": sim.as_dict(),
        **prov,
        "config": cfg.data,
    }
    ext = "bin" if args.trajectory_format == "binary" else "csv"
    write_trajectory(_out(args, f"trajectory.{ext}"), traj, args.trajectory_format, extra=prov)
    write_spectrum(_out(args, "spectrum.csv"), spec, header=prov)
    _write_json(_out(args, "summary.json"), summary)
    print(json.dumps({k: summary[k] for k in ("t_com_roi_k", "t_com_roi_stderr_k", "t_com_analytic_k")}, sort_keys=True))
    return 0


def cmd_fit(args, cfg) -> int:
    data = np.loadtxt(args.data, delimiter=",", comments="#", skiprows=_header_rows(args.data), ndmin=2)
    fit = fit_phase_noise(data[:, :3], cfg.system())
    doc = {"fit": fit.as_dict(), "points": int(data.shape[0]), **_provenance(cfg), "config": cfg.data}
    _write_json(_out(args, "fit.json"), doc)
    print(json.dumps(fit.as_dict(), sort_keys=True))
    return 0


def _header_rows(path):
    with open(path) as fh:
        for i, line in enumerate(fh):
            if line.startswith("#"):
                continue
            try:
                [float(x) for x in line.split(",")]
                return i
            except ValueError:
                return i + 1
    return 0


def cmd_calibrate(args, cfg) -> int:
    system = cfg.system()
    raw = read_trajectory(args.trajectory)
    scale = calibrate(
        raw, system.environment, system.particle, system.omega_m,
        half_width=args.half_width_khz * 1e3,
        lineshape_correction=not args.no_lineshape_correction,
    )
    doc = {"metres_per_unit": scale, "reference_pressure_pa": system.environment.pressure, **_provenance(cfg)}
    doc["lineshape_correction"] = not args.no_lineshape_correction
    _write_json(_out(args, "calibration.json"), doc)
    print(json.dumps({"metres_per_unit": scale}))
    return 0


COMMANDS = {
    "budget": cmd_budget,
    "sweep": cmd_sweep,
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "calibrate": cmd_calibrate,
}


def _fail(exc, code) -> int:
    print(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
        if args.dump_config:
            cfg.dump(args.dump_config)
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        return _fail(exc, EXIT_CONFIG)
    except NoCooling as exc:
        return _fail(exc, EXIT_NO_COOLING)
    except (Unstable, NotThermalized) as exc:
        return _fail(exc, EXIT_SIMULATION)
    except SidebandError as exc:
        return _fail(exc, 1)
    except OSError as exc:
        return _fail(exc, EXIT_CONFIG)


if __name__ == "__main__":
    sys.exit(main())
