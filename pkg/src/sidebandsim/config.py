"""Laboratory-unit experiment configuration (YAML) and its SI resolution.

Keys carry their unit as a suffix. Frequencies are given in ordinary units
(kHz, GHz) and converted to angular rates here; ``s_phi_hz2_per_hz`` is the
prefactor ``x`` in ``S_phi = 2 pi x Hz^2/Hz``.
"""
from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass

import numpy as np
import yaml

from .dynamics import BATHS, SimConfig
from .errors import ConfigError
from .physics import (
    AMU,
    Cavity,
    DriveState,
    Environment,
    NoiseModel,
    Particle,
    SystemParams,
    Trap,
    antinode_position,
    intracavity_photons,
)
from .presets import COUPLING_EFFICIENCY, TWO_PI

MBAR = 100.0  # Pa

PAPER_DEFAULTS = {
    "particle": {"radius_nm": 118.0, "density_kg_per_m3": 2200.0, "refractive_index": 1.45},
    "cavity": {
        "length_mm": 24.3,
        "waist_um": 64.0,
        "wavelength_nm": 1064.0,
        "finesse": 155000.0,
        "kappa_fwhm_khz": 40.0,
        "fsr_ghz": 6.2,
    },
    "trap": {
        "wavelength_nm": 1550.0,
        "power_mw": 185.0,
        "numerical_aperture": 0.8,
        "waist_nm": 845.0,
        "freq_x_khz": 90.0,
        "freq_y_khz": 100.0,
        "freq_z_khz": 25.0,
        "include_recoil": True,
    },
    "environment": {"pressure_mbar": 3e-7, "temperature_k": 295.0, "gas_molecular_mass_amu": 28.97},
    "noise": {"s_phi_hz2_per_hz": 4.0, "band_low_mult": 0.5, "band_high_mult": 2.0},
    "drive": {
        "detuning_khz": None,
        "position_nm": None,
        "intracavity_power_mw": 75.0,
        "n_cav": None,
        "input_power_mw": None,
        "coupling_efficiency": COUPLING_EFFICIENCY,
        "position_average": False,
    },
    "sim": {
        "dt_us": 0.5,
        "duration_s": 2.0,
        "sample_rate_khz": 1000.0,
        "seed": 0,
        "baths": sorted(BATHS),
        "thermal_start": True,
    },
    "sweep": {
        "variable": "pressure",
        "start": None,
        "stop": None,
        "points": 25,
        "spacing": "log",
        "mode": "analytic",
        "seed": 0,
    },
}

PRESETS = {"paper-defaults": PAPER_DEFAULTS}

# Lab unit of each sweep variable and its factor to SI.
SWEEP_UNITS = {
    "pressure": ("mbar", MBAR),
    "detuning": ("khz", TWO_PI * 1e3),
    "input_power": ("mw", 1e-3),
    "position": ("nm", 1e-9),
    "n_cav": ("photons", 1.0),
}
PHOTON_KEYS = ("intracavity_power_mw", "n_cav", "input_power_mw")
_NULLABLE = {("drive", k) for k in ("detuning_khz", "position_nm") + PHOTON_KEYS} | {
    ("sweep", "start"),
    ("sweep", "stop"),
}
_STRINGS = {("sweep", "variable"), ("sweep", "spacing"), ("sweep", "mode")}
_BOOLS = {("trap", "include_recoil"), ("drive", "position_average"), ("sim", "thermal_start")}
_INTS = {("sim", "seed"), ("sweep", "points"), ("sweep", "seed")}


def _check_value(section, key, value):
    where = f"{section}.{key}"
    if value is None:
        if (section, key) not in _NULLABLE:
            raise ConfigError(f"{where} may not be null")
        return value
    if (section, key) in _STRINGS:
        if not isinstance(value, str):
            raise ConfigError(f"{where} must be a string")
        return value
    if (section, key) in _BOOLS:
        if not isinstance(value, bool):
            raise ConfigError(f"{where} must be true or false")
        return value
    if (section, key) in _INTS:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where} must be an integer")
        return value
    if section == "sim" and key == "baths":
        if not isinstance(value, list) or not all(isinstance(b, str) for b in value):
            raise ConfigError(f"{where} must be a list of bath names")
        return sorted(value)
    if section == "drive" and key == "n_cav" and value == "opt":
        return value
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where} must be a number")
    value = float(value)
    if not math.isfinite(value):
        raise ConfigError(f"{where} must be finite")
    return value


def merge(base: dict, overrides: dict) -> dict:
    """Deep-merge ``overrides`` into a copy of ``base``, rejecting unknown keys."""
    if not isinstance(overrides, dict):
        raise ConfigError("configuration must be a mapping of sections")
    out = copy.deepcopy(base)
    for section, values in overrides.items():
        if section not in base:
            raise ConfigError(f"unknown config section {section!r}")
        if values is None:
            continue
        if not isinstance(values, dict):
            raise ConfigError(f"section {section!r} must be a mapping")
        for key, value in values.items():
            if key not in base[section]:
                raise ConfigError(f"unknown key {section}.{key}")
            out[section][key] = _check_value(section, key, value)
    return out


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated nested configuration in laboratory units."""

    data: dict

    @classmethod
    def from_dict(cls, overrides=None, preset="paper-defaults") -> ExperimentConfig:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        cfg = cls(merge(PRESETS[preset], overrides or {}))
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path, preset="paper-defaults") -> ExperimentConfig:
        try:
            with open(path) as fh:
                raw = yaml.safe_load(fh)
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(raw or {}, preset)

    def updated(self, overrides: dict) -> ExperimentConfig:
        cfg = ExperimentConfig(merge(self.data, overrides))
        cfg.validate()
        return cfg

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.data, sort_keys=True, default_flow_style=False)

    def dump(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_yaml())

    def canonical_json(self) -> str:
        return json.dumps(self.data, sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()

    # --- resolution to SI ---------------------------------------------------

    def validate(self):
        """Build every derived object once so invariant violations surface now."""
        d = self.data["drive"]
        given = [k for k in PHOTON_KEYS if d[k] is not None]
        if len(given) != 1:
            raise ConfigError(f"drive needs exactly one of {PHOTON_KEYS}, got {given or 'none'}")
        if not 0 < d["coupling_efficiency"] <= 1:
            raise ConfigError("drive.coupling_efficiency must lie in (0, 1]")
        sw = self.data["sweep"]
        if sw["variable"] not in SWEEP_UNITS:
            raise ConfigError(f"sweep.variable must be one of {sorted(SWEEP_UNITS)}")
        if sw["spacing"] not in ("lin", "log"):
            raise ConfigError("sweep.spacing must be 'lin' or 'log'")
        if sw["mode"] not in ("analytic", "stochastic"):
            raise ConfigError("sweep.mode must be 'analytic' or 'stochastic'")
        if sw["points"] < 1:
            raise ConfigError("sweep.points must be at least 1")
        system = self.system(resolve_opt=False)
        self.sim_config().validate_for(system.omega_m)
        return system

    def particle(self) -> Particle:
        p = self.data["particle"]
        return Particle(p["radius_nm"] * 1e-9, p["density_kg_per_m3"], p["refractive_index"])

    def cavity(self) -> Cavity:
        c = self.data["cavity"]
        return Cavity(
            length=c["length_mm"] * 1e-3,
            waist=c["waist_um"] * 1e-6,
            wavelength=c["wavelength_nm"] * 1e-9,
            finesse=c["finesse"],
            linewidth_fwhm=TWO_PI * c["kappa_fwhm_khz"] * 1e3,
            fsr_stated=TWO_PI * c["fsr_ghz"] * 1e9,
        )

    def trap(self) -> Trap:
        t = self.data["trap"]
        return Trap(
            wavelength=t["wavelength_nm"] * 1e-9,
            power=t["power_mw"] * 1e-3,
            numerical_aperture=t["numerical_aperture"],
            waist=t["waist_nm"] * 1e-9,
            mech_freqs=tuple(TWO_PI * t[f"freq_{a}_khz"] * 1e3 for a in "xyz"),
        )

    def environment(self) -> Environment:
        e = self.data["environment"]
        return Environment(e["pressure_mbar"] * MBAR, e["temperature_k"], e["gas_molecular_mass_amu"] * AMU)

    def noise(self) -> NoiseModel:
        n = self.data["noise"]
        return NoiseModel(TWO_PI * n["s_phi_hz2_per_hz"], n["band_low_mult"], n["band_high_mult"])

    def system(self, resolve_opt=True) -> SystemParams:
        """SI operating point. ``n_cav: opt`` resolves to the optimal photon number."""
        d = self.data["drive"]
        cavity, trap = self.cavity(), self.trap()
        detuning = -trap.omega_y if d["detuning_khz"] is None else TWO_PI * d["detuning_khz"] * 1e3
        position = antinode_position(cavity) if d["position_nm"] is None else d["position_nm"] * 1e-9
        input_power = None
        n_cav = 0.0
        if d["intracavity_power_mw"] is not None:
            n_cav = float(intracavity_photons(cavity, d["intracavity_power_mw"] * 1e-3))
        elif d["input_power_mw"] is not None:
            input_power = d["input_power_mw"] * 1e-3
        elif d["n_cav"] != "opt":
            n_cav = d["n_cav"]
        system = SystemParams(
            particle=self.particle(),
            cavity=cavity,
            trap=trap,
            environment=self.environment(),
            drive=DriveState(detuning=detuning, n_cav=n_cav, position_y=position),
            noise=self.noise(),
            input_power=input_power,
            coupling_efficiency=d["coupling_efficiency"],
            include_trap_recoil=self.data["trap"]["include_recoil"],
            position_average=d["position_average"],
        )
        if d["n_cav"] == "opt" and resolve_opt:
            system = system.with_n_cav(system.optimal_photon_number())
        return system

    def sim_config(self, **changes) -> SimConfig:
        s = self.data["sim"]
        kw = dict(
            dt=s["dt_us"] * 1e-6,
            duration=s["duration_s"],
            sample_rate=s["sample_rate_khz"] * 1e3,
            seed=s["seed"],
            enabled_baths=frozenset(s["baths"]),
            thermal_start=s["thermal_start"],
        )
        kw.update(changes)
        return SimConfig(**kw)

    def sweep_grid(self, system: SystemParams) -> np.ndarray:
        """SI grid from the sweep section; one point means the configured value."""
        sw = self.data["sweep"]
        variable = sw["variable"]
        if sw["points"] == 1 and sw["start"] is None:
            return np.array([current_value(system, variable)])
        if sw["start"] is None or sw["stop"] is None:
            raise ConfigError("sweep.start and sweep.stop are required for more than one point")
        factor = SWEEP_UNITS[variable][1]
        lo, hi = sw["start"] * factor, sw["stop"] * factor
        if sw["points"] == 1:
            return np.array([lo])
        if sw["spacing"] == "log":
            if lo <= 0 or hi <= 0:
                raise ConfigError("log spacing needs positive start and stop")
            return np.geomspace(lo, hi, sw["points"])
        return np.linspace(lo, hi, sw["points"])


def current_value(system: SystemParams, variable) -> float:
    """Value of a sweep variable at the configured operating point (SI)."""
    if variable == "pressure":
        return system.environment.pressure
    if variable == "detuning":
        return system.drive.detuning
    if variable == "position":
        return system.drive.position_y
    if variable == "n_cav":
        return system.n_cav
    if system.input_power is None:
        raise ConfigError("input_power sweep needs drive.input_power_mw")
    return system.input_power
