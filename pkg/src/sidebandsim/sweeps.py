"""Parameter scans, optimal detuning search and phase-noise fitting.

Analytic rows use the approximated budget when optical damping dominates and
fall back to the exact-ratio form otherwise (flag ``exact_ratio``). A point
that does not cool at all is reported at the ambient temperature (flag
``no_cooling``). Each row carries a phase-noise band obtained by rescaling
S_phi by the ``SweepSpec.noise_band`` multipliers; all three evaluations share
one budget form so the band ordering is preserved.
"""
from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy import optimize

from . import __version__
from .dynamics import SimConfig, derive_seeds, simulate, thread_count
from .errors import ConfigError, NoCooling, NoMinimum, NotThermalized, SidebandError, Unidentifiable
from .physics import (
    HBAR,
    NoiseModel,
    PhononBudget,
    SystemParams,
    antinode_position,
    coupling_profile,
    intracavity_photons,
    phonons_from_temperature,
    rms_coupling_factor,
)
from .presets import HIGH_PRESSURE, LOW_PRESSURE, TWO_PI, paper_defaults
from .spectral import DEFAULT_HALF_WIDTH, DEFAULT_SEGMENT, measure_temperature

VARIABLES = ("pressure", "detuning", "input_power", "position", "n_cav")
MODES = ("analytic", "stochastic")
VALUE_COLUMNS = {
    "pressure": "pressure_pa",
    "detuning": "detuning_rad_per_s",
    "input_power": "input_power_w",
    "position": "position_m",
    "n_cav": "n_cav",
}
DETUNING_TOLERANCE = TWO_PI * 10.0
# Independent batches per stochastic point; the standard error comes from their spread.
STOCHASTIC_BATCHES = 20
# Relative size of sin(2ky) below which a position counts as a field node.
NODE_TOLERANCE = 1e-6


@dataclass(frozen=True)
class SweepSpec:
    """A one-dimensional scan of ``variable`` over ``grid`` (SI units)."""

    variable: str
    grid: tuple
    fixed: SystemParams
    noise_band: tuple = (0.5, 2.0)
    mode: str = "analytic"
    sim: SimConfig = field(default_factory=lambda: SimConfig(thermal_start=True))
    seed: int = 0
    label: str = ""

    def __post_init__(self):
        object.__setattr__(self, "grid", tuple(float(v) for v in np.atleast_1d(self.grid)))
        if self.variable not in VARIABLES:
            raise ConfigError(f"unknown sweep variable {self.variable!r}; choose from {VARIABLES}")
        if self.mode not in MODES:
            raise ConfigError(f"unknown sweep mode {self.mode!r}")
        if not self.grid:
            raise ConfigError("sweep grid is empty")
        g = np.asarray(self.grid)
        if not np.all(np.isfinite(g)):
            raise ConfigError("sweep grid contains non-finite values")
        steps = np.diff(g)
        if g.size > 1 and not (np.all(steps > 0) or np.all(steps < 0)):
            raise ConfigError("sweep grid must be strictly sorted")
        low, high = self.noise_band
        if not 0 < low <= 1 <= high:
            raise ConfigError("noise band multipliers must satisfy 0 < low <= 1 <= high")
        if self.variable in ("pressure", "input_power", "n_cav") and g.min() < 0:
            raise ConfigError(f"{self.variable} must be non-negative")
        if self.variable == "detuning" and np.abs(g).max() >= self.fixed.cavity.fsr / 2:
            raise ConfigError("detuning grid leaves the +-FSR/2 window")

    def system_at(self, value) -> SystemParams:
        s = self.fixed
        if self.variable == "pressure":
            return s.with_pressure(value)
        if self.variable == "detuning":
            return s.with_drive(detuning=value)
        if self.variable == "input_power":
            return replace(s, input_power=value)
        if self.variable == "position":
            return s.with_drive(position_y=value)
        return s.with_n_cav(value)


@dataclass
class SweepRow:
    value: float
    t_com_nominal: float
    t_com_band_low: float
    t_com_band_high: float
    budget: PhononBudget | None
    flags: tuple = ()
    stderr: float = math.nan


@dataclass
class SweepResult:
    spec: SweepSpec
    rows: list

    def column(self, name) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows], dtype=float)

    @property
    def values(self) -> np.ndarray:
        return self.column("value")

    @property
    def nominal(self) -> np.ndarray:
        return self.column("t_com_nominal")

    def records(self) -> list:
        out = []
        for r in self.rows:
            rec = {
                VALUE_COLUMNS[self.spec.variable]: r.value,
                "t_com_nominal_k": r.t_com_nominal,
                "t_com_band_low_k": r.t_com_band_low,
                "t_com_band_high_k": r.t_com_band_high,
                "stderr_k": r.stderr,
            }
            b = r.budget.as_dict() if r.budget is not None else {}
            for key in ("n_f", "n_min", "n_m", "n_rad_cav", "n_phase", "n_rad_t", "gamma_opt", "gamma_m", "n_cav"):
                rec[key] = b.get(key, math.nan)
            rec["flags"] = ";".join(r.flags)
            out.append(rec)
        return out

    def metadata(self, extra=None) -> dict:
        meta = {
            "tool": "sidebandsim",
            "version": __version__,
            "variable": self.spec.variable,
            "mode": self.spec.mode,
            "label": self.spec.label,
            "noise_band": list(self.spec.noise_band),
            "seed": self.spec.seed,
            "params": params_record(self.spec.fixed),
        }
        if self.spec.mode == "stochastic":
            meta["sim"] = self.spec.sim.as_dict()
        meta.update(extra or {})
        return meta

    def write_csv(self, path, extra=None):
        """CSV with ``# key: json`` metadata lines, then one row per grid point."""
        recs = self.records()
        with open(path, "w", newline="") as fh:
            for k, v in self.metadata(extra).items():
                fh.write(f"# {k}: {json.dumps(v, sort_keys=True)}\n")
            writer = csv.DictWriter(fh, fieldnames=list(recs[0]))
            writer.writeheader()
            for rec in recs:
                writer.writerow({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in rec.items()})
            fh.flush()
            os.fsync(fh.fileno())

    def write_json(self, path, extra=None):
        doc = {"metadata": self.metadata(extra), "rows": self.records()}
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True, default=_nan_safe)
            fh.write("\n")
            fh.flush()
            os.fsync(fh.fileno())


def _nan_safe(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"not JSON serialisable: {type(obj)!r}")


def params_record(system: SystemParams) -> dict:
    """SI parameter record of an operating point, JSON-ready."""
    d = asdict(system)
    d["trap"]["mech_freqs"] = list(d["trap"]["mech_freqs"])
    d["resolved_n_cav"] = system.n_cav
    return d


# --- analytic evaluation ------------------------------------------------------


def is_node(system: SystemParams) -> bool:
    s = float(coupling_profile(system.drive.position_y, system.cavity.wavelength))
    return abs(s) < NODE_TOLERANCE


def averaged_coupling(system: SystemParams, exact, tol=1e-9, max_iter=100) -> float:
    """Self-consistent RMS of sin(2ky) over the thermal position spread.

    The spread follows from the occupation it produces, so the two are
    iterated to a fixed point.
    """
    p, cav, omega_m = system.particle, system.cavity, system.omega_m
    cf = abs(float(coupling_profile(system.drive.position_y, cav.wavelength)))
    spread = math.sqrt(HBAR / (p.mass * omega_m) * phonons_from_temperature(system.environment.temperature, omega_m))
    for _ in range(max_iter):
        new_cf = rms_coupling_factor(system.drive.position_y, spread, cav.wavelength)
        if new_cf == 0:
            return 0.0
        try:
            n_f = system.budget(exact=exact, coupling_factor=new_cf).n_f
        except NoCooling:
            n_f = phonons_from_temperature(system.environment.temperature, omega_m)
        spread = math.sqrt(HBAR / (p.mass * omega_m) * (n_f + 0.5))
        if abs(new_cf - cf) <= tol * max(new_cf, 1e-300):
            return new_cf
        cf = new_cf
    return cf


def _budgets(system, mults, exact):
    cf = averaged_coupling(system, exact) if system.position_average else None
    return [system.with_noise(system.noise.scaled(m)).budget(exact=exact, coupling_factor=cf) for m in mults]


def evaluate_point(system: SystemParams, noise_band=(0.5, 2.0)) -> SweepRow:
    """Nominal temperature and phase-noise band of one operating point."""
    flags = []
    if is_node(system):
        flags.append("node")
    if system.position_average:
        flags.append("position_averaged")
    mults = (noise_band[0], 1.0, noise_band[1])
    try:
        low, nominal, high = _budgets(system, mults, exact=False)
    except NoCooling:
        try:
            low, nominal, high = _budgets(system, mults, exact=True)
            flags.append("exact_ratio")
        except NoCooling:
            t_amb = system.environment.temperature
            flags.append("no_cooling")
            return SweepRow(math.nan, t_amb, t_amb, t_amb, None, tuple(flags))
    temps = sorted((low.t_com, nominal.t_com, high.t_com))
    return SweepRow(math.nan, nominal.t_com, temps[0], temps[2], nominal, tuple(flags))


def exact_temperature(system: SystemParams) -> float:
    """t_com of the exact-ratio budget; ambient when the drive does not cool."""
    try:
        cf = averaged_coupling(system, True) if system.position_average else None
        return system.budget(exact=True, coupling_factor=cf).t_com
    except NoCooling:
        return system.environment.temperature


# --- stochastic evaluation ----------------------------------------------------


def _stochastic_temperature(system, sim):
    traj = simulate(system, sim)
    gamma_tot = traj.metadata["gamma_tot"]
    if gamma_tot * sim.duration < 5:
        raise NotThermalized(f"duration x Gamma_tot = {gamma_tot * sim.duration:.3g} < 5")
    n_segments = int(sim.duration / (DEFAULT_SEGMENT * STOCHASTIC_BATCHES))
    res = measure_temperature(
        traj, system.particle, system.omega_m, n_repeats=STOCHASTIC_BATCHES,
        segment_duration=DEFAULT_SEGMENT, n_segments=n_segments, half_width=DEFAULT_HALF_WIDTH,
    )
    return res.t_com, res.stderr / math.sqrt(STOCHASTIC_BATCHES)


def stochastic_point(system: SystemParams, sim: SimConfig, noise_band=(0.5, 2.0)) -> SweepRow:
    """Simulated ROI temperature with its standard error.

    The band runs reuse the nominal seed (common random numbers), so the band
    reflects the S_phi dependence rather than sampling noise.
    """
    flags = ["stochastic"]
    if is_node(system):
        flags.append("node")
    temps = []
    stderr = math.nan
    for m in (noise_band[0], 1.0, noise_band[1]):
        t, se = _stochastic_temperature(system.with_noise(system.noise.scaled(m)), sim)
        temps.append(t)
        if m == 1.0:
            stderr = se
    try:
        budget = system.budget(exact=True)
    except NoCooling:
        budget = None
    lo, _, hi = sorted(temps)
    return SweepRow(math.nan, temps[1], lo, hi, budget, tuple(flags), stderr)


# --- sweep driver -------------------------------------------------------------


def _run_point(spec: SweepSpec, index, value, seed):
    system = spec.system_at(value)
    try:
        if spec.mode == "analytic":
            row = evaluate_point(system, spec.noise_band)
        else:
            row = stochastic_point(system, replace(spec.sim, seed=seed), spec.noise_band)
    except SidebandError as exc:
        nan = math.nan
        row = SweepRow(nan, nan, nan, nan, None, (f"error:{type(exc).__name__}",))
    row.value = value
    return row


def sweep(spec: SweepSpec, threads=None) -> SweepResult:
    """Evaluate every grid point; rows keep grid order.

    Per-point failures are recorded as ``error:<Type>`` flags with NaN
    temperatures instead of aborting the scan.
    """
    seeds = derive_seeds(spec.seed, len(spec.grid))
    jobs = list(zip(range(len(spec.grid)), spec.grid, seeds))
    threads = threads or thread_count()
    if threads == 1 or len(jobs) == 1:
        rows = [_run_point(spec, *job) for job in jobs]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(lambda job: _run_point(spec, *job), jobs))
    return SweepResult(spec, rows)


# --- optimal detuning ---------------------------------------------------------


def optimal_detuning(system: SystemParams, window=None, *, coarse_points=61, xtol=DETUNING_TOLERANCE) -> float:
    """Detuning [rad/s] minimising the exact-ratio temperature.

    A coarse scan brackets the minimum, then bounded Brent (golden section with
    parabolic steps) refines it to ``xtol``. When ``system.input_power`` is set
    the photon number follows the cavity response at each trial detuning.
    """
    omega_m = system.omega_m
    if window is None:
        window = (-3 * omega_m, -0.2 * omega_m)
    lo, hi = sorted(window)
    if not (-system.cavity.fsr / 2 < lo < hi < 0):
        raise ConfigError("detuning window must lie inside (-FSR/2, 0)")

    def objective(delta):
        return exact_temperature(system.with_drive(detuning=float(delta)))

    grid = np.linspace(lo, hi, coarse_points)
    temps = np.array([objective(d) for d in grid])
    k = int(np.argmin(temps))
    if k == 0 or k == grid.size - 1:
        raise NoMinimum(f"temperature is minimal at the window edge {grid[k]:.6g} rad/s")
    res = optimize.minimize_scalar(
        objective, bounds=(grid[k - 1], grid[k + 1]), method="bounded", options={"xatol": xtol}
    )
    return float(res.x) if res.fun <= temps[k] else float(grid[k])


# --- phase-noise fit ----------------------------------------------------------


@dataclass(frozen=True)
class PhaseNoiseFit:
    s_phi: float
    stderr: float
    interval: tuple
    chi2: float
    dof: int

    def as_dict(self) -> dict:
        return {
            "s_phi": self.s_phi,
            "s_phi_hz2_per_hz": self.s_phi / TWO_PI,
            "stderr": self.stderr,
            "interval": list(self.interval),
            "chi2": self.chi2,
            "dof": self.dof,
        }


def phase_noise_design(system: SystemParams, n_cav_values):
    """Per-point noise-free occupation and phonons per unit S_phi (exact ratio)."""
    base, slope = [], []
    for n in n_cav_values:
        s = system.with_n_cav(float(n))
        base.append(s.with_noise(replace(s.noise, s_phi=0.0)).budget(exact=True).n_f)
        slope.append(s.with_noise(replace(s.noise, s_phi=1.0)).budget(exact=True).n_phase)
    return np.array(base), np.array(slope)


def fit_phase_noise(data, system: SystemParams, reference_s_phi=None) -> PhaseNoiseFit:
    """Weighted least-squares estimate of S_phi from (n_cav, t_com, stderr) rows.

    The occupation is linear in S_phi, n_f = base(n_cav) + S_phi c(n_cav), so
    the estimate and its 68 % interval follow in closed form.
    """
    data = np.asarray(data, dtype=float)
    if data.ndim != 2 or data.shape[1] != 3:
        raise ConfigError("data must be rows of (n_cav, t_com, stderr)")
    if data.shape[0] < 3:
        raise ConfigError("need at least three data points")
    n_cav, t_com, t_err = data.T
    if np.any(n_cav <= 0) or np.any(t_err <= 0):
        raise ConfigError("n_cav and stderr must be positive")
    if n_cav.max() / n_cav.min() < 10:
        raise ConfigError("n_cav values must span at least a decade")
    omega_m = system.omega_m
    base, slope = phase_noise_design(system, n_cav)
    ref = reference_s_phi if reference_s_phi is not None else system.noise.s_phi
    if ref <= 0:
        ref = NoiseModel().s_phi
    if np.all(ref * slope < 0.1 * (base + ref * slope)):
        raise Unidentifiable("phase noise is below 10% of the occupation at every point")
    n_obs = phonons_from_temperature(t_com, omega_m)
    n_err = phonons_from_temperature(t_err, omega_m)
    w = 1.0 / n_err**2
    fisher = math.fsum(w * slope**2)
    s_hat = math.fsum(w * slope * (n_obs - base)) / fisher
    sigma = 1.0 / math.sqrt(fisher)
    chi2 = math.fsum(w * (n_obs - base - s_hat * slope) ** 2)
    return PhaseNoiseFit(s_hat, sigma, (s_hat - sigma, s_hat + sigma), chi2, data.shape[0] - 1)


def synthetic_phase_noise_data(system: SystemParams, n_cav_values, rel_noise=0.1, seed=0):
    """Rows (n_cav, t_com, stderr) from the exact-ratio model with Gaussian scatter."""
    rng = np.random.default_rng(seed)
    rows = []
    for n in n_cav_values:
        t = system.with_n_cav(float(n)).budget(exact=True).t_com
        rows.append((float(n), t * (1 + rel_noise * rng.standard_normal()), rel_noise * t))
    return np.array(rows)


# --- figure presets -----------------------------------------------------------

FIGURES = ("2b", "3a", "3b", "3c", "3d", "3e", "3f", "3g", "3h", "4a", "4b", "4c", "4d")
FIG3_POWERS = {"3a": 4e-3, "3b": 20e-3, "3c": 45e-3, "3e": 0.07e-3, "3f": 1e-3, "3g": 4e-3}
FIG3D_RANGE = (4e-3, 45e-3)
FIG3H_RANGE = (0.07e-3, 4e-3)
FIG4_POWERS = {"4a": 1.0, "4b": 5e-3, "4c": 20e-3, "4d": 172e-3}
POSITION_STEP = 41e-9
POSITION_POINTS = 15


def detuning_grid(omega_m, points=50):
    return np.linspace(-3 * omega_m, -0.2 * omega_m, points)


def pressure_grid(points=25):
    return np.logspace(math.log10(LOW_PRESSURE), math.log10(1000.0), points)


def position_grid(points=POSITION_POINTS):
    return np.arange(points) * POSITION_STEP


def figure_spec(name: str, base: SystemParams | None = None, mode="analytic", seed=0) -> SweepSpec:
    """Axes and operating point of one reference figure.

    ``base`` supplies everything the figure does not fix (noise, trap, ...);
    it defaults to the reference parameter set.
    """
    if name not in FIGURES:
        raise ConfigError(f"unknown figure {name!r}; choose from {FIGURES}")
    base = base or paper_defaults()
    omega_m = base.omega_m
    red = base.with_drive(detuning=-omega_m, position_y=antinode_position(base.cavity))
    kw = {"noise_band": (base.noise.band_low_mult, base.noise.band_high_mult), "mode": mode, "seed": seed, "label": name}
    if name == "2b":
        fixed = red.with_n_cav(_photons(base, 75e-3))
        return SweepSpec("pressure", pressure_grid(), fixed, **kw)
    if name in FIG3_POWERS:
        pressure = HIGH_PRESSURE if name < "3d" else LOW_PRESSURE
        fixed = replace(red.with_pressure(pressure), input_power=FIG3_POWERS[name])
        return SweepSpec("detuning", detuning_grid(omega_m), fixed, **kw)
    if name == "3d":
        fixed = replace(red.with_pressure(HIGH_PRESSURE), input_power=FIG3D_RANGE[0])
        return SweepSpec("input_power", np.linspace(*FIG3D_RANGE, 12), fixed, **kw)
    if name == "3h":
        fixed = replace(red.with_pressure(LOW_PRESSURE), input_power=FIG3H_RANGE[0])
        grid = np.logspace(math.log10(FIG3H_RANGE[0]), math.log10(FIG3H_RANGE[1]), 12)
        return SweepSpec("input_power", grid, fixed, **kw)
    pressure = HIGH_PRESSURE if name == "4a" else LOW_PRESSURE
    fixed = red.with_pressure(pressure).with_n_cav(_photons(base, FIG4_POWERS[name]))
    return SweepSpec("position", position_grid(), fixed, **kw)


def _photons(system, p_intra):
    return float(intracavity_photons(system.cavity, p_intra))


def band_ordered(row: SweepRow) -> bool:
    return row.t_com_band_low <= row.t_com_nominal <= row.t_com_band_high

