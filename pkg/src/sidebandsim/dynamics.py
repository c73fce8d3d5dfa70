"""Stochastic time-domain simulation of the cooled oscillator.

The particle obeys the linear Langevin equation

    m y'' = -m Gamma_tot y' - m Omega^2 y + F(t),

with Gamma_tot = Gamma_m + Gamma_opt (optical damping enters as a viscous term,
valid for kappa >> Gamma_opt) and F a white force whose one-sided PSD is the sum
of the bath contributions 4 m hbar Omega Gamma_i n_i. The steady-state energy
then equals sum(Gamma_i n_i) / Gamma_tot phonons. Trajectories are classical;
zero-point terms are dropped.
"""
from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import _kernels
from .errors import ConfigError, NotThermalized, Unstable
from .physics import (
    HBAR,
    KB,
    Particle,
    SystemParams,
    optomechanical_damping,
    phase_noise_rate,
    recoil_rate_cavity,
    single_photon_coupling_g0,
    thermal_decoherence_rate,
    thermal_occupation,
    trap_recoil_product,
    zero_point_fluctuation,
)

BATHS = ("thermal", "phase", "recoil_cav", "recoil_trap")
DIVERGENCE_LIMIT_ZPF = 1e6
_CHUNK_SAMPLES = 1 << 18


@dataclass(frozen=True)
class SimConfig:
    dt: float = 5e-7
    duration: float = 2.0
    seed: int = 0
    sample_rate: float = 1e6
    enabled_baths: frozenset = frozenset(BATHS)
    linearize: bool = True
    thermal_start: bool = False

    def __post_init__(self):
        object.__setattr__(self, "enabled_baths", frozenset(self.enabled_baths))
        unknown = self.enabled_baths - set(BATHS)
        if unknown:
            raise ConfigError(f"unknown baths: {sorted(unknown)}")
        if not (self.dt > 0 and self.duration > 0 and self.sample_rate > 0):
            raise ConfigError("dt, duration and sample_rate must be positive")
        if self.sample_rate > 1 / self.dt * (1 + 1e-9):
            raise ConfigError("sample_rate must not exceed 1/dt")
        if abs(self.decimation - 1 / (self.dt * self.sample_rate)) > 1e-6:
            raise ConfigError("1/(dt * sample_rate) must be an integer")
        if not self.linearize:
            raise ConfigError("only the linearized model is implemented")

    @property
    def decimation(self) -> int:
        return max(1, round(1 / (self.dt * self.sample_rate)))

    @property
    def n_samples(self) -> int:
        return int(round(self.duration * self.sample_rate))

    def validate_for(self, omega_m):
        f_m = omega_m / (2 * math.pi)
        if self.dt > 1 / (20 * f_m) * (1 + 1e-9):
            raise ConfigError(f"dt = {self.dt:g} s exceeds 1/(20 f_m) = {1 / (20 * f_m):g} s")
        if self.duration < 100 * 2 * math.pi / omega_m:
            raise ConfigError("duration shorter than 100 mechanical periods")

    def as_dict(self) -> dict:
        d = asdict(self)
        d["enabled_baths"] = sorted(self.enabled_baths)
        return d


@dataclass
class Trajectory:
    times: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.positions = np.asarray(self.positions, dtype=float)
        self.velocities = np.asarray(self.velocities, dtype=float)
        if not (self.times.shape == self.positions.shape == self.velocities.shape):
            raise ValueError("times, positions and velocities must have equal length")
        if self.times.size > 1:
            steps = np.diff(self.times)
            if not np.allclose(steps, steps[0], rtol=1e-6, atol=0):
                raise ValueError("trajectory must be uniformly sampled")
        if not (np.all(np.isfinite(self.positions)) and np.all(np.isfinite(self.velocities))):
            raise ValueError("trajectory contains non-finite values")

    @property
    def sample_rate(self) -> float:
        return 1.0 / (self.times[1] - self.times[0])

    @property
    def duration(self) -> float:
        return self.times.size / self.sample_rate

    def scaled(self, factor) -> Trajectory:
        """Same trace expressed in different units (e.g. detector volts)."""
        return Trajectory(self.times, self.positions * factor, self.velocities * factor, dict(self.metadata))


def bath_force_psd(channel, gamma_i, n_i, particle: Particle, omega_m):
    """One-sided force PSD [N^2/Hz] that injects ``gamma_i * n_i`` phonons/s.

    ``channel`` is informational; every bath maps through 4 m hbar Omega Gamma n.
    For the thermal bath with n_i = k_B T / (hbar Omega) this is 4 m Gamma k_B T.
    """
    if channel not in BATHS:
        raise ValueError(f"unknown bath channel {channel!r}")
    if gamma_i * n_i < 0:
        raise ValueError("gamma_i * n_i must be non-negative")
    return 4 * particle.mass * HBAR * omega_m * gamma_i * n_i


def bath_rates(system: SystemParams) -> dict:
    """Damping and per-bath heating rates (phonons/s) of an operating point."""
    p, cav, omega_m = system.particle, system.cavity, system.omega_m
    drive = system.resolved_drive()
    g0 = single_photon_coupling_g0(p, cav, omega_m, drive.position_y)
    gamma_opt = float(optomechanical_damping(g0, drive.n_cav, cav.kappa, drive.detuning, omega_m))
    gamma_m = thermal_decoherence_rate(p, system.environment)
    gamma_phase = phase_noise_rate(system.noise, g0, drive.n_cav, cav.kappa, gamma_opt=gamma_opt)
    heating = {
        "thermal": gamma_m * thermal_occupation(omega_m, system.environment.temperature),
        "phase": max(gamma_phase, 0.0) * drive.n_cav,
        "recoil_cav": recoil_rate_cavity(p, cav, omega_m) * drive.n_cav,
        "recoil_trap": trap_recoil_product(p, system.trap, omega_m) if system.include_trap_recoil else 0.0,
    }
    return {"gamma_opt": gamma_opt, "gamma_m": gamma_m, "gamma_tot": gamma_opt + gamma_m, "heating": heating}


def simulate_oscillator(
    mass, omega_m, gamma_tot, force_psd, sim: SimConfig, *, y0=0.0, v0=0.0,
    limit=None, metadata=None, backend=None,
) -> Trajectory:
    """Integrate the damped, white-force-driven oscillator.

    ``force_psd`` is the one-sided force PSD [N^2/Hz]. Samples are recorded at
    ``sim.sample_rate`` starting with the initial state at t = 0.
    """
    if force_psd < 0:
        raise ValueError("force PSD must be non-negative")
    decim = sim.decimation
    n_samples = sim.n_samples
    diffusion_v = force_psd / (2 * mass**2)
    coeffs = _kernels.step_coefficients(omega_m, gamma_tot, diffusion_v, sim.dt)
    if limit is None:
        limit = math.inf
    rng = np.random.default_rng(sim.seed)
    ys = np.empty(n_samples)
    vs = np.empty(n_samples)
    ys[0], vs[0] = y0, v0
    y, v = float(y0), float(v0)
    filled = 1
    while filled < n_samples:
        m = min(_CHUNK_SAMPLES, n_samples - filled)
        noise = rng.standard_normal((m * decim, 2))
        cy, cv, y, v, hit = _kernels.propagate(y, v, noise, coeffs, omega_m, decim, limit, backend)
        if hit >= 0:
            t_hit = (filled + hit) / sim.sample_rate
            raise Unstable(
                f"amplitude exceeded {limit:.3g} m at t = {t_hit:.6g} s (runaway heating)", time=t_hit
            )
        ys[filled : filled + m] = cy
        vs[filled : filled + m] = cv
        filled += m
    times = np.arange(n_samples) / sim.sample_rate
    meta = {"sim": sim.as_dict(), "mass": mass, "omega_m": omega_m, "gamma_tot": gamma_tot, "force_psd": force_psd}
    if metadata:
        meta.update(metadata)
    return Trajectory(times, ys, vs, meta)


def simulate(system: SystemParams, sim: SimConfig, *, y0=None, v0=None, backend=None) -> Trajectory:
    """Simulate the operating point ``system`` with the baths in ``sim``.

    Raises :class:`Unstable` when net heating (Gamma_tot < 0) drives the
    amplitude beyond 1e6 zero-point widths.
    """
    omega_m = system.omega_m
    sim.validate_for(omega_m)
    mass = system.particle.mass
    rates = bath_rates(system)
    heating = {k: v for k, v in rates["heating"].items() if k in sim.enabled_baths}
    force_psd = sum(
        bath_force_psd(k, rate, 1.0, system.particle, omega_m) for k, rate in heating.items()
    )
    gamma_tot = rates["gamma_tot"]
    x_zpf = zero_point_fluctuation(system.particle, omega_m)
    if y0 is None and v0 is None and sim.thermal_start and gamma_tot > 0:
        n_target = sum(heating.values()) / gamma_tot
        spread = math.sqrt(n_target * HBAR / (mass * omega_m))
        start = np.random.default_rng(np.random.SeedSequence(sim.seed).spawn(1)[0]).standard_normal(2)
        y0, v0 = spread * start[0], spread * omega_m * start[1]
    meta = {
        "gamma_opt": rates["gamma_opt"],
        "gamma_m": rates["gamma_m"],
        "heating": heating,
        "n_cav": system.n_cav,
        "temperature_bath": system.environment.temperature,
        "pressure": system.environment.pressure,
        "detuning": system.drive.detuning,
        "position_y": system.drive.position_y,
        "s_phi": system.noise.s_phi,
    }
    return simulate_oscillator(
        mass, omega_m, gamma_tot, force_psd, sim,
        y0=0.0 if y0 is None else y0, v0=0.0 if v0 is None else v0,
        limit=DIVERGENCE_LIMIT_ZPF * x_zpf, metadata=meta, backend=backend,
    )


def expected_phonons(system: SystemParams, baths=BATHS) -> float:
    """Stationary classical occupation the simulator converges to."""
    rates = bath_rates(system)
    return sum(v for k, v in rates["heating"].items() if k in baths) / rates["gamma_tot"]


def _trim(traj: Trajectory, discard_fraction):
    if not 0 <= discard_fraction < 1:
        raise ValueError("discard_fraction must lie in [0, 1)")
    start = int(round(discard_fraction * traj.times.size))
    return traj.positions[start:], traj.velocities[start:]


def _check_thermalized(traj, discard_fraction):
    gamma_tot = traj.metadata.get("gamma_tot")
    if gamma_tot is None:
        return
    kept = (1 - discard_fraction) * traj.duration
    if kept * gamma_tot < 5:
        raise NotThermalized(
            f"kept duration x Gamma_tot = {kept * gamma_tot:.3g} < 5; simulate longer"
        )


def _mass_of(traj, mass):
    if mass is None:
        mass = traj.metadata.get("mass")
    if mass is None:
        raise ValueError("mass not given and not in trajectory metadata")
    return mass


def steady_state_energy(traj: Trajectory, omega_m, discard_fraction=0.1, mass=None):
    """Mean oscillator energy [J] and the corresponding phonon number."""
    mass = _mass_of(traj, mass)
    _check_thermalized(traj, discard_fraction)
    y, v = _trim(traj, discard_fraction)
    energy = 0.5 * mass * (omega_m**2 * np.mean(y * y) + np.mean(v * v))
    return float(energy), float(energy / (HBAR * omega_m))


def batch_means(values, n_batches=10):
    """Mean and batch-means standard error of a correlated series."""
    values = np.asarray(values, dtype=float)
    if n_batches < 2:
        raise ValueError("need at least two batches")
    usable = values.size - values.size % n_batches
    means = values[:usable].reshape(n_batches, -1).mean(axis=1)
    return float(means.mean()), float(means.std(ddof=1) / math.sqrt(n_batches))


def phonon_estimate(traj: Trajectory, omega_m, discard_fraction=0.1, n_batches=10, mass=None):
    """Phonon number with a batch-means standard error."""
    mass = _mass_of(traj, mass)
    _check_thermalized(traj, discard_fraction)
    y, v = _trim(traj, discard_fraction)
    n_inst = 0.5 * mass * (omega_m**2 * y * y + v * v) / (HBAR * omega_m)
    return batch_means(n_inst, n_batches)


def temperature_estimate(traj, omega_m, discard_fraction=0.1, n_batches=10, mass=None):
    n, se = phonon_estimate(traj, omega_m, discard_fraction, n_batches, mass)
    scale = HBAR * omega_m / KB
    return n * scale, se * scale


def derive_seeds(master_seed, n):
    """Independent 64-bit child seeds from ``master_seed`` (SeedSequence spawn)."""
    children = np.random.SeedSequence(master_seed).spawn(n)
    return [int(c.generate_state(1, dtype=np.uint64)[0]) for c in children]


def thread_count():
    try:
        return max(1, int(os.environ.get("SIDEBANDSIM_THREADS", "1")))
    except ValueError:
        return 1


def simulate_ensemble(system: SystemParams, sim: SimConfig, n_runs, threads=None, backend=None):
    """Independent trajectories with seeds derived from ``sim.seed``; order follows seed index."""
    seeds = derive_seeds(sim.seed, n_runs)
    configs = [replace(sim, seed=s) for s in seeds]
    threads = threads or thread_count()
    if threads == 1:
        return [simulate(system, c, backend=backend) for c in configs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda c: simulate(system, c, backend=backend), configs))


# --- trajectory files ---------------------------------------------------------

_MAGIC = b"SIDEBANDSIM-TRAJECTORY 1\n"
_END = b"END_HEADER\n"
COLUMNS = ("time", "position", "velocity")


def _header_lines(traj, extra):
    header = {"n_samples": traj.times.size, "columns": ",".join(COLUMNS), "dtype": "<f8", "layout": "columnar"}
    header["metadata"] = json.dumps(traj.metadata, sort_keys=True, default=_json_default)
    if extra:
        header.update({k: json.dumps(v, sort_keys=True, default=_json_default) for k, v in extra.items()})
    return [f"{k}={v}" for k, v in header.items()]


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, (set, frozenset)):
        return sorted(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serialisable: {type(obj)!r}")


def write_trajectory(path, traj: Trajectory, fmt="binary", extra=None):
    """Write ``traj`` as binary columnar (default) or CSV.

    Binary layout: magic line, ``key=value`` header lines, ``END_HEADER``, then
    the time, position and velocity columns one after another as little-endian
    float64.
    """
    lines = _header_lines(traj, extra)
    if fmt == "binary":
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            for line in lines:
                fh.write(line.encode() + b"\n")
            fh.write(_END)
            for col in (traj.times, traj.positions, traj.velocities):
                fh.write(np.ascontiguousarray(col, dtype="<f8").tobytes())
            fh.flush()
            os.fsync(fh.fileno())
    elif fmt == "csv":
        data = np.column_stack([traj.times, traj.positions, traj.velocities])
        with open(path, "w") as fh:
            for line in lines:
                fh.write(f"# {line}\n")
            fh.write("time_s,position_m,velocity_m_per_s\n")
            np.savetxt(fh, data, delimiter=",", fmt="%.17g")
            fh.flush()
            os.fsync(fh.fileno())
    else:
        raise ValueError(f"unknown trajectory format {fmt!r}")


def read_trajectory(path) -> Trajectory:
    with open(path, "rb") as fh:
        first = fh.readline()
        if first == _MAGIC:
            header = {}
            for line in iter(fh.readline, b""):
                if line == _END:
                    break
                key, _, val = line.decode().rstrip("\n").partition("=")
                header[key] = val
            n = int(header["n_samples"])
            body = np.frombuffer(fh.read(), dtype="<f8")
            if body.size != 3 * n:
                raise ValueError("truncated trajectory file")
            cols = body.reshape(3, n)
            meta = json.loads(header.get("metadata", "{}"))
            return Trajectory(cols[0].copy(), cols[1].copy(), cols[2].copy(), meta)
    meta = {}
    with open(path) as fh:
        for line in fh:
            if line.startswith("# metadata="):
                meta = json.loads(line[len("# metadata="):])
    data = np.loadtxt(path, delimiter=",", skiprows=_leading_lines(path), ndmin=2)
    return Trajectory(data[:, 0], data[:, 1], data[:, 2], meta)


def _leading_lines(path):
    """Comment lines plus the column-name line preceding CSV data."""
    with open(path) as fh:
        for i, line in enumerate(fh):
            if not line.startswith("#"):
                return i + 1
    return 0
