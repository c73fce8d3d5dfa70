"""Closed-form model of cavity sideband cooling for a levitated particle.

SI units throughout. All frequencies and rates are angular (rad/s) unless a
name says ``_hz``. The motion is one-dimensional along the cavity axis ``y``
and the mechanical frequency is the trap's ``Omega_y``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import constants as const

from .errors import ConfigError, DivergentOptimum, NoCooling

HBAR = const.hbar
KB = const.k
C_LIGHT = const.c
EPS0 = const.epsilon_0
AMU = const.atomic_mass

# Prefactor of the free-molecular gas damping rate.
GAS_DAMPING_PREFACTOR = 15.8
# Approximated budget requires the optical damping to dominate by this factor.
WEAK_COUPLING_MARGIN = 10.0


def _require(cond, msg):
    if not cond:
        raise ConfigError(msg)


@dataclass(frozen=True)
class Particle:
    """Dielectric sphere.

    Parameters
    ----------
    radius : float
        Sphere radius [m].
    density : float
        Mass density [kg/m^3].
    refractive_index : float
        Real refractive index at the cavity wavelength.
    """

    radius: float
    density: float = 2200.0
    refractive_index: float = 1.45

    def __post_init__(self):
        _require(self.radius > 0, "particle radius must be positive")
        _require(self.density > 0, "particle density must be positive")
        _require(self.refractive_index > 1, "refractive index must exceed 1")

    @property
    def mass(self) -> float:
        return 4.0 / 3.0 * math.pi * self.radius**3 * self.density


@dataclass(frozen=True)
class Cavity:
    """Fabry-Perot cavity. ``linewidth_fwhm`` is the angular FWHM (kappa)."""

    length: float
    waist: float
    wavelength: float
    finesse: float
    linewidth_fwhm: float
    fsr_stated: float | None = None

    def __post_init__(self):
        for name in ("length", "waist", "wavelength", "finesse", "linewidth_fwhm"):
            _require(getattr(self, name) > 0, f"cavity {name} must be positive")
        if self.fsr_stated is not None:
            _require(
                abs(self.fsr_stated / self.fsr - 1) <= 0.01,
                "stated FSR inconsistent with cavity length (>1%)",
            )
        _require(
            abs(self.linewidth_fwhm / (self.fsr / self.finesse) - 1) <= 0.05,
            "cavity linewidth inconsistent with FSR/finesse (>5%)",
        )

    @property
    def kappa(self) -> float:
        return self.linewidth_fwhm

    @property
    def fsr(self) -> float:
        """Free spectral range, angular."""
        return 2 * math.pi * C_LIGHT / (2 * self.length)

    @property
    def mode_volume(self) -> float:
        return math.pi * self.length * self.waist**2 / 4

    @property
    def wavenumber(self) -> float:
        return 2 * math.pi / self.wavelength

    @property
    def omega(self) -> float:
        """Resonance frequency, angular."""
        return 2 * math.pi * C_LIGHT / self.wavelength


@dataclass(frozen=True)
class Trap:
    """Optical tweezer. ``mech_freqs`` are angular (x, y, z) frequencies."""

    wavelength: float = 1550e-9
    power: float = 0.185
    numerical_aperture: float = 0.8
    waist: float = 845e-9
    mech_freqs: tuple = (2 * math.pi * 90e3, 2 * math.pi * 100e3, 2 * math.pi * 25e3)

    def __post_init__(self):
        _require(self.wavelength > 0, "trap wavelength must be positive")
        _require(self.power >= 0, "trap power must be non-negative")
        _require(0 < self.numerical_aperture <= 1, "NA must lie in (0, 1]")
        _require(self.waist > self.wavelength / 10, "trap waist must exceed wavelength/10")
        _require(len(self.mech_freqs) == 3, "mech_freqs needs three entries")
        _require(all(f > 0 for f in self.mech_freqs), "mechanical frequencies must be positive")
        object.__setattr__(self, "mech_freqs", tuple(float(f) for f in self.mech_freqs))

    @property
    def omega_y(self) -> float:
        return self.mech_freqs[1]

    @property
    def wavenumber(self) -> float:
        return 2 * math.pi / self.wavelength


def diffraction_limited_waist(wavelength, numerical_aperture):
    return wavelength / (math.pi * numerical_aperture)


@dataclass(frozen=True)
class Environment:
    pressure: float
    temperature: float = 295.0
    gas_molecular_mass: float = 28.97 * AMU

    def __post_init__(self):
        _require(self.pressure >= 0, "pressure must be non-negative")
        _require(self.temperature > 0, "temperature must be positive")
        _require(self.gas_molecular_mass > 0, "gas molecular mass must be positive")
        _require(math.isfinite(self.gas_velocity), "gas velocity not finite")

    @property
    def gas_velocity(self) -> float:
        """RMS thermal speed of the residual gas."""
        return math.sqrt(3 * KB * self.temperature / self.gas_molecular_mass)


@dataclass(frozen=True)
class DriveState:
    """Cavity drive. ``detuning`` = omega_laser - omega_cav (negative is red)."""

    detuning: float
    n_cav: float
    position_y: float

    def __post_init__(self):
        _require(self.n_cav >= 0, "n_cav must be non-negative")


@dataclass(frozen=True)
class NoiseModel:
    """Laser phase noise at the mechanical frequency.

    ``s_phi`` is the angular-unit value [1/s] entering
    ``Gamma_phase = s_phi * Gamma_opt / kappa``.
    """

    s_phi: float = 2 * math.pi * 4.0
    band_low_mult: float = 0.5
    band_high_mult: float = 2.0

    def __post_init__(self):
        _require(self.s_phi >= 0, "s_phi must be non-negative")
        _require(
            0 < self.band_low_mult <= 1 <= self.band_high_mult,
            "band multipliers must satisfy 0 < low <= 1 <= high",
        )

    def scaled(self, mult) -> NoiseModel:
        return replace(self, s_phi=self.s_phi * mult)


@dataclass(frozen=True)
class PhononBudget:
    """Per-channel phonon occupations of the cooled mode.

    In the approximated form each channel is ``Gamma_i n_i / Gamma_opt``; in the
    exact-ratio form (``exact=True``) it is ``Gamma_i n_i / (Gamma_opt + Gamma_m)``.
    Either way ``n_f`` is the sum of the five channels.
    """

    n_min: float
    n_m: float
    n_rad_cav: float
    n_phase: float
    n_rad_t: float
    n_f: float
    t_com: float
    gamma_opt: float = 0.0
    gamma_m: float = 0.0
    n_cav: float = 0.0
    omega_m: float = 0.0
    exact: bool = False

    def channels(self) -> dict:
        return {
            "n_min": self.n_min,
            "n_m": self.n_m,
            "n_rad_cav": self.n_rad_cav,
            "n_phase": self.n_phase,
            "n_rad_t": self.n_rad_t,
        }

    def as_dict(self) -> dict:
        d = self.channels()
        d.update(
            n_f=self.n_f,
            t_com=self.t_com,
            gamma_opt=self.gamma_opt,
            gamma_m=self.gamma_m,
            n_cav=self.n_cav,
            omega_m=self.omega_m,
            exact=self.exact,
        )
        return d


# --- coupling -----------------------------------------------------------------


def polarizability(particle: Particle) -> float:
    """Clausius-Mossotti polarizability [C m^2 / V]."""
    n2 = particle.refractive_index**2
    return 4 * math.pi * EPS0 * particle.radius**3 * (n2 - 1) / (n2 + 2)


def frequency_shift_u0(particle: Particle, cavity: Cavity) -> float:
    """Cavity resonance shift from the particle at the field maximum."""
    return cavity.omega * polarizability(particle) / (2 * EPS0 * cavity.mode_volume)


def zero_point_fluctuation(particle: Particle, omega_m: float) -> float:
    return math.sqrt(HBAR / (2 * particle.mass * omega_m))


def coupling_profile(position_y, wavelength):
    """sin(2 k y); unity at y = wavelength / 8."""
    return np.sin(2 * (2 * np.pi / wavelength) * np.asarray(position_y, dtype=float))


def rms_coupling_factor(position_y, spread, wavelength):
    """RMS of sin(2ky) for a particle smeared over a Gaussian of std ``spread``.

    <sin^2(2k(y + d))> = (1 - cos(4ky) exp(-8 k^2 spread^2)) / 2 in closed form.
    """
    k = 2 * math.pi / wavelength
    mean_sq = 0.5 * (1 - math.cos(4 * k * position_y) * math.exp(-8 * (k * spread) ** 2))
    return math.sqrt(max(mean_sq, 0.0))


def single_photon_coupling_g0(particle, cavity, omega_m, position_y, coupling_factor=None):
    """Single-photon coupling g0 at ``position_y`` (sign kept).

    ``coupling_factor`` replaces sin(2ky) when given, e.g. a position-averaged
    value from :func:`rms_coupling_factor`.
    """
    profile = coupling_profile(position_y, cavity.wavelength) if coupling_factor is None else coupling_factor
    return (
        frequency_shift_u0(particle, cavity)
        * profile
        * cavity.wavenumber
        * zero_point_fluctuation(particle, omega_m)
    )


def max_coupling_g0(particle, cavity, omega_m):
    return single_photon_coupling_g0(particle, cavity, omega_m, 0.0, coupling_factor=1.0)


def antinode_position(cavity: Cavity) -> float:
    return cavity.wavelength / 8


# --- photon number ------------------------------------------------------------


def power_per_photon(cavity: Cavity) -> float:
    """Circulating power carried by one intracavity photon [W]."""
    return HBAR * cavity.omega * C_LIGHT / (2 * cavity.length)


def intracavity_photons(cavity: Cavity, p_intra):
    """Intracavity photon number for circulating power ``p_intra`` [W]."""
    return p_intra / power_per_photon(cavity)


def intracavity_power(cavity: Cavity, n_cav):
    return n_cav * power_per_photon(cavity)


def cavity_response(cavity: Cavity, detuning):
    """Lorentzian buildup relative to resonance."""
    return 1.0 / (1.0 + (2.0 * np.asarray(detuning) / cavity.kappa) ** 2)


def photons_from_input_power(cavity: Cavity, p_in, detuning, efficiency):
    """Photon number for input power ``p_in`` at ``detuning``.

    On resonance the circulating power is ``efficiency * p_in * F / pi``.
    """
    p_res = efficiency * p_in * cavity.finesse / math.pi
    return float(intracavity_photons(cavity, p_res) * cavity_response(cavity, detuning))


# --- rates --------------------------------------------------------------------


def _scattering_rates(g0, n_cav, kappa, detuning, omega_m):
    """Anti-Stokes (cooling) and Stokes (heating) rates."""
    g2 = g0 * g0 * n_cav
    a_minus = g2 * kappa / (kappa**2 / 4 + (detuning + omega_m) ** 2)
    a_plus = g2 * kappa / (kappa**2 / 4 + (detuning - omega_m) ** 2)
    return a_minus, a_plus


def optomechanical_damping(g0, n_cav, kappa, detuning, omega_m):
    """Net optical damping rate Gamma_opt; positive for red detuning."""
    a_minus, a_plus = _scattering_rates(g0, n_cav, kappa, detuning, omega_m)
    return a_minus - a_plus


def backaction_occupation(kappa, detuning, omega_m):
    """Quantum backaction limit n_min = A+ / (A- - A+); kappa^2/(16 Omega^2) at -Omega."""
    if detuning >= 0:
        return math.inf
    return (kappa**2 / 4 + (detuning + omega_m) ** 2) / (-4 * detuning * omega_m)


def thermal_decoherence_rate(particle: Particle, environment: Environment) -> float:
    """Gas damping rate Gamma_m in the free-molecular regime."""
    return (
        GAS_DAMPING_PREFACTOR
        * particle.radius**2
        * environment.pressure
        / (particle.mass * environment.gas_velocity)
    )


def thermal_occupation(omega_m, temperature):
    """Classical occupation k_B T / (hbar Omega)."""
    return KB * temperature / (HBAR * omega_m)


def temperature_from_phonons(n, omega_m):
    return n * HBAR * omega_m / KB


def phonons_from_temperature(temperature, omega_m):
    return temperature * KB / (HBAR * omega_m)


def recoil_rate_cavity(particle: Particle, cavity: Cavity, omega_m) -> float:
    """Cavity shot-noise recoil coupling Gamma_cav (per intracavity photon).

    ``Gamma_cav * n_cav`` is the recoil heating rate in phonons per second.
    """
    a = polarizability(particle) / EPS0
    x_zpf = zero_point_fluctuation(particle, omega_m)
    return a**2 * cavity.wavenumber**6 * C_LIGHT * x_zpf**2 / (120 * math.pi * cavity.mode_volume)


def trap_recoil_product(particle: Particle, trap: Trap, omega_m) -> float:
    """Tweezer shot-noise heating Gamma_t * n_t in phonons per second."""
    a = polarizability(particle) / EPS0
    return (
        a**2
        * trap.wavenumber**5
        * trap.power
        / (15 * math.pi**2 * C_LIGHT * particle.mass * omega_m * trap.waist**2)
    )


def phase_noise_rate(noise: NoiseModel, g0, n_cav, kappa, gamma_opt=None):
    """Phase-noise coupling Gamma_phase = s_phi * Gamma_opt / kappa.

    Without ``gamma_opt`` the resolved-sideband optimum 4 g0^2 n_cav / kappa
    is assumed.
    """
    if gamma_opt is None:
        gamma_opt = 4 * g0**2 * n_cav / kappa
    return noise.s_phi * gamma_opt / kappa


# --- budget -------------------------------------------------------------------


@dataclass(frozen=True)
class _Rates:
    omega_m: float
    g0: float
    n_cav: float
    gamma_opt: float
    stokes: float
    gamma_m: float
    n_th: float
    gamma_cav: float
    gamma_phase: float
    trap_product: float


def _rates(particle, cavity, trap, environment, drive, noise, include_trap_recoil, coupling_factor):
    omega_m = trap.omega_y
    _require(
        abs(drive.detuning) < cavity.fsr / 2, "detuning must lie within half a free spectral range"
    )
    g0 = single_photon_coupling_g0(particle, cavity, omega_m, drive.position_y, coupling_factor)
    a_minus, a_plus = _scattering_rates(g0, drive.n_cav, cavity.kappa, drive.detuning, omega_m)
    gamma_opt = a_minus - a_plus
    return _Rates(
        omega_m=omega_m,
        g0=float(g0),
        n_cav=drive.n_cav,
        gamma_opt=float(gamma_opt),
        stokes=float(a_plus),
        gamma_m=thermal_decoherence_rate(particle, environment),
        n_th=thermal_occupation(omega_m, environment.temperature),
        gamma_cav=recoil_rate_cavity(particle, cavity, omega_m),
        gamma_phase=noise.s_phi * float(gamma_opt) / cavity.kappa,
        trap_product=trap_recoil_product(particle, trap, omega_m) if include_trap_recoil else 0.0,
    )


def phonon_budget(
    particle: Particle,
    cavity: Cavity,
    trap: Trap,
    environment: Environment,
    drive: DriveState,
    noise: NoiseModel,
    *,
    include_trap_recoil: bool = True,
    exact: bool = False,
    coupling_factor: float | None = None,
) -> PhononBudget:
    """Steady-state phonon occupation split into its five channels.

    The default form divides every heating term by Gamma_opt and is valid only
    while optical damping dominates; :class:`NoCooling` is raised otherwise.
    ``exact=True`` divides by the total damping Gamma_opt + Gamma_m instead and
    holds for any Gamma_opt > 0.
    """
    r = _rates(particle, cavity, trap, environment, drive, noise, include_trap_recoil, coupling_factor)
    if not r.gamma_opt > 0:
        raise NoCooling(
            f"no optical cooling (Gamma_opt = {r.gamma_opt:.3g} 1/s)", r.gamma_opt, r.gamma_m
        )
    if exact:
        denom = r.gamma_opt + r.gamma_m
    else:
        if r.gamma_opt < WEAK_COUPLING_MARGIN * max(r.gamma_m, r.gamma_phase):
            raise NoCooling(
                f"Gamma_opt = {r.gamma_opt:.3g} 1/s does not dominate "
                f"Gamma_m = {r.gamma_m:.3g} 1/s; use the exact-ratio form",
                r.gamma_opt,
                r.gamma_m,
            )
        denom = r.gamma_opt
    n_min = r.stokes / denom
    n_m = r.gamma_m * r.n_th / denom
    n_rad_cav = r.gamma_cav * r.n_cav / denom
    n_phase = r.gamma_phase * r.n_cav / denom
    n_rad_t = r.trap_product / denom
    n_f = math.fsum((n_min, n_m, n_rad_cav, n_phase, n_rad_t))
    return PhononBudget(
        n_min=n_min,
        n_m=n_m,
        n_rad_cav=n_rad_cav,
        n_phase=n_phase,
        n_rad_t=n_rad_t,
        n_f=n_f,
        t_com=temperature_from_phonons(n_f, r.omega_m),
        gamma_opt=r.gamma_opt,
        gamma_m=r.gamma_m,
        n_cav=r.n_cav,
        omega_m=r.omega_m,
        exact=exact,
    )


def _optimum_terms(particle, cavity, trap, environment, noise, detuning, position_y, include_trap_recoil):
    omega_m = trap.omega_y
    if detuning is None:
        detuning = -omega_m
    if position_y is None:
        position_y = antinode_position(cavity)
    g0 = single_photon_coupling_g0(particle, cavity, omega_m, position_y)
    if g0 == 0:
        raise NoCooling("particle sits at a node of the cavity field")
    per_photon = optomechanical_damping(g0, 1.0, cavity.kappa, detuning, omega_m)
    if per_photon <= 0:
        raise NoCooling("drive detuning does not cool")
    x = thermal_decoherence_rate(particle, environment) * thermal_occupation(
        omega_m, environment.temperature
    )
    if include_trap_recoil:
        x += trap_recoil_product(particle, trap, omega_m)
    return x, per_photon, detuning, position_y


def optimal_photon_number(
    particle, cavity, trap, environment, noise, *, detuning=None, position_y=None,
    include_trap_recoil=True,
) -> float:
    """Photon number minimising the approximated budget.

    Balances the effective thermal bath ``X = Gamma_m n_th + Gamma_t n_t``
    against phase-noise heating. Defaults: detuning -Omega_y at an antinode,
    where the result reduces to sqrt(X kappa^2 / (4 g0^2 S_phi)).
    """
    if noise.s_phi <= 0:
        raise DivergentOptimum("without phase noise the occupation decreases for all n_cav")
    x, per_photon, _, _ = _optimum_terms(
        particle, cavity, trap, environment, noise, detuning, position_y, include_trap_recoil
    )
    return math.sqrt(x * cavity.kappa / (per_photon * noise.s_phi))


def min_phonon_occupation(
    particle, cavity, trap, environment, noise, *, detuning=None, position_y=None,
    include_trap_recoil=True,
) -> float:
    """Lowest reachable occupation, attained at :func:`optimal_photon_number`.

    At the optimum the phase-noise phonons equal the effective thermal-bath
    phonons, giving ``n_min + n_rad_cav + 2 sqrt(X S_phi / (G kappa))`` with
    ``G`` the optical damping per photon.
    """
    if noise.s_phi <= 0:
        raise DivergentOptimum("without phase noise the occupation decreases for all n_cav")
    x, per_photon, detuning, position_y = _optimum_terms(
        particle, cavity, trap, environment, noise, detuning, position_y, include_trap_recoil
    )
    omega_m = trap.omega_y
    g0 = single_photon_coupling_g0(particle, cavity, omega_m, position_y)
    _, stokes = _scattering_rates(g0, 1.0, cavity.kappa, detuning, omega_m)
    offsets = stokes / per_photon + recoil_rate_cavity(particle, cavity, omega_m) / per_photon
    return offsets + 2 * math.sqrt(x * noise.s_phi / (per_photon * cavity.kappa))


# --- parameter bundle ---------------------------------------------------------


@dataclass(frozen=True)
class SystemParams:
    """Full parameter record for one operating point.

    When ``input_power`` [W] is set the photon number follows from the cavity
    response at the drive detuning and ``drive.n_cav`` is ignored.
    """

    particle: Particle
    cavity: Cavity
    trap: Trap
    environment: Environment
    drive: DriveState
    noise: NoiseModel = field(default_factory=NoiseModel)
    input_power: float | None = None
    coupling_efficiency: float = 0.064
    include_trap_recoil: bool = True
    position_average: bool = False

    def __post_init__(self):
        _require(0 < self.coupling_efficiency <= 1, "coupling efficiency must lie in (0, 1]")
        if self.input_power is not None:
            _require(self.input_power >= 0, "input power must be non-negative")

    @property
    def omega_m(self) -> float:
        return self.trap.omega_y

    @property
    def n_cav(self) -> float:
        if self.input_power is None:
            return self.drive.n_cav
        return photons_from_input_power(
            self.cavity, self.input_power, self.drive.detuning, self.coupling_efficiency
        )

    def resolved_drive(self) -> DriveState:
        return replace(self.drive, n_cav=self.n_cav)

    def with_pressure(self, pressure) -> SystemParams:
        return replace(self, environment=replace(self.environment, pressure=pressure))

    def with_drive(self, **changes) -> SystemParams:
        return replace(self, drive=replace(self.drive, **changes))

    def with_n_cav(self, n_cav) -> SystemParams:
        return replace(self, drive=replace(self.drive, n_cav=n_cav), input_power=None)

    def with_noise(self, noise) -> SystemParams:
        return replace(self, noise=noise)

    def budget(self, *, exact=False, coupling_factor=None) -> PhononBudget:
        return phonon_budget(
            self.particle,
            self.cavity,
            self.trap,
            self.environment,
            self.resolved_drive(),
            self.noise,
            include_trap_recoil=self.include_trap_recoil,
            exact=exact,
            coupling_factor=coupling_factor,
        )

    def optimal_photon_number(self) -> float:
        return optimal_photon_number(
            self.particle, self.cavity, self.trap, self.environment, self.noise,
            detuning=self.drive.detuning, position_y=self.drive.position_y,
            include_trap_recoil=self.include_trap_recoil,
        )

    def min_phonon_occupation(self) -> float:
        return min_phonon_occupation(
            self.particle, self.cavity, self.trap, self.environment, self.noise,
            detuning=self.drive.detuning, position_y=self.drive.position_y,
            include_trap_recoil=self.include_trap_recoil,
        )
