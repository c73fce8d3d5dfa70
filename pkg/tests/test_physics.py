import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sidebandsim import physics as P
from sidebandsim.errors import ConfigError, DivergentOptimum, NoCooling
from sidebandsim.presets import TWO_PI, paper_cavity, paper_defaults, paper_particle, paper_trap

# Frozen values of an independent first-principles calculation (scipy.constants,
# Lorentzian sideband rates at Delta = -Omega, trap waist 845 nm).
MASS = 1.5141095965051304e-17
U0 = 62828.79625416991
G0 = 0.8734769963102607
N_TH = 61468026.41381635
GAMMA_M_LOW = 0.0008649092945771786
N_CAV_5W5 = 4775767232.437959
TRAP_PRODUCT = 20678.64427814025
GAMMA_CAV = 7.361116606145759e-08
N_OPT = 7837066.924306168
N_FMIN = 1567.429507547349
N_OPT_NO_TRAP = 6649807.382869346
N_FMIN_NO_TRAP = 1329.9775992599843
N_F_75MW = 6606.73764433924
T_75MW = 0.031707339877142963


def rel(a, b):
    return abs(a / b - 1)


# --- reference anchors ---------------------------------------------------------


def test_u0_anchor():
    assert rel(P.frequency_shift_u0(paper_particle(), paper_cavity()), TWO_PI * 10e3) < 0.10


def test_g0_anchor(reference):
    g0 = P.max_coupling_g0(reference.particle, reference.cavity, reference.omega_m)
    assert rel(g0, TWO_PI * 0.14) < 0.05


def test_damping_per_photon_anchor(reference):
    g0 = P.max_coupling_g0(reference.particle, reference.cavity, reference.omega_m)
    per_photon = P.optomechanical_damping(g0, 1.0, reference.cavity.kappa, -reference.omega_m, reference.omega_m)
    assert rel(per_photon, TWO_PI * 2e-6) < 0.15


def test_thermal_occupation_anchor():
    assert rel(P.thermal_occupation(TWO_PI * 100e3, 295.0), 6e7) < 0.05


def test_photon_number_anchor():
    assert rel(P.intracavity_photons(paper_cavity(), 5.5), 4.8e9) < 0.10


# --- independent oracle --------------------------------------------------------


def test_derived_quantities_match_oracle(reference):
    p, cav, om = reference.particle, reference.cavity, reference.omega_m
    assert rel(p.mass, MASS) < 1e-12
    assert rel(P.frequency_shift_u0(p, cav), U0) < 1e-12
    assert rel(P.max_coupling_g0(p, cav, om), G0) < 1e-12
    assert rel(P.thermal_occupation(om, 295.0), N_TH) < 1e-12
    assert rel(P.thermal_decoherence_rate(p, reference.environment), GAMMA_M_LOW) < 1e-12
    assert rel(P.intracavity_photons(cav, 5.5), N_CAV_5W5) < 1e-12
    assert rel(P.trap_recoil_product(p, reference.trap, om), TRAP_PRODUCT) < 1e-12
    assert rel(P.recoil_rate_cavity(p, cav, om), GAMMA_CAV) < 1e-12


def test_budget_matches_oracle(reference):
    b = reference.budget()
    assert rel(b.n_f, N_F_75MW) < 1e-12
    assert rel(b.t_com, T_75MW) < 1e-12


def test_optimum_matches_oracle(reference):
    assert rel(reference.optimal_photon_number(), N_OPT) < 1e-12
    assert rel(reference.min_phonon_occupation(), N_FMIN) < 1e-12
    bare = replace(reference, include_trap_recoil=False)
    assert rel(bare.optimal_photon_number(), N_OPT_NO_TRAP) < 1e-12
    assert rel(bare.min_phonon_occupation(), N_FMIN_NO_TRAP) < 1e-12


def test_closed_form_optimum_is_budget_minimum(reference):
    n_opt = reference.optimal_photon_number()
    at_opt = reference.with_n_cav(n_opt).budget()
    assert rel(at_opt.n_f, reference.min_phonon_occupation()) < 1e-12
    for factor in (0.9, 0.99, 1.01, 1.1):
        assert reference.with_n_cav(n_opt * factor).budget().n_f > at_opt.n_f


def test_phase_noise_balances_bath_at_optimum(reference):
    b = reference.with_n_cav(reference.optimal_photon_number()).budget()
    assert rel(b.n_phase, b.n_m + b.n_rad_t) < 1e-12


def test_backaction_limit_at_red_sideband(reference):
    kappa, om = reference.cavity.kappa, reference.omega_m
    assert rel(reference.budget().n_min, kappa**2 / (16 * om**2)) < 1e-12
    assert rel(P.backaction_occupation(kappa, -om, om), kappa**2 / (16 * om**2)) < 1e-12


def test_cavity_recoil_negligible(reference):
    assert reference.budget().n_rad_cav < 0.01


def test_noise_free_limit():
    s = replace(paper_defaults(pressure=0.0, s_phi=0.0), include_trap_recoil=False)
    b = s.budget()
    assert b.n_m == b.n_phase == b.n_rad_t == 0.0
    assert b.n_f == pytest.approx(b.n_min + b.n_rad_cav, rel=1e-15)
    assert b.n_f < 1


def test_cavity_response_halves_at_half_linewidth():
    cav = paper_cavity()
    assert P.cavity_response(cav, cav.kappa / 2) == pytest.approx(0.5, rel=1e-12)


def test_photons_from_input_power_on_resonance():
    cav = paper_cavity()
    expected = 0.5 * 1e-3 * cav.finesse / math.pi / P.power_per_photon(cav)
    assert P.photons_from_input_power(cav, 1e-3, 0.0, 0.5) == pytest.approx(expected, rel=1e-12)


def test_rms_coupling_reduces_to_profile():
    lam = 1064e-9
    for y in (0.0, 50e-9, lam / 8):
        assert P.rms_coupling_factor(y, 0.0, lam) == pytest.approx(abs(math.sin(4 * math.pi * y / lam)), abs=1e-15)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.0, 600e-9), st.floats(0.0, 150e-9))
def test_rms_coupling_matches_quadrature(y, spread):
    lam = 1064e-9
    x, w = np.polynomial.hermite.hermgauss(80)
    s = np.sin(4 * np.pi / lam * (y + math.sqrt(2) * spread * x))
    oracle = math.sqrt(np.dot(w, s**2) / math.sqrt(math.pi))
    assert P.rms_coupling_factor(y, spread, lam) == pytest.approx(oracle, abs=1e-9)


def test_rms_coupling_broad_spread_tends_to_half():
    assert P.rms_coupling_factor(0.0, 5e-6, 1064e-9) == pytest.approx(math.sqrt(0.5), rel=1e-6)


# --- errors -------------------------------------------------------------------


def test_blue_detuning_does_not_cool(reference):
    with pytest.raises(NoCooling):
        reference.with_drive(detuning=reference.omega_m).budget(exact=True)


def test_approximation_refused_when_gas_damping_dominates(reference):
    s = reference.with_pressure(1000.0)
    with pytest.raises(NoCooling):
        s.budget()
    assert s.budget(exact=True).n_f > 0


def test_divergent_optimum_without_phase_noise():
    s = paper_defaults(s_phi=0.0)
    with pytest.raises(DivergentOptimum):
        s.optimal_photon_number()
    with pytest.raises(DivergentOptimum):
        s.min_phonon_occupation()


def test_node_has_no_optimum(reference):
    with pytest.raises(NoCooling):
        reference.with_drive(position_y=0.0).optimal_photon_number()


@pytest.mark.parametrize(
    "factory",
    [
        lambda: P.Particle(radius=-1e-9),
        lambda: P.Particle(radius=1e-7, refractive_index=0.9),
        lambda: replace(paper_cavity(), linewidth_fwhm=TWO_PI * 60e3),
        lambda: replace(paper_cavity(), fsr_stated=TWO_PI * 7e9),
        lambda: P.Environment(pressure=-1.0),
        lambda: replace(paper_trap(), numerical_aperture=1.2),
        lambda: P.DriveState(detuning=0.0, n_cav=-1.0, position_y=0.0),
        lambda: P.NoiseModel(s_phi=-1.0),
        lambda: P.NoiseModel(band_low_mult=1.5),
    ],
)
def test_invalid_parameters_rejected(factory):
    with pytest.raises(ConfigError):
        factory()


def test_detuning_beyond_half_fsr_rejected(reference):
    with pytest.raises(ConfigError):
        reference.with_drive(detuning=-reference.cavity.fsr).budget()


# --- invariants ----------------------------------------------------------------

pressures = st.floats(1e-7, 1e4)
photons = st.floats(1e5, 1e10)
detunings = st.floats(-2.9, -0.1)
noise_levels = st.floats(0.0, 100.0)


def _system(pressure, n_cav, det_mult=-1.0, s_phi_hz=4.0):
    s = paper_defaults(pressure=pressure, s_phi=TWO_PI * s_phi_hz).with_n_cav(n_cav)
    return s.with_drive(detuning=det_mult * s.omega_m)


@settings(max_examples=200, deadline=None)
@given(pressures, photons, detunings, noise_levels)
def test_channels_sum_to_total(p, n, d, sphi):
    b = _system(p, n, d, sphi).budget(exact=True)
    assert b.n_f == pytest.approx(math.fsum(b.channels().values()), rel=1e-14)
    assert all(v >= 0 for v in b.channels().values())
    assert b.t_com == pytest.approx(P.temperature_from_phonons(b.n_f, b.omega_m), rel=1e-14)


@settings(max_examples=200, deadline=None)
@given(pressures, photons, detunings, noise_levels)
def test_exact_ratio_never_exceeds_approximation(p, n, d, sphi):
    s = _system(p, n, d, sphi)
    try:
        approx = s.budget()
    except NoCooling:
        return
    assert s.budget(exact=True).n_f <= approx.n_f * (1 + 1e-14)


@settings(max_examples=200, deadline=None)
@given(pressures, photons, st.floats(1.01, 10.0))
def test_thermal_channel_falls_with_photons(p, n, factor):
    a = _system(p, n).budget(exact=True)
    b = _system(p, n * factor).budget(exact=True)
    assert b.n_m < a.n_m
    assert b.n_phase >= a.n_phase


@settings(max_examples=200, deadline=None)
@given(pressures, photons, st.floats(0.0, 50.0))
def test_exact_budget_linear_in_phase_noise(p, n, sphi):
    base = _system(p, n, s_phi_hz=0.0).budget(exact=True).n_f
    unit = _system(p, n, s_phi_hz=1.0).budget(exact=True).n_f - base
    assert _system(p, n, s_phi_hz=sphi).budget(exact=True).n_f == pytest.approx(base + sphi * unit, rel=1e-10)


@settings(max_examples=200, deadline=None)
@given(st.floats(1e-3, 1e9), st.floats(1e-3, 3.0), st.booleans())
def test_damping_odd_in_detuning(n, mag, red):
    mult = -mag if red else mag
    om = TWO_PI * 100e3
    kappa = TWO_PI * 40e3
    g0 = 0.87
    a = P.optomechanical_damping(g0, n, kappa, mult * om, om)
    b = P.optomechanical_damping(g0, n, kappa, -mult * om, om)
    assert a == pytest.approx(-b, rel=1e-12, abs=1e-300)
    assert (a > 0) == red


@settings(max_examples=200, deadline=None)
@given(st.floats(-1e-5, 1e-5))
def test_coupling_profile_half_wavelength_periodic(y):
    lam = 1064e-9
    assert P.coupling_profile(y + lam / 2, lam) == pytest.approx(P.coupling_profile(y, lam), abs=1e-8)


@settings(max_examples=200, deadline=None)
@given(st.floats(1e-9, 1e4), st.floats(1e3, 1e7))
def test_temperature_phonon_round_trip(t, f):
    om = TWO_PI * f
    assert P.temperature_from_phonons(P.phonons_from_temperature(t, om), om) == pytest.approx(t, rel=1e-14)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.0, 600e-9), st.floats(0.0, 1e-6))
def test_rms_coupling_bounded(y, spread):
    assert 0.0 <= P.rms_coupling_factor(y, spread, 1064e-9) <= 1.0 + 1e-12


def test_system_photon_number_from_input_power(reference):
    s = replace(reference, input_power=4e-3)
    expected = P.photons_from_input_power(s.cavity, 4e-3, s.drive.detuning, s.coupling_efficiency)
    assert s.n_cav == expected
    assert s.resolved_drive().n_cav == expected
    assert s.with_n_cav(1.0).input_power is None
    assert np.isfinite(s.budget(exact=True).n_f)
