"""PSD thermometry: averaged periodograms, ROI integration, calibration."""
from __future__ import annotations

import math
import os
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate, signal

from .dynamics import Trajectory
from .errors import BadReference, RoiOutOfBand, TooShort
from .physics import KB, Environment, Particle, thermal_decoherence_rate

DEFAULT_SEGMENT = 2e-3
DEFAULT_SEGMENTS = 100
DEFAULT_HALF_WIDTH = 15e3
DEFAULT_REPEATS = 10


@dataclass
class Spectrum:
    """One-sided displacement PSD [m^2/Hz] on bins 0 .. sample_rate/2."""

    frequencies: np.ndarray
    psd: np.ndarray
    n_segments_averaged: int
    segment_duration: float

    @property
    def df(self) -> float:
        return float(self.frequencies[1] - self.frequencies[0])

    def total_power(self) -> float:
        return math.fsum(self.psd * self.df)


@dataclass
class RoiResult:
    mean_square: float
    t_com: float
    roi: tuple
    stderr: float = 0.0
    temperatures: np.ndarray | None = None


def _positions(x):
    return x.positions if isinstance(x, Trajectory) else np.asarray(x, dtype=float)


def _rate(x, sample_rate):
    if isinstance(x, Trajectory):
        return x.sample_rate
    if sample_rate is None:
        raise ValueError("sample_rate required for raw arrays")
    return sample_rate


def averaged_psd(
    traj, segment_duration=DEFAULT_SEGMENT, n_segments=DEFAULT_SEGMENTS, *,
    sample_rate=None, window=None, offset=0,
) -> Spectrum:
    """Bartlett average of non-overlapping periodograms.

    With the default rectangular window the integrated PSD equals the mean
    square of the samples used (Parseval).
    """
    x = _positions(traj)
    fs = _rate(traj, sample_rate)
    seg = int(round(segment_duration * fs))
    if seg < 2 or seg % 2:
        raise ValueError("segment must hold an even number (>= 2) of samples")
    need = offset + seg * n_segments
    if n_segments < 1 or x.size < need:
        raise TooShort(f"need {need} samples for {n_segments} segments, have {x.size}")
    block = x[offset:need].reshape(n_segments, seg)
    if window is None:
        w = np.ones(seg)
    else:
        w = signal.get_window(window, seg, fftbins=True)
    spec = np.fft.rfft(block * w, axis=1)
    power = (spec.real**2 + spec.imag**2).mean(axis=0)
    psd = power / (fs * np.sum(w * w))
    psd[1:-1] *= 2.0
    freqs = np.fft.rfftfreq(seg, d=1.0 / fs)
    return Spectrum(freqs, psd, n_segments, float(seg / fs))


def _roi_mask(spec: Spectrum, center, half_width):
    nyq = spec.frequencies[-1]
    lo, hi = center - half_width, center + half_width
    if half_width <= 0 or lo < 0 or hi > nyq:
        raise RoiOutOfBand(f"ROI [{lo:g}, {hi:g}] Hz outside [0, {nyq:g}] Hz")
    return (spec.frequencies >= lo) & (spec.frequencies <= hi)


def integrate_roi(spec: Spectrum, center, half_width=DEFAULT_HALF_WIDTH) -> float:
    """Mean square displacement inside ``center +- half_width`` [m^2]."""
    mask = _roi_mask(spec, center, half_width)
    return math.fsum(spec.psd[mask] * spec.df)


def temperature_from_variance(mean_square, particle: Particle, omega_m) -> float:
    return particle.mass * omega_m**2 * mean_square / KB


def variance_from_temperature(temperature, particle: Particle, omega_m) -> float:
    return KB * temperature / (particle.mass * omega_m**2)


def estimate_uncertainty(repeats) -> float:
    """Sample standard deviation of repeated temperatures."""
    temps = [r.t_com if isinstance(r, RoiResult) else float(r) for r in repeats]
    if len(temps) < 2:
        raise ValueError("need at least two repeats")
    return float(np.std(temps, ddof=1))


def measure_temperature(
    traj: Trajectory, particle: Particle, omega_m, *, n_repeats=DEFAULT_REPEATS,
    segment_duration=DEFAULT_SEGMENT, n_segments=DEFAULT_SEGMENTS,
    half_width=DEFAULT_HALF_WIDTH, scale=1.0, discard=0.0,
) -> RoiResult:
    """Full thermometry: ``n_repeats`` averaged PSDs, ROI sums, temperatures.

    ``scale`` converts detector units to metres; ``discard`` is skipped at the
    start of the trace (seconds). The returned ``stderr`` is the standard
    deviation of the repeats.
    """
    fs = traj.sample_rate
    seg = int(round(segment_duration * fs))
    start = int(round(discard * fs))
    per_repeat = seg * n_segments
    if traj.times.size < start + n_repeats * per_repeat:
        raise TooShort(
            f"{n_repeats} repeats x {n_segments} segments need "
            f"{(start + n_repeats * per_repeat) / fs:g} s of data"
        )
    center = omega_m / (2 * math.pi)
    x = traj.positions * scale
    squares, temps = [], []
    for i in range(n_repeats):
        spec = averaged_psd(x, segment_duration, n_segments, sample_rate=fs, offset=start + i * per_repeat)
        ms = integrate_roi(spec, center, half_width)
        squares.append(ms)
        temps.append(temperature_from_variance(ms, particle, omega_m))
    temps = np.asarray(temps)
    stderr = float(temps.std(ddof=1)) if n_repeats > 1 else 0.0
    mean_square = float(np.mean(squares))
    return RoiResult(
        mean_square=mean_square,
        t_com=temperature_from_variance(mean_square, particle, omega_m),
        roi=(center - half_width, center + half_width),
        stderr=stderr,
        temperatures=temps,
    )


def roi_capture_fraction(omega_m, gamma, half_width):
    """Share of a damped oscillator's variance inside the ROI (angular damping)."""
    if gamma <= 0:
        return 1.0
    lo = max(0.0, omega_m - 2 * math.pi * half_width)
    hi = omega_m + 2 * math.pi * half_width

    def lineshape(w):
        return 1.0 / ((omega_m**2 - w * w) ** 2 + (gamma * w) ** 2)

    inside, _ = integrate.quad(lineshape, lo, hi, points=[omega_m], limit=200, epsabs=0, epsrel=1e-10)
    return inside / (math.pi / (2 * gamma * omega_m**2))


def peak_snr(spec: Spectrum, center, half_width) -> float:
    mask = _roi_mask(spec, center, half_width)
    floor = np.median(spec.psd[~mask][1:])
    peak = spec.psd[mask].max()
    return math.inf if floor <= 0 else float(peak / floor)


def calibrate(
    raw: Trajectory, reference: Environment, particle: Particle, omega_m, *,
    half_width=DEFAULT_HALF_WIDTH, segment_duration=DEFAULT_SEGMENT,
    n_segments=None, lineshape_correction=True, min_snr=10.0,
) -> float:
    """Metres per detector unit from a trace thermalised at ``reference``.

    scale = sqrt(k_B T / (m Omega^2 <raw^2>_ROI)). With ``lineshape_correction``
    the ROI mean square is first divided by the fraction of the Lorentzian
    captured by the ROI at the reference gas damping, which matters at high
    calibration pressures where the peak is broad.
    """
    if reference.pressure < 100.0:
        warnings.warn("calibration below 1 mbar: gas damping may not dominate", stacklevel=2)
    fs = raw.sample_rate
    if n_segments is None:
        n_segments = int(raw.times.size // int(round(segment_duration * fs)))
    spec = averaged_psd(raw, segment_duration, n_segments)
    center = omega_m / (2 * math.pi)
    snr = peak_snr(spec, center, half_width)
    if snr < min_snr:
        raise BadReference(f"ROI peak SNR {snr:.3g} below {min_snr:g}")
    ms = integrate_roi(spec, center, half_width)
    if ms <= 0:
        raise BadReference("no power in the ROI")
    if lineshape_correction:
        ms /= roi_capture_fraction(omega_m, thermal_decoherence_rate(particle, reference), half_width)
    return math.sqrt(KB * reference.temperature / (particle.mass * omega_m**2 * ms))


def with_white_floor(traj: Trajectory, psd_level, seed=0) -> Trajectory:
    """Add a white one-sided position noise floor [units^2/Hz]."""
    sigma = math.sqrt(psd_level * traj.sample_rate / 2)
    noise = np.random.default_rng(seed).normal(0.0, sigma, traj.positions.size)
    return Trajectory(traj.times, traj.positions + noise, traj.velocities, dict(traj.metadata))


def write_spectrum(path, spec: Spectrum, header=None):
    """CSV with ``# key: value`` metadata lines above the two columns."""
    with open(path, "w") as fh:
        fh.write(f"# n_segments_averaged: {spec.n_segments_averaged}\n")
        fh.write(f"# segment_duration_s: {float(spec.segment_duration)!r}\n")
        for k, v in (header or {}).items():
            fh.write(f"# {k}: {v}\n")
        fh.write("frequency_hz,psd_m2_per_hz\n")
        np.savetxt(fh, np.column_stack([spec.frequencies, spec.psd]), delimiter=",", fmt="%.17g")
        fh.flush()
        os.fsync(fh.fileno())


def read_spectrum(path) -> Spectrum:
    meta = {}
    with open(path) as fh:
        for line in fh:
            if line.startswith("#"):
                k, _, v = line[1:].strip().partition(": ")
                meta[k] = v
    data = np.loadtxt(path, delimiter=",", skiprows=_leading_lines(path), ndmin=2)
    return Spectrum(
        data[:, 0], data[:, 1], int(meta.get("n_segments_averaged", 1)),
        float(meta.get("segment_duration_s", 0.0)),
    )


def _leading_lines(path):
    """Comment lines plus the column-name line preceding CSV data."""
    with open(path) as fh:
        for i, line in enumerate(fh):
            if not line.startswith("#"):
                return i + 1
    return 0
