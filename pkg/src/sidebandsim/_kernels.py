"""Inner loop of the oscillator integrator.

One step is O(dt/2) R(dt) O(dt/2): an exact Ornstein-Uhlenbeck update of the
velocity (damping plus white force), an exact harmonic rotation of (y, v), and
a second OU half step. Two standard normals are consumed per step.

Two interchangeable backends are provided. ``numba`` compiles the loop;
``numpy`` diagonalises the linear step map and solves the resulting scalar
recurrences with chunked cumulative sums. Set ``SIDEBANDSIM_BACKEND=numpy`` to
force the fallback (it is also used when numba cannot be imported).
"""
from __future__ import annotations

import math
import os

import numpy as np

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

ENV_FLAG = "SIDEBANDSIM_BACKEND"
# Largest growth factor |lambda|^-B tolerated inside one cumsum block.
_MAX_BLOCK_GROWTH = 1e4
_MAX_BLOCK = 1 << 16


def default_backend() -> str:
    choice = os.environ.get(ENV_FLAG, "numba").strip().lower()
    if choice not in ("numba", "numpy"):
        raise ValueError(f"{ENV_FLAG} must be 'numba' or 'numpy', got {choice!r}")
    if choice == "numba" and not HAVE_NUMBA:
        return "numpy"
    return choice


def step_coefficients(omega, gamma, noise_psd_v, dt):
    """Coefficients of one integrator step.

    ``noise_psd_v`` is the two-sided velocity diffusion D_v, so that
    dv = -gamma v dt + sqrt(D_v) dW. Returns (a, s, cos, sin) where ``a`` and
    ``s`` are the damping factor and noise standard deviation of a half step.
    """
    h = 0.5 * dt
    a = math.exp(-gamma * h)
    if gamma != 0:
        var = noise_psd_v * (-math.expm1(-2 * gamma * h)) / (2 * gamma)
    else:
        var = noise_psd_v * h
    return a, math.sqrt(max(var, 0.0)), math.cos(omega * dt), math.sin(omega * dt)


def _propagate_py(y, v, noise, a, s, cs, sn, omega, decim, limit, ys, vs):
    k = 0
    for j in range(ys.shape[0]):
        for _ in range(decim):
            v = a * v + s * noise[k, 0]
            y, v = y * cs + v * sn / omega, v * cs - y * omega * sn
            v = a * v + s * noise[k, 1]
            k += 1
        ys[j] = y
        vs[j] = v
        if abs(y) > limit:
            return y, v, j
    return y, v, -1


if HAVE_NUMBA:
    _propagate_jit = numba.njit(cache=True, nogil=True)(_propagate_py)
else:  # pragma: no cover
    _propagate_jit = _propagate_py


def propagate_numba(y, v, noise, coeffs, omega, decim, limit):
    """Advance ``len(noise)`` steps, recording every ``decim``-th state."""
    a, s, cs, sn = coeffs
    n_out = noise.shape[0] // decim
    ys = np.empty(n_out)
    vs = np.empty(n_out)
    y, v, hit = _propagate_jit(float(y), float(v), noise, a, s, cs, sn, float(omega), int(decim), float(limit), ys, vs)
    if hit >= 0:
        ys, vs = ys[: hit + 1], vs[: hit + 1]
    return ys, vs, y, v, hit


def _linear_recurrence(lam, b, z0):
    """z[n+1] = lam z[n] + b[n]; returns z[1..N]."""
    n = b.shape[0]
    out = np.empty(n, dtype=complex)
    mag = abs(lam)
    if 0 < mag < 1:
        block = int(min(_MAX_BLOCK, max(1, math.log(_MAX_BLOCK_GROWTH) / -math.log(mag))))
    else:
        block = _MAX_BLOCK
    log_lam = np.log(complex(lam))
    j = np.arange(1, block + 1)
    powers = np.exp(j * log_lam)
    z = complex(z0)
    for start in range(0, n, block):
        bb = b[start : start + block]
        m = bb.shape[0]
        pw = powers[:m]
        seg = pw * (z + np.cumsum(bb / pw))
        out[start : start + m] = seg
        z = seg[-1]
    return out


def propagate_numpy(y, v, noise, coeffs, omega, decim, limit):
    """Vectorised equivalent of :func:`propagate_numba`."""
    a, s, cs, sn = coeffs
    rot = np.array([[cs, sn / omega], [-omega * sn, cs]])
    damp = np.diag([1.0, a])
    step = damp @ rot @ damp
    kick1 = s * (damp @ rot @ np.array([0.0, 1.0]))
    kick2 = np.array([0.0, s])
    lam, vec = np.linalg.eig(step)
    if np.linalg.cond(vec) > 1e8:
        # Near-critical damping: the step map is not safely diagonalisable.
        ys = np.empty(noise.shape[0] // decim)
        vs = np.empty_like(ys)
        y, v, hit = _propagate_py(float(y), float(v), noise, a, s, cs, sn, float(omega), int(decim), float(limit), ys, vs)
        if hit >= 0:
            ys, vs = ys[: hit + 1], vs[: hit + 1]
        return ys, vs, y, v, hit
    inv = np.linalg.inv(vec)
    forcing = np.outer(noise[:, 0], kick1) + np.outer(noise[:, 1], kick2)
    modal = forcing @ inv.T
    u0 = inv @ np.array([y, v], dtype=complex)
    u = np.empty((noise.shape[0], 2), dtype=complex)
    for i in range(2):
        u[:, i] = _linear_recurrence(lam[i], modal[:, i], u0[i])
    states = (u @ vec.T).real
    n_out = noise.shape[0] // decim
    rec = states[decim - 1 : n_out * decim : decim]
    ys = np.ascontiguousarray(rec[:, 0])
    vs = np.ascontiguousarray(rec[:, 1])
    over = np.flatnonzero(np.abs(ys) > limit)
    hit = int(over[0]) if over.size else -1
    if hit >= 0:
        ys, vs = ys[: hit + 1], vs[: hit + 1]
        return ys, vs, ys[-1], vs[-1], hit
    return ys, vs, states[-1, 0], states[-1, 1], -1


def propagate(y, v, noise, coeffs, omega, decim, limit, backend=None):
    backend = backend or default_backend()
    if backend == "numba":
        return propagate_numba(y, v, noise, coeffs, omega, decim, limit)
    return propagate_numpy(y, v, noise, coeffs, omega, decim, limit)
