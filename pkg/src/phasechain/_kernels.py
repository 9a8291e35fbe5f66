"""Compiled inner loop of the Monte-Carlo integrator.

One call advances a single trajectory through a block of steps whose
Gaussian noise has already been drawn, so the random stream layout is
fixed by the caller and independent of block size or thread count.
"""
import numpy as np
from numba import njit

OK = -1


@njit(cache=True, nogil=True)
def _matvec(U, psi, out):
    n = psi.shape[0]
    for i in range(n):
        acc = 0.0 + 0.0j
        for k in range(n):
            acc += U[i, k] * psi[k]
        out[i] = acc


@njit(cache=True, nogil=True)
def _thermostat(psi, z, offset, a, s_left, s_right):
    n = psi.shape[0]
    psi[0] = a * psi[0] + s_left * (z[offset] + 1j * z[offset + 1])
    psi[n - 1] = a * psi[n - 1] + s_right * (z[offset + 2] + 1j * z[offset + 3])


@njit(cache=True, nogil=True)
def _observables(psi, is_open, obs):
    """Fill obs with [rho (N), current (bonds), E_{x-1,x+1} (sites), mass]."""
    n = psi.shape[0]
    nb = n - 1 if is_open else n
    k = 0
    mass = 0.0
    for x in range(n):
        r = psi[x].real * psi[x].real + psi[x].imag * psi[x].imag
        obs[k] = r
        mass += r
        k += 1
    for x in range(nb):
        a = psi[x]
        b = psi[(x + 1) % n]
        obs[k] = 2.0 * (a.imag * b.real - a.real * b.imag)
        k += 1
    if is_open:
        for x in range(1, n - 1):
            a = psi[x - 1]
            b = psi[x + 1]
            obs[k] = 2.0 * (a.real * b.real + a.imag * b.imag)
            k += 1
    else:
        for x in range(n):
            a = psi[(x - 1) % n]
            b = psi[(x + 1) % n]
            obs[k] = 2.0 * (a.real * b.real + a.imag * b.imag)
            k += 1
    obs[k] = mass
    return mass


@njit(cache=True, nogil=True)
def advance(psi, U_half, phase_z, bath_z, sqrt_gdt, a_half, s_left, s_right, is_open,
            measure, count, mean, m2, obs, mass_rec, rec_every, mass_ref,
            drift, debug_tol):
    """Advance ``psi`` in place by ``phase_z.shape[0]`` symmetric split steps.

    Each step is: half OU thermostat, half unitary hopping, exact phase
    rotation, half unitary hopping, half OU thermostat.  When ``measure`` is
    set, a Welford update of (mean, m2) is done after every step and the
    total mass is stored every ``rec_every`` steps.

    Returns OK, or the index of the first step whose state is not finite
    (offset by ``phase_z.shape[0]`` when the per-step mass check fails).
    """
    n_steps = phase_z.shape[0]
    n = psi.shape[0]
    work = np.empty(n, dtype=np.complex128)
    prev_mass = 0.0
    for x in range(n):
        prev_mass += psi[x].real * psi[x].real + psi[x].imag * psi[x].imag
    for s in range(n_steps):
        if is_open:
            _thermostat(psi, bath_z[s], 0, a_half, s_left, s_right)
        _matvec(U_half, psi, work)
        for x in range(n):
            eta = sqrt_gdt * phase_z[s, x]
            work[x] = work[x] * (np.cos(eta) + 1j * np.sin(eta))
        _matvec(U_half, work, psi)
        if is_open:
            _thermostat(psi, bath_z[s], 4, a_half, s_left, s_right)

        mass = _observables(psi, is_open, obs)
        if not np.isfinite(mass):
            return s
        if mass_ref > 0.0:
            rel = abs(mass - mass_ref) / mass_ref
            if rel > drift[0]:
                drift[0] = rel
        if debug_tol > 0.0 and not is_open:
            if abs(mass - prev_mass) > debug_tol * prev_mass:
                return n_steps + s
        prev_mass = mass
        if measure:
            count[0] += 1
            c = count[0]
            for k in range(obs.shape[0]):
                d = obs[k] - mean[k]
                mean[k] += d / c
                m2[k] += d * (obs[k] - mean[k])
            if (c - 1) % rec_every == 0:
                idx = (c - 1) // rec_every
                if idx < mass_rec.shape[0]:
                    mass_rec[idx] = mass
    return OK
