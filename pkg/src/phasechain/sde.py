"""Monte-Carlo integration of the phase-noise chain.

A step is the symmetric composition

    thermostat(dt/2) . hopping(dt/2) . phase noise(dt) . hopping(dt/2) . thermostat(dt/2)

of three exactly solvable sub-flows: the unitary hopping flow, the exact
site-wise phase rotation and the exact complex Ornstein-Uhlenbeck transition
at the two boundary sites (open chain only).  The phase rotation and the
hopping flow both preserve the total mass, so a periodic chain conserves it
up to rounding.

Randomness: trajectory seed -> SeedSequence -> three Philox streams
(initial condition, phase noise, bath noise).  Per step the phase stream
yields N normals and the bath stream 8 (two half thermostat steps, two
sites, real and imaginary part), always in that order.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np
import scipy.fft

from . import _kernels
from .chain import ChainConfig, ChainState, InitSpec, sample_initial

COMPOSITION = ("thermostat/2", "hamiltonian/2", "noise", "hamiltonian/2", "thermostat/2")
OBSERVABLES = ("rho", "current", "exchange2", "mass")
NOISE_BLOCK = 8192


class IntegrationError(FloatingPointError):
    pass


@dataclass(frozen=True)
class StepScheme:
    dt: float
    composition: tuple = COMPOSITION

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be > 0")
        if tuple(self.composition) != COMPOSITION:
            raise ValueError(f"only the composition {COMPOSITION} is implemented")


def default_scheme(config: ChainConfig) -> StepScheme:
    return StepScheme(0.02 / max(1.0, config.gamma, config.delta))


def default_burn_in(config: ChainConfig) -> float:
    return 20.0 * config.n_sites ** 2


# Exact sub-flows ------------------------------------------------------------------

def hopping_spectrum(config: ChainConfig) -> np.ndarray:
    n = config.n_sites
    if config.is_open:
        return 2.0 * np.cos(np.pi * np.arange(1, n + 1) / (n + 1)) - 2.0
    return 2.0 * np.cos(2.0 * np.pi * np.arange(n) / n) - 2.0


def propagator(config: ChainConfig, t: float) -> np.ndarray:
    """Matrix of exp(-i t L) built from the sine / Fourier eigenbasis."""
    n = config.n_sites
    phases = np.exp(-1j * t * hopping_spectrum(config))
    if config.is_open:
        k = np.arange(1, n + 1)
        S = np.sqrt(2.0 / (n + 1)) * np.sin(np.pi * np.outer(k, k) / (n + 1))
        return (S * phases[None, :]) @ S
    x = np.arange(n)
    Fm = np.exp(2j * np.pi * np.outer(x, x) / n) / np.sqrt(n)
    return (Fm * phases[None, :]) @ Fm.conj().T


def _hopping(psi: np.ndarray, t: float, config: ChainConfig) -> np.ndarray:
    lam = hopping_spectrum(config)
    if config.is_open:
        modes = scipy.fft.dst(psi, type=1, norm="ortho")
        return scipy.fft.dst(modes * np.exp(-1j * t * lam), type=1, norm="ortho")
    return np.fft.ifft(np.fft.fft(psi) * np.exp(-1j * t * lam))


def hamiltonian_flow(state: ChainState, t: float, config: ChainConfig) -> ChainState:
    """Exact unitary flow d psi/dt = -i L psi via FFT (periodic) or DST-I (open)."""
    if t == 0:
        return state
    return ChainState(_hopping(state.psi, t, config), state.time + t)


def _rotate(psi: np.ndarray, z: np.ndarray, gamma: float, dt: float) -> np.ndarray:
    eta = np.sqrt(gamma * dt) * z
    return psi * (np.cos(eta) + 1j * np.sin(eta))


def phase_noise_step(state: ChainState, dt: float, rng: np.random.Generator, config: ChainConfig) -> ChainState:
    """psi(x) <- psi(x) exp(i eta_x), eta_x ~ N(0, gamma dt) independent."""
    if not dt > 0:
        raise ValueError("dt must be > 0")
    z = rng.standard_normal(state.n_sites)
    return ChainState(_rotate(state.psi, z, config.gamma, dt), state.time + dt)


def ou_coefficients(config: ChainConfig, dt: float):
    """Contraction factor and per-component noise scales of the exact OU step."""
    a = np.exp(-0.5 * config.delta * dt)
    var = 1.0 - np.exp(-config.delta * dt)
    return a, np.sqrt(config.mu_left * var), np.sqrt(config.mu_right * var)


def _thermalize(psi: np.ndarray, z: np.ndarray, config: ChainConfig, dt: float) -> np.ndarray:
    a, s_l, s_r = ou_coefficients(config, dt)
    out = psi.copy()
    out[0] = a * psi[0] + s_l * (z[0] + 1j * z[1])
    out[-1] = a * psi[-1] + s_r * (z[2] + 1j * z[3])
    return out


def thermostat_step(state: ChainState, dt: float, rng: np.random.Generator, config: ChainConfig) -> ChainState:
    """Exact complex OU transition at sites 1 and N."""
    if not config.is_open:
        raise ValueError("thermostat_step needs an open chain")
    if dt == 0:
        return state
    return ChainState(_thermalize(state.psi, rng.standard_normal(4), config, dt), state.time + dt)


def step_with_noise(psi: np.ndarray, phase_z: np.ndarray, bath_z: Optional[np.ndarray],
                    scheme: StepScheme, config: ChainConfig) -> np.ndarray:
    """One split step with explicit standard normals (reference for the kernel)."""
    dt = scheme.dt
    if config.is_open:
        psi = _thermalize(psi, bath_z[:4], config, 0.5 * dt)
    psi = _hopping(psi, 0.5 * dt, config)
    psi = _rotate(psi, phase_z, config.gamma, dt)
    psi = _hopping(psi, 0.5 * dt, config)
    if config.is_open:
        psi = _thermalize(psi, bath_z[4:8], config, 0.5 * dt)
    return psi


def step(state: ChainState, scheme: StepScheme, rng: np.random.Generator, config: ChainConfig) -> ChainState:
    bath = rng.standard_normal(8) if config.is_open else None
    phase = rng.standard_normal(state.n_sites)
    return ChainState(step_with_noise(state.psi, phase, bath, scheme, config), state.time + scheme.dt)


# Statistics -----------------------------------------------------------------------

def observable_sizes(config: ChainConfig) -> dict:
    n = config.n_sites
    return {"rho": n, "current": config.n_bonds, "exchange2": n - 2 if config.is_open else n, "mass": 1}


def _split(vec: np.ndarray, config: ChainConfig) -> dict:
    out, k = {}, 0
    for name, size in observable_sizes(config).items():
        out[name] = vec[k:k + size].copy()
        k += size
    return out


@dataclass
class TrajectoryStats:
    """Time averages of rho, j, E_{x-1,x+1} and M, merged over trajectories.

    ``mean`` and ``m2`` pool every time sample of every trajectory (Welford /
    Chan); ``traj_m2`` is the spread of the per-trajectory time averages,
    which is what the error bars use.
    """

    config: ChainConfig
    dt: float
    n_samples: int
    n_traj: int
    mean: dict
    m2: dict
    traj_m2: dict
    mass_times: np.ndarray
    mass_series: np.ndarray
    max_mass_drift: float
    seeds: tuple = ()
    final_state: Optional[ChainState] = None

    @property
    def is_empty(self) -> bool:
        return self.n_samples == 0

    def stderr(self, name: str) -> np.ndarray:
        if self.n_traj < 2:
            return np.full_like(self.mean[name], np.nan)
        return np.sqrt(self.traj_m2[name] / (self.n_traj - 1) / self.n_traj)

    def variance(self, name: str) -> np.ndarray:
        total = self.n_samples * self.n_traj
        return self.m2[name] / max(total - 1, 1)

    def merge(self, other: "TrajectoryStats") -> "TrajectoryStats":
        if (self.config, self.dt, self.n_samples) != (other.config, other.dt, other.n_samples):
            raise ValueError("can only merge stats of the same scenario and length")
        na, nb = self.n_traj, other.n_traj
        n = na + nb
        sa, sb = na * self.n_samples, nb * other.n_samples
        mean, m2, tm2 = {}, {}, {}
        for name in self.mean:
            d = other.mean[name] - self.mean[name]
            mean[name] = self.mean[name] + d * (nb / n)
            m2[name] = self.m2[name] + other.m2[name] + (d * d * (sa * sb / (sa + sb)) if sa + sb else 0.0)
            tm2[name] = self.traj_m2[name] + other.traj_m2[name] + d * d * (na * nb / n)
        series = self.mass_series + (other.mass_series - self.mass_series) * (nb / n)
        return replace(self, n_traj=n, mean=mean, m2=m2, traj_m2=tm2, mass_series=series,
                       max_mass_drift=max(self.max_mass_drift, other.max_mass_drift),
                       seeds=self.seeds + other.seeds, final_state=None)


# Trajectories ---------------------------------------------------------------------

def trajectory_streams(seed: int):
    """Initial-condition, phase-noise and bath-noise generators of one trajectory."""
    children = np.random.SeedSequence(seed).spawn(3)
    return tuple(np.random.Generator(np.random.Philox(c)) for c in children)


class _Runner:
    """Single-trajectory integrator that owns its random streams."""

    def __init__(self, config: ChainConfig, scheme: StepScheme, psi0: np.ndarray, phase_rng, bath_rng,
                 debug: bool = False):
        self.config = config
        self.scheme = scheme
        self.psi = np.array(psi0, dtype=np.complex128)
        self.phase_rng = phase_rng
        self.bath_rng = bath_rng
        self.steps_done = 0
        self.U_half = np.ascontiguousarray(propagator(config, 0.5 * scheme.dt))
        if config.is_open:
            self.a_half, self.s_left, self.s_right = ou_coefficients(config, 0.5 * scheme.dt)
        else:
            self.a_half, self.s_left, self.s_right = 1.0, 0.0, 0.0
        self.sqrt_gdt = float(np.sqrt(config.gamma * scheme.dt))
        self.debug_tol = 1e-12 if debug else 0.0
        self.mass_ref = float(np.sum(np.abs(self.psi) ** 2))
        self.drift = np.zeros(1)
        sizes = observable_sizes(config)
        self.n_obs = sum(sizes.values())
        self.obs = np.zeros(self.n_obs)

    def advance(self, n_steps: int, measure: bool = False, count=None, mean=None, m2=None,
                mass_rec=None, rec_every: int = 1):
        n = self.config.n_sites
        if count is None:
            count = np.zeros(1, dtype=np.int64)
            mean = np.zeros(self.n_obs)
            m2 = np.zeros(self.n_obs)
        if mass_rec is None:
            mass_rec = np.zeros(0)
        empty_bath = np.zeros((0, 8))
        done = 0
        while done < n_steps:
            b = min(NOISE_BLOCK, n_steps - done)
            phase_z = self.phase_rng.standard_normal((b, n))
            bath_z = self.bath_rng.standard_normal((b, 8)) if self.config.is_open else empty_bath
            status = _kernels.advance(self.psi, self.U_half, phase_z, bath_z, self.sqrt_gdt,
                                      self.a_half, self.s_left, self.s_right, self.config.is_open,
                                      measure, count, mean, m2, self.obs, mass_rec, rec_every,
                                      self.mass_ref, self.drift, self.debug_tol)
            if status != _kernels.OK:
                self._fail(status, b)
            done += b
            self.steps_done += b
        return count, mean, m2

    def _fail(self, status: int, block: int):
        if status >= block:
            s = self.steps_done + status - block
            raise IntegrationError(f"mass not conserved at step {s} (debug check)")
        s = self.steps_done + status
        bad = np.flatnonzero(~np.isfinite(self.psi))
        site = int(bad[0]) + 1 if bad.size else -1
        raise IntegrationError(f"non-finite state at step {s}, site {site}")

    def state(self) -> ChainState:
        return ChainState(self.psi.copy(), self.steps_done * self.scheme.dt)


def _steps(t: float, dt: float) -> int:
    if t < 0:
        raise ValueError("times must be >= 0")
    return int(round(t / dt))


def run_trajectory(config: ChainConfig, scheme: StepScheme, init: InitSpec, t_burn: float, t_measure: float,
                   seed: int, record_every: Optional[int] = None, debug: bool = False) -> TrajectoryStats:
    """Integrate one trajectory, discard ``t_burn`` and time-average over ``t_measure``.

    Observables are sampled after every step.  The total mass is recorded
    every ``record_every`` measured steps (default: about 1000 points).
    """
    init_rng, phase_rng, bath_rng = trajectory_streams(seed)
    psi0 = sample_initial(config, init, init_rng)
    runner = _Runner(config, scheme, psi0, phase_rng, bath_rng, debug=debug)
    n_burn = _steps(t_burn, scheme.dt)
    n_meas = _steps(t_measure, scheme.dt)
    runner.advance(n_burn)
    if record_every is None:
        record_every = max(1, n_meas // 1000)
    n_rec = -(-n_meas // record_every)
    mass_rec = np.zeros(n_rec)
    count, mean, m2 = runner.advance(n_meas, measure=True, mass_rec=mass_rec, rec_every=record_every)
    times = (n_burn + 1 + record_every * np.arange(n_rec)) * scheme.dt
    zeros = _split(np.zeros(runner.n_obs), config)
    return TrajectoryStats(
        config=config, dt=scheme.dt, n_samples=int(count[0]), n_traj=1,
        mean=_split(mean, config), m2=_split(m2, config), traj_m2=zeros,
        mass_times=times, mass_series=mass_rec, max_mass_drift=float(runner.drift[0]),
        seeds=(seed,), final_state=runner.state(),
    )


def trajectory_seeds(master: int, n_traj: int) -> list:
    """Distinct 63-bit trajectory seeds derived from one master seed."""
    words = np.random.SeedSequence(master).generate_state(n_traj, dtype=np.uint64)
    return [int(w >> np.uint64(1)) for w in words]


def ensemble_average(config: ChainConfig, scheme: StepScheme, init: InitSpec, n_traj: int,
                     seeds: Optional[Sequence[int]] = None, *, t_burn: float = 0.0, t_measure: float = 0.0,
                     seed: int = 0, threads: int = 1, record_every: Optional[int] = None) -> TrajectoryStats:
    """Run ``n_traj`` independent trajectories and merge them in seed order.

    The merge order is fixed, so the result does not depend on ``threads``.
    """
    if n_traj < 1:
        raise ValueError("n_traj must be >= 1")
    if seeds is None:
        seeds = trajectory_seeds(seed, n_traj)
    seeds = [int(s) for s in seeds]
    if len(seeds) != n_traj:
        raise ValueError(f"expected {n_traj} seeds, got {len(seeds)}")
    if len(set(seeds)) != len(seeds):
        raise ValueError("trajectory seeds collide")
    if record_every is None:
        record_every = max(1, _steps(t_measure, scheme.dt) // 1000)

    def one(s):
        return run_trajectory(config, scheme, init, t_burn, t_measure, s, record_every=record_every)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(one, seeds))
    else:
        parts = [one(s) for s in seeds]
    out = parts[0]
    for p in parts[1:]:
        out = out.merge(p)
    return out


# Exact moments of the discrete scheme -----------------------------------------------

def scheme_moment_map(config: ChainConfig, scheme: StepScheme):
    """Affine map vec(C) -> M vec(C) + v of one split step (row-major vec).

    Because every sub-flow is linear in psi with independent additive or
    multiplicative noise, E[psi psi^*] after a step is an affine function of
    it before the step; this gives the exact moments of the discretised chain.
    """
    n = config.n_sites
    dt = scheme.dt
    U = propagator(config, 0.5 * dt)
    hop = np.kron(U, U.conj())
    mask = np.full((n, n), np.exp(-config.gamma * dt))
    np.fill_diagonal(mask, 1.0)
    noise = np.diag(mask.ravel())
    maps = []
    if config.is_open:
        a, s_l, s_r = ou_coefficients(config, 0.5 * dt)
        A = np.ones(n)
        A[0] = A[-1] = a
        src = np.zeros((n, n))
        src[0, 0] = 2.0 * s_l ** 2
        src[-1, -1] = 2.0 * s_r ** 2
        thermo = (np.diag(np.outer(A, A).ravel()).astype(complex), src.ravel().astype(complex))
        maps.append(thermo)
    zero = np.zeros(n * n, dtype=complex)
    maps += [(hop, zero), (noise.astype(complex), zero), (hop, zero)]
    if config.is_open:
        maps.append(thermo)
    M = np.eye(n * n, dtype=complex)
    v = np.zeros(n * n, dtype=complex)
    for Mi, vi in maps:
        M = Mi @ M
        v = Mi @ v + vi
    return M, v


def scheme_stationary_moments(config: ChainConfig, scheme: StepScheme) -> np.ndarray:
    """Exact stationary C of the discretised open chain."""
    if not config.is_open:
        raise ValueError("needs an open chain")
    n = config.n_sites
    M, v = scheme_moment_map(config, scheme)
    c = np.linalg.solve(np.eye(n * n) - M, v).reshape(n, n)
    return 0.5 * (c + c.conj().T)
