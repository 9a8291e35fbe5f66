"""Reference solutions of d_t rho = (1/gamma) rho'' on the unit torus."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .chain import Profile


@dataclass(frozen=True)
class HeatParams:
    """``dt_pde`` is only used by the Crank-Nicolson cross-check."""

    gamma: float
    grid_size: int
    dt_pde: float = 1e-3

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be > 0")
        if self.grid_size < 1:
            raise ValueError("grid_size must be >= 1")
        if not self.dt_pde > 0:
            raise ValueError("dt_pde must be > 0")


def laplacian_symbol(grid_size: int) -> np.ndarray:
    """Eigenvalues of -M^2 * (discrete periodic Laplacian), in FFT order."""
    m = grid_size
    k = np.arange(m)
    return m * m * (2.0 - 2.0 * np.cos(2.0 * np.pi * k / m))


def heat_solve(rho0: Profile, t: float, params: HeatParams, method: str = "spectral") -> Profile:
    """Evolve ``rho0`` for macroscopic time ``t``.

    ``spectral`` damps every discrete Fourier mode exactly; ``crank-nicolson``
    time-steps the same semi-discrete system with step ``params.dt_pde`` and
    serves as an independent check.
    """
    if t < 0:
        raise ValueError("t must be >= 0")
    if rho0.grid_size != params.grid_size:
        raise ValueError(f"profile has {rho0.grid_size} points, params expect {params.grid_size}")
    if method == "spectral":
        modes = np.fft.rfft(rho0.values)
        lam = laplacian_symbol(params.grid_size)[: modes.size]
        out = np.fft.irfft(modes * np.exp(-lam * t / params.gamma), n=params.grid_size)
        return Profile(out)
    if method == "crank-nicolson":
        return Profile(_crank_nicolson(rho0.values, t, params))
    raise ValueError(f"unknown method {method!r}")


def _crank_nicolson(values: np.ndarray, t: float, params: HeatParams) -> np.ndarray:
    m = params.grid_size
    if t == 0:
        return values.copy()
    n_steps = int(np.ceil(t / params.dt_pde - 1e-12))
    h = t / n_steps
    lap = sp.diags([np.ones(m - 1), -2.0 * np.ones(m), np.ones(m - 1)], [-1, 0, 1], format="lil")
    lap[0, m - 1] = 1.0
    lap[m - 1, 0] = 1.0
    lap = (m * m / params.gamma) * lap.tocsc()
    eye = sp.identity(m, format="csc")
    solve = spla.factorized((eye - 0.5 * h * lap).tocsc())
    explicit = (eye + 0.5 * h * lap).tocsr()
    u = values.astype(float).copy()
    for _ in range(n_steps):
        u = solve(explicit @ u)
    return u


def profile_distance(a: Profile, b: Profile, norm: str = "L2") -> float:
    if a.grid_size != b.grid_size:
        raise ValueError(f"grid sizes differ ({a.grid_size} vs {b.grid_size}); resample first")
    diff = a.values - b.values
    if norm == "L2":
        return float(np.sqrt(np.mean(diff ** 2)))
    if norm == "sup":
        return float(np.max(np.abs(diff)))
    raise ValueError(f"unknown norm {norm!r}")
