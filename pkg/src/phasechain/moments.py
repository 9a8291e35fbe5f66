"""Exact second-moment closure C[x, y] = E[psi_x conj(psi_y)].

The SDE is bilinear, so C obeys the closed linear ODE

    dC/dt = -i(L C - C L) - gamma (C - diag C) - (delta/2)(P C + C P)
            + 2 delta (mu_l E_11 + mu_r E_NN)

with L the discrete Laplacian of the geometry and P = E_11 + E_NN (open
chain only).  Everything downstream of the oracle is computed from C.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .chain import ChainConfig, InitSpec, Deterministic, initial_masses, laplacian_matrix

HERMITIAN_TOL = 1e-10


class ConvergenceError(RuntimeError):
    def __init__(self, message, residual):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True)
class MomentMatrix:
    c: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        c = np.array(self.c, dtype=complex)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise ValueError("moment matrix must be square")
        check_hermitian(c)
        c.setflags(write=False)
        object.__setattr__(self, "c", c)

    @property
    def n_sites(self) -> int:
        return self.c.shape[0]

    @property
    def densities(self) -> np.ndarray:
        return self.c.diagonal().real.copy()

    @property
    def mass(self) -> float:
        return float(np.trace(self.c).real)


def check_hermitian(c: np.ndarray, tol: float = HERMITIAN_TOL):
    scale = max(1.0, float(np.max(np.abs(c), initial=0.0)))
    gap = float(np.max(np.abs(c - c.conj().T), initial=0.0))
    if gap > tol * scale:
        raise ValueError(f"moment matrix is not Hermitian (gap {gap:.3e})")


def initial_moments(config: ChainConfig, spec: InitSpec) -> MomentMatrix:
    """Moment matrix of an InitSpec (diagonal for the random ones)."""
    if isinstance(spec, Deterministic):
        psi = np.asarray(spec.amplitudes, dtype=complex)
        return MomentMatrix(np.outer(psi, psi.conj()))
    return MomentMatrix(np.diag(initial_masses(config, spec)).astype(complex))


def _lap_left(c: np.ndarray, periodic: bool) -> np.ndarray:
    """L @ c using the three-point stencil."""
    out = -2.0 * c
    out[:-1] += c[1:]
    out[1:] += c[:-1]
    if periodic:
        out[-1] += c[0]
        out[0] += c[-1]
    return out


def _rhs(c: np.ndarray, config: ChainConfig) -> np.ndarray:
    periodic = not config.is_open
    lc = _lap_left(c, periodic)
    # C L = (L C^T)^T because L is symmetric.
    cl = _lap_left(c.T, periodic).T
    out = -1j * (lc - cl)
    diag = c.diagonal().copy()
    out -= config.gamma * c
    out[np.diag_indices_from(out)] += config.gamma * diag
    if config.is_open:
        d = config.delta
        out[0, :] -= 0.5 * d * c[0, :]
        out[-1, :] -= 0.5 * d * c[-1, :]
        out[:, 0] -= 0.5 * d * c[:, 0]
        out[:, -1] -= 0.5 * d * c[:, -1]
        out[0, 0] += 2.0 * d * config.mu_left
        out[-1, -1] += 2.0 * d * config.mu_right
    return out


def moment_rhs(C, config: ChainConfig) -> np.ndarray:
    """dC/dt of the closed second-moment ODE; output is Hermitian."""
    c = C.c if isinstance(C, MomentMatrix) else np.asarray(C, dtype=complex)
    check_hermitian(c)
    return _rhs(c, config)


def evolve_moments(C0, t: float, config: ChainConfig, dt_ode: float = 0.05) -> MomentMatrix:
    """Classical RK4 integration of the moment ODE up to time ``t``.

    The step is shortened so that an integer number of steps lands on ``t``.
    """
    if t < 0:
        raise ValueError("t must be >= 0")
    m0 = C0 if isinstance(C0, MomentMatrix) else MomentMatrix(C0)
    c = np.array(m0.c)
    if t == 0:
        return MomentMatrix(c, m0.time)
    n_steps = int(np.ceil(t / dt_ode - 1e-12))
    h = t / n_steps
    norm0 = max(np.linalg.norm(c, 2), 1e-300)
    check_every = max(1, n_steps // 50)
    for k in range(n_steps):
        k1 = _rhs(c, config)
        k2 = _rhs(c + 0.5 * h * k1, config)
        k3 = _rhs(c + 0.5 * h * k2, config)
        k4 = _rhs(c + h * k3, config)
        c = c + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        c = 0.5 * (c + c.conj().T)
        if k % check_every == 0 or k == n_steps - 1:
            if not np.all(np.isfinite(c)) or np.linalg.norm(c, 2) > 1e6 * max(norm0, 1.0):
                raise FloatingPointError(f"moment ODE blew up at step {k} (t={m0.time + (k + 1) * h:.6g})")
    return MomentMatrix(c, m0.time + t)


def moment_operator(config: ChainConfig):
    """Sparse superoperator A and source b with d vec(C)/dt = A vec(C) + b (row-major vec)."""
    n = config.n_sites
    L = sp.csr_matrix(laplacian_matrix(config))
    I = sp.identity(n, format="csr")
    # vec(L C) = kron(L, I) vec(C), vec(C L) = kron(I, L^T) vec(C) for row-major vec.
    A = -1j * (sp.kron(L, I) - sp.kron(I, L.T))
    offdiag = np.ones((n, n))
    np.fill_diagonal(offdiag, 0.0)
    A = A - config.gamma * sp.diags(offdiag.ravel())
    b = np.zeros(n * n, dtype=complex)
    if config.is_open:
        p = np.zeros(n)
        p[0] = p[-1] = 1.0
        A = A - 0.5 * config.delta * sp.diags((p[:, None] + p[None, :]).ravel())
        b[0] = 2.0 * config.delta * config.mu_left
        b[-1] = 2.0 * config.delta * config.mu_right
    return A.tocsc(), b


def residual_norm(c: np.ndarray, config: ChainConfig) -> float:
    return float(np.max(np.abs(_rhs(c, config))))


def stationary_moments(config: ChainConfig, tol: float = 1e-10, method: str = "auto",
                       direct_max: int = 320, max_time: float | None = None) -> MomentMatrix:
    """Stationary point of the moment ODE for the open chain.

    ``method="direct"`` solves the sparse N^2 x N^2 system by LU;
    ``method="relax"`` integrates in pseudo-time until the residual drops
    below ``tol``.  ``auto`` picks direct up to ``direct_max`` sites.
    """
    if not config.is_open:
        raise ValueError("periodic chains have a family of stationary points; use evolve_moments")
    n = config.n_sites
    if method == "auto":
        method = "direct" if n <= direct_max else "relax"
    if method == "direct":
        A, b = moment_operator(config)
        c = spla.spsolve(A, -b).reshape(n, n)
        c = 0.5 * (c + c.conj().T)
    elif method == "relax":
        c = _relax(config, tol, max_time)
    else:
        raise ValueError(f"unknown method {method!r}")
    res = residual_norm(c, config)
    if not res <= tol:
        raise ConvergenceError(f"stationary solve did not reach tol {tol:g} (residual {res:.3e})", res)
    return MomentMatrix(c, np.inf)


def _relax(config: ChainConfig, tol: float, max_time: float | None) -> np.ndarray:
    """Pseudo-time RK4 from the equilibrium guess with step growth while stable."""
    n = config.n_sites
    mu_bar = 0.5 * (config.mu_left + config.mu_right)
    c = np.diag(np.full(n, 2.0 * mu_bar)).astype(complex)
    if max_time is None:
        max_time = 200.0 * n * n / config.gamma + 200.0
    # RK4 stays stable for |h * eigenvalue| below ~2.7; eigenvalues are bounded by 4 + gamma + delta.
    h_max = 2.5 / (4.0 + config.gamma + config.delta)
    h = 0.5 * h_max
    t = 0.0
    res = residual_norm(c, config)
    while res > tol and t < max_time:
        trial = c
        for _ in range(20):
            k1 = _rhs(trial, config)
            k2 = _rhs(trial + 0.5 * h * k1, config)
            k3 = _rhs(trial + 0.5 * h * k2, config)
            k4 = _rhs(trial + h * k3, config)
            trial = trial + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        trial = 0.5 * (trial + trial.conj().T)
        new_res = residual_norm(trial, config)
        if not np.isfinite(new_res) or new_res > 2.0 * res:
            h *= 0.5
            continue
        c, res = trial, new_res
        t += 20 * h
        h = min(h * 1.2, h_max)
    return c


@dataclass(frozen=True)
class StationaryProfiles:
    """Stationary expectations extracted from C.

    ``rho[x-1]`` is <rho_x>; ``current[x-1]`` is <j_{x,x+1}>; ``exchange2`` and
    ``phi`` cover the sites ``exchange2_sites`` (those with both neighbours).
    """

    rho: np.ndarray
    current: np.ndarray
    exchange2: np.ndarray
    phi: np.ndarray
    exchange2_sites: np.ndarray
    mass: float


def stationary_observables(C, config: ChainConfig) -> StationaryProfiles:
    c = C.c if isinstance(C, MomentMatrix) else np.asarray(C, dtype=complex)
    check_hermitian(c)
    n = c.shape[0]
    rho = c.diagonal().real.copy()
    upper = np.array([c[x, (x + 1) % n] for x in range(n)])
    current = 2.0 * upper.imag
    if config.is_open:
        current = current[:-1]
        sites = np.arange(2, n)
        e2 = 2.0 * np.array([c[x - 2, x] for x in sites]).real
    else:
        sites = np.arange(1, n + 1)
        e2 = 2.0 * np.array([c[(x - 2) % n, x % n] for x in sites]).real
    phi = (rho[sites - 1] - 0.5 * e2) / config.gamma
    return StationaryProfiles(rho, current, e2, phi, sites, float(rho.sum()))


# Closed forms for the open chain --------------------------------------------------

def exact_current(config: ChainConfig) -> float:
    """Closed-form stationary bond current of the open chain.

    Summing the bulk and boundary decompositions of j over all bonds gives
    (gamma (N-1) + delta) <j> = -2 (<rho_N> - <rho_1>); the reservoir balance
    <j> = delta (2 mu_l - <rho_1>) = delta (<rho_N> - 2 mu_r) then closes it.
    """
    g, d, n = config.gamma, config.delta, config.n_sites
    return 4.0 * (config.mu_left - config.mu_right) / (g * (n - 1) + d + 4.0 / d)


def current_from_boundaries(rho_first: float, rho_last: float, config: ChainConfig) -> float:
    """<j> = -2 (<rho_N> - <rho_1>) / (gamma (N - 1) + delta)."""
    return -2.0 * (rho_last - rho_first) / (config.gamma * (config.n_sites - 1) + config.delta)


def printed_current_identity(rho_first: float, config: ChainConfig) -> float:
    """The finite-N current formula as printed: 2((mu_l+mu_r) - <rho_1>)/(gamma(N-3)+4gamma+delta)."""
    g, d, n = config.gamma, config.delta, config.n_sites
    return 2.0 * ((config.mu_left + config.mu_right) - rho_first) / (g * (n - 3) + 4.0 * g + d)
