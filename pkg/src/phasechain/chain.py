"""Chain configuration, microscopic states and pointwise observables.

Sites are labelled 1..N in every public function.  Internally the amplitude
array is 0-based, so site ``x`` lives at ``psi[x - 1]``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

PERIODIC = "periodic"
OPEN = "open"
GEOMETRIES = (PERIODIC, OPEN)


@dataclass(frozen=True)
class ChainConfig:
    """All dynamics parameters of the chain.

    Parameters
    ----------
    geometry : {"periodic", "open"}
    n_sites : int
        Number of sites N.
    gamma : float
        Phase-noise intensity.
    delta : float
        Reservoir coupling (open chain only, must be > 0 there).
    mu_left, mu_right : float
        Chemical potentials of the left/right reservoirs (open chain only).
    """

    geometry: str
    n_sites: int
    gamma: float
    delta: float = 0.0
    mu_left: float = 1.0
    mu_right: float = 1.0

    def __post_init__(self):
        if self.geometry not in GEOMETRIES:
            raise ValueError(f"geometry must be one of {GEOMETRIES}, got {self.geometry!r}")
        if int(self.n_sites) != self.n_sites:
            raise ValueError("n_sites must be an integer")
        object.__setattr__(self, "n_sites", int(self.n_sites))
        if self.geometry == OPEN and self.n_sites < 4:
            raise ValueError("open chain needs n_sites >= 4")
        if self.geometry == PERIODIC and self.n_sites < 3:
            raise ValueError("periodic chain needs n_sites >= 3")
        if not (np.isfinite(self.gamma) and self.gamma > 0):
            raise ValueError("gamma must be > 0")
        if not (np.isfinite(self.delta) and self.delta >= 0):
            raise ValueError("delta must be >= 0")
        if self.geometry == OPEN:
            if self.delta <= 0:
                raise ValueError("open chain requires delta > 0")
            if not (self.mu_left > 0 and self.mu_right > 0):
                raise ValueError("mu_left and mu_right must be > 0")

    @property
    def is_open(self) -> bool:
        return self.geometry == OPEN

    @property
    def n_bonds(self) -> int:
        return self.n_sites - 1 if self.is_open else self.n_sites

    def wrap(self, x: int) -> int:
        """Map a site label onto 1..N (periodic) or validate it (open)."""
        n = self.n_sites
        if self.is_open:
            if not 1 <= x <= n:
                raise IndexError(f"site {x} outside 1..{n}")
            return x
        return (x - 1) % n + 1


def laplacian_matrix(config: ChainConfig) -> np.ndarray:
    """Dense discrete Laplacian: circulant (periodic) or Dirichlet (open)."""
    n = config.n_sites
    lap = -2.0 * np.eye(n)
    idx = np.arange(n - 1)
    lap[idx, idx + 1] = 1.0
    lap[idx + 1, idx] = 1.0
    if not config.is_open:
        lap[0, -1] += 1.0
        lap[-1, 0] += 1.0
    return lap


@dataclass(frozen=True)
class Profile:
    """Real function sampled on sites, or on the uniform torus grid.

    ``values[k]`` is the value at ``u = (k + 1) / M`` (site ``k + 1`` when
    ``M = N``); on the torus ``u = 1`` is identified with ``u = 0``.
    """

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 1:
            raise ValueError("profile values must be one-dimensional")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def grid_size(self) -> int:
        return self.values.size

    @property
    def grid(self) -> np.ndarray:
        return np.arange(1, self.grid_size + 1) / self.grid_size

    @classmethod
    def from_function(cls, func: Callable[[np.ndarray], np.ndarray], grid_size: int) -> "Profile":
        u = np.arange(1, grid_size + 1) / grid_size
        return cls(np.broadcast_to(np.asarray(func(u), dtype=float), u.shape))

    def evaluate(self, u) -> np.ndarray:
        """Nearest-grid-value evaluation on the torus; no interpolation."""
        m = self.grid_size
        k = np.rint(np.asarray(u, dtype=float) * m).astype(int)
        return self.values[(k - 1) % m]


@dataclass(frozen=True)
class ChainState:
    psi: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        psi = np.array(self.psi, dtype=complex)
        if psi.ndim != 1:
            raise ValueError("psi must be one-dimensional")
        if not np.all(np.isfinite(psi)):
            raise ValueError("psi has non-finite entries")
        if self.time < 0:
            raise ValueError("time must be >= 0")
        psi.setflags(write=False)
        object.__setattr__(self, "psi", psi)

    @property
    def n_sites(self) -> int:
        return self.psi.size


# Initial-condition specifications.

@dataclass(frozen=True)
class Deterministic:
    amplitudes: np.ndarray


@dataclass(frozen=True)
class Equilibrium:
    """Product Gaussian measure with E|psi(x)|^2 = 1/lam."""

    lam: float


@dataclass(frozen=True)
class ProfileInit:
    """Independent complex Gaussians with E|psi(x)|^2 = rho0(x/N)."""

    rho0: Union[Profile, Callable[[np.ndarray], np.ndarray]]


InitSpec = Union[Deterministic, Equilibrium, ProfileInit]


def complex_gaussian(rng: np.random.Generator, mean_mass: np.ndarray) -> np.ndarray:
    """Centered circular complex Gaussians with E|z|^2 = mean_mass."""
    scale = np.sqrt(np.asarray(mean_mass, dtype=float) / 2.0)
    re = rng.standard_normal(scale.shape)
    im = rng.standard_normal(scale.shape)
    return scale * (re + 1j * im)


def initial_masses(config: ChainConfig, spec: InitSpec) -> np.ndarray:
    """Site-wise E|psi(x)|^2 of a random InitSpec (used by the moment oracle too)."""
    n = config.n_sites
    if isinstance(spec, Equilibrium):
        if not spec.lam > 0:
            raise ValueError("equilibrium lambda must be > 0")
        return np.full(n, 1.0 / spec.lam)
    if isinstance(spec, ProfileInit):
        u = np.arange(1, n + 1) / n
        if isinstance(spec.rho0, Profile):
            rho = spec.rho0.evaluate(u)
        else:
            rho = np.broadcast_to(np.asarray(spec.rho0(u), dtype=float), (n,))
        if np.any(rho < 0):
            raise ValueError("rho0 must be nonnegative")
        return np.array(rho, dtype=float)
    if isinstance(spec, Deterministic):
        return np.abs(np.asarray(spec.amplitudes, dtype=complex)) ** 2
    raise TypeError(f"unknown init spec {spec!r}")


def sample_initial(config: ChainConfig, spec: InitSpec, rng: np.random.Generator) -> np.ndarray:
    if isinstance(spec, Deterministic):
        psi = np.array(spec.amplitudes, dtype=complex)
        if psi.shape != (config.n_sites,):
            raise ValueError(f"expected {config.n_sites} amplitudes, got shape {psi.shape}")
        return psi
    return complex_gaussian(rng, initial_masses(config, spec))


def new_state(config: ChainConfig, spec: InitSpec, seed: int = 0) -> ChainState:
    """Build the initial state; random specs are reproducible functions of seed."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    return ChainState(sample_initial(config, spec, rng), 0.0)


# Pointwise observables.

def _check_site(state: ChainState, x: int) -> int:
    if not 1 <= x <= state.n_sites:
        raise IndexError(f"site {x} outside 1..{state.n_sites}")
    return x - 1


def density(state: ChainState, x: int) -> float:
    z = state.psi[_check_site(state, x)]
    return float(z.real * z.real + z.imag * z.imag)


def bulk_current(state: ChainState, x: int, geometry: str = PERIODIC) -> float:
    """Current across bond (x, x+1): 2 Im(psi_x conj(psi_{x+1}))."""
    n = state.n_sites
    last = n - 1 if geometry == OPEN else n
    if not 1 <= x <= last:
        raise IndexError(f"bond ({x}, {x + 1}) invalid for {geometry} chain of {n} sites")
    a = state.psi[x - 1]
    b = state.psi[x % n]
    return float(2.0 * (a * np.conj(b)).imag)


def exchange_term(state: ChainState, x: int, y: int) -> float:
    a = state.psi[_check_site(state, x)]
    b = state.psi[_check_site(state, y)]
    return float(2.0 * (a * np.conj(b)).real)


def total_mass(state: ChainState) -> float:
    return float(np.sum(densities(state.psi)))


def empirical_pairing(state: ChainState, G) -> float:
    """(1/N) sum_x G(x/N) rho_x for a callable or a torus Profile G."""
    n = state.n_sites
    u = np.arange(1, n + 1) / n
    g = G.evaluate(u) if isinstance(G, Profile) else np.broadcast_to(np.asarray(G(u), dtype=float), (n,))
    return float(np.dot(g, densities(state.psi)) / n)


# Vectorised observables on raw arrays (last axis = sites); shared with the engine.

def densities(psi: np.ndarray) -> np.ndarray:
    return psi.real ** 2 + psi.imag ** 2


def currents(psi: np.ndarray, geometry: str) -> np.ndarray:
    """All bond currents; open chains have N-1 bonds, periodic N."""
    nxt = np.roll(psi, -1, axis=-1)
    j = 2.0 * (psi * np.conj(nxt)).imag
    return j[..., :-1] if geometry == OPEN else j


def second_exchange(psi: np.ndarray, geometry: str) -> np.ndarray:
    """E_{x-1,x+1} per site; open chains only cover x = 2..N-1."""
    if geometry == OPEN:
        return 2.0 * (psi[..., :-2] * np.conj(psi[..., 2:])).real
    return 2.0 * (np.roll(psi, 1, axis=-1) * np.conj(np.roll(psi, -1, axis=-1))).real
