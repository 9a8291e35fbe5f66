"""Exact action of the generator and of phase derivatives on quadratic observables.

Every real quadratic observable of the chain can be written as

    Q(psi) = sum_{p,q} H[p,q] conj(psi_p) psi_q + 2 Re sum_{p,q} K[p,q] psi_p psi_q + c

with H Hermitian and K complex symmetric.  The named observables Rho, J, E, F
and G form a basis of that space, so a combination is canonical once it has
been pushed through the (H, K, c) representation and decoded again.  The
generator is linear on (H, K, c), which makes every identity check an exact
coefficient comparison.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence, Union

import numpy as np

from .chain import ChainConfig

KINDS = ("rho", "j", "e", "f", "g")
ALL_PARTS = ("hamiltonian", "noise", "reservoir")

# Coefficients below this (relative to the largest one) are rounding noise.
_DROP = 1e-14


class DecompositionError(ValueError):
    """Raised when a target observable has no exact decomposition in a basis."""

    def __init__(self, message, residual):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True, order=True)
class QuadObservable:
    """One named quadratic observable with 1-based site labels.

    rho(x) = |psi_x|^2, j(x,y) = 2 Im(psi_x psi_y^*),
    e(x,y) = 2 Re(psi_x psi_y^*), f(x,y) = 2 Re(psi_x psi_y),
    g(x,y) = 2 Im(psi_x psi_y).
    """

    kind: str
    x: int
    y: int

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown observable kind {self.kind!r}")

    def __str__(self):
        if self.kind == "rho":
            return f"Rho({self.x})"
        return f"{self.kind.upper()}({self.x},{self.y})"

    def evaluate(self, psi: np.ndarray) -> np.ndarray:
        a = psi[..., self.x - 1]
        b = psi[..., self.y - 1]
        if self.kind == "rho":
            return a.real ** 2 + a.imag ** 2
        if self.kind == "j":
            return 2.0 * (a.imag * b.real - a.real * b.imag)
        if self.kind == "e":
            return 2.0 * (a.real * b.real + a.imag * b.imag)
        if self.kind == "f":
            return 2.0 * (a.real * b.real - a.imag * b.imag)
        return 2.0 * (a.real * b.imag + a.imag * b.real)

    # Arithmetic promotes to QuadCombination, so ``2 * Rho(1) - J(1, 2)`` works.
    def __add__(self, other):
        return QuadCombination.of(self) + other

    __radd__ = __add__

    def __sub__(self, other):
        return QuadCombination.of(self) - other

    def __rsub__(self, other):
        return QuadCombination.of(other) - self

    def __mul__(self, scalar):
        return QuadCombination.of(self) * scalar

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return QuadCombination.of(self) / scalar

    def __neg__(self):
        return QuadCombination.of(self) * -1.0


def Rho(x: int) -> QuadObservable:
    return QuadObservable("rho", x, x)


def J(x: int, y: int) -> QuadObservable:
    return QuadObservable("j", x, y)


def E(x: int, y: int) -> QuadObservable:
    return QuadObservable("e", x, y)


def F(x: int, y: int) -> QuadObservable:
    return QuadObservable("f", x, y)


def G(x: int, y: int) -> QuadObservable:
    return QuadObservable("g", x, y)


Operand = Union[QuadObservable, "QuadCombination"]


class QuadCombination:
    """Finite real linear combination of quadratic observables plus a constant."""

    __slots__ = ("terms", "constant")

    def __init__(self, terms: Mapping[QuadObservable, float] | None = None, constant: float = 0.0):
        self.terms = {k: float(v) for k, v in (terms or {}).items() if v != 0}
        self.constant = float(constant)

    @classmethod
    def of(cls, obj) -> "QuadCombination":
        if isinstance(obj, QuadCombination):
            return obj
        if isinstance(obj, QuadObservable):
            return cls({obj: 1.0})
        if np.isscalar(obj):
            return cls({}, float(obj))
        raise TypeError(f"cannot build a combination from {obj!r}")

    def __add__(self, other):
        other = QuadCombination.of(other)
        terms = dict(self.terms)
        for k, v in other.terms.items():
            terms[k] = terms.get(k, 0.0) + v
        return QuadCombination(terms, self.constant + other.constant)

    __radd__ = __add__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        return self + (-QuadCombination.of(other))

    def __rsub__(self, other):
        return QuadCombination.of(other) - self

    def __mul__(self, scalar):
        if not np.isscalar(scalar):
            return NotImplemented
        return QuadCombination({k: v * scalar for k, v in self.terms.items()}, self.constant * scalar)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return self * (1.0 / scalar)

    def __repr__(self):
        return f"QuadCombination({format_terms(self)})"

    def evaluate(self, psi: np.ndarray) -> np.ndarray:
        """Evaluate term by term from the defining formulas (batch over leading axes)."""
        psi = np.asarray(psi)
        if not np.iscomplexobj(psi):
            psi = psi.astype(complex)
        out = np.full(psi.shape[:-1], self.constant, dtype=psi.real.dtype)
        for obs, coef in self.terms.items():
            out = out + coef * obs.evaluate(psi)
        return out

    def canonical(self, config: ChainConfig) -> "QuadCombination":
        return decode(*encode(self, config))

    def coefficient_vector(self, config: ChainConfig) -> np.ndarray:
        return _flatten(*encode(self, config))


def format_terms(comb: QuadCombination, digits: int = 12) -> str:
    parts = [f"{v:+.{digits}g}*{k}" for k, v in sorted(comb.terms.items())]
    if comb.constant:
        parts.append(f"{comb.constant:+.{digits}g}")
    return " ".join(parts) if parts else "0"


# (H, K, c) representation ------------------------------------------------------

def encode(obj: Operand, config: ChainConfig):
    comb = QuadCombination.of(obj)
    n = config.n_sites
    H = np.zeros((n, n), dtype=complex)
    K = np.zeros((n, n), dtype=complex)
    for obs, coef in comb.terms.items():
        a = config.wrap(obs.x) - 1
        b = config.wrap(obs.y) - 1
        if obs.kind == "rho":
            H[a, a] += coef
        elif obs.kind == "e":
            H[a, b] += coef
            H[b, a] += coef
        elif obs.kind == "j":
            H[a, b] += 1j * coef
            H[b, a] -= 1j * coef
        elif obs.kind == "f":
            if a == b:
                K[a, a] += coef
            else:
                K[a, b] += 0.5 * coef
                K[b, a] += 0.5 * coef
        else:
            if a == b:
                K[a, a] -= 1j * coef
            else:
                K[a, b] -= 0.5j * coef
                K[b, a] -= 0.5j * coef
    return H, K, comb.constant


def decode(H: np.ndarray, K: np.ndarray, constant: float = 0.0) -> QuadCombination:
    n = H.shape[0]
    scale = max(np.max(np.abs(H), initial=0.0), np.max(np.abs(K), initial=0.0), abs(constant), 1e-300)
    cut = _DROP * scale
    terms = {}

    def put(obs, v):
        if abs(v) > cut:
            terms[obs] = float(v)

    for a in range(n):
        put(Rho(a + 1), H[a, a].real)
        put(F(a + 1, a + 1), K[a, a].real)
        put(G(a + 1, a + 1), -K[a, a].imag)
        for b in range(a + 1, n):
            h = H[a, b]
            put(E(a + 1, b + 1), h.real)
            put(J(a + 1, b + 1), h.imag)
            k = K[a, b]
            put(F(a + 1, b + 1), 2.0 * k.real)
            put(G(a + 1, b + 1), -2.0 * k.imag)
    const = constant if abs(constant) > cut else 0.0
    return QuadCombination(terms, const)


def _flatten(H, K, c):
    return np.concatenate([H.real.ravel(), H.imag.ravel(), K.real.ravel(), K.imag.ravel(), [c]])


def _generator_matrices(H, K, c, config: ChainConfig, parts: Sequence[str]):
    n = config.n_sites
    from .chain import laplacian_matrix

    H_out = np.zeros_like(H)
    K_out = np.zeros_like(K)
    c_out = 0.0
    if "hamiltonian" in parts:
        L = laplacian_matrix(config)
        H_out += 1j * (L @ H - H @ L)
        K_out += -1j * (L @ K + K @ L)
    if "noise" in parts:
        g = config.gamma
        H_out += -g * (H - np.diag(np.diag(H)))
        K_out += -g * (K + np.diag(np.diag(K)))
    if "reservoir" in parts and config.is_open:
        d = config.delta
        p = np.zeros(n)
        p[0] = p[-1] = 1.0
        H_out += -0.5 * d * (p[:, None] * H + H * p[None, :])
        K_out += -0.5 * d * (p[:, None] * K + K * p[None, :])
        c_out += 2.0 * d * (config.mu_left * H[0, 0].real + config.mu_right * H[-1, -1].real)
    return H_out, K_out, c_out


def apply_generator(obj: Operand, config: ChainConfig, parts: Sequence[str] = ALL_PARTS) -> QuadCombination:
    """Exact image of an observable under the generator.

    ``parts`` selects the Liouville part ("hamiltonian"), the phase noise
    ("noise") and, for open chains, the two reservoirs ("reservoir").
    """
    unknown = set(parts) - set(ALL_PARTS)
    if unknown:
        raise ValueError(f"unknown generator parts {sorted(unknown)}")
    return decode(*_generator_matrices(*encode(obj, config), config, parts))


def apply_phase_derivative(obj: Operand, x: int, config: ChainConfig) -> QuadCombination:
    """Exact image under d/dtheta(x) = psi_i(x) d/dpsi_r(x) - psi_r(x) d/dpsi_i(x)."""
    c = config.wrap(x) - 1
    H, K, _ = encode(obj, config)
    n = config.n_sites
    e = np.zeros(n)
    e[c] = 1.0
    H_out = 1j * (e[:, None] * H - H * e[None, :])
    K_out = -1j * (e[:, None] * K + K * e[None, :])
    return decode(H_out, K_out, 0.0)


def commutator_phase_generator(obj: Operand, x: int, config: ChainConfig, parts: Sequence[str] = ALL_PARTS):
    """[d/dtheta(x), L] applied to an observable."""
    first = apply_phase_derivative(apply_generator(obj, config, parts), x, config)
    second = apply_generator(apply_phase_derivative(obj, x, config), config, parts)
    return (first - second).canonical(config)


def drift_diffusion_fields(psi: np.ndarray, config: ChainConfig):
    """Ito drift and noise columns of the SDE in complex form.

    Returns ``(b, sigmas)`` where ``b`` has shape (N,) and ``sigmas`` is a list
    of (N,) complex vectors, one per independent real Brownian motion.
    """
    from .chain import laplacian_matrix

    n = config.n_sites
    L = laplacian_matrix(config)
    b = -1j * (L @ psi) - 0.5 * config.gamma * psi
    sigmas = []
    for z in range(n):
        s = np.zeros(n, dtype=complex)
        s[z] = 1j * np.sqrt(config.gamma) * psi[z]
        sigmas.append(s)
    if config.is_open:
        b = b.copy()
        b[0] -= 0.5 * config.delta * psi[0]
        b[-1] -= 0.5 * config.delta * psi[-1]
        for site, mu in ((0, config.mu_left), (n - 1, config.mu_right)):
            for unit in (1.0, 1j):
                s = np.zeros(n, dtype=complex)
                s[site] = unit * np.sqrt(config.delta * mu)
                sigmas.append(s)
    return b, sigmas


def generator_by_differences(obj: Operand, psi: np.ndarray, config: ChainConfig, step: float = 1e-5) -> float:
    """Apply the generator numerically via central differences along the SDE fields.

    Independent of the matrix route; exact for quadratics up to rounding of
    order eps * |Q| / step^2.
    """
    comb = QuadCombination.of(obj)
    psi = np.asarray(psi, dtype=complex)
    b, sigmas = drift_diffusion_fields(psi, config)
    # Extended precision keeps the cancellation in the second differences
    # below the tolerance of the cross-check.
    psi = psi.astype(np.clongdouble)
    b = b.astype(np.clongdouble)
    sigmas = [s.astype(np.clongdouble) for s in sigmas]
    f = lambda z: comb.evaluate(z)
    f0 = f(psi)
    value = (f(psi + step * b) - f(psi - step * b)) / (2.0 * step)
    for s in sigmas:
        value += 0.5 * (f(psi + step * s) - 2.0 * f0 + f(psi - step * s)) / step ** 2
    return float(value)


# Identity verification ----------------------------------------------------------

def random_states(n_sites: int, trials: int, seed: int = 0) -> np.ndarray:
    """i.i.d. standard Gaussian real and imaginary parts, shape (trials, N)."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    re = rng.standard_normal((trials, n_sites))
    im = rng.standard_normal((trials, n_sites))
    return re + 1j * im


@dataclass
class IdentityCheck:
    max_residual: float
    coefficient_gap: float
    passed: bool


def verify_identity(lhs: Operand, rhs: Operand, config: ChainConfig, trials: int = 100, seed: int = 0,
                    tol: float = 1e-12) -> IdentityCheck:
    """Compare two combinations on canonical forms and on random states.

    ``passed`` is decided by the canonical comparison alone; the sampled
    residual is reported alongside as a rounding-level sanity figure.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    lhs = QuadCombination.of(lhs)
    rhs = QuadCombination.of(rhs)
    diff = _flatten(*encode(lhs - rhs, config))
    scale = max(1.0, np.max(np.abs(lhs.coefficient_vector(config))), np.max(np.abs(rhs.coefficient_vector(config))))
    gap = float(np.max(np.abs(diff))) / scale
    psi = random_states(config.n_sites, trials, seed)
    residual = float(np.max(np.abs(lhs.evaluate(psi) - rhs.evaluate(psi))))
    return IdentityCheck(residual, gap, gap <= tol)


@dataclass
class Decomposition:
    """target = sum_i generator[b_i] * L(b_i) + sum_j static[b_j] * b_j."""

    target: QuadObservable
    generator: dict = field(default_factory=dict)
    static: dict = field(default_factory=dict)
    residual: float = 0.0
    unique: bool = True

    def combination(self, config: ChainConfig) -> QuadCombination:
        out = QuadCombination()
        for obs, c in self.generator.items():
            out = out + c * apply_generator(obs, config)
        for obs, d in self.static.items():
            out = out + d * QuadCombination.of(obs)
        return out.canonical(config)

    def coefficients(self) -> dict:
        out = {f"L[{k}]": v for k, v in self.generator.items()}
        out.update({str(k): v for k, v in self.static.items()})
        return out


def _canonical_basis(basis: Iterable[QuadObservable], config: ChainConfig):
    """Deduplicate basis elements up to sign; keep the canonical representative."""
    seen = []
    for obs in basis:
        canon = QuadCombination.of(obs).canonical(config)
        if len(canon.terms) != 1:
            raise ValueError(f"{obs} is not a single basis observable")
        key = next(iter(canon.terms))
        if key not in seen:
            seen.append(key)
    return seen


def fit_decomposition(target: QuadObservable, basis: Sequence[QuadObservable], config: ChainConfig,
                      tol: float = 1e-10) -> Decomposition:
    """Solve for an exact fluctuation-dissipation style decomposition of ``target``.

    Unknowns are one generator coefficient per basis element and one static
    coefficient per basis element other than the target itself.  The linear
    system is solved in least squares; a nonzero residual means no exact
    decomposition exists and :class:`DecompositionError` is raised.
    """
    canon_target = QuadCombination.of(target).canonical(config)
    if len(canon_target.terms) != 1:
        raise ValueError("target must be a single observable")
    (target_key, target_sign), = canon_target.terms.items()
    elems = _canonical_basis(basis, config)
    statics = [b for b in elems if b != target_key]
    columns = [apply_generator(b, config).coefficient_vector(config) for b in elems]
    columns += [QuadCombination.of(b).coefficient_vector(config) for b in statics]
    A = np.column_stack(columns)
    t = QuadCombination.of(target).coefficient_vector(config)
    sol, *_ = np.linalg.lstsq(A, t, rcond=None)
    residual = float(np.max(np.abs(A @ sol - t)))
    if residual > tol * max(1.0, np.max(np.abs(t))):
        raise DecompositionError(f"no exact decomposition of {target} in the given basis "
                                 f"(residual {residual:.3e})", residual)
    rank = np.linalg.matrix_rank(A)
    ng = len(elems)

    def clean(v):
        return 0.0 if abs(v) < 1e-13 else float(v)

    gen = {b: clean(c) for b, c in zip(elems, sol[:ng]) if clean(c) != 0.0}
    sta = {b: clean(c) for b, c in zip(statics, sol[ng:]) if clean(c) != 0.0}
    return Decomposition(target, gen, sta, residual, unique=bool(rank == A.shape[1]))
