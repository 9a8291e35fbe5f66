"""Registry of the algebraic identities behind the hydrodynamic and Fourier arguments.

Each identity is stated twice where needed: in the form it is usually
written, and in a verified form obtained from the exact generator algebra
(by hand or with :func:`fit_decomposition`).  The status is

* ``exact``    the written form holds on canonical coefficients,
* ``repaired`` the written form fails but the repaired form holds,
* ``failed``   neither holds.

Both residuals are kept so a reader can see how far off the written form is.
Gradients follow the backward convention (nabla f)(x) = f(x) - f(x-1).
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, List, Optional, Sequence, Tuple

from .chain import ChainConfig, OPEN, PERIODIC
from .generator import (E, J, Rho, QuadCombination, QuadObservable, apply_generator, apply_phase_derivative,
                        commutator_phase_generator, fit_decomposition, verify_identity, F)

EXACT, REPAIRED, FAILED = "exact", "repaired", "failed"
TOL = 1e-12

# A term is (coefficient, operator, observable).  Operators: "id", "L" (full
# generator), "S" (phase noise only), "const" (observable ignored),
# ("dtheta", y) and ("comm", y) for d/dtheta(y) and [d/dtheta(y), L].
Term = Tuple[float, object, Optional[QuadObservable]]


def build(terms: Sequence[Term], config: ChainConfig) -> QuadCombination:
    out = QuadCombination()
    for coef, op, obs in terms:
        if op == "const":
            out = out + QuadCombination({}, coef)
        elif op == "id":
            out = out + coef * QuadCombination.of(obs)
        elif op == "L":
            out = out + coef * apply_generator(obs, config)
        elif op == "S":
            out = out + coef * apply_generator(obs, config, parts=("noise",))
        elif op[0] == "dtheta":
            out = out + coef * apply_phase_derivative(obs, op[1], config)
        elif op[0] == "comm":
            out = out + coef * commutator_phase_generator(obs, op[1], config)
        else:
            raise ValueError(f"unknown operator {op!r}")
    return out


def term_label(op, obs) -> str:
    if op == "const":
        return "const"
    if op == "id":
        return str(obs)
    if op in ("L", "S"):
        return f"{op}[{obs}]"
    return f"{op[0]}({op[1]})[{obs}]"


def coefficients(terms: Sequence[Term]) -> dict:
    out = {}
    for coef, op, obs in terms:
        key = term_label(op, obs)
        out[key] = out.get(key, 0.0) + float(coef)
    return out


@dataclass
class Instance:
    """lhs = printed at one site; ``repaired`` is None when no repair is proposed."""

    site: int
    lhs: List[Term]
    printed: Optional[List[Term]]
    repaired: Optional[List[Term]] = None


@dataclass
class IdentityReport:
    name: str
    geometry: str
    status: str
    max_residual: float
    printed_residual: float
    printed_gap: float
    repaired_residual: float
    coefficients: dict
    site: int
    sites: tuple
    note: str = ""

    @property
    def ok(self) -> bool:
        return self.status in (EXACT, REPAIRED)


@dataclass
class Identity:
    name: str
    geometry: str
    instances: Callable[[ChainConfig], List[Instance]]
    note: str = ""


def _check(lhs, rhs, config, trials, seed):
    return verify_identity(build(lhs, config), build(rhs, config), config, trials=trials, seed=seed, tol=TOL)


def evaluate_identity(ident: Identity, config: ChainConfig, trials: int = 100, seed: int = 0) -> IdentityReport:
    insts = ident.instances(config)
    printed_ok, repaired_ok = True, True
    p_res = p_gap = r_res = 0.0
    has_printed = any(i.printed is not None for i in insts)
    has_repair = any(i.repaired is not None for i in insts)
    for inst in insts:
        if inst.printed is not None:
            chk = _check(inst.lhs, inst.printed, config, trials, seed)
            p_res = max(p_res, chk.max_residual)
            p_gap = max(p_gap, chk.coefficient_gap)
            printed_ok &= chk.passed
        if inst.repaired is not None:
            chk = _check(inst.lhs, inst.repaired, config, trials, seed)
            r_res = max(r_res, chk.max_residual)
            repaired_ok &= chk.passed
    first = insts[0]
    if has_printed and printed_ok:
        status, verified, residual = EXACT, first.printed, p_res
    elif has_repair and repaired_ok:
        status, verified, residual = REPAIRED, first.repaired, r_res
    else:
        status, verified, residual = FAILED, first.printed or first.repaired, max(p_res, r_res)
    coefs = {"lhs": coefficients(first.lhs), "rhs": coefficients(verified)}
    return IdentityReport(ident.name, config.geometry, status, residual, p_res if has_printed else float("nan"),
                          p_gap if has_printed else float("nan"), r_res if has_repair else float("nan"),
                          coefs, first.site, tuple(i.site for i in insts), ident.note)


def _fit_terms(target: QuadObservable, basis: Sequence[QuadObservable], config: ChainConfig) -> List[Term]:
    dec = fit_decomposition(target, basis, config)
    terms = [(_snap(c), "L", b) for b, c in dec.generator.items()]
    terms += [(_snap(d), "id", b) for b, d in dec.static.items()]
    return terms


def _snap(c: float) -> float:
    """Replace a least-squares coefficient by a nearby small-denominator fraction."""
    q = Fraction(c).limit_denominator(10_000)
    return float(q) if abs(float(q) - c) <= 1e-12 * max(1.0, abs(c)) else c


# Identity definitions ---------------------------------------------------------------

def _bulk_sites(config: ChainConfig, lo: int = 1, hi: int = 0):
    """Sites lo..N-hi for open chains, every site for periodic ones."""
    n = config.n_sites
    if config.is_open:
        return range(lo, n - hi + 1)
    return range(1, n + 1)


def _continuity_bulk(config):
    w = config.wrap if not config.is_open else (lambda x: x)
    return [Instance(x, [(1.0, "L", Rho(x))], [(1.0, "id", J(w(x - 1), x)), (-1.0, "id", J(x, w(x + 1)))])
            for x in _bulk_sites(config, 2, 1)]


def _continuity_left(config):
    d, mu = config.delta, config.mu_left
    lhs = [(1.0, "L", Rho(1))]
    # j_{0,1} = 2 mu_l - rho_1 as written, without the coupling delta.
    printed = [(2.0 * mu, "const", None), (-1.0, "id", Rho(1)), (-1.0, "id", J(1, 2))]
    repaired = [(2.0 * d * mu, "const", None), (-d, "id", Rho(1)), (-1.0, "id", J(1, 2))]
    return [Instance(1, lhs, printed, repaired)]


def _continuity_right(config):
    n, d, mu = config.n_sites, config.delta, config.mu_right
    lhs = [(1.0, "L", Rho(n))]
    printed = [(1.0, "id", J(n - 1, n)), (2.0 * mu, "const", None), (-1.0, "id", Rho(n))]
    repaired = [(1.0, "id", J(n - 1, n)), (2.0 * d * mu, "const", None), (-d, "id", Rho(n))]
    return [Instance(n, lhs, printed, repaired)]


def _mass_balance(config):
    n = config.n_sites
    lhs = [(1.0, "L", Rho(x)) for x in range(1, n + 1)]
    if config.is_open:
        d = config.delta
        rhs = [(2.0 * d * (config.mu_left + config.mu_right), "const", None), (-d, "id", Rho(1)), (-d, "id", Rho(n))]
    else:
        rhs = []
    return [Instance(1, lhs, rhs)]


def _noise_density(config):
    return [Instance(x, [(1.0, "S", Rho(x))], []) for x in range(1, config.n_sites + 1)]


def _phase_derivative(config):
    w = config.wrap
    return [Instance(x, [(1.0, ("dtheta", w(x + 1)), J(w(x + 1), w(x - 1)))], [(-1.0, "id", E(w(x + 1), w(x - 1)))])
            for x in range(1, config.n_sites + 1)]


def _fd_bulk(config):
    g, w = config.gamma, config.wrap
    out = []
    for x in range(1, config.n_sites + 1):
        target = J(x, w(x + 1))
        printed = [(-0.5 / g, "L", target), (1.0 / g, "id", Rho(w(x + 1))), (-1.0 / g, "id", Rho(x)),
                   (-1.0 / g, "id", E(w(x + 1), w(x - 1))), (1.0 / g, "id", E(x, w(x - 2)))]
        basis = [target, Rho(x), Rho(w(x + 1)), E(w(x + 1), w(x - 1)), E(x, w(x + 2)), E(x, w(x - 2))]
        out.append(Instance(x, [(1.0, "id", target)], printed, _fit_terms(target, basis, config)))
    return out


def _fd_second(config):
    g, w = config.gamma, config.wrap
    out = []
    for x in range(1, config.n_sites + 1):
        target = J(w(x + 1), w(x - 1))
        # nabla {E(x+2,x-1) - E(x+1,x)} with the backward gradient.
        grad = [(1.0, E(w(x + 2), w(x - 1))), (-1.0, E(w(x + 1), x)),
                (-1.0, E(w(x + 1), w(x - 2))), (1.0, E(x, w(x - 1)))]
        printed = [(-0.5 / g, "L", target)] + [(c / g, "id", o) for c, o in grad]
        basis = [target] + [o for _, o in grad]
        out.append(Instance(x, [(1.0, "id", target)], printed, _fit_terms(target, basis, config)))
    return out


def _fd_open_bulk(config):
    g = config.gamma
    out = []
    for x in range(2, config.n_sites - 1):
        target = J(x, x + 1)
        printed = [(1.0 / g, "id", Rho(x + 1)), (-1.0 / g, "id", Rho(x)),
                   (-0.5 / g, "id", E(x, x + 2)), (0.5 / g, "id", E(x - 1, x + 1)), (-0.5 / g, "L", target)]
        basis = [target, Rho(x), Rho(x + 1), E(x - 1, x + 1), E(x, x + 2)]
        out.append(Instance(x, [(1.0, "id", target)], printed, _fit_terms(target, basis, config)))
    return out


def _fd_boundary_left(config):
    g, d = config.gamma, config.delta
    k = 4.0 * g + d
    target = J(1, 2)
    printed = [(4.0 / k, "id", Rho(2)), (-4.0 / k, "id", Rho(1)), (-2.0 / k, "id", E(1, 3)), (-2.0 / k, "L", target)]
    basis = [target, Rho(1), Rho(2), E(1, 3)]
    return [Instance(1, [(1.0, "id", target)], printed, _fit_terms(target, basis, config))]


def _fd_boundary_right(config):
    g, d, n = config.gamma, config.delta, config.n_sites
    k = 4.0 * g + d
    target = J(n - 1, n)
    printed = [(4.0 / k, "id", Rho(n)), (-4.0 / k, "id", Rho(n - 1)), (2.0 / k, "id", E(n, n - 2)),
               (-2.0 / k, "L", target)]
    basis = [target, Rho(n - 1), Rho(n), E(n - 2, n)]
    return [Instance(n - 1, [(1.0, "id", target)], printed, _fit_terms(target, basis, config))]


def _commutator(config):
    w = config.wrap
    out = []
    for x in range(1, config.n_sites + 1):
        lhs = [(1.0, ("comm", w(x + 1)), J(w(x + 1), w(x - 1)))]
        # 4 psi_i(x-1)(psi_i(x+2) + psi_i(x)) - 4 psi_r(x-1)(psi_r(x+2) + psi_r(x))
        printed = [(-2.0, "id", F(w(x - 1), w(x + 2))), (-2.0, "id", F(w(x - 1), x))]
        repaired = [(-1.0, "id", J(w(x - 1), x)), (-1.0, "id", J(w(x - 1), w(x + 2)))]
        out.append(Instance(x, lhs, printed, repaired))
    return out


REGISTRY = (
    Identity("continuity_bulk", PERIODIC, _continuity_bulk),
    Identity("continuity_bulk_open", OPEN, _continuity_bulk),
    Identity("continuity_left", OPEN, _continuity_left,
             "repair puts the coupling delta into the reservoir current"),
    Identity("continuity_right", OPEN, _continuity_right,
             "repair puts the coupling delta into the reservoir current"),
    Identity("mass_balance", PERIODIC, _mass_balance),
    Identity("mass_balance_open", OPEN, _mass_balance),
    Identity("noise_preserves_density", PERIODIC, _noise_density),
    Identity("phase_derivative_current", PERIODIC, _phase_derivative),
    Identity("fd_bulk", PERIODIC, _fd_bulk, "dissipative coefficient 1/gamma and density coefficient 2/gamma"),
    Identity("fd_second_neighbour", PERIODIC, _fd_second, "coefficient 1/gamma and opposite gradient sign"),
    Identity("fd_open_bulk", OPEN, _fd_open_bulk),
    Identity("fd_boundary_left", OPEN, _fd_boundary_left, "coefficients involve 2 gamma + delta"),
    Identity("fd_boundary_right", OPEN, _fd_boundary_right, "coefficients involve 2 gamma + delta"),
    Identity("commutator", PERIODIC, _commutator, "the commutator stays in the current sector"),
)


def identity_configs(n_sites: int = 8, gamma: float = 1.5, delta: float = 0.5,
                     mu_left: float = 1.0, mu_right: float = 2.0):
    """Periodic and open configurations used by the registry.

    The defaults keep gamma and delta away from 1 so that misplaced factors
    of gamma or delta cannot cancel by accident.
    """
    return {
        PERIODIC: ChainConfig(PERIODIC, n_sites, gamma),
        OPEN: ChainConfig(OPEN, n_sites, gamma, delta, mu_left, mu_right),
    }


def check_identities(n_sites: int = 8, gamma: float = 1.5, delta: float = 0.5, trials: int = 100, seed: int = 0,
                     mu_left: float = 1.0, mu_right: float = 2.0, names: Optional[Sequence[str]] = None):
    """Evaluate every registered identity; returns a list of IdentityReport."""
    if n_sites < 6:
        raise ValueError("identity checks need n_sites >= 6 (stencils reach x-2..x+2 without wrapping onto themselves)")
    configs = identity_configs(n_sites, gamma, delta, mu_left, mu_right)
    selected = REGISTRY if names is None else [i for i in REGISTRY if i.name in set(names)]
    if names is not None and len(selected) != len(set(names)):
        known = {i.name for i in REGISTRY}
        raise KeyError(f"unknown identities {sorted(set(names) - known)}")
    return [evaluate_identity(ident, configs[ident.geometry], trials, seed) for ident in selected]
