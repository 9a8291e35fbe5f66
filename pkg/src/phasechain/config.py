"""Flat ``key = value`` run configuration.

One entry per line, ``#`` starts a comment, lists are comma separated::

    scenario = fourier
    N = 32, 64, 128, 256
    gamma = 1
    mu_l = 1
    mu_r = 2

Every scenario has a fixed key set with defaults; :meth:`RunConfig.echo`
writes all of them back, and parsing the echo gives an identical config.
"""
from __future__ import annotations

import difflib
import hashlib
import math
from dataclasses import dataclass
from typing import Callable, Dict, Mapping, Optional

SCENARIOS = ("simulate", "stationary", "hydro", "fourier", "equilibrium", "identities")


class ConfigError(ValueError):
    """Invalid configuration; ``key`` and ``line`` locate the problem when known."""

    def __init__(self, message: str, key: Optional[str] = None, line: Optional[int] = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key {key!r}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
        self.key = key
        self.line = line


# Value types ----------------------------------------------------------------------

def _float(text: str) -> float:
    v = float(text)
    if not math.isfinite(v):
        raise ValueError("must be finite")
    return v


def _int(text: str) -> int:
    v = float(text)
    if v != int(v):
        raise ValueError("must be an integer")
    return int(v)


def _list(item: Callable[[str], object]):
    def parse(text: str):
        parts = [p.strip() for p in text.split(",")]
        if not parts or any(p == "" for p in parts):
            raise ValueError("empty list entry")
        return tuple(item(p) for p in parts)
    return parse


def _choice(*options: str):
    def parse(text: str):
        if text not in options:
            raise ValueError(f"must be one of {', '.join(options)}")
        return text
    return parse


def _auto_float(text: str):
    return "auto" if text == "auto" else _float(text)


def _auto_int(text: str):
    return "auto" if text == "auto" else _int(text)


def _format(value) -> str:
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass(frozen=True)
class Key:
    parse: Callable[[str], object]
    default: str
    check: Optional[Callable[[object], Optional[str]]] = None
    doc: str = ""


def _positive(v):
    vals = v if isinstance(v, tuple) else (v,)
    if any(x != "auto" and not x > 0 for x in vals):
        return "must be > 0"


def _nonneg(v):
    vals = v if isinstance(v, tuple) else (v,)
    if any(x != "auto" and x < 0 for x in vals):
        return "must be >= 0"


def _increasing(v):
    if any(b <= a for a, b in zip(v, v[1:])):
        return "must be strictly increasing"
    if any(x < 3 for x in v):
        return "must be >= 3"


_COMMON = {
    "seed": Key(_int, "0", _nonneg, "master seed"),
    "threads": Key(_int, "1", _positive, "worker threads"),
}

_CHAIN = {
    "gamma": Key(_float, "1.0", _positive, "phase-noise intensity"),
    "delta": Key(_float, "1.0", _positive, "reservoir coupling"),
    "mu_l": Key(_float, "1.0", _positive, "left chemical potential"),
    "mu_r": Key(_float, "2.0", _positive, "right chemical potential"),
}

_MC = {
    "n_traj": Key(_int, "32", _positive, "trajectories"),
    "dt": Key(_auto_float, "auto", _positive, "time step; auto = 0.02/max(1, gamma, delta)"),
    "burn_factor": Key(_float, "20.0", _nonneg, "burn-in in units of N^2"),
    "measure_factor": Key(_float, "100.0", _positive, "measurement time in units of N^2"),
}

SCHEMA: Dict[str, Dict[str, Key]] = {
    "simulate": {
        "geometry": Key(_choice("open", "periodic"), "open"),
        "N": Key(_int, "16"),
        **_CHAIN,
        "init": Key(_choice("equilibrium", "sine", "flat"), "equilibrium"),
        "lam": Key(_float, "1.0", _positive, "equilibrium parameter, E|psi|^2 = 1/lam"),
        **_MC,
        "n_traj": Key(_int, "1", _positive),
        "t_burn": Key(_auto_float, "auto", _nonneg, "auto = burn_factor * N^2"),
        "t_measure": Key(_auto_float, "auto", _nonneg, "auto = measure_factor * N^2"),
        "record_every": Key(_auto_int, "auto", _positive, "mass record stride in steps"),
        **_COMMON,
    },
    "stationary": {
        "N": Key(_list(_int), "16", _increasing),
        **_CHAIN,
        "tol": Key(_float, "1e-10", _positive),
        "solver": Key(_choice("auto", "direct", "relax"), "auto"),
        **_COMMON,
    },
    "hydro": {
        "N": Key(_list(_int), "32, 64, 128", _increasing),
        "gamma": _CHAIN["gamma"],
        "rho0": Key(_choice("sine", "flat"), "sine", None, "initial profile 1 + amp*sin(2 pi mode u) or flat"),
        "rho0_mean": Key(_float, "1.0", _positive),
        "rho0_amp": Key(_float, "0.5", _nonneg),
        "rho0_mode": Key(_int, "1", _positive),
        "macro_times": Key(_list(_float), "0.02, 0.05, 0.1", _nonneg),
        "dt_ode": Key(_float, "0.1", _positive),
        "error_max": Key(_float, "0.02", _positive, "L2 threshold at the largest N"),
        "n_traj": Key(_int, "0", _nonneg, "Monte-Carlo trajectories per point (0 = oracle only)"),
        "dt": _MC["dt"],
        **_COMMON,
    },
    "fourier": {
        "N": Key(_list(_int), "32, 64, 128, 256", _increasing),
        **_CHAIN,
        "method": Key(_choice("oracle", "mc", "both"), "oracle"),
        **_MC,
        **_COMMON,
    },
    "equilibrium": {
        "N": Key(_int, "32"),
        "gamma": _CHAIN["gamma"],
        "delta": _CHAIN["delta"],
        "mu": Key(_float, "1.0", _positive),
        "mu_grid": Key(_list(_float), "0.5, 1.0, 1.5, 2.0, 2.5", _positive),
        **_MC,
        "n_traj": Key(_int, "16", _positive),
        # the equilibrium initial law is already stationary, so a short burn-in suffices
        "burn_factor": Key(_float, "1.0", _nonneg),
        "measure_factor": Key(_float, "20.0", _positive),
        **_COMMON,
    },
    "identities": {
        "N": Key(_int, "8"),
        "gamma": Key(_float, "1.5", _positive),
        "delta": Key(_float, "0.5", _positive),
        "mu_l": _CHAIN["mu_l"],
        "mu_r": _CHAIN["mu_r"],
        "trials": Key(_int, "100", _positive),
        **_COMMON,
    },
}

_MIN_N = {"simulate": 3, "stationary": 4, "hydro": 3, "fourier": 4, "equilibrium": 4, "identities": 6}


@dataclass(frozen=True)
class RunConfig:
    scenario: str
    values: Mapping[str, object]

    def __getitem__(self, key):
        return self.values[key]

    def echo(self) -> str:
        lines = [f"scenario = {self.scenario}"]
        lines += [f"{k} = {_format(v)}" for k, v in self.values.items()]
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.echo().encode()).hexdigest()[:16]

    def replace(self, **overrides) -> "RunConfig":
        """New config with values given as text (like in a file) or already parsed."""
        raw = {k: (v if isinstance(v, str) else _format(v)) for k, v in overrides.items()}
        return build_config(self.scenario, raw, base=self)


def _suggest(key: str, known) -> str:
    close = difflib.get_close_matches(key, list(known), n=1, cutoff=0.0)
    return f" (did you mean {close[0]!r}?)" if close else ""


def _tokenize(text: str):
    """Yield (line_number, key, raw_value)."""
    seen = {}
    for num, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"expected 'key = value', got {body!r}", line=num)
        key, value = (s.strip() for s in body.split("=", 1))
        if not key:
            raise ConfigError("missing key", line=num)
        if key in seen:
            raise ConfigError(f"duplicate key (first set on line {seen[key]})", key=key, line=num)
        seen[key] = num
        yield num, key, value


def build_config(scenario: str, raw: Mapping[str, str], lines: Optional[Mapping[str, int]] = None,
                 base: Optional[RunConfig] = None) -> RunConfig:
    if scenario not in SCHEMA:
        raise ConfigError(f"unknown scenario {scenario!r}{_suggest(scenario, SCHEMA)}", key="scenario")
    schema = SCHEMA[scenario]
    lines = lines or {}
    for key in raw:
        if key not in schema:
            raise ConfigError(f"unknown key{_suggest(key, schema)}", key=key, line=lines.get(key))
    values = {}
    for key, spec in schema.items():
        if key in raw:
            text = raw[key]
        elif base is not None:
            values[key] = base.values[key]
            continue
        else:
            text = spec.default
        try:
            value = spec.parse(text)
        except ValueError as exc:
            raise ConfigError(f"bad value {text!r}: {exc}", key=key, line=lines.get(key)) from None
        problem = spec.check(value) if spec.check else None
        if problem:
            raise ConfigError(problem, key=key, line=lines.get(key))
        values[key] = value
    n_vals = values["N"] if isinstance(values["N"], tuple) else (values["N"],)
    n_min = _MIN_N[scenario]
    if scenario == "simulate" and values["geometry"] == "open":
        n_min = 4
    if any(n < n_min for n in n_vals):
        raise ConfigError(f"N must be >= {n_min} for this scenario", key="N", line=lines.get("N"))
    return RunConfig(scenario, values)


def parse_config(text: str, scenario: Optional[str] = None) -> RunConfig:
    """Parse and validate a config; ``scenario`` must agree with the file if both are given."""
    raw, lines = {}, {}
    for num, key, value in _tokenize(text):
        raw[key] = value
        lines[key] = num
    file_scenario = raw.pop("scenario", None)
    if file_scenario is not None and scenario is not None and file_scenario != scenario:
        raise ConfigError(f"config is for {file_scenario!r} but {scenario!r} was requested",
                          key="scenario", line=lines.get("scenario"))
    chosen = scenario or file_scenario
    if chosen is None:
        raise ConfigError("no scenario given", key="scenario")
    return build_config(chosen, raw, lines)


def default_config(scenario: str) -> RunConfig:
    return build_config(scenario, {})
