"""Run configuration: a flat TOML file with one table per concern.

Keys carry their units in their names. Every value is validated before any
computation starts, and each failure names the offending ``table.key``.
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .convex_core import FwOptions
from .finite_rate import (DEFAULT_A_GRID, DEFAULT_ALPHA_GRID, DEFAULT_P_KEY_GRID,
                          DEFAULT_P_PE_GRID, SecurityParamError, SecurityParams)
from .fock_ops import ModulationScheme
from .honest_model import HonestChannel


class ConfigError(ValueError):
    """Invalid configuration; ``key`` names the offending entry."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass(frozen=True)
class SchemeConfig:
    alpha_grid: tuple[float, ...] = (0.9,)
    delta_amp: float = 0.9
    delta_mod: float = 0.9
    cutoff: int = 10

    def schemes(self) -> list[ModulationScheme]:
        return [ModulationScheme(a, self.delta_amp, self.delta_mod, self.cutoff)
                for a in self.alpha_grid]


@dataclass(frozen=True)
class ChannelConfig:
    distance_km_grid: tuple[float, ...] = (10.0,)
    attenuation_db_per_km: float = 0.2
    excess_noise_snu: float = 0.02

    def channels(self) -> list[HonestChannel]:
        return [HonestChannel(d, self.attenuation_db_per_km, self.excess_noise_snu)
                for d in self.distance_km_grid]


@dataclass(frozen=True)
class ProtocolConfig:
    ec_inefficiency: float = 0.0
    leak_scales_with_p_key: bool = True


@dataclass(frozen=True)
class SecurityConfig:
    n_rounds_grid: tuple[float, ...] = (1e12, 1e13, 1e14, 1e15)
    eps: float = 1e-9
    eps_phys_na: float = 1e-3
    eps_tom: float = 1e-8
    eps_ec: float = 1e-10
    eps_ec_c: float = 1e-6
    eps_pe_c: float = 1e-6
    output_alphabet_size: int | None = None
    renyi_a_grid: tuple[float, ...] = DEFAULT_A_GRID
    p_key_grid: tuple[float, ...] = DEFAULT_P_KEY_GRID
    p_pe_cond_grid: tuple[float, ...] = DEFAULT_P_PE_GRID

    def params(self, n: float, a: float | None = None) -> SecurityParams:
        kw = {} if a is None else {"a": a}
        return SecurityParams(n, self.eps, self.eps_phys_na, self.eps_tom, self.eps_ec,
                              self.eps_ec_c, self.eps_pe_c, **kw)


@dataclass(frozen=True)
class SolverConfig:
    tol: float = 1e-9
    max_iter: int = 300
    gap: float = 0.02
    cadence: int = 15
    line_tol: float = 1e-6
    robust_dual: bool = True
    spread_penalty: float = 0.0

    def fw_options(self) -> FwOptions:
        return FwOptions(gap=self.gap, max_iter=self.max_iter, cadence=self.cadence,
                         sdp_tol=self.tol, line_tol=self.line_tol,
                         spread_penalty=self.spread_penalty, robust_dual=self.robust_dual)


@dataclass(frozen=True)
class McConfig:
    n_samples: int = 10_000_000
    z_threshold: float = 4.0
    concentration_trials: int = 20_000
    concentration_n: int = 10_000


@dataclass(frozen=True)
class RunConfig:
    scheme: SchemeConfig = field(default_factory=SchemeConfig)
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)
    security: SecurityConfig = field(default_factory=SecurityConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    mc: McConfig = field(default_factory=McConfig)


# scalar keys accepted as a one-element grid
_SCALAR_ALIASES = {
    ("scheme", "alpha"): "alpha_grid",
    ("channel", "distance_km"): "distance_km_grid",
    ("security", "n_rounds"): "n_rounds_grid",
}


def _coerce(key: str, value: Any, default: Any, annotation: str) -> Any:
    if "tuple" in annotation:
        if not isinstance(value, list) or not value:
            raise ConfigError(key, "expected a nonempty list of numbers")
        out = []
        for v in value:
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ConfigError(key, f"expected numbers, got {v!r}")
            out.append(float(v))
        return tuple(out)
    if "bool" in annotation:
        if not isinstance(value, bool):
            raise ConfigError(key, f"expected true/false, got {value!r}")
        return value
    if annotation.startswith("int"):
        if value is None and "None" in annotation:
            return None
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(key, f"expected an integer, got {value!r}")
        return value
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(key, f"expected a number, got {value!r}")
    if not math.isfinite(value):
        raise ConfigError(key, "must be finite")
    return float(value)


def _build_section(name: str, cls, raw: dict) -> Any:
    if not isinstance(raw, dict):
        raise ConfigError(name, "expected a table")
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in raw.items():
        target = _SCALAR_ALIASES.get((name, key), key)
        if target not in known:
            raise ConfigError(f"{name}.{key}", "unknown key")
        if target != key:
            if target in raw:
                raise ConfigError(f"{name}.{key}", f"give either {key} or {target}, not both")
            value = [value]
        kwargs[target] = _coerce(f"{name}.{key}", value, None, str(known[target].type))
    return cls(**kwargs)


def config_from_dict(raw: dict) -> RunConfig:
    sections = {f.name: f for f in fields(RunConfig)}
    kwargs = {}
    for name, value in raw.items():
        if name not in sections:
            raise ConfigError(name, "unknown table")
        cls = sections[name].default_factory
        kwargs[name] = _build_section(name, cls, value)
    cfg = RunConfig(**kwargs)
    validate_config(cfg)
    return cfg


def load_config(path: str | Path | None) -> RunConfig:
    """Read and validate a TOML run configuration; ``None`` gives the defaults."""
    if path is None:
        cfg = RunConfig()
        validate_config(cfg)
        return cfg
    with open(path, "rb") as fh:
        try:
            raw = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(str(path), f"not valid TOML ({exc})") from exc
    return config_from_dict(raw)


def _positive(key: str, value: float) -> None:
    if not value > 0:
        raise ConfigError(key, f"must be > 0, got {value}")


def _probability_grid(key: str, grid, closed_low=False) -> None:
    for v in grid:
        if not (0.0 <= v < 1.0 if closed_low else 0.0 < v < 1.0):
            raise ConfigError(key, f"entries must lie in (0, 1), got {v}")


def validate_config(cfg: RunConfig) -> None:
    """Check every module precondition reachable from ``cfg``."""
    s = cfg.scheme
    for a in s.alpha_grid:
        _positive("scheme.alpha_grid", a)
    _positive("scheme.delta_amp", s.delta_amp)
    _positive("scheme.delta_mod", s.delta_mod)
    ratio = s.delta_amp / s.delta_mod
    if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
        raise ConfigError("scheme.delta_mod",
                          f"delta_amp / delta_mod = {ratio:g} must be a positive integer")
    if s.cutoff < 2:
        raise ConfigError("scheme.cutoff", f"must be >= 2, got {s.cutoff}")

    c = cfg.channel
    for d in c.distance_km_grid:
        if d < 0:
            raise ConfigError("channel.distance_km_grid", f"distances must be >= 0, got {d}")
    _positive("channel.attenuation_db_per_km", c.attenuation_db_per_km)
    if c.excess_noise_snu < 0:
        raise ConfigError("channel.excess_noise_snu", "must be >= 0")

    if cfg.protocol.ec_inefficiency < 0:
        raise ConfigError("protocol.ec_inefficiency", "must be >= 0")

    sec = cfg.security
    for n in sec.n_rounds_grid:
        if n < 1:
            raise ConfigError("security.n_rounds_grid", f"n must be >= 1, got {n}")
    for a in sec.renyi_a_grid:
        if not 1.0 < a < 2.0:
            raise ConfigError("security.renyi_a_grid", f"entries must lie in (1, 2), got {a}")
    _probability_grid("security.p_key_grid", sec.p_key_grid)
    _probability_grid("security.p_pe_cond_grid", sec.p_pe_cond_grid)
    if sec.output_alphabet_size is not None and sec.output_alphabet_size < 2:
        raise ConfigError("security.output_alphabet_size", "must be >= 2")
    try:
        sec.params(sec.n_rounds_grid[0], sec.renyi_a_grid[0]).validate()
    except SecurityParamError as exc:
        msg = str(exc)
        name = msg.split(" ", 1)[0]
        key = name if name in {f.name for f in fields(SecurityConfig)} else "eps"
        raise ConfigError(f"security.{key}", msg) from exc

    sol = cfg.solver
    _positive("solver.tol", sol.tol)
    if sol.max_iter < 1:
        raise ConfigError("solver.max_iter", "must be >= 1")
    _positive("solver.gap", sol.gap)
    if sol.cadence < 1:
        raise ConfigError("solver.cadence", "must be >= 1")
    _positive("solver.line_tol", sol.line_tol)
    if sol.spread_penalty < 0:
        raise ConfigError("solver.spread_penalty", "must be >= 0")

    mc = cfg.mc
    if mc.n_samples < 1:
        raise ConfigError("mc.n_samples", "must be >= 1")
    _positive("mc.z_threshold", mc.z_threshold)
    if mc.concentration_trials < 1:
        raise ConfigError("mc.concentration_trials", "must be >= 1")
    if mc.concentration_n < 1:
        raise ConfigError("mc.concentration_n", "must be >= 1")


def config_echo(cfg: RunConfig) -> dict:
    """Plain-dict form of ``cfg`` for reports."""
    out = {}
    for sec in fields(RunConfig):
        obj = getattr(cfg, sec.name)
        out[sec.name] = {f.name: (list(v) if isinstance(v := getattr(obj, f.name), tuple) else v)
                         for f in fields(obj)}
    return out
