"""Run configuration: a strict JSON schema mapped onto a validated MapSpec and run settings.

Example::

    {
      "map": {"P": [[3, 0, 1.0], [1, 2, 1.0]], "Q": [[0, 3, 1.0], [2, 1, 1.0]],
              "X": [], "Y": [[4, 0, 0.1]]},
      "tolerances": {"z_min": 1e-9, "bisect": 1e-10, "conjugacy": 1e-6},
      "seed": 7
    }

Terms are [degree in x, degree in y, coefficient].  P and Q must be
homogeneous; X and Y may mix degrees and are grouped by total degree.
Sections other than "map" are optional and fall back to the defaults below.
"""
from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, field, fields
from pathlib import Path

from .planar_map import MapSpec, SpecError, validate_spec
from .tensor import HomogeneousPolynomial

STOCHASTIC = {"shadow", "all"}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Tolerances:
    z_min: float = 1e-9
    bisect: float = 1e-10
    conjugacy: float = 1e-6


@dataclass(frozen=True)
class Grids:
    cone_samples: int = 10_000
    manifold_samples: int = 401
    manifold_max_iter: int = 2000
    uniqueness_arcs: int = 100
    conjugacy: int = 50
    shadow_samples: int = 10_000


@dataclass(frozen=True)
class ConjugacySettings:
    band: float = 1e-3
    self_check: bool = False


@dataclass(frozen=True)
class ShadowSettings:
    eps_target: float = 5e-5
    trials: int = 100
    length: int = 20
    noise_fraction: float = 0.5
    eps_factor: float = 10.0


@dataclass(frozen=True)
class RunConfig:
    spec: MapSpec
    terms: dict = field(repr=False)
    tolerances: Tolerances = Tolerances()
    grids: Grids = Grids()
    conjugacy: ConjugacySettings = ConjugacySettings()
    shadow: ShadowSettings = ShadowSettings()
    seed: int | None = None
    output: str | None = None

    @property
    def k(self) -> int:
        return self.spec.k

    @property
    def k_prime(self) -> int:
        return self.spec.k_prime

    def require_seed(self, subcommand: str) -> int:
        if subcommand in STOCHASTIC and self.seed is None:
            raise ConfigError(f"seed required for subcommand {subcommand!r}")
        return self.seed


_SECTIONS = {
    "tolerances": Tolerances,
    "grids": Grids,
    "conjugacy": ConjugacySettings,
    "shadow": ShadowSettings,
}
_TOP = {"map", "seed", "output", *_SECTIONS}


def _check_keys(obj, allowed, where: str) -> None:
    if not isinstance(obj, dict):
        raise ConfigError(f"{where} must be an object")
    unknown = sorted(set(obj) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key {where}.{unknown[0]}" if where else f"unknown key {unknown[0]}")


def _triples(raw, name: str) -> list[tuple[int, int, float]]:
    if not isinstance(raw, list):
        raise ConfigError(f"map.{name} must be a list of [deg_x, deg_y, coeff] triples")
    out = []
    for k, t in enumerate(raw):
        if not (isinstance(t, list) and len(t) == 3):
            raise ConfigError(f"map.{name}[{k}] must be [deg_x, deg_y, coeff]")
        i, j, c = t
        if not (isinstance(i, int) and isinstance(j, int) and i >= 0 and j >= 0):
            raise ConfigError(f"map.{name}[{k}]: exponents must be non-negative integers")
        if isinstance(c, bool) or not isinstance(c, (int, float)):
            raise ConfigError(f"map.{name}[{k}]: coefficient must be a number")
        out.append((i, j, float(c)))
    return out


def _form(terms, name: str) -> HomogeneousPolynomial:
    if not terms:
        raise ConfigError(f"map.{name} needs at least one term")
    try:
        return HomogeneousPolynomial.from_terms(terms)
    except ValueError as exc:
        raise ConfigError(f"map.{name}: {exc}") from None


def _grouped(terms) -> tuple[HomogeneousPolynomial, ...]:
    by_degree = defaultdict(list)
    for i, j, c in terms:
        by_degree[i + j].append((i, j, c))
    return tuple(HomogeneousPolynomial.from_terms(by_degree[d]) for d in sorted(by_degree))


def spec_from_terms(terms: dict) -> MapSpec:
    P = _form(terms["P"], "P")
    Q = _form(terms["Q"], "Q")
    try:
        return validate_spec(MapSpec(P, Q, _grouped(terms.get("X", [])), _grouped(terms.get("Y", []))))
    except SpecError as exc:
        raise ConfigError(str(exc)) from None


def _section(raw, cls, name: str):
    _check_keys(raw, [f.name for f in fields(cls)], name)
    values = {}
    for f in fields(cls):
        if f.name not in raw:
            continue
        v = raw[f.name]
        default = getattr(cls(), f.name)
        if isinstance(default, bool):
            if not isinstance(v, bool):
                raise ConfigError(f"{name}.{f.name} must be true or false")
        elif isinstance(default, int):
            if isinstance(v, bool) or not isinstance(v, int) or v <= 0:
                raise ConfigError(f"{name}.{f.name} must be a positive integer")
        else:
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not v > 0:
                raise ConfigError(f"{name}.{f.name} must be positive")
            v = float(v)
        values[f.name] = v
    return cls(**values)


def parse_config(text: str) -> RunConfig:
    """Parse and validate; raises ConfigError naming the line or the offending key."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"syntax error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    _check_keys(raw, _TOP, "")
    if "map" not in raw:
        raise ConfigError("missing key map")
    _check_keys(raw["map"], ["P", "Q", "X", "Y"], "map")
    for key in ("P", "Q"):
        if key not in raw["map"]:
            raise ConfigError(f"missing key map.{key}")
    terms = {k: _triples(v, k) for k, v in raw["map"].items()}
    spec = spec_from_terms(terms)
    sections = {name: _section(raw.get(name, {}), cls, name) for name, cls in _SECTIONS.items()}
    seed = raw.get("seed")
    if seed is not None and (isinstance(seed, bool) or not isinstance(seed, int) or seed < 0):
        raise ConfigError("seed must be a non-negative integer")
    output = raw.get("output")
    if output is not None and not isinstance(output, str):
        raise ConfigError("output must be a path string")
    return RunConfig(spec, terms, seed=seed, output=output, **sections)


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    return parse_config(text)
