"""Shared / unit-specific parameter bookkeeping.

A panel parameter is held either as a flat ``dict`` (the *vector* format,
unit-specific entries keyed ``name[unit]``) or as a :class:`ParamList`
(a shared ``dict`` plus a parameters-by-units ``DataFrame``).
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import DomainError, NameClash, ParseError, UnknownParameterError

ParamVector = dict  # name -> float, ordered: shared first, then unit blocks

_KEY = re.compile(r"^(?P<name>[^\[\]]+)\[(?P<unit>[^\[\]]+)\]$")


def unit_key(name: str, unit: str) -> str:
    return f"{name}[{unit}]"


def parse_key(key: str) -> tuple[str, str | None]:
    """Split ``"beta[unit7]"`` into ``("beta", "unit7")``; shared names give ``(key, None)``."""
    if "[" not in key and "]" not in key:
        return key, None
    m = _KEY.match(key)
    if m is None:
        raise ParseError(f"malformed parameter name {key!r}")
    return m.group("name"), m.group("unit")


def default_unit_names(U: int) -> list[str]:
    return [f"unit{i + 1}" for i in range(U)]


@dataclass(frozen=True)
class ParamSpec:
    shared_names: tuple[str, ...]
    specific_names: tuple[str, ...]
    unit_names: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "shared_names", tuple(self.shared_names))
        object.__setattr__(self, "specific_names", tuple(self.specific_names))
        object.__setattr__(self, "unit_names", tuple(self.unit_names))
        clash = set(self.shared_names) & set(self.specific_names)
        if clash:
            raise NameClash(f"names both shared and unit-specific: {sorted(clash)}")
        for label, names in (("shared", self.shared_names),
                             ("specific", self.specific_names),
                             ("unit", self.unit_names)):
            if len(set(names)) != len(names):
                raise NameClash(f"duplicate {label} names in {names}")
            for nm in names:
                if not nm or "[" in nm or "]" in nm:
                    raise ParseError(f"invalid {label} name {nm!r}")
        if len(self.unit_names) < 1:
            raise DomainError("a panel needs at least one unit")

    @property
    def U(self) -> int:
        return len(self.unit_names)

    @property
    def dim(self) -> int:
        return len(self.shared_names) + len(self.specific_names) * self.U

    def vector_names(self) -> list[str]:
        names = list(self.shared_names)
        for u in self.unit_names:
            names.extend(unit_key(s, u) for s in self.specific_names)
        return names

    def check_vector(self, v: Mapping[str, float]) -> None:
        expected = self.vector_names()
        if set(v) != set(expected):
            missing = [k for k in expected if k not in v]
            extra = [k for k in v if k not in set(expected)]
            raise UnknownParameterError(f"parameter names mismatch; missing={missing}, unknown={extra}")

    def order(self, v: Mapping[str, float]) -> ParamVector:
        self.check_vector(v)
        return {k: float(v[k]) for k in self.vector_names()}

    def subset(self, units: Sequence[str]) -> "ParamSpec":
        return ParamSpec(self.shared_names, self.specific_names, tuple(units))


@dataclass
class ParamList:
    """List format: ``shared`` dict and ``specific`` frame (rows = parameters, columns = units)."""

    shared: dict
    specific: pd.DataFrame

    def __post_init__(self):
        self.shared = {k: float(v) for k, v in self.shared.items()}
        spec = pd.DataFrame(self.specific, dtype=float)
        spec.index = [str(i) for i in spec.index]
        spec.columns = [str(c) for c in spec.columns]
        spec.index.name = "param"
        spec.columns.name = "unit"
        self.specific = spec

    def equals(self, other: "ParamList") -> bool:
        return (list(self.shared.items()) == list(other.shared.items())
                and list(self.specific.index) == list(other.specific.index)
                and list(self.specific.columns) == list(other.specific.columns)
                and np.array_equal(self.specific.to_numpy(), other.specific.to_numpy()))


def to_param_list(v: Mapping[str, float], spec: ParamSpec | None = None) -> ParamList:
    """Convert a vector-format parameter to list format.

    Without ``spec`` the structure is read off the names: bracketed keys
    are unit-specific, the rest shared, with parameters and units ordered
    by first appearance. Passing ``spec`` validates the keys and recovers
    unit labels when there are no unit-specific parameters.
    """
    if spec is not None:
        spec.check_vector(v)
        shared = {s: float(v[s]) for s in spec.shared_names}
        mat = np.array([[float(v[unit_key(s, u)]) for u in spec.unit_names]
                        for s in spec.specific_names]).reshape(len(spec.specific_names), spec.U)
        return ParamList(shared, pd.DataFrame(mat, index=list(spec.specific_names),
                                              columns=list(spec.unit_names)))
    shared = {}
    cells = {}
    names: list[str] = []
    units: list[str] = []
    for key, val in v.items():
        name, unit = parse_key(key)
        if unit is None:
            shared[name] = float(val)
            continue
        if name not in names:
            names.append(name)
        if unit not in units:
            units.append(unit)
        cells[(name, unit)] = float(val)
    mat = np.empty((len(names), len(units)))
    for i, name in enumerate(names):
        for j, unit in enumerate(units):
            if (name, unit) not in cells:
                raise ParseError(f"missing {unit_key(name, unit)!r}: unit-specific names must cover every unit")
            mat[i, j] = cells[(name, unit)]
    if set(shared) & set(names):
        raise NameClash(f"names both shared and unit-specific: {sorted(set(shared) & set(names))}")
    return ParamList(shared, pd.DataFrame(mat, index=names, columns=units))


def to_param_vector(pl: ParamList) -> ParamVector:
    """Inverse of :func:`to_param_list`: shared entries first, then unit blocks."""
    out = {k: float(x) for k, x in pl.shared.items()}
    spec = pl.specific
    clash = set(out) & set(spec.index)
    if clash:
        raise NameClash(f"names both shared and unit-specific: {sorted(clash)}")
    values = spec.to_numpy(dtype=float)
    for j, unit in enumerate(spec.columns):
        for i, name in enumerate(spec.index):
            out[unit_key(name, unit)] = float(values[i, j])
    return out


# ---------------------------------------------------------------------------
# transformations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ParamTransform:
    """Elementwise maps between the natural and the estimation scale.

    ``log`` names are log-transformed, ``identity`` names are declared
    untransformed, and ``custom`` maps a name to a ``(to_est, from_est)``
    pair of vectorized callables. Names apply to shared parameters and,
    through their base name, to every ``name[unit]`` entry.
    """

    log: tuple[str, ...] = ()
    identity: tuple[str, ...] = ()
    custom: Mapping[str, tuple[Callable, Callable]] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "log", tuple(self.log))
        object.__setattr__(self, "identity", tuple(self.identity))
        seen = list(self.log) + list(self.identity) + list(self.custom)
        if len(set(seen)) != len(seen):
            raise NameClash("a parameter has more than one transformation")

    @property
    def log_names(self) -> tuple[str, ...]:
        return self.log

    def covers(self, name: str) -> bool:
        base, _ = parse_key(name)
        return base in self.log or base in self.identity or base in self.custom

    def to_est_one(self, name, value):
        base, _ = parse_key(name)
        if base in self.log:
            with np.errstate(divide="ignore", invalid="ignore"):
                return np.log(value)
        if base in self.custom:
            return self.custom[base][0](value)
        return value

    def from_est_one(self, name, value):
        base, _ = parse_key(name)
        if base in self.log:
            return np.exp(value)
        if base in self.custom:
            return self.custom[base][1](value)
        return value

    def to_est(self, v: Mapping[str, float]) -> ParamVector:
        return {k: float(self.to_est_one(k, x)) for k, x in v.items()}

    def from_est(self, v: Mapping[str, float]) -> ParamVector:
        return {k: float(self.from_est_one(k, x)) for k, x in v.items()}
