"""Panel model containers, parameter accessors and simulation.

Unit-model components are vectorized over particles. ``params`` handed to
a component maps each base parameter name (shared and unit-specific alike)
to either a float or an array with one entry per particle.

* ``rinit(t0, params, nsim, rng) -> (nsim, n_states)``
* ``rprocess(x, t_start, t_end, params, rng) -> (nsim, n_states)``
* ``dmeasure(y, x, t, params) -> (nsim,)`` log densities
* ``rmeasure(x, t, params, rng) -> (nsim, n_obs)``
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import (
    DomainError,
    MissingComponent,
    ShapeError,
    SimulationError,
    UnitMismatch,
    UnknownParameterError,
)
from .params import (
    ParamList,
    ParamSpec,
    ParamTransform,
    ParamVector,
    default_unit_names,
    to_param_list,
    to_param_vector,
    unit_key,
)
from .streams import stream


@dataclass(frozen=True)
class UnitModel:
    times: np.ndarray
    t0: float
    rprocess: Callable | None
    dmeasure: Callable | None
    rmeasure: Callable | None
    rinit: Callable | None
    state_names: tuple = ("X",)
    obs_names: tuple = ("Y",)
    data: np.ndarray | None = None
    partrans: ParamTransform | None = None
    dprocess: Callable | None = None

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float).reshape(-1)
        if times.size < 1:
            raise DomainError("a unit needs at least one observation time")
        if np.any(np.diff(times) <= 0):
            raise DomainError("observation times must be strictly increasing")
        if not self.t0 <= times[0]:
            raise DomainError("t0 must not exceed the first observation time")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "t0", float(self.t0))
        object.__setattr__(self, "state_names", tuple(self.state_names))
        object.__setattr__(self, "obs_names", tuple(self.obs_names))
        if self.data is not None:
            data = np.asarray(self.data, dtype=float)
            if data.ndim == 1:
                data = data[:, None]
            if data.shape != (times.size, len(self.obs_names)):
                raise ShapeError(
                    f"data shape {data.shape} does not match "
                    f"({times.size} times, {len(self.obs_names)} observables)")
            object.__setattr__(self, "data", data)

    @property
    def N(self) -> int:
        return self.times.size

    def require(self, *components: str) -> None:
        missing = [c for c in components if getattr(self, c) is None]
        if missing:
            raise MissingComponent(f"unit model lacks {', '.join(missing)}")

    def with_data(self, times, data) -> "UnitModel":
        return dataclasses.replace(self, times=times, data=data)


@dataclass(frozen=True)
class PanelData:
    """Simulated or observed panel: per-unit times, observations and (optionally) states."""

    unit_names: tuple
    times: tuple
    obs: tuple
    obs_names: tuple = ("Y",)
    t0: tuple | None = None
    states: tuple | None = None
    state_names: tuple = ("X",)

    def __post_init__(self):
        object.__setattr__(self, "unit_names", tuple(self.unit_names))
        object.__setattr__(self, "times", tuple(np.asarray(t, dtype=float) for t in self.times))
        obs = []
        for o in self.obs:
            o = np.asarray(o, dtype=float)
            obs.append(o[:, None] if o.ndim == 1 else o)
        object.__setattr__(self, "obs", tuple(obs))
        if self.t0 is None:
            object.__setattr__(self, "t0", tuple(0.0 for _ in self.unit_names))
        if not (len(self.unit_names) == len(self.times) == len(self.obs) == len(self.t0)):
            raise ShapeError("per-unit fields have different lengths")
        for t, o in zip(self.times, self.obs):
            if o.shape[0] != t.size:
                raise ShapeError("observation rows do not match times")

    @property
    def U(self) -> int:
        return len(self.unit_names)

    def to_frame(self) -> pd.DataFrame:
        """Long format with columns ``unit, time, <obs names>``."""
        frames = []
        for name, t, o in zip(self.unit_names, self.times, self.obs):
            df = pd.DataFrame(o, columns=list(self.obs_names))
            df.insert(0, "time", t)
            df.insert(0, "unit", name)
            frames.append(df)
        return pd.concat(frames, ignore_index=True)

    @classmethod
    def from_frame(cls, df: pd.DataFrame, obs_names: Sequence[str] | None = None,
                   t0: float = 0.0) -> "PanelData":
        if "unit" not in df.columns or "time" not in df.columns:
            raise ShapeError("panel frame needs 'unit' and 'time' columns")
        if obs_names is None:
            obs_names = [c for c in df.columns if c not in ("unit", "time")]
        units = list(dict.fromkeys(df["unit"].astype(str)))
        times, obs = [], []
        for u in units:
            sub = df[df["unit"].astype(str) == u].sort_values("time", kind="stable")
            times.append(sub["time"].to_numpy(float))
            obs.append(sub[list(obs_names)].to_numpy(float))
        return cls(tuple(units), tuple(times), tuple(obs), tuple(obs_names),
                   tuple(float(t0) for _ in units))


@dataclass(frozen=True, eq=False)
class PanelModel:
    units: tuple
    spec: ParamSpec
    params: ParamVector
    partrans: ParamTransform | None = None

    def __post_init__(self):
        object.__setattr__(self, "units", tuple(self.units))
        if len(self.units) != self.spec.U:
            raise UnitMismatch(f"{len(self.units)} unit models for {self.spec.U} unit names")
        object.__setattr__(self, "params", self.spec.order(self.params))

    def __len__(self) -> int:
        return len(self.units)

    def __getitem__(self, which) -> "PanelModel":
        if isinstance(which, slice):
            which = list(range(len(self)))[which]
        elif isinstance(which, (int, np.integer, str)):
            which = [which]
        return subset_units(self, which)

    @property
    def unit_names(self) -> tuple:
        return self.spec.unit_names

    def unit_index(self, unit) -> int:
        if isinstance(unit, (int, np.integer)):
            if not -len(self) <= unit < len(self):
                raise IndexError(f"unit index {unit} out of range")
            return int(unit) % len(self)
        try:
            return self.spec.unit_names.index(unit)
        except ValueError:
            raise IndexError(f"no unit named {unit!r}") from None

    # -- parameters ---------------------------------------------------------

    def get_coef(self) -> ParamVector:
        return dict(self.params)

    def set_coef(self, values: Mapping[str, float]) -> "PanelModel":
        new = dict(self.params)
        for k, x in values.items():
            if k not in new:
                raise UnknownParameterError(k)
            new[k] = float(x)
        return dataclasses.replace(self, params=new)

    def get_shared(self) -> dict:
        return {s: self.params[s] for s in self.spec.shared_names}

    def set_shared(self, values: Mapping[str, float]) -> "PanelModel":
        unknown = [k for k in values if k not in self.spec.shared_names]
        if unknown:
            raise UnknownParameterError(f"not shared parameters: {unknown}")
        return self.set_coef(values)

    def get_specific(self) -> pd.DataFrame:
        return to_param_list(self.params, self.spec).specific

    def set_specific(self, values) -> "PanelModel":
        """Update unit-specific values.

        ``values`` is a DataFrame (rows = parameters, columns = units), or
        a mapping from parameter name to a per-unit sequence or to a
        ``{unit: value}`` mapping. Only the named cells change.
        """
        if isinstance(values, pd.DataFrame):
            values = {r: values.loc[r].to_dict() for r in values.index}
        update = {}
        for name, row in values.items():
            if name not in self.spec.specific_names:
                raise UnknownParameterError(f"not a unit-specific parameter: {name!r}")
            if isinstance(row, Mapping):
                for u, x in row.items():
                    if u not in self.spec.unit_names:
                        raise UnknownParameterError(f"unknown unit {u!r}")
                    update[unit_key(name, u)] = x
            else:
                row = np.broadcast_to(np.asarray(row, dtype=float), (len(self),))
                for u, x in zip(self.spec.unit_names, row):
                    update[unit_key(name, u)] = x
        return self.set_coef(update)

    def param_list(self) -> ParamList:
        return to_param_list(self.params, self.spec)

    def unit_params(self, unit, params: Mapping[str, float] | None = None) -> dict:
        """Parameters seen by one unit's components, keyed by base name."""
        p = self.params if params is None else params
        name = self.spec.unit_names[self.unit_index(unit)]
        out = {s: p[s] for s in self.spec.shared_names}
        for s in self.spec.specific_names:
            out[s] = p[unit_key(s, name)]
        return out

    # -- data -----------------------------------------------------------------

    @property
    def data(self) -> PanelData:
        for u in self.units:
            if u.data is None:
                raise MissingComponent("panel model has no data")
        return PanelData(self.unit_names, tuple(u.times for u in self.units),
                         tuple(u.data for u in self.units), self.units[0].obs_names,
                         tuple(u.t0 for u in self.units))

    def with_data(self, data: PanelData) -> "PanelModel":
        if tuple(data.unit_names) != tuple(self.unit_names):
            raise UnitMismatch("data units do not match model units")
        units = tuple(u.with_data(t, o) for u, t, o in zip(self.units, data.times, data.obs))
        return dataclasses.replace(self, units=units)


def build_panel_model(units, shared: Mapping[str, float] | None = None, specific=None,
                      unit_names: Sequence[str] | None = None,
                      partrans: ParamTransform | None = None) -> PanelModel:
    """Bind unit models and shared / unit-specific parameters into a panel.

    ``units`` is a sequence of :class:`UnitModel` or a ``{name: UnitModel}``
    mapping. ``specific`` is a DataFrame (rows = parameters, columns =
    units), a ``{name: per-unit values}`` mapping, or None.
    """
    if isinstance(units, Mapping):
        if unit_names is not None and list(unit_names) != list(units):
            raise UnitMismatch("unit_names disagree with the keys of units")
        unit_names = [str(k) for k in units]
        units = list(units.values())
    units = list(units)
    for u in units:
        u.require("rprocess", "rinit", "dmeasure")
    shared = {} if shared is None else {str(k): float(x) for k, x in shared.items()}

    if specific is None:
        specific = pd.DataFrame(np.empty((0, len(units))))
        if unit_names is None:
            unit_names = default_unit_names(len(units))
        specific.columns = list(unit_names)
    elif not isinstance(specific, pd.DataFrame):
        rows = {k: np.atleast_1d(np.asarray(x, dtype=float)) for k, x in specific.items()}
        specific = pd.DataFrame.from_dict(
            {k: np.broadcast_to(x, (len(units),)) if x.size == 1 else x for k, x in rows.items()},
            orient="index")
        if unit_names is None:
            unit_names = default_unit_names(len(units))
        if specific.shape[1] != len(unit_names):
            raise UnitMismatch(f"specific has {specific.shape[1]} columns for {len(unit_names)} units")
        specific.columns = list(unit_names)

    cols = [str(c) for c in specific.columns]
    if unit_names is None:
        if all(isinstance(c, (int, np.integer)) for c in specific.columns):
            unit_names = default_unit_names(len(units))
            specific = specific.set_axis(unit_names, axis=1)
            cols = unit_names
        else:
            unit_names = cols
    if len(cols) != len(units):
        raise UnitMismatch(f"specific has {len(cols)} columns for {len(units)} units")
    if list(cols) != list(unit_names):
        raise UnitMismatch(f"specific columns {cols} do not match units {list(unit_names)}")

    spec = ParamSpec(tuple(shared), tuple(str(i) for i in specific.index), tuple(unit_names))
    params = to_param_vector(ParamList(shared, specific))
    if partrans is None:
        partrans = units[0].partrans if units else None
    return PanelModel(tuple(units), spec, params, partrans)


def subset_units(m: PanelModel, which: Sequence) -> PanelModel:
    """Panel restricted to (and ordered by) the selected units; shared values kept."""
    idx = [m.unit_index(w) for w in which]
    names = [m.unit_names[i] for i in idx]
    spec = m.spec.subset(names)
    params = {k: m.params[k] for k in spec.vector_names()}
    return PanelModel(tuple(m.units[i] for i in idx), spec, params, m.partrans)


def simulate_panel(m: PanelModel, params: Mapping[str, float] | None = None,
                   seed: int = 0) -> PanelData:
    """Simulate states and observations for every unit.

    Unit ``u`` draws from the stream keyed by ``(seed, unit name)`` so its
    output does not depend on the other units.
    """
    params = m.params if params is None else m.spec.order(params)
    times, obs, states = [], [], []
    for i, (name, unit) in enumerate(zip(m.unit_names, m.units)):
        unit.require("rinit", "rprocess", "rmeasure")
        rng = stream(seed, "simulate", name)
        p = m.unit_params(i, params)
        x = np.asarray(unit.rinit(unit.t0, p, 1, rng), dtype=float).reshape(1, -1)
        if not np.all(np.isfinite(x)):
            raise SimulationError(f"non-finite initial state in unit {name}", name, unit.t0)
        t_prev = unit.t0
        xs = np.empty((unit.N, x.shape[1]))
        ys = np.empty((unit.N, len(unit.obs_names)))
        for n, t in enumerate(unit.times):
            x = np.asarray(unit.rprocess(x, t_prev, t, p, rng), dtype=float).reshape(1, -1)
            y = np.asarray(unit.rmeasure(x, t, p, rng), dtype=float).reshape(-1)
            if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
                raise SimulationError(f"non-finite simulation in unit {name} at time {t}", name, t)
            xs[n] = x[0]
            ys[n] = y
            t_prev = t
        times.append(unit.times)
        obs.append(ys)
        states.append(xs)
    return PanelData(m.unit_names, tuple(times), tuple(obs), m.units[0].obs_names,
                     tuple(u.t0 for u in m.units), tuple(states), m.units[0].state_names)

