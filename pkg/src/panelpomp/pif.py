"""Panel iterated filtering and per-unit block refinement.

Parameters are perturbed by Gaussian random walks on the estimation scale
of the model's :class:`~panelpomp.params.ParamTransform`; the shared swarm
is carried from unit to unit, each unit's specific swarm is carried from
iteration to iteration, and the random-walk intensity shrinks
geometrically across iterations.
"""
from __future__ import annotations

import dataclasses
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
import pandas as pd

from . import kernels
from .errors import ConfigError, FilterError, FilterWarning, MissingComponent
from .filter import RESAMPLERS, resample_targets
from .model import PanelModel, subset_units
from .params import ParamSpec, ParamTransform, parse_key, unit_key
from .streams import stream

DEFAULT_RW_SD = 0.02


def ivp(sd: float) -> Callable[[int], float]:
    """Random-walk intensity applied only at time 0 (initial-value parameters)."""
    def at(n: int) -> float:
        return sd if n == 0 else 0.0
    return at


def _sd_value(entry, n: int) -> float:
    v = entry(n) if callable(entry) else entry
    return float(v)


@dataclass(frozen=True)
class RwSd:
    """Random-walk standard deviations on the estimation scale.

    ``shared`` maps a shared name to an intensity. ``specific`` maps a
    unit-specific name to an intensity applied to every unit, or to a
    ``{unit: intensity}`` mapping. An intensity is a float or a callable of
    the observation index ``n`` (0 being the initial time). Unlisted
    parameters are not perturbed.
    """

    shared: Mapping = field(default_factory=dict)
    specific: Mapping = field(default_factory=dict)

    @classmethod
    def from_names(cls, spec: ParamSpec, values: Mapping) -> "RwSd":
        """Sort ``{name: sd}`` into shared and specific parts; ``name[unit]`` keys set one unit."""
        shared, specific = {}, {}
        for key, sd in values.items():
            name, unit = parse_key(key)
            if unit is None and name in spec.shared_names:
                shared[name] = sd
            elif name in spec.specific_names:
                if unit is None:
                    specific[name] = sd
                else:
                    if unit not in spec.unit_names:
                        raise ConfigError(f"rw_sd for unknown unit {unit!r}")
                    row = specific.get(name)
                    if not isinstance(row, dict):
                        row = {u: (0.0 if row is None else row) for u in spec.unit_names}
                    row[unit] = sd
                    specific[name] = row
            else:
                raise ConfigError(f"rw_sd for unknown parameter {key!r}")
        return cls(shared, specific)

    def shared_sd(self, name: str, n: int = 0) -> float:
        return _sd_value(self.shared.get(name, 0.0), n)

    def specific_sd(self, name: str, unit: str, n: int = 0) -> float:
        entry = self.specific.get(name, 0.0)
        if isinstance(entry, Mapping):
            entry = entry.get(unit, 0.0)
        return _sd_value(entry, n)

    def as_dict(self) -> dict:
        out = {}
        for k, v in self.shared.items():
            out[k] = v if not callable(v) else "callable"
        for k, v in self.specific.items():
            if isinstance(v, Mapping):
                for u, s in v.items():
                    out[unit_key(k, u)] = s if not callable(s) else "callable"
            else:
                out[k] = v if not callable(v) else "callable"
        return out


@dataclass(frozen=True)
class CoolingSchedule:
    """Geometric cooling: the intensity at iteration ``m`` is scaled by ``fraction_50 ** (m / 50)``."""

    fraction_50: float = 0.5
    type: str = "geometric"

    def __post_init__(self):
        if not 0 < self.fraction_50 <= 1:
            raise ConfigError("cooling fraction must lie in (0, 1]")
        if self.type != "geometric":
            raise ConfigError(f"unsupported cooling type {self.type!r}")

    @property
    def rho(self) -> float:
        return self.fraction_50 ** (1.0 / 50.0)

    def factor(self, m: int) -> float:
        return self.fraction_50 ** (m / 50.0)


def perturbation_sd(rw_sd: RwSd, cooling: CoolingSchedule, m: int, name: str,
                    unit: str | None = None, n: int = 0) -> float:
    """Intensity applied to ``name`` (for ``unit``) at observation ``n`` of iteration ``m``."""
    base = rw_sd.shared_sd(name, n) if unit is None else rw_sd.specific_sd(name, unit, n)
    return cooling.factor(m) * base


@dataclass(frozen=True)
class ParamSwarm:
    """Natural-scale particle swarm: ``shared`` is A x J, ``specific`` is B x U x J."""

    shared: np.ndarray
    specific: np.ndarray
    shared_names: tuple
    specific_names: tuple
    unit_names: tuple

    @property
    def J(self) -> int:
        return self.shared.shape[-1] if self.shared.size else self.specific.shape[-1]


@dataclass(frozen=True)
class PifResult:
    swarm: ParamSwarm
    point_estimate: dict
    traces: pd.DataFrame
    loglik: float
    config: dict
    cooling_factors: np.ndarray
    n_failures: int = 0
    block_logliks: dict | None = None


class _EstScale:
    """Row-wise maps between a stack of estimation-scale rows and natural values."""

    def __init__(self, partrans: ParamTransform | None, names: Sequence[str]):
        self.names = list(names)
        self.partrans = partrans
        self.all_log = partrans is not None and all(
            parse_key(k)[0] in partrans.log for k in self.names)

    def to_est(self, values: np.ndarray) -> np.ndarray:
        if self.all_log:
            return np.log(values)
        return np.array([self.partrans.to_est_one(k, v) for k, v in zip(self.names, values)],
                        dtype=float).reshape(values.shape)

    def from_est(self, est: np.ndarray) -> np.ndarray:
        if self.all_log:
            return np.exp(est)
        if not self.names:
            return est
        return np.array([self.partrans.from_est_one(k, v) for k, v in zip(self.names, est)],
                        dtype=float).reshape(est.shape)


def _sd_table(entry_fn, N: int) -> np.ndarray:
    return np.array([entry_fn(n) for n in range(N + 1)], dtype=float)


def run_pif(m: PanelModel, start: Mapping[str, float] | None = None, M: int = 50, J: int = 1000,
            rw_sd: RwSd | Mapping | None = None, cooling: CoolingSchedule | float = 0.5,
            seed: int = 0, replicate: int | str = 0, resampler: str = "multinomial",
            tol: float = 1e-300) -> PifResult:
    """Panel iterated filtering.

    Each iteration sweeps the units in order. At a unit the shared and that
    unit's specific parameters are perturbed at time 0 and before every
    observation, particles are propagated, weighted and resampled, and the
    resampling index is applied jointly to states, shared and specific
    parameter particles. The shared swarm leaving unit ``u`` enters unit
    ``u + 1``; the swarm leaving the last unit starts the next iteration.

    ``point_estimate`` is the swarm mean on the estimation scale, mapped
    back; parameters that are never perturbed keep their start values
    exactly. Streams are keyed by ``(seed, replicate, iteration, unit)``.
    """
    if M < 1:
        raise ConfigError("M must be at least 1")
    if J < 2:
        raise ConfigError("J must be at least 2")
    if resampler not in RESAMPLERS:
        raise ConfigError(f"unknown resampler {resampler!r}")
    if not isinstance(cooling, CoolingSchedule):
        cooling = CoolingSchedule(float(cooling))
    spec = m.spec
    if rw_sd is None:
        rw_sd = RwSd()
    elif not isinstance(rw_sd, RwSd):
        rw_sd = RwSd.from_names(spec, rw_sd)
    start = spec.order(m.params if start is None else start)
    for u in m.units:
        u.require("rinit", "rprocess", "dmeasure")
        if u.data is None:
            raise MissingComponent("unit has no data")

    A_names = list(spec.shared_names)
    B_names = list(spec.specific_names)
    units = list(spec.unit_names)
    U = len(units)

    # base intensity tables, indexed [param, n]
    sh_sd = [np.array([_sd_table(lambda n, a=a: rw_sd.shared_sd(a, n), m.units[i].N)
                       for a in A_names]).reshape(len(A_names), m.units[i].N + 1)
             for i in range(U)]
    sp_sd = [np.array([_sd_table(lambda n, b=b, u=units[i]: rw_sd.specific_sd(b, u, n),
                                 m.units[i].N) for b in B_names]).reshape(len(B_names), m.units[i].N + 1)
             for i in range(U)]
    for tab in sh_sd + sp_sd:
        if np.any(tab < 0) or not np.all(np.isfinite(tab)):
            raise ConfigError("random-walk intensities must be finite and nonnegative")
    act_a = [a for k, a in enumerate(A_names) if any(np.any(t[k] > 0) for t in sh_sd)]
    act_b = [b for k, b in enumerate(B_names) if any(np.any(t[k] > 0) for t in sp_sd)]
    perturbed = act_a + [unit_key(b, u) for b in act_b for u in units]
    if perturbed:
        if m.partrans is None:
            raise ConfigError("perturbed parameters need a parameter transformation")
        missing = [k for k in perturbed if not m.partrans.covers(k)]
        if missing:
            raise ConfigError(f"no transformation declared for {missing}")
    ia = [A_names.index(a) for a in act_a]
    ib = [B_names.index(b) for b in act_b]

    sh_scale = _EstScale(m.partrans, act_a)
    sh_est = sh_scale.to_est(np.array([[start[a]] * J for a in act_a], dtype=float).reshape(len(act_a), J))
    sp_scales = [_EstScale(m.partrans, [unit_key(b, u) for b in act_b]) for u in units]
    sp_est = np.empty((len(act_b), U, J))
    for i, u in enumerate(units):
        vals = np.array([[start[unit_key(b, u)]] * J for b in act_b], dtype=float).reshape(len(act_b), J)
        sp_est[:, i, :] = sp_scales[i].to_est(vals)
    unit_fixed = [m.unit_params(i, start) for i in range(U)]

    n_act = len(act_a) + len(act_b)
    log_tol = math.log(tol)
    factors = np.empty(M)
    trace_rows = [dict(start, loglik=np.nan)]
    n_fail = 0
    loglik = np.nan

    def summarize():
        est = dict(start)
        if act_a:
            est.update(zip(act_a, sh_scale.from_est(sh_est.mean(axis=1, keepdims=True))[:, 0]))
        for i, u in enumerate(units):
            if act_b:
                vals = sp_scales[i].from_est(sp_est[:, i, :].mean(axis=1, keepdims=True))[:, 0]
                est.update(zip((unit_key(b, u) for b in act_b), vals))
        return {k: float(v) for k, v in est.items()}

    for it in range(1, M + 1):
        f = cooling.factor(it)
        factors[it - 1] = f
        loglik = 0.0
        for i, uname in enumerate(units):
            unit = m.units[i]
            rng = stream(seed, "pif", replicate, it, uname)
            sp = sp_est[:, i, :]
            sd_col = np.concatenate([sh_sd[i][ia], sp_sd[i][ib]]) * f  # (n_act, N+1)
            params = dict(unit_fixed[i])

            def perturb(n):
                nonlocal sh_est, sp
                if n_act:
                    z = rng.standard_normal((n_act, J)) * sd_col[:, n:n + 1]
                    if act_a:
                        sh_est = sh_est + z[:len(act_a)]
                    if act_b:
                        sp = sp + z[len(act_a):]
                if act_a:
                    params.update(zip(act_a, sh_scale.from_est(sh_est)))
                if act_b:
                    params.update(zip(act_b, sp_scales[i].from_est(sp)))

            perturb(0)
            x = np.asarray(unit.rinit(unit.t0, params, J, rng), dtype=float)
            t_prev = unit.t0
            for n in range(unit.N):
                perturb(n + 1)
                t = unit.times[n]
                x = unit.rprocess(x, t_prev, t, params, rng)
                if not np.isfinite(x).all():
                    raise FilterError(f"non-finite state at time {t} (unit {uname})", uname, t)
                logw = np.asarray(unit.dmeasure(unit.data[n], x, t, params), dtype=float)
                if np.isnan(logw).any():
                    raise FilterError(f"dmeasure returned NaN at time {t} (unit {uname})", uname, t)
                c, _, probs, failed = kernels.log_weight_summary(logw, log_tol)
                if failed:
                    n_fail += 1
                    warnings.warn(f"all particle weights below {tol:g} at time {t} (unit {uname}, "
                                  f"iteration {it})", FilterWarning, stacklevel=2)
                loglik += c
                idx = kernels.resample_indices(probs, resample_targets(rng, J, resampler))
                x = x[idx]
                if act_a:
                    sh_est = sh_est[:, idx]
                if act_b:
                    sp = sp[:, idx]
                t_prev = t
            sp_est[:, i, :] = sp
        trace_rows.append(dict(summarize(), loglik=loglik))

    traces = pd.DataFrame(trace_rows, columns=list(start) + ["loglik"])
    traces.index.name = "iteration"

    shared_sw = np.empty((len(A_names), J))
    for k, a in enumerate(A_names):
        shared_sw[k] = start[a]
    if act_a:
        shared_sw[ia] = sh_scale.from_est(sh_est)
    specific_sw = np.empty((len(B_names), U, J))
    for i, u in enumerate(units):
        for k, b in enumerate(B_names):
            specific_sw[k, i] = start[unit_key(b, u)]
        if act_b:
            specific_sw[ib, i] = sp_scales[i].from_est(sp_est[:, i, :])
    swarm = ParamSwarm(shared_sw, specific_sw, tuple(A_names), tuple(B_names), tuple(units))
    config = dict(M=M, J=J, rw_sd=rw_sd, cooling=cooling, seed=seed, replicate=replicate,
                  resampler=resampler, tol=tol, start=dict(start))
    return PifResult(swarm, summarize(), traces, float(loglik), config, factors, n_fail)


def pif_traces(result: PifResult) -> pd.DataFrame:
    """Long-format traces: one ``(iteration, parameter, value)`` row per parameter and the loglik."""
    wide = result.traces
    long = wide.reset_index().melt(id_vars="iteration", var_name="parameter", value_name="value")
    order = {p: k for k, p in enumerate(wide.columns)}
    long["_p"] = long["parameter"].map(order)
    long = long.sort_values(["iteration", "_p"], kind="stable").drop(columns="_p")
    return long.reset_index(drop=True)


def refine_unit_blocks(m: PanelModel, fitted: PifResult, unit_param_names: Sequence[str],
                       reps: int = 2, M: int | None = None, J: int | None = None,
                       rw_sd: Mapping | None = None, cooling: CoolingSchedule | None = None,
                       seed: int = 0, units: Sequence | None = None,
                       threads: int = 1, tag: str = "") -> PifResult:
    """Block maximization of unit-specific parameters, one unit at a time.

    For each unit, ``reps`` single-unit iterated-filtering searches perturb
    only ``unit_param_names`` (shared values held at the fitted point); the
    search with the highest final perturbed log likelihood supplies the
    unit's new values. ``M``, ``J`` and ``cooling`` default to the fitted
    run's settings. Search ``k`` uses replicate key ``f"block{tag}{k}"``, so
    refinements of different fits can be given independent streams.
    """
    unknown = [s for s in unit_param_names if s not in m.spec.specific_names]
    if unknown:
        raise ConfigError(f"not unit-specific parameters: {unknown}")
    if reps < 1:
        raise ConfigError("reps must be at least 1")
    cfg = fitted.config
    M = cfg["M"] if M is None else M
    J = cfg["J"] if J is None else J
    cooling = cfg["cooling"] if cooling is None else cooling
    if rw_sd is None:
        rw_sd = {s: DEFAULT_RW_SD for s in unit_param_names}
    extra = [k for k in rw_sd if parse_key(k)[0] not in unit_param_names]
    if extra:
        raise ConfigError(f"block refinement perturbs only {list(unit_param_names)}; got {extra}")
    base = m.spec.order(fitted.point_estimate)
    model = m.set_coef(base)
    targets = list(m.unit_names) if units is None else [m.unit_names[m.unit_index(u)] for u in units]

    def refine(uname):
        single = subset_units(model, [uname])
        runs = [run_pif(single, single.params, M, J, rw_sd, cooling, seed=seed,
                        replicate=f"block{tag}{k}", resampler=cfg.get("resampler", "multinomial"),
                        tol=cfg.get("tol", 1e-300))
                for k in range(reps)]
        best = max(range(reps), key=lambda k: (runs[k].loglik, -k))
        return runs[best]

    if threads > 1 and len(targets) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(refine, targets))
    else:
        results = [refine(u) for u in targets]

    new = dict(base)
    specific_sw = fitted.swarm.specific.copy()
    block = {}
    for uname, res in zip(targets, results):
        col = m.unit_index(uname)
        for s in unit_param_names:
            key = unit_key(s, uname)
            new[key] = res.point_estimate[key]
            if specific_sw.shape[-1] == res.swarm.specific.shape[-1]:
                specific_sw[m.spec.specific_names.index(s), col] = \
                    res.swarm.specific[res.swarm.specific_names.index(s), 0]
        block[uname] = res.loglik
    swarm = dataclasses.replace(fitted.swarm, specific=specific_sw)
    return dataclasses.replace(fitted, point_estimate=new, swarm=swarm, block_logliks=block)
