"""Bootstrap particle filtering of panel models and replicate combiners."""
from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, NamedTuple

import numpy as np

from . import kernels
from .errors import DomainError, FilterError, FilterWarning, MissingComponent, ShapeError
from .model import PanelModel, UnitModel
from .streams import stream

RESAMPLERS = ("multinomial", "systematic")


@dataclass(frozen=True)
class UnitFilterResult:
    loglik: float
    cond_loglik: np.ndarray
    ess: np.ndarray
    n_particles: int
    failures: tuple = ()


@dataclass(frozen=True)
class PanelFilterResult:
    unit_results: tuple
    loglik: float
    unit_names: tuple = field(default=())

    @property
    def unit_logliks(self) -> np.ndarray:
        return np.array([r.loglik for r in self.unit_results])


class MeanEstimate(NamedTuple):
    estimate: float
    se: float


def resample_targets(rng: np.random.Generator, J: int, resampler: str) -> np.ndarray:
    """Points in [0, 1) fed to inverse-CDF resampling."""
    if resampler == "multinomial":
        return rng.random(J)
    if resampler == "systematic":
        return (rng.random() + np.arange(J)) / J
    raise ValueError(f"unknown resampler {resampler!r}")


def unit_particle_filter(unit: UnitModel, params: Mapping, J: int, rng: np.random.Generator,
                         resampler: str = "multinomial", tol: float = 1e-300,
                         unit_name: str | None = None) -> UnitFilterResult:
    """Bootstrap particle filter for one unit.

    Particles are propagated with ``rprocess``, weighted by
    ``exp(dmeasure)`` and resampled at every observation. If every weight
    falls below ``tol`` the conditional likelihood is floored at ``tol``,
    particles are resampled uniformly and a :class:`FilterWarning` is issued.
    """
    if J < 2:
        raise DomainError("need at least two particles")
    if resampler not in RESAMPLERS:
        raise ValueError(f"unknown resampler {resampler!r}")
    unit.require("rinit", "rprocess", "dmeasure")
    if unit.data is None:
        raise MissingComponent("unit has no data")
    log_tol = math.log(tol)
    N = unit.N
    cond = np.empty(N)
    ess = np.empty(N)
    failures = []

    x = np.asarray(unit.rinit(unit.t0, params, J, rng), dtype=float)
    if not np.isfinite(x).all():
        raise FilterError(f"non-finite initial state (unit {unit_name})", unit_name, unit.t0)
    t_prev = unit.t0
    for n in range(N):
        t = unit.times[n]
        x = unit.rprocess(x, t_prev, t, params, rng)
        if not np.isfinite(x).all():
            raise FilterError(f"non-finite state at time {t} (unit {unit_name})", unit_name, t)
        logw = np.asarray(unit.dmeasure(unit.data[n], x, t, params), dtype=float)
        if np.isnan(logw).any():
            raise FilterError(f"dmeasure returned NaN at time {t} (unit {unit_name})", unit_name, t)
        c, e, probs, failed = kernels.log_weight_summary(logw, log_tol)
        if failed:
            failures.append(n)
            warnings.warn(f"all particle weights below {tol:g} at time {t} (unit {unit_name})",
                          FilterWarning, stacklevel=2)
        cond[n] = c
        ess[n] = e
        x = x[kernels.resample_indices(probs, resample_targets(rng, J, resampler))]
        t_prev = t
    return UnitFilterResult(float(cond.sum()), cond, ess, J, tuple(failures))


def _pool_map(fn, items, threads: int):
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def panel_particle_filter(m: PanelModel, params: Mapping[str, float] | None = None,
                          J: int = 1000, seed: int = 0, replicate: int | str = 0,
                          resampler: str = "multinomial", tol: float = 1e-300,
                          threads: int = 1) -> PanelFilterResult:
    """Filter every unit independently; the panel log likelihood is the sum over units.

    Unit ``u`` uses the stream keyed by ``(seed, replicate, unit name)``, so
    results do not depend on unit order or on ``threads``.
    """
    params = m.params if params is None else m.spec.order(params)

    def run(i):
        name = m.unit_names[i]
        rng = stream(seed, "pfilter", replicate, name)
        try:
            return unit_particle_filter(m.units[i], m.unit_params(i, params), J, rng,
                                        resampler, tol, unit_name=name)
        except FilterError as err:
            err.unit = name
            raise

    results = _pool_map(run, range(len(m)), threads)
    total = 0.0
    for r in results:
        total += r.loglik
    return PanelFilterResult(tuple(results), total, tuple(m.unit_names))


def replicate_pfilter(m: PanelModel, params: Mapping[str, float] | None = None, J: int = 1000,
                      R: int = 10, seed: int = 0, resampler: str = "multinomial",
                      tol: float = 1e-300, threads: int = 1, tag: str = "") -> np.ndarray:
    """``R x U`` matrix of unit log likelihoods from independent panel filters.

    Replicate ``k`` runs with stream key ``f"{tag}{k}"`` (plain ``k`` when
    ``tag`` is empty), so distinct tags give independent replicate sets.
    """
    def run(k):
        rep = f"{tag}{k}" if tag else k
        return panel_particle_filter(m, params, J, seed, rep, resampler, tol).unit_logliks

    return np.vstack(_pool_map(run, range(R), threads)).reshape(R, len(m))


# ---------------------------------------------------------------------------
# combiners
# ---------------------------------------------------------------------------

def _lme(x: np.ndarray) -> float:
    mx = x.max()
    if not np.isfinite(mx):
        return float(mx)
    return float(mx + np.log(np.mean(np.exp(x - mx))))


def _jackknife_se(values: np.ndarray) -> float:
    R = values.size
    return float(np.sqrt((R - 1) / R * np.sum((values - values.mean()) ** 2)))


def log_mean_exp(values, se: bool = False) -> MeanEstimate:
    """Log of the mean of ``exp(values)``, with an optional jackknife standard error.

    The standard error is NaN when fewer than two values are given or
    ``se`` is False.
    """
    x = np.asarray(values, dtype=float).reshape(-1)
    if x.size == 0:
        raise DomainError("log_mean_exp of an empty vector")
    est = _lme(x)
    if not se or x.size < 2:
        return MeanEstimate(est, math.nan)
    loo = np.array([_lme(np.delete(x, i)) for i in range(x.size)])
    return MeanEstimate(est, _jackknife_se(loo))


def panel_log_mean_exp(unit_logliks, se: bool = False) -> MeanEstimate:
    """Sum over units of the per-unit :func:`log_mean_exp` of replicates.

    ``unit_logliks`` is ``R x U`` (rows = replicates). The jackknife drops
    one replicate row at a time.
    """
    try:
        x = np.asarray(unit_logliks, dtype=float)
    except ValueError as err:
        raise ShapeError("ragged replicate matrix") from err
    if x.ndim != 2:
        raise ShapeError("expected an R x U matrix")
    R, U = x.shape
    if R < 1 or U < 1:
        raise DomainError("need at least one replicate and one unit")

    def stat(mat):
        total = 0.0
        for u in range(mat.shape[1]):
            total += _lme(mat[:, u])
        return total

    est = stat(x)
    if not se or R < 2:
        return MeanEstimate(est, math.nan)
    loo = np.array([stat(np.delete(x, i, axis=0)) for i in range(R)])
    return MeanEstimate(est, _jackknife_se(loo))
