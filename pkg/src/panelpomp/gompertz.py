"""Panel stochastic Gompertz model and its exact Kalman likelihood.

Each unit follows ``X_{n+1} = K^(1 - e^-r) X_n^(e^-r) eps_n`` with
``log eps_n ~ N(0, sigma^2)`` and is observed as ``log Y_n ~ N(log X_n, tau^2)``.
On the log scale this is a linear Gaussian AR(1) observed with Gaussian
noise, so the likelihood of the panel is available in closed form.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Mapping, NamedTuple, Sequence

import numpy as np
from scipy.optimize import minimize

from . import kernels
from .errors import DomainError, UnknownParameterError
from .model import PanelData, PanelModel, UnitModel, build_panel_model, simulate_panel
from .params import ParamTransform, ParamVector, default_unit_names, unit_key

PARAM_NAMES = ("r", "sigma", "K", "tau", "X.0")
SHARED = ("r", "sigma")
SPECIFIC = ("K", "tau", "X.0")
DEFAULTS = {"r": 0.1, "sigma": 0.1, "K": 1.0, "tau": 0.1, "X.0": 1.0}
PARTRANS = ParamTransform(log=("K", "r", "sigma", "tau", "X.0"))

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class GompertzParams:
    r: float = 0.1
    sigma: float = 0.1
    K: float = 1.0
    tau: float = 0.1
    X0: float = 1.0

    def __post_init__(self):
        for name in ("r", "sigma", "K", "tau", "X0"):
            if not getattr(self, name) > 0:
                raise DomainError(f"Gompertz parameter {name} must be positive")

    def __getitem__(self, key):
        return self.X0 if key == "X.0" else getattr(self, key)

    def as_dict(self) -> dict:
        return {"r": self.r, "sigma": self.sigma, "K": self.K, "tau": self.tau, "X.0": self.X0}


# ---------------------------------------------------------------------------
# model components (vectorized over particles)
# ---------------------------------------------------------------------------

def _rinit(t0, params, nsim, rng):
    x0 = np.broadcast_to(np.asarray(params["X.0"], dtype=float), (nsim,))
    return x0.reshape(nsim, 1).copy()


def _rprocess(x, t_start, t_end, params, rng):
    steps = int(round(t_end - t_start))
    b = np.exp(-np.asarray(params["r"], dtype=float))
    K = params["K"]
    sigma = params["sigma"]
    X = x[:, 0]
    drift = K ** (1.0 - b)
    for _ in range(steps):
        X = drift * X ** b * np.exp(sigma * rng.standard_normal(X.shape[0]))
    return X[:, None]


def _dmeasure(y, x, t, params):
    tau = params["tau"]
    y0 = y[0]
    if not y0 > 0:
        return np.full(x.shape[0], -np.inf)
    logy = math.log(y0)
    z = (logy - np.log(x[:, 0])) / tau
    return -0.5 * z * z - np.log(tau) - _HALF_LOG_2PI - logy


def _rmeasure(x, t, params, rng):
    tau = params["tau"]
    X = x[:, 0]
    return (X * np.exp(tau * rng.standard_normal(X.shape[0])))[:, None]


def gompertz_unit(times: Sequence[float], t0: float = 0.0, data=None) -> UnitModel:
    return UnitModel(times=np.asarray(times, dtype=float), t0=t0, rprocess=_rprocess,
                     dmeasure=_dmeasure, rmeasure=_rmeasure, rinit=_rinit,
                     state_names=("X",), obs_names=("Y",), data=data, partrans=PARTRANS)


# ---------------------------------------------------------------------------
# scalar reference forms
# ---------------------------------------------------------------------------

def gompertz_transition(x: float, p, rng: np.random.Generator) -> float:
    """One step of the stochastic Gompertz map from density ``x``."""
    if not x > 0:
        raise DomainError("density must be positive")
    b = math.exp(-p["r"])
    eps = math.exp(p["sigma"] * rng.standard_normal()) if p["sigma"] else 1.0
    return p["K"] ** (1.0 - b) * x ** b * eps


def gompertz_dmeasure(y: float, x: float, p) -> float:
    """Lognormal measurement log density of ``y`` given density ``x``."""
    tau = p["tau"] if not isinstance(p, (int, float)) else p
    if not tau > 0:
        raise DomainError("tau must be positive")
    if not (y > 0 and x > 0):
        raise DomainError("y and x must be positive")
    z = (math.log(y) - math.log(x)) / tau
    return -0.5 * z * z - math.log(tau) - _HALF_LOG_2PI - math.log(y)


# ---------------------------------------------------------------------------
# panel construction
# ---------------------------------------------------------------------------

def _panel_values(params, unit_names) -> ParamVector:
    """Full parameter vector from either a full vector or base-name values."""
    if params is None:
        params = {}
    if any("[" in k for k in params):
        return dict(params)
    unknown = set(params) - set(PARAM_NAMES)
    if unknown:
        raise UnknownParameterError(f"unknown Gompertz parameters {sorted(unknown)}")
    base = {**DEFAULTS, **params}
    out = {s: float(base[s]) for s in SHARED}
    for u in unit_names:
        for s in SPECIFIC:
            out[unit_key(s, u)] = float(base[s])
    return out


def _check_positive(params: Mapping[str, float]) -> None:
    bad = [k for k, v in params.items() if not v > 0]
    if bad:
        raise DomainError(f"Gompertz parameters must be positive: {bad}")


def gompertz_panel(times_per_unit, unit_names, params=None, data=None, t0=0.0) -> PanelModel:
    """Panel Gompertz model over given observation times (no simulation)."""
    values = _panel_values(params, unit_names)
    _check_positive(values)
    units = {}
    for i, u in enumerate(unit_names):
        d = None if data is None else data[i]
        units[u] = gompertz_unit(times_per_unit[i], t0=t0, data=d)
    specific = {s: [values[unit_key(s, u)] for u in unit_names] for s in SPECIFIC}
    return build_panel_model(units, {s: values[s] for s in SHARED}, specific,
                             partrans=PARTRANS)


def build_panel_gompertz(U: int = 50, N: int = 100, params=None, seed: int = 0) -> PanelModel:
    """Panel Gompertz model with ``U`` units observed at times ``1..N``, plus simulated data.

    ``params`` is either a full panel vector or base-name values broadcast to
    every unit; missing entries take the defaults r = sigma = tau = 0.1,
    K = X.0 = 1.
    """
    if U < 1 or N < 1:
        raise DomainError("U and N must be at least 1")
    names = default_unit_names(U)
    times = [np.arange(1, N + 1, dtype=float)] * U
    m = gompertz_panel(times, names, params)
    return m.with_data(simulate_panel(m, seed=seed))


def panel_gompertz_from_data(data: PanelData, params=None) -> PanelModel:
    return gompertz_panel(list(data.times), list(data.unit_names), params,
                          data=list(data.obs), t0=data.t0[0])


# ---------------------------------------------------------------------------
# exact likelihood
# ---------------------------------------------------------------------------

class _KalmanProblem:
    """Data arrays laid out once for repeated likelihood evaluation."""

    def __init__(self, data):
        if isinstance(data, PanelModel):
            data = data.data
        self.unit_names = list(data.unit_names)
        U = data.U
        Nmax = max(t.size for t in data.times)
        self.W = np.full((U, Nmax), np.nan)
        self.steps = np.zeros((U, Nmax), dtype=np.int64)
        for i, (t, o, t0) in enumerate(zip(data.times, data.obs, data.t0)):
            y = o[:, 0]
            if not np.all(y > 0):
                raise DomainError(f"nonpositive observation in unit {self.unit_names[i]}")
            self.W[i, :t.size] = np.log(y)
            gaps = np.diff(np.concatenate([[t0], t]))
            steps = np.rint(gaps)
            if not np.allclose(gaps, steps):
                raise DomainError("Gompertz observation times must be integer steps apart")
            self.steps[i, :t.size] = steps.astype(np.int64)

    def arrays(self, params: Mapping[str, float]):
        U = len(self.unit_names)
        r = np.empty(U)
        sigma = np.empty(U)
        K = np.empty(U)
        tau = np.empty(U)
        x0 = np.empty(U)
        for i, u in enumerate(self.unit_names):
            for arr, s in ((r, "r"), (sigma, "sigma"), (K, "K"), (tau, "tau"), (x0, "X.0")):
                key = unit_key(s, u)
                arr[i] = params[key] if key in params else params[s]
        return r, sigma, K, tau, x0

    def per_unit(self, params):
        r, sigma, K, tau, x0 = self.arrays(params)
        b = np.exp(-r)
        a = (1.0 - b) * np.log(K)
        return kernels.kalman_loglik(self.W, self.steps, a, b, sigma, tau, np.log(x0))


def gompertz_kalman_loglik(data, params: Mapping[str, float]) -> tuple[float, np.ndarray]:
    """Exact panel log likelihood of the observations ``Y`` (Jacobian included).

    Returns ``(total, per_unit)``; ``data`` is a :class:`PanelData` or a
    panel model carrying data.
    """
    per_unit = _KalmanProblem(data).per_unit(params)
    total = 0.0
    for v in per_unit:
        total += float(v)
    return total, per_unit


class KalmanFit(NamedTuple):
    params: ParamVector
    loglik: float
    converged: bool


def _expand_free(free, names: Sequence[str], unit_names) -> list[str]:
    out = []
    for f in free:
        if f in names:
            out.append(f)
        elif f in SPECIFIC:
            out.extend(unit_key(f, u) for u in unit_names)
        else:
            raise UnknownParameterError(f)
    return list(dict.fromkeys(out))


def maximize_kalman_loglik(data, init: Mapping[str, float], free: Sequence[str],
                           max_restarts: int = 20, tol: float = 1e-8) -> KalmanFit:
    """Maximize the exact likelihood over ``free`` parameters by Nelder-Mead on the log scale.

    ``free`` entries may be full keys (``"tau[unit3]"``) or a unit-specific
    base name standing for all its units. The simplex is restarted from its
    best vertex until a restart gains less than ``tol``.
    """
    prob = _KalmanProblem(data)
    init = dict(init)
    keys = _expand_free(free, list(init), prob.unit_names)

    def loglik(p):
        return float(np.sum(prob.per_unit(p)))

    if not keys:
        return KalmanFit(init, loglik(init), True)

    def objective(z):
        if not np.all(np.isfinite(z)) or np.any(np.abs(z) > 700):
            return np.inf
        p = dict(init)
        p.update(zip(keys, np.exp(z)))
        v = loglik(p)
        return -v if np.isfinite(v) else np.inf

    dim = len(keys)
    z = np.log([init[k] for k in keys])
    best = objective(z)
    converged = False
    for _ in range(max_restarts):
        simplex = np.vstack([z] + [z + 0.1 * np.eye(dim)[i] for i in range(dim)])
        res = minimize(objective, z, method="Nelder-Mead",
                       options=dict(maxfev=500 * dim, xatol=tol, fatol=tol,
                                    initial_simplex=simplex, adaptive=dim > 4))
        gain = best - res.fun
        if res.fun <= best:
            z, best = res.x, res.fun
        if gain < tol and res.success:
            converged = True
            break
    if not converged:
        warnings.warn("Kalman likelihood maximization did not converge", RuntimeWarning)
    out = dict(init)
    out.update(zip(keys, np.exp(z)))
    return KalmanFit(out, -best, converged)
