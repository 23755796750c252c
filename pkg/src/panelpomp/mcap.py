"""Monte Carlo adjusted profile confidence intervals.

A noisy profile log likelihood is smoothed by local quadratic regression.
A tricube-weighted quadratic fitted around the smoothed maximum gives the
curvature (statistical error) and, through the residual scatter of that
local fit, the Monte Carlo error of the maximizer. The chi-squared cutoff is inflated by
the ratio of total to statistical variance.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import chi2

from . import kernels
from .errors import CurvatureError, DomainError


@dataclass(frozen=True)
class McapResult:
    grid: np.ndarray
    smoothed: np.ndarray
    mle: float
    se_stat: float
    se_mc: float
    se_total: float
    delta: float
    ci: tuple
    level: float
    span: float
    quadratic_max: float
    curvature: float


def mcap_cutoff(level: float, se_stat: float, se_mc: float) -> float:
    """Likelihood-ratio cutoff inflated by the share of Monte Carlo variance."""
    return chi2.ppf(level, df=1) / 2.0 * (se_stat ** 2 + se_mc ** 2) / se_stat ** 2


def _tricube_weights(x, center, span):
    n = x.size
    q = min(max(int(np.floor(span * n)), 5), n)
    d = np.abs(x - center)
    h = np.sort(d)[q - 1]
    if not h > 0:
        raise DomainError("profile points are too concentrated for the span")
    r = d / h
    return np.where(r < 1.0, (1.0 - r ** 3) ** 3, 0.0), h


def mcap(loglik, parameter, level: float = 0.95, span: float = 0.75,
         grid_size: int = 1000) -> McapResult:
    """Smoothed profile, maximizer, standard errors and adjusted confidence interval."""
    y = np.asarray(loglik, dtype=float).reshape(-1)
    x = np.asarray(parameter, dtype=float).reshape(-1)
    if x.size != y.size:
        raise DomainError("loglik and parameter differ in length")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise DomainError("profile points must be finite")
    if np.unique(x).size < 5:
        raise DomainError("need at least 5 distinct focal values")
    if not 0 < level < 1:
        raise DomainError("level must lie in (0, 1)")
    if not 0 < span <= 1:
        raise DomainError("span must lie in (0, 1]")
    if grid_size < 2:
        raise DomainError("grid_size must be at least 2")
    order = np.argsort(x, kind="stable")
    x, y = x[order], y[order]

    # centering keeps the fits well conditioned for large log likelihoods
    top = y.max()
    y = y - top
    grid = np.linspace(x[0], x[-1], grid_size)
    smoothed = kernels.local_quadratic(x, y, grid, span)
    if np.all(np.isnan(smoothed)):
        raise DomainError("smoother failed everywhere; widen the span")
    k = int(np.nanargmax(smoothed))
    mle = float(grid[k])

    w, h = _tricube_weights(x, mle, span)
    keep = w > 0
    n_eff = int(keep.sum())
    if n_eff <= 3:
        raise DomainError("too few points near the maximum for a quadratic fit")
    t = (x[keep] - mle) / h
    X = np.column_stack([np.ones(n_eff), t, t * t])
    wk = w[keep]
    # beta = L y, with L the weighted least-squares operator
    L = np.linalg.solve((X * wk[:, None]).T @ X, (X * wk[:, None]).T)
    beta = L @ y[keep]
    b1, b2 = beta[1], beta[2]
    scale = max(float(np.ptp(y[keep])), np.finfo(float).tiny)
    if not -b2 > 1e-10 * scale:
        raise CurvatureError("profile is not concave near its maximum; "
                             "try a wider span or a wider grid")
    curvature = -b2 / (h * h)
    resid = y[keep] - X @ beta
    sigma2 = float(resid @ resid / (n_eff - 3))
    cov = sigma2 * (L @ L.T)
    # maximizer of the fitted quadratic and its delta-method variance
    quad_max = mle - h * b1 / (2.0 * b2)
    grad = np.array([-h / (2.0 * b2), h * b1 / (2.0 * b2 * b2)])
    se_mc2 = max(float(grad @ cov[1:, 1:] @ grad), 0.0)
    se_stat2 = 1.0 / (2.0 * curvature)
    se_total2 = se_stat2 + se_mc2
    delta = mcap_cutoff(level, np.sqrt(se_stat2), np.sqrt(se_mc2))

    inside = smoothed >= smoothed[k] - delta
    lo = k
    while lo > 0 and inside[lo - 1]:
        lo -= 1
    hi = k
    while hi < grid_size - 1 and inside[hi + 1]:
        hi += 1
    return McapResult(grid, smoothed + top, mle, float(np.sqrt(se_stat2)), float(np.sqrt(se_mc2)),
                      float(np.sqrt(se_total2)), float(delta), (float(grid[lo]), float(grid[hi])),
                      level, span, float(quad_max), float(curvature))
