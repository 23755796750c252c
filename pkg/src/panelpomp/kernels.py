"""Hot numeric kernels, each in a numba and a pure-numpy flavour.

Both flavours share signatures and semantics. The module-level names
(``log_weight_summary``, ``resample_indices``, ``kalman_loglik``,
``local_quadratic``) are bound to the numba flavour unless
``PANELPOMP_DISABLE_NUMBA`` is set; ``IMPLEMENTATIONS`` exposes both for
tests and benchmarks.
"""
from types import SimpleNamespace

import numpy as np

from ._accel import USE_NUMBA, njit

__all__ = [
    "IMPLEMENTATIONS",
    "log_weight_summary",
    "resample_indices",
    "kalman_loglik",
    "local_quadratic",
]

_HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)


# ---------------------------------------------------------------------------
# particle weights
# ---------------------------------------------------------------------------

def _log_weight_summary_np(logw, log_tol):
    """Normalize log weights.

    Returns ``(cond_loglik, ess, probs, failed)``. When every weight is
    below ``exp(log_tol)`` the conditional log likelihood is floored at
    ``log_tol``, ``probs`` is uniform and ``failed`` is True.
    """
    J = logw.shape[0]
    m = logw.max()
    if not m >= log_tol:
        return log_tol, float(J), np.full(J, 1.0 / J), True
    w = np.exp(logw - m)
    s = w.sum()
    ess = s * s / np.dot(w, w)
    return m + np.log(s / J), ess, w / s, False


@njit
def _log_weight_summary_nb(logw, log_tol):
    J = logw.shape[0]
    m = -np.inf
    for i in range(J):
        if logw[i] > m:
            m = logw[i]
    if not m >= log_tol:
        return log_tol, float(J), np.full(J, 1.0 / J), True
    w = np.empty(J)
    s = 0.0
    s2 = 0.0
    for i in range(J):
        v = np.exp(logw[i] - m)
        w[i] = v
        s += v
        s2 += v * v
    for i in range(J):
        w[i] /= s
    return m + np.log(s / J), s * s / s2, w, False


# ---------------------------------------------------------------------------
# resampling
# ---------------------------------------------------------------------------

def _resample_indices_np(probs, targets):
    """Inverse-CDF resampling.

    ``targets`` are points in [0, 1); particle ``i`` is selected for a
    target ``t`` when ``cdf[i-1] <= t * cdf[-1] < cdf[i]``. Uniform iid
    targets give multinomial resampling, ``(u + arange(J)) / J`` gives
    systematic resampling.
    """
    c = np.cumsum(probs)
    idx = np.searchsorted(c, targets * c[-1], side="right")
    np.minimum(idx, probs.shape[0] - 1, out=idx)
    return idx


@njit
def _resample_indices_nb(probs, targets):
    n = probs.shape[0]
    c = np.empty(n)
    acc = 0.0
    for i in range(n):
        acc += probs[i]
        c[i] = acc
    total = c[n - 1]
    J = targets.shape[0]
    idx = np.empty(J, dtype=np.int64)
    for j in range(J):
        t = targets[j] * total
        lo = 0
        hi = n
        while lo < hi:
            mid = (lo + hi) >> 1
            if c[mid] > t:
                hi = mid
            else:
                lo = mid + 1
        idx[j] = lo if lo < n else n - 1
    return idx


# ---------------------------------------------------------------------------
# Kalman filter for the log-linear AR(1) with Gaussian noise
# ---------------------------------------------------------------------------

def _kalman_loglik_np(W, steps, a, b, sigma, tau, z0):
    """Exact log likelihood of ``exp(W)`` for a batch of units.

    State ``Z_n = a + b Z_{n-1} + N(0, sigma^2)`` iterated ``steps[u, n]``
    times between observations, ``W_n ~ N(Z_n, tau^2)``, ``Z_0 = z0``
    known. Rows of ``W`` are padded with NaN past each unit's length.
    The returned value includes the ``-sum(W)`` Jacobian of ``Y = exp(W)``.
    """
    U, N = W.shape
    m = z0.astype(float).copy()
    P = np.zeros(U)
    ll = np.zeros(U)
    b2 = b * b
    s2 = sigma * sigma
    t2 = tau * tau
    for n in range(N):
        k_max = steps[:, n].max() if U else 0
        for k in range(k_max):
            move = steps[:, n] > k
            m = np.where(move, a + b * m, m)
            P = np.where(move, b2 * P + s2, P)
        w = W[:, n]
        ok = ~np.isnan(w)
        S = P + t2
        v = np.where(ok, w - m, 0.0)
        term = -_HALF_LOG_2PI - 0.5 * np.log(S) - 0.5 * v * v / S - np.where(ok, w, 0.0)
        ll += np.where(ok, term, 0.0)
        gain = P / S
        m = np.where(ok, m + gain * v, m)
        P = np.where(ok, (1.0 - gain) * P, P)
    return ll


@njit
def _kalman_loglik_nb(W, steps, a, b, sigma, tau, z0):
    U, N = W.shape
    out = np.zeros(U)
    half_log_2pi = 0.5 * np.log(2.0 * np.pi)
    for u in range(U):
        m = z0[u]
        P = 0.0
        b2 = b[u] * b[u]
        s2 = sigma[u] * sigma[u]
        t2 = tau[u] * tau[u]
        ll = 0.0
        for n in range(N):
            w = W[u, n]
            if np.isnan(w):
                break
            for _ in range(steps[u, n]):
                m = a[u] + b[u] * m
                P = b2 * P + s2
            S = P + t2
            v = w - m
            ll += -half_log_2pi - 0.5 * np.log(S) - 0.5 * v * v / S - w
            gain = P / S
            m = m + gain * v
            P = (1.0 - gain) * P
        out[u] = ll
    return out


# ---------------------------------------------------------------------------
# local quadratic regression with tricube weights
# ---------------------------------------------------------------------------

def _span_count(n, span):
    q = int(np.floor(span * n))
    return min(max(q, 4), n)


def _local_quadratic_np(x, y, xeval, span):
    """Local quadratic fit evaluated at ``xeval``.

    At each evaluation point the bandwidth is the distance to the
    ``floor(span * n)``-th nearest observation, weights are tricube in
    distance / bandwidth, and the fitted intercept of a weighted quadratic
    in the centred, bandwidth-scaled coordinate is returned. Points where
    the fit is singular come back as NaN.
    """
    n = x.shape[0]
    q = _span_count(n, span)
    d = np.abs(x[None, :] - xeval[:, None])
    h = np.sort(d, axis=1)[:, q - 1]
    h = np.where(h > 0, h, np.nan)
    t = (x[None, :] - xeval[:, None]) / h[:, None]
    r = np.abs(t)
    w = np.where(r < 1.0, (1.0 - r ** 3) ** 3, 0.0)
    t2 = t * t
    s0 = w.sum(1)
    s1 = (w * t).sum(1)
    s2 = (w * t2).sum(1)
    s3 = (w * t2 * t).sum(1)
    s4 = (w * t2 * t2).sum(1)
    g0 = (w * y).sum(1)
    g1 = (w * t * y).sum(1)
    g2 = (w * t2 * y).sum(1)
    A = np.stack(
        [np.stack([s0, s1, s2], -1), np.stack([s1, s2, s3], -1), np.stack([s2, s3, s4], -1)],
        axis=1,
    )
    g = np.stack([g0, g1, g2], -1)
    out = np.full(xeval.shape[0], np.nan)
    det = np.linalg.det(A)
    good = np.isfinite(det) & (np.abs(det) > 1e-12 * np.maximum(s0, 1e-300) ** 3)
    if good.any():
        out[good] = np.linalg.solve(A[good], g[good][..., None])[:, 0, 0]
    return out


@njit
def _solve3_first(A, g):
    # Gaussian elimination with partial pivoting; returns the first unknown
    M = np.empty((3, 4))
    for i in range(3):
        for j in range(3):
            M[i, j] = A[i, j]
        M[i, 3] = g[i]
    for col in range(3):
        piv = col
        for r in range(col + 1, 3):
            if abs(M[r, col]) > abs(M[piv, col]):
                piv = r
        if M[piv, col] == 0.0:
            return np.nan
        if piv != col:
            for j in range(4):
                tmp = M[col, j]
                M[col, j] = M[piv, j]
                M[piv, j] = tmp
        for r in range(col + 1, 3):
            f = M[r, col] / M[col, col]
            for j in range(col, 4):
                M[r, j] -= f * M[col, j]
    sol = np.empty(3)
    for i in range(2, -1, -1):
        acc = M[i, 3]
        for j in range(i + 1, 3):
            acc -= M[i, j] * sol[j]
        sol[i] = acc / M[i, i]
    return sol[0]


@njit
def _local_quadratic_nb(x, y, xeval, span):
    n = x.shape[0]
    q = int(np.floor(span * n))
    q = min(max(q, 4), n)
    G = xeval.shape[0]
    out = np.empty(G)
    d = np.empty(n)
    A = np.empty((3, 3))
    g = np.empty(3)
    for k in range(G):
        x0 = xeval[k]
        for i in range(n):
            d[i] = abs(x[i] - x0)
        h = np.sort(d)[q - 1]
        if not h > 0:
            out[k] = np.nan
            continue
        s0 = s1 = s2 = s3 = s4 = 0.0
        g0 = g1 = g2 = 0.0
        for i in range(n):
            r = d[i] / h
            if r >= 1.0:
                continue
            w = (1.0 - r * r * r) ** 3
            t = (x[i] - x0) / h
            t2 = t * t
            s0 += w
            s1 += w * t
            s2 += w * t2
            s3 += w * t2 * t
            s4 += w * t2 * t2
            g0 += w * y[i]
            g1 += w * t * y[i]
            g2 += w * t2 * y[i]
        A[0, 0] = s0
        A[0, 1] = s1
        A[0, 2] = s2
        A[1, 0] = s1
        A[1, 1] = s2
        A[1, 2] = s3
        A[2, 0] = s2
        A[2, 1] = s3
        A[2, 2] = s4
        det = (s0 * (s2 * s4 - s3 * s3) - s1 * (s1 * s4 - s3 * s2)
               + s2 * (s1 * s3 - s2 * s2))
        if not abs(det) > 1e-12 * s0 ** 3:
            out[k] = np.nan
            continue
        g[0] = g0
        g[1] = g1
        g[2] = g2
        out[k] = _solve3_first(A, g)
    return out


IMPLEMENTATIONS = {
    "numpy": SimpleNamespace(
        log_weight_summary=_log_weight_summary_np,
        resample_indices=_resample_indices_np,
        kalman_loglik=_kalman_loglik_np,
        local_quadratic=_local_quadratic_np,
    ),
    "numba": SimpleNamespace(
        log_weight_summary=_log_weight_summary_nb,
        resample_indices=_resample_indices_nb,
        kalman_loglik=_kalman_loglik_nb,
        local_quadratic=_local_quadratic_nb,
    ),
}

_active = IMPLEMENTATIONS["numba" if USE_NUMBA else "numpy"]
BACKEND = "numba" if USE_NUMBA else "numpy"

log_weight_summary = _active.log_weight_summary
resample_indices = _active.resample_indices
kalman_loglik = _active.kalman_loglik
local_quadratic = _active.local_quadratic
