import math

import numpy as np
import pytest
from scipy.integrate import trapezoid
from scipy.stats import multivariate_normal

from panelpomp import (
    GompertzParams,
    build_panel_gompertz,
    gompertz_dmeasure,
    gompertz_kalman_loglik,
    gompertz_transition,
    maximize_kalman_loglik,
    subset_units,
)
from panelpomp.errors import DomainError
from panelpomp.gompertz import DEFAULTS, PARTRANS, panel_gompertz_from_data
from panelpomp.model import PanelData

P = GompertzParams()


def brute_force_loglik(y, p, steps=None):
    """Exact log likelihood of one unit from the joint normal law of log Y."""
    N = y.size
    steps = np.ones(N, dtype=int) if steps is None else steps
    b = math.exp(-p["r"])
    a = (1 - b) * math.log(p["K"])
    # Z_k on the fine grid of single steps; Z_0 known
    T = int(steps.sum())
    mean = np.empty(T)
    z = math.log(p["X.0"])
    for k in range(T):
        z = a + b * z
        mean[k] = z
    cov = np.empty((T, T))
    for i in range(T):
        for j in range(T):
            lo = min(i, j) + 1
            cov[i, j] = p["sigma"] ** 2 * sum(b ** (i + 1 - m) * b ** (j + 1 - m)
                                             for m in range(1, lo + 1))
    idx = np.cumsum(steps) - 1
    mu = mean[idx]
    S = cov[np.ix_(idx, idx)] + p["tau"] ** 2 * np.eye(N)
    return multivariate_normal(mu, S).logpdf(np.log(y)) - np.log(y).sum()


def test_params_validate_and_index():
    assert P["X.0"] == 1.0 and P.as_dict() == DEFAULTS
    with pytest.raises(DomainError):
        GompertzParams(r=-0.1)


def test_default_panel_shape_and_coef():
    m = build_panel_gompertz(U=50, N=100, seed=0)
    assert len(m) == 50
    assert all(u.N == 100 for u in m.units)
    coef = m.get_coef()
    assert len(coef) == 2 + 3 * 50
    assert coef["r"] == 0.1 and coef["tau[unit50]"] == 0.1
    assert set(PARTRANS.log) == {"r", "sigma", "K", "tau", "X.0"}


def test_minimal_panel_is_defined():
    m = build_panel_gompertz(U=1, N=1, seed=0)
    total, per_unit = gompertz_kalman_loglik(m, m.params)
    assert np.isfinite(total) and per_unit.shape == (1,)


def test_nonpositive_parameter_rejected():
    with pytest.raises(DomainError):
        build_panel_gompertz(U=2, N=3, params={"tau": 0.0})


def test_transition_fixed_point_and_value(rng):
    det = GompertzParams(sigma=1e-300)
    assert gompertz_transition(1.0, det, rng) == 1.0
    assert gompertz_transition(0.5, {"r": 0.1, "sigma": 0.0, "K": 1.0}, rng) == pytest.approx(
        0.5 ** math.exp(-0.1), rel=1e-15)
    assert gompertz_transition(0.5, {"r": 0.1, "sigma": 0.0, "K": 1.0}, rng) == pytest.approx(
        0.53407, abs=5e-5)


def test_transition_log_linear_without_noise(rng):
    for x, K, r in [(0.3, 2.0, 0.4), (5.0, 0.7, 1.3), (1.2, 1.0, 0.01)]:
        out = gompertz_transition(x, {"r": r, "sigma": 0.0, "K": K}, rng)
        b = math.exp(-r)
        assert math.log(out) == pytest.approx((1 - b) * math.log(K) + b * math.log(x), abs=1e-14)


def test_transition_noise_moments(rng):
    draws = np.log([gompertz_transition(1.0, P, rng) for _ in range(10_000)])
    se_mean = 0.1 / math.sqrt(10_000)
    assert abs(draws.mean()) < 4 * se_mean
    se_var = 0.01 * math.sqrt(2 / 9999)
    assert abs(draws.var(ddof=1) - 0.01) < 4 * se_var


def test_dmeasure_values():
    assert gompertz_dmeasure(1.0, 1.0, P) == pytest.approx(-math.log(0.1 * math.sqrt(2 * math.pi)))
    assert gompertz_dmeasure(1.0, 1.0, P) == pytest.approx(1.38364, abs=1e-5)
    assert gompertz_dmeasure(math.e, 1.0, 1.0) == pytest.approx(-2.41894, abs=1e-5)
    assert gompertz_dmeasure(2.0, 1.0, P) - gompertz_dmeasure(0.5, 1.0, P) == pytest.approx(
        -math.log(4), abs=1e-12)


def test_dmeasure_domain():
    with pytest.raises(DomainError):
        gompertz_dmeasure(1.0, 1.0, 0.0)
    with pytest.raises(DomainError):
        gompertz_dmeasure(-1.0, 1.0, P)


@pytest.mark.parametrize("x,tau", [(1.0, 0.1), (3.0, 0.3), (0.2, 0.05)])
def test_dmeasure_integrates_to_one(x, tau):
    y = np.linspace(0.0, x * math.exp(8 * tau), 100_001)[1:]
    dens = np.exp([gompertz_dmeasure(v, x, tau) for v in y])
    assert trapezoid(np.concatenate([[0.0], dens]), np.concatenate([[0.0], y])) == pytest.approx(
        1.0, abs=1e-4)


def test_vectorized_dmeasure_matches_scalar(small_panel):
    unit = small_panel.units[0]
    p = small_panel.unit_params(0)
    x = np.array([[0.8], [1.0], [1.3]])
    got = unit.dmeasure(unit.data[4], x, unit.times[4], p)
    want = [gompertz_dmeasure(unit.data[4, 0], v, p) for v in x[:, 0]]
    np.testing.assert_allclose(got, want, rtol=1e-13)


def test_kalman_matches_brute_force(small_panel):
    p = small_panel.get_coef()
    p.update({"r": 0.3, "sigma": 0.2, "K[unit2]": 1.7, "tau[unit3]": 0.15, "X.0[unit1]": 0.6})
    _, per_unit = gompertz_kalman_loglik(small_panel, p)
    for i in range(len(small_panel)):
        up = small_panel.unit_params(i, p)
        y = small_panel.units[i].data[:, 0]
        assert per_unit[i] == pytest.approx(brute_force_loglik(y, up), rel=1e-10, abs=1e-9)


def test_kalman_with_skipped_times():
    times = [np.array([2.0, 3.0, 6.0])]
    obs = [np.array([[0.9], [1.2], [1.05]])]
    d = PanelData(("a",), tuple(times), tuple(obs), ("Y",), (0.0,))
    p = {"r": 0.5, "sigma": 0.3, "K[a]": 1.4, "tau[a]": 0.2, "X.0[a]": 0.8}
    total, _ = gompertz_kalman_loglik(d, p)
    up = {"r": 0.5, "sigma": 0.3, "K": 1.4, "tau": 0.2, "X.0": 0.8}
    assert total == pytest.approx(brute_force_loglik(obs[0][:, 0], up, np.array([2, 1, 3])),
                                  rel=1e-10)


def test_kalman_one_step_closed_form():
    m = build_panel_gompertz(U=1, N=1, seed=3)
    y = m.units[0].data[0, 0]
    p = dict(m.get_coef(), sigma=1e-300, r=0.7)
    total, _ = gompertz_kalman_loglik(m, p)
    assert total == pytest.approx(gompertz_dmeasure(y, 1.0, 0.1), rel=1e-13)


def test_kalman_additive_and_permutation_invariant(small_panel):
    total, per_unit = gompertz_kalman_loglik(small_panel, small_panel.params)
    assert total == pytest.approx(per_unit.sum(), rel=1e-15)
    perm = subset_units(small_panel, [2, 0, 1])
    total2, per2 = gompertz_kalman_loglik(perm, perm.params)
    assert total2 == pytest.approx(total, rel=1e-14)
    np.testing.assert_array_equal(per2, per_unit[[2, 0, 1]])


def test_kalman_rejects_nonpositive_data():
    d = PanelData(("a",), (np.array([1.0]),), (np.array([[0.0]]),), ("Y",), (0.0,))
    with pytest.raises(DomainError):
        gompertz_kalman_loglik(d, {"r": 0.1, "sigma": 0.1, "K[a]": 1, "tau[a]": 0.1, "X.0[a]": 1})


def test_maximize_empty_free(small_panel):
    fit = maximize_kalman_loglik(small_panel.data, small_panel.params, [])
    assert fit.params == small_panel.params and fit.converged
    assert fit.loglik == gompertz_kalman_loglik(small_panel, small_panel.params)[0]


def test_maximize_fixed_point(small_panel):
    free = ["r", "sigma", "tau"]
    fit = maximize_kalman_loglik(small_panel.data, small_panel.params, free)
    assert fit.converged
    assert fit.loglik >= gompertz_kalman_loglik(small_panel, small_panel.params)[0]
    again = maximize_kalman_loglik(small_panel.data, fit.params, free)
    assert abs(again.loglik - fit.loglik) < 1e-6


def test_from_data_rebuilds_model(small_panel):
    m = panel_gompertz_from_data(small_panel.data, small_panel.params)
    assert m.get_coef() == small_panel.get_coef()
    assert np.array_equal(m.units[2].data, small_panel.units[2].data)
