import numpy as np
import pytest

from panelpomp import (
    ConfigError,
    CoolingSchedule,
    ParamTransform,
    RwSd,
    UnitModel,
    build_panel_gompertz,
    build_panel_model,
    ivp,
    perturbation_sd,
    pif_traces,
    refine_unit_blocks,
    replicate_pfilter,
    run_pif,
    panel_log_mean_exp,
)
from panelpomp.params import ParamSpec

GOMP_RW = {"r": 0.02, "sigma": 0.02, "tau": 0.02}


def test_cooling_law():
    c = CoolingSchedule(0.5)
    rw = RwSd({"r": 0.02})
    assert c.rho ** 50 == pytest.approx(0.5, rel=1e-14)
    for m in (1, 50, 100):
        got = perturbation_sd(rw, c, m, "r")
        assert got == pytest.approx(0.02 * 0.5 ** (m / 50), rel=1e-12)
    assert abs(perturbation_sd(rw, c, 50, "r") / 0.02 - 0.5) <= 1e-12 * 0.5
    with pytest.raises(ConfigError):
        CoolingSchedule(0.0)


def test_rw_sd_broadcast_and_overrides():
    spec = ParamSpec(("r", "sigma"), ("K", "tau"), ("a", "b", "c"))
    rw = RwSd.from_names(spec, {"r": 0.1, "tau": 0.02, "K[b]": 0.3})
    assert rw.shared_sd("r") == 0.1 and rw.shared_sd("sigma") == 0.0
    assert rw.specific_sd("tau", "c") == 0.02
    assert rw.specific_sd("K", "b") == 0.3 and rw.specific_sd("K", "a") == 0.0
    assert RwSd({"r": ivp(0.5)}).shared_sd("r", 0) == 0.5
    assert RwSd({"r": ivp(0.5)}).shared_sd("r", 3) == 0.0
    with pytest.raises(ConfigError):
        RwSd.from_names(spec, {"beta": 0.1})
    with pytest.raises(ConfigError):
        RwSd.from_names(spec, {"K[z]": 0.1})


def test_zero_perturbation_is_noop(small_panel):
    start = dict(small_panel.params, r=0.17)
    res = run_pif(small_panel, start, M=3, J=50, rw_sd={}, seed=1)
    assert res.point_estimate == start
    assert np.all(res.swarm.shared[0] == 0.17)
    assert np.all(res.swarm.specific[1] == 0.1)
    zero = run_pif(small_panel, start, M=2, J=50, rw_sd={k: 0.0 for k in GOMP_RW}, seed=1)
    assert zero.point_estimate == start


def test_missing_transform_is_config_error(small_panel):
    bare = build_panel_model(list(small_panel.units), small_panel.get_shared(),
                             small_panel.get_specific(), partrans=ParamTransform(log=("r",)))
    run_pif(bare, M=1, J=10, rw_sd={"r": 0.1})
    with pytest.raises(ConfigError):
        run_pif(bare, M=1, J=10, rw_sd={"sigma": 0.1})


def test_argument_checks(small_panel):
    with pytest.raises(ConfigError):
        run_pif(small_panel, M=0, J=10)
    with pytest.raises(ConfigError):
        run_pif(small_panel, M=1, J=1)


def _tagged_model(mismatches):
    """Each particle's state copies its parameter particle at time 0; any
    resampling that moved states without parameters breaks the copy."""
    def rinit(t0, p, nsim, rng):
        return np.column_stack([np.broadcast_to(p["phi"], (nsim,)),
                                np.broadcast_to(p["theta"], (nsim,))]).astype(float)

    def rprocess(x, t0, t1, p, rng):
        return x

    def dmeasure(y, x, t, p):
        if not (np.array_equal(x[:, 0], np.broadcast_to(p["phi"], x[:, 0].shape))
                and np.array_equal(x[:, 1], np.broadcast_to(p["theta"], x[:, 1].shape))):
            mismatches.append(t)
        return -((x[:, 0] - y[0]) ** 2 + (x[:, 1] + y[0]) ** 2)

    def rmeasure(x, t, p, rng):
        return x[:, :1]

    units = [UnitModel(times=np.arange(1.0, 7.0), t0=0.0, rprocess=rprocess, dmeasure=dmeasure,
                       rmeasure=rmeasure, rinit=rinit, state_names=("a", "b"),
                       data=np.full((6, 1), 0.5 + k)) for k in range(3)]
    return build_panel_model(units, {"phi": 0.0}, {"theta": [0.0, 0.0, 0.0]},
                             partrans=ParamTransform(identity=("phi", "theta")))


def test_joint_resampling_of_states_and_parameters():
    seen = []
    m = _tagged_model(seen)
    res = run_pif(m, M=4, J=200, rw_sd={"phi": ivp(1.0), "theta": ivp(1.0)}, seed=3)
    assert seen == []
    assert res.point_estimate["phi"] != 0.0
    assert np.unique(res.swarm.shared[0]).size > 1


def test_perturbations_stay_in_domain(small_panel):
    res = run_pif(small_panel, M=5, J=100, rw_sd={"r": 0.5, "sigma": 0.5, "tau": 0.5}, seed=2)
    assert np.all(res.swarm.shared > 0) and np.all(res.swarm.specific > 0)
    assert (res.traces.drop(columns="loglik").to_numpy() > 0).all()


def test_fixed_parameters_stay_fixed(small_panel):
    start = small_panel.params
    res = run_pif(small_panel, start, M=4, J=100, rw_sd={"r": 0.05, "tau": 0.05}, seed=2)
    k = res.swarm.specific_names.index("K")
    assert np.all(res.swarm.specific[k] == 1.0)
    assert np.all(res.swarm.shared[res.swarm.shared_names.index("sigma")] == start["sigma"])
    for name in ("sigma", "K[unit1]", "X.0[unit3]"):
        assert (res.traces[name] == start[name]).all()
        assert res.point_estimate[name] == start[name]


def test_traces_shape_and_start(small_panel):
    M = 4
    res = run_pif(small_panel, M=M, J=60, rw_sd=GOMP_RW, seed=0)
    P = small_panel.spec.dim
    assert res.traces.shape == (M + 1, P + 1)
    long = pif_traces(res)
    assert list(long.columns) == ["iteration", "parameter", "value"]
    assert len(long) == (M + 1) * (P + 1)
    first = long[long.iteration == 0].set_index("parameter")["value"]
    assert all(first[k] == v for k, v in small_panel.params.items())
    assert np.isnan(first["loglik"])
    assert np.isfinite(res.traces["loglik"].iloc[1:]).all()
    assert res.traces["loglik"].iloc[-1] == res.loglik
    assert res.cooling_factors.shape == (M,)


def test_cooling_factor_at_iteration_50(small_panel):
    one = build_panel_gompertz(U=1, N=2, seed=0)
    res = run_pif(one, M=50, J=4, rw_sd={"r": 0.02}, cooling=0.5, seed=0)
    assert res.cooling_factors[49] == 0.5


def test_pif_is_reproducible(small_panel):
    a = run_pif(small_panel, M=3, J=80, rw_sd=GOMP_RW, seed=4)
    b = run_pif(small_panel, M=3, J=80, rw_sd=GOMP_RW, seed=4)
    c = run_pif(small_panel, M=3, J=80, rw_sd=GOMP_RW, seed=4, replicate=1)
    assert a.point_estimate == b.point_estimate
    assert np.array_equal(a.swarm.specific, b.swarm.specific)
    assert a.point_estimate != c.point_estimate


def test_perturbed_loglik_climbs():
    m = build_panel_gompertz(U=4, N=40, seed=21)
    start = dict(m.params, r=0.5, sigma=0.3)
    for k in ("tau[unit1]", "tau[unit2]", "tau[unit3]", "tau[unit4]"):
        start[k] = 0.3
    for seed in range(5):
        res = run_pif(m, start, M=20, J=200, rw_sd=GOMP_RW, seed=seed)
        ll = res.traces["loglik"].to_numpy()[1:]
        assert np.median(ll[-5:]) > np.median(ll[:5])


def test_point_estimate_is_estimation_scale_mean(small_panel):
    res = run_pif(small_panel, M=2, J=50, rw_sd=GOMP_RW, seed=6)
    k = res.swarm.shared_names.index("r")
    want = np.exp(np.log(res.swarm.shared[k]).mean())
    assert res.point_estimate["r"] == pytest.approx(want, rel=1e-12)


def test_refine_noop(small_panel):
    fit = run_pif(small_panel, M=2, J=40, rw_sd=GOMP_RW, seed=1)
    ref = refine_unit_blocks(small_panel, fit, ["tau"], reps=1, rw_sd={"tau": 0.0})
    assert ref.point_estimate == fit.point_estimate


def test_refine_isolates_blocks(small_panel):
    fit = run_pif(small_panel, M=2, J=40, rw_sd=GOMP_RW, seed=1)
    ref = refine_unit_blocks(small_panel, fit, ["tau"], reps=2, units=["unit2"], seed=3)
    for k, v in fit.point_estimate.items():
        if k != "tau[unit2]":
            assert ref.point_estimate[k] == v
    assert ref.point_estimate["tau[unit2]"] != fit.point_estimate["tau[unit2]"]
    assert set(ref.block_logliks) == {"unit2"}


def test_refine_thread_invariance_and_tags(small_panel):
    fit = run_pif(small_panel, M=2, J=40, rw_sd=GOMP_RW, seed=1)
    a = refine_unit_blocks(small_panel, fit, ["tau"], reps=2, seed=3)
    b = refine_unit_blocks(small_panel, fit, ["tau"], reps=2, seed=3, threads=3)
    c = refine_unit_blocks(small_panel, fit, ["tau"], reps=2, seed=3, tag="x")
    assert a.point_estimate == b.point_estimate
    assert a.point_estimate != c.point_estimate


def test_refine_rejects_shared_names(small_panel):
    fit = run_pif(small_panel, M=1, J=20, rw_sd={}, seed=1)
    with pytest.raises(ConfigError):
        refine_unit_blocks(small_panel, fit, ["r"])
    with pytest.raises(ConfigError):
        refine_unit_blocks(small_panel, fit, ["tau"], rw_sd={"K": 0.1})


def test_refinement_does_not_lose_likelihood():
    m = build_panel_gompertz(U=4, N=40, seed=31)
    start = dict(m.params)
    for i, k in enumerate(("tau[unit1]", "tau[unit2]", "tau[unit3]", "tau[unit4]")):
        start[k] = 0.05 + 0.05 * i
    for seed in range(5):
        fit = run_pif(m, start, M=5, J=200, rw_sd=GOMP_RW, seed=seed)
        ref = refine_unit_blocks(m, fit, ["tau"], reps=2, M=10, seed=seed)
        before = panel_log_mean_exp(replicate_pfilter(m, fit.point_estimate, J=500, R=5,
                                                      seed=seed, tag="pre"), se=True)
        after = panel_log_mean_exp(replicate_pfilter(m, ref.point_estimate, J=500, R=5,
                                                     seed=seed, tag="post"), se=True)
        slack = 2 * np.hypot(before.se, after.se)
        assert after.estimate >= before.estimate - slack
