import math

import numpy as np
import pytest

from depcon.errors import ConfigError, InitializationError
from depcon.harness import mape
from depcon.models import LV_TRUE, generate_observations, growth_model
from depcon.signal import build_hierarchy
from depcon.training import (DepconConfig, MultiscaleProblem, TrialResult, _Coords, estimate,
                             multiscale_loss_and_grads, train)

BOX = dict(lo=tuple(LV_TRUE / 4), hi=tuple(LV_TRUE * 4))


def _config(**kw):
    base = dict(N=4, tau_max=0.02, max_iter=30, **BOX)
    base.update(kw)
    return DepconConfig(**base)


@pytest.fixture(scope="module")
def lv_problem(lv_data):
    model, S, obs, y0 = lv_data
    return MultiscaleProblem(model, build_hierarchy(S, 4, 0.02), obs, y0)


def test_truth_has_zero_finest_loss(lv_problem):
    N = lv_problem.n_scales - 1
    total, cot, div = multiscale_loss_and_grads(lv_problem, [LV_TRUE] * (N + 1))
    assert not any(div)
    assert lv_problem.scale_loss(0, LV_TRUE) < 1e-20
    assert total > 0
    assert np.linalg.norm(cot[-1]) < 1e-8


def test_single_scale_sum(lv_data):
    model, S, obs, y0 = lv_data
    prob = MultiscaleProblem(model, build_hierarchy(S, 1, 0.5), obs, y0)
    p = [LV_TRUE * 1.1, LV_TRUE * 0.9]
    total, _, _ = multiscale_loss_and_grads(prob, p)
    assert total == pytest.approx(prob.scale_loss(1, p[0]) + prob.scale_loss(0, p[1]), rel=1e-12)


def test_cotangents_match_finite_differences(lv_problem, rng):
    N = lv_problem.n_scales - 1
    chain = [LV_TRUE * rng.uniform(0.7, 1.3, 4) for _ in range(N + 1)]
    _, cot, _ = multiscale_loss_and_grads(lv_problem, chain)
    for k in range(N + 1):
        for j in range(4):
            e = 1e-6 * chain[k][j]
            up = [c.copy() for c in chain]
            dn = [c.copy() for c in chain]
            up[k][j] += e
            dn[k][j] -= e
            fd = (multiscale_loss_and_grads(lv_problem, up)[0]
                  - multiscale_loss_and_grads(lv_problem, dn)[0]) / (2 * e)
            assert cot[k][j] == pytest.approx(fd, rel=1e-4, abs=1e-9)


def test_diverged_scale_gets_penalty(lv_problem):
    N = lv_problem.n_scales - 1
    chain = [LV_TRUE] * N + [np.array([50.0, 0.01, 0.01, 50.0])]
    total, cot, div = multiscale_loss_and_grads(lv_problem, chain, penalty=1e6)
    assert div[-1] and not any(div[:-1])
    assert total >= 1e6
    assert np.all(cot[-1] == 0)


def test_infinite_tolerance_stops_after_one_iteration(lv_data, lv_problem):
    res = train(*lv_data, _config(tol=math.inf), problem=lv_problem)
    assert res.iterations == 1 and res.termination == "tolerance"
    assert res.grad_norm <= math.inf


def test_training_is_deterministic(lv_data, lv_problem):
    a = train(*lv_data, _config(seed=3), problem=lv_problem)
    b = train(*lv_data, _config(seed=3), problem=lv_problem)
    assert a.to_json(timing=False) == b.to_json(timing=False)
    c = train(*lv_data, _config(seed=4), problem=lv_problem)
    assert c.initial != a.initial


@pytest.mark.parametrize("coords", ["raw", "box", "log", "logit"])
def test_reported_chain_inside_box(lv_data, lv_problem, coords):
    res = train(*lv_data, _config(coords=coords, lr_p=0.5), problem=lv_problem)
    lo, hi = np.array(BOX["lo"]), np.array(BOX["hi"])
    for p in res.chain + res.estimate_history + [res.initial]:
        assert np.all(np.asarray(p) >= lo) and np.all(np.asarray(p) <= hi)
    assert len(res.chain) == 5 and res.estimate == res.chain[-1]


def test_running_minimum_is_monotone(lv_data, lv_problem):
    res = train(*lv_data, _config(max_iter=200), problem=lv_problem)
    run_min = np.minimum.accumulate(res.loss_history)
    assert np.all(np.diff(run_min) <= 0)
    assert run_min[-1] < res.loss_history[0]


def test_tolerance_stop_respects_bound(lv_data, lv_problem):
    res = train(*lv_data, _config(tol=1e3), problem=lv_problem)
    if res.termination == "tolerance":
        assert res.grad_norm <= 1e3


def test_estimate_wraps_train(lv_data):
    cfg = _config(max_iter=5)
    assert np.array_equal(estimate(*lv_data, cfg), train(*lv_data, cfg).estimate)


def test_all_scales_diverging_raises(lv_data):
    # exponential growth at rate ~50 overflows on [0, 10]; the residual net keeps
    # every chain entry near p_N at initialization
    model = growth_model()
    obs = generate_observations(model, [0.1], lv_data[1], [1.0], 10.0, 20)
    cfg = DepconConfig(N=3, tau_max=0.02, lo=(50.0,), hi=(60.0,), residual=True)
    with pytest.raises(InitializationError):
        train(model, lv_data[1], obs, [1.0], cfg)


@pytest.mark.parametrize("bad", [dict(N=0), dict(tol=0.0), dict(max_iter=0), dict(tau_max=-1.0),
                                 dict(lr_decay=1.5), dict(coords="polar"),
                                 dict(lo=(1, 1, 1, 1), hi=(0, 2, 2, 2)), dict(lo=(1, 1), hi=(2, 2))])
def test_config_validation(lv_data, bad):
    with pytest.raises(ConfigError):
        train(*lv_data, _config(**bad))


@pytest.mark.parametrize("kind", ["raw", "box", "log", "logit"])
def test_coordinate_maps(kind, rng):
    lo, hi = LV_TRUE / 4, LV_TRUE * 4
    cs = _Coords(kind, lo, hi)
    p = rng.uniform(lo, hi)
    u = cs.to_u(p)
    assert np.allclose(cs.to_p(u), p, rtol=1e-10)
    g = rng.normal(size=4)
    e = 1e-7
    for j in range(4):
        du = np.zeros(4)
        du[j] = e
        fd = g @ (cs.to_p(u + du) - cs.to_p(u - du)) / (2 * e)
        assert cs.pullback(u, p, g)[j] == pytest.approx(fd, rel=1e-5)


def test_trial_result_round_trip(lv_data, lv_problem):
    res = train(*lv_data, _config(max_iter=3), problem=lv_problem)
    back = TrialResult.from_dict(res.to_dict())
    assert back.to_json() == res.to_json()
    assert "net" not in res.to_dict() and "time_history" not in res.to_dict(timing=False)


@pytest.mark.slow
def test_lv_recovery_with_one_and_eight_scales(lv_data):
    for N in (1, 8):
        cfg = DepconConfig(N=N, tau_max=0.02, max_iter=4000, seed=2, **BOX)
        assert mape(estimate(*lv_data, cfg), LV_TRUE) <= 0.15
