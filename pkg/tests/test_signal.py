import math

import numpy as np
import pytest
from scipy.special import erf

from depcon.errors import ContractError, DomainError
from depcon.signal import (SampledSignal, build_hierarchy, heat_kernel, kernel_l2_norm,
                           kernel_weights, l2_distance, l2_norm, load_signal_csv,
                           save_signal_csv, smooth)


def unit_step(T=100.0, dt=0.01):
    return SampledSignal(0.0, dt, np.ones(int(round(T / dt)) + 1))


def test_heat_kernel_values():
    assert heat_kernel(1 / (4 * math.pi), 0.0) == pytest.approx(1.0, rel=1e-14)
    assert heat_kernel(0.25, 0.0) == pytest.approx(math.pi ** -0.5, rel=1e-14)
    t = np.linspace(-3, 3, 13)
    assert np.array_equal(heat_kernel(0.7, t), heat_kernel(0.7, -t))
    assert np.all(heat_kernel(0.7, t) > 0)


@pytest.mark.parametrize("tau", [0.0, -1.0])
def test_heat_kernel_rejects_nonpositive_tau(tau):
    with pytest.raises(DomainError):
        heat_kernel(tau, 0.0)


def test_signal_zero_outside_grid():
    s = SampledSignal(1.0, 0.5, [1.0, 2.0, 3.0])
    assert s(0.99) == 0.0
    assert s(2.01) == 0.0
    assert s(1.0) == 1.0
    assert s(1.7) == 2.0
    assert s(1.25, mode="linear") == pytest.approx(1.5)


@pytest.mark.parametrize("values", [[1.0], [1.0, np.nan], [1.0, np.inf]])
def test_signal_rejects_bad_values(values):
    with pytest.raises(DomainError):
        SampledSignal(0.0, 1.0, values)


def test_signal_rejects_bad_dt():
    with pytest.raises(DomainError):
        SampledSignal(0.0, 0.0, [1.0, 2.0])


def test_smooth_identity_at_zero():
    s = SampledSignal(0.0, 0.1, np.random.default_rng(0).normal(size=50))
    assert np.array_equal(smooth(s, 0.0).values, s.values)


def test_smooth_rejects_negative_tau():
    with pytest.raises(DomainError):
        smooth(unit_step(1.0, 0.1), -0.1)


def test_smooth_step_interior_and_edge():
    out = smooth(unit_step(), 1.0)
    assert abs(out(50.0) - 1.0) < 1e-6
    # at the zero-extension boundary the convolution of a step is 1/2 (1 + erf(0))
    assert abs(out.values[0] - 0.5) < 1e-3


def test_smooth_step_matches_erf_closed_form():
    src = unit_step()
    tau = 0.5
    out = smooth(src, tau)
    t = src.times[:400]
    exact = 0.5 * (1 + erf(t / math.sqrt(4 * tau)))
    assert np.max(np.abs(out.values[:400] - exact)) < 2e-3


def test_smoothing_square_wave_shrinks_peak():
    t = np.arange(0, 20, 0.01)
    sq = SampledSignal(0.0, 0.01, np.where(np.floor(t) % 2 == 0, 1.0, -1.0))
    peaks = [np.max(np.abs(smooth(sq, tau).values)) for tau in (0.1, 1.0, 10.0)]
    assert peaks[0] > peaks[1] > peaks[2]


def test_second_difference_non_increasing_in_tau():
    t = np.arange(0, 20, 0.01)
    sq = SampledSignal(0.0, 0.01, np.where(np.floor(t / 2) % 2 == 0, 1.0, 0.0))
    d2 = [np.max(np.abs(np.diff(smooth(sq, tau).values, 2))) for tau in (0.0, 0.01, 0.1, 1.0)]
    assert all(a >= b for a, b in zip(d2, d2[1:]))


def test_kernel_weights_unit_mass():
    for k in range(12):
        assert abs(kernel_weights(2.0 ** -k, 0.01).sum() - 1.0) <= 1e-12


def test_kernel_norm_scaling():
    vals = [kernel_l2_norm(tau) * tau ** 0.25 for tau in (0.5, 1, 2, 4)]
    assert max(vals) / min(vals) - 1 < 0.01
    assert vals[0] == pytest.approx((8 * math.pi) ** -0.25, rel=1e-6)


def test_build_hierarchy_scales():
    src = unit_step(10.0, 0.1)
    h = build_hierarchy(src, 4, 1.0)
    assert np.allclose(h.scales, [0, 0.25, 0.5, 0.75, 1.0])
    assert h.smoothed[0] is src
    assert len(h) == 5
    assert np.array_equal(build_hierarchy(src, 1, 0.3).scales, [0.0, 0.3])


@pytest.mark.parametrize("N,tau_max", [(0, 1.0), (2, 0.0), (1.5, 1.0)])
def test_build_hierarchy_rejects(N, tau_max):
    with pytest.raises(DomainError):
        build_hierarchy(unit_step(1.0, 0.1), N, tau_max)


def test_l2_distance():
    one = SampledSignal(0.0, 1e-3, np.ones(1001))
    zero = SampledSignal(0.0, 1e-3, np.zeros(1001))
    assert l2_distance(one, one) == 0.0
    assert l2_distance(one, zero) == pytest.approx(1.0, abs=1e-3)
    assert l2_norm(one) == pytest.approx(1.0, abs=1e-3)
    with pytest.raises(DomainError):
        l2_distance(one, SampledSignal(0.0, 2e-3, np.ones(1001)))


def test_step_distance_decreases_with_tau():
    t = np.arange(0, 100.0001, 0.01)
    step = SampledSignal(0.0, 0.01, (t >= 50).astype(float))
    d = [l2_distance(smooth(step, tau), step) for tau in (1.0, 0.1, 0.01)]
    assert d[0] > d[1] > d[2]


def test_step_distance_over_ten_halvings():
    t = np.arange(0, 100.0001, 0.001)
    step = SampledSignal(0.0, 0.001, (t >= 50).astype(float))
    d = [l2_distance(smooth(step, 2.0 ** -k), step) for k in range(11)]
    assert np.all(np.diff(d) < 0)


def test_csv_round_trip(tmp_path):
    s = SampledSignal(0.5, 0.25, [0.0, 1.5, -2.0, 3.25])
    save_signal_csv(s, tmp_path / "s.csv")
    back = load_signal_csv(tmp_path / "s.csv")
    assert back.t0 == s.t0 and back.dt == pytest.approx(s.dt)
    assert np.array_equal(back.values, s.values)


def test_csv_rejects_nonuniform(tmp_path):
    (tmp_path / "bad.csv").write_text("time,value\n0,1\n1,2\n2.5,3\n")
    with pytest.raises(ContractError):
        load_signal_csv(tmp_path / "bad.csv")
