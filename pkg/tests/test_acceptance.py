"""Acceptance criteria, run at full size. Each test prints one PASS/FAIL line.

These take roughly half an hour on one core; ``-m "not acceptance"`` skips them.
"""
import json
from dataclasses import replace

import numpy as np
import pytest

from conftest import record_criterion
from depcon.baselines import METHODS
from depcon.harness import default_config, make_benchmark, run_experiment, run_trials, sweep_scales
from depcon.models import CIRCADIAN_TRUE, LV_TRUE
from depcon.signal import build_hierarchy
from depcon.theory import (check_corrector_error_scaling, check_kernel_mass, check_kernel_scaling,
                           check_minimizer_convergence, check_mollifier_convergence, step_signal)
from depcon.training import MultiscaleProblem

pytestmark = pytest.mark.acceptance


@pytest.fixture(scope="module")
def lv_config():
    cfg = default_config("lotka-volterra")
    assert cfg.trials == 30 and cfg.depcon.N == 8 and cfg.data.noise_sd == 0
    return cfg


@pytest.fixture(scope="module")
def lv_summary(lv_config):
    return run_experiment(lv_config)


def test_criterion_1_lv_recovery(lv_summary):
    s = lv_summary
    ok = s.mape_mean <= 0.05 and s.mape_sd <= 0.05
    record_criterion(1, "LV recovery, N=8, 30 trials", ok,
                     f"MAPE mean {s.mape_mean:.4f} (<= 0.05), sd {s.mape_sd:.4f} (<= 0.05), "
                     f"worst {max(s.mapes):.4f}")
    assert ok


def test_criterion_2_baselines_fail(lv_config, lv_summary):
    lines, ok = [], True
    for method in METHODS:
        s = run_experiment(replace(lv_config, method=method))
        mean_ratio = s.mape_mean / lv_summary.mape_mean
        sd_ratio = s.mape_sd / lv_summary.mape_sd
        good = mean_ratio >= 5 and sd_ratio >= 3
        ok &= good
        lines.append(f"{method} mean {s.mape_mean:.3f} ({mean_ratio:.0f}x) sd {s.mape_sd:.3f} "
                     f"({sd_ratio:.0f}x){'' if good else ' FAILED'}")
    record_criterion(2, "baselines >= 5x mean and >= 3x sd of the predictor-corrector", ok, "; ".join(lines))
    assert ok


def test_criterion_3_circadian_recovery():
    cfg = default_config("circadian")
    assert cfg.trials == 10 and cfg.data.T == 144 and cfg.data.n_obs == 80
    assert np.array_equal(cfg.truth, CIRCADIAN_TRUE)
    s = run_experiment(cfg)
    ok = s.mape_mean <= 0.10
    record_criterion(3, "circadian recovery, 10 trials", ok,
                     f"MAPE mean {s.mape_mean:.4f} (<= 0.10), median {s.mape_median:.4f}, "
                     f"per trial {', '.join(f'{m:.3f}' for m in s.mapes)}")
    assert ok


def test_criterion_4_gradients_match_finite_differences():
    rng = np.random.default_rng(2024)
    benches = {b: make_benchmark(default_config(b)) for b in ("lotka-volterra", "circadian")}
    worst, failures = 0.0, 0
    for draw in range(20):
        name = ("lotka-volterra", "circadian")[draw % 2]
        bench = benches[name]
        tau = float(rng.choice([0.0, 0.01, 0.1, 0.5]))
        p = bench.truth * rng.uniform(0.5, 1.5, bench.truth.size)
        prob = MultiscaleProblem(bench.model, build_hierarchy(bench.input, 1, max(tau, 1e-3)),
                                 bench.obs, bench.y0)
        k = 1 if tau > 0 else 0
        _, g = prob.scale_loss_and_grad(k, p)
        fd = np.empty_like(p)
        for j in range(p.size):
            e = np.zeros_like(p)
            e[j] = 1e-6 * p[j]
            fd[j] = (prob.scale_loss(k, p + e) - prob.scale_loss(k, p - e)) / (2 * e[j])
        rel = float(np.max(np.abs(g - fd)) / np.max(np.abs(fd)))
        worst = max(worst, rel)
        failures += rel > 1e-4
    record_criterion(4, "sensitivity gradients vs central differences", failures == 0,
                     f"20 draws, worst relative error {worst:.2e} (<= 1e-4), failures {failures}")
    assert failures == 0


def test_criterion_5_mollifier_suite():
    halvings = [2.0 ** -k for k in range(9)]
    mass = check_kernel_mass(halvings, 0.01)
    conv = check_mollifier_convergence(step_signal(), halvings)
    scal = check_kernel_scaling([0.5, 1.0, 2.0, 4.0])
    ok = mass.passed and conv.checks["strictly_decreasing"] and scal.passed
    record_criterion(5, "mollifier suite", ok,
                     f"mass error {max(mass.measured):.1e} (<= 1e-12), "
                     f"distance strictly decreasing over 8 halvings: {conv.checks['strictly_decreasing']}, "
                     f"tau^(1/4) scaling spread {scal.fitted['spread']:.1e} (<= 0.01)")
    assert ok


def test_criterion_6_minimizer_convergence(lv_config):
    b = make_benchmark(lv_config)
    r = check_minimizer_convergence(b.model, b.input, b.obs, b.y0, LV_TRUE,
                                    [0.4, 0.2, 0.1, 0.05, 0.0])
    ok = r.checks["strictly_decreasing"] and r.checks["final_close"] and r.checks["rate"]
    record_criterion(6, "scale-wise minimizers converge", ok,
                     f"|p_tau - p_o| = {', '.join(f'{d:.3g}' for d in r.measured)}; "
                     f"slope vs delta_tau {r.fitted['slope_vs_delta']:.2f} (>= 0.4)")
    assert ok


def test_criterion_7_corrector_error_scaling(lv_config):
    b = make_benchmark(lv_config)
    r = check_corrector_error_scaling(b.model, b.input, b.obs, b.y0, LV_TRUE, 0.2,
                                      [1e-2, 1e-3, 1e-4])
    ok = r.fitted["slope"] >= 0.8 and r.checks["strictly_decreasing"]
    record_criterion(7, "corrector error vs tolerance", ok,
                     f"errors {', '.join(f'{e:.3g}' for e in r.measured)}; "
                     f"log-log slope {r.fitted['slope']:.3f} (>= 0.8)")
    assert ok


def test_criterion_8_scale_count_robustness(lv_config, lv_summary):
    others = {s.config["depcon"]["N"]: s for s in sweep_scales(lv_config, [4, 12])}
    medians = {4: others[4].mape_median, 8: lv_summary.mape_median, 12: others[12].mape_median}
    ratio = max(medians.values()) / min(medians.values())
    ok = ratio <= 2
    record_criterion(8, "N-sweep {4, 8, 12}", ok,
                     ", ".join(f"N={n} median {m:.4f}" for n, m in medians.items())
                     + f"; max/min {ratio:.2f} (<= 2)")
    assert ok


def test_criterion_9_determinism(lv_config, lv_summary, tmp_path):
    # rerun the first trials of criterion 1 twice, then a small experiment with outputs
    cfg3 = replace(lv_config, trials=3)
    once, twice = run_trials(cfg3), run_trials(cfg3)
    same_trials = [r.to_json(timing=False) for r in once] == [r.to_json(timing=False) for r in twice]
    same_mapes = run_experiment(cfg3).mapes == lv_summary.mapes[:3]
    small = replace(lv_config, trials=2, depcon=replace(lv_config.depcon, max_iter=200))
    a = run_experiment(replace(small, out=str(tmp_path / "a")))
    b = run_experiment(replace(small, out=str(tmp_path / "b")))
    files = ["mape.csv", "scatter.csv"]
    same_files = all((tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
                     for f in files)
    same_summary = a.to_json(timing=False) == b.to_json(timing=False)
    ok = same_trials and same_mapes and same_files and same_summary
    record_criterion(9, "byte-identical reruns", ok,
                     f"trial JSON identical: {same_trials}; rerun MAPEs match criterion 1: {same_mapes}; "
                     f"summary JSON identical: "
                     f"{same_summary}; CSV outputs identical: {same_files}")
    assert ok
