import csv
import json
from dataclasses import replace

import numpy as np
import pytest

from depcon.errors import ConfigError, DomainError
from depcon.harness import (config_from_dict, config_to_dict, default_config, load_config,
                            load_trials, make_benchmark, mape, run_experiment, sample_initial,
                            summarize, sweep_scales)


def test_mape_examples():
    t = np.array([2.0, 0.5, 1.0, 1.0])
    assert mape(t, t) == 0.0
    assert mape([1.5], [1.0]) == 0.5
    assert mape(2 * t, t) == 1.0
    with pytest.raises(DomainError):
        mape([1.0, 1.0], [1.0, 0.0])
    with pytest.raises(DomainError):
        mape([1.0], [1.0, 2.0])


def test_sample_initial():
    truth = np.array([24.0, 0.23, 20.0, 0.55])
    draws = np.array([sample_initial(truth, s) for s in range(10_000)])
    assert np.all(draws >= truth / 4) and np.all(draws <= 4 * truth)
    assert np.array_equal(sample_initial(truth, 3), sample_initial(truth, 3))
    big = np.random.default_rng(0).uniform(truth / 4, truth * 4, (100_000, 4))
    assert np.allclose(big.mean(axis=0) / truth, 2.125, rtol=0.02)


def _fast(tmp_path=None, **kw):
    cfg = default_config("lotka-volterra")
    cfg = replace(cfg, trials=2, depcon=replace(cfg.depcon, N=2, max_iter=15, trace_every=5),
                  out=None if tmp_path is None else str(tmp_path))
    return replace(cfg, **kw)


def test_single_trial_summary():
    s = run_experiment(_fast(trials=1))
    assert s.trials == 1 and s.mape_mean == s.mapes[0] == s.mape_median and s.mape_sd == 0


def test_experiment_is_deterministic(tmp_path):
    a = run_experiment(_fast(tmp_path / "a"))
    b = run_experiment(_fast(tmp_path / "b"))
    assert a.to_json(timing=False) == b.to_json(timing=False)
    for name in ("mape.csv", "scatter.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    ta, tb = load_trials(tmp_path / "a"), load_trials(tmp_path / "b")
    assert [t.to_json(timing=False) for t in ta] == [t.to_json(timing=False) for t in tb]


def test_parallel_matches_serial():
    assert (run_experiment(_fast(jobs=2)).to_json(timing=False)
            == run_experiment(_fast()).to_json(timing=False))


def test_outputs_and_round_trip(tmp_path):
    cfg = _fast(tmp_path)
    s = run_experiment(cfg)
    files = {p.name for p in tmp_path.iterdir()}
    assert {"summary.json", "scatter.csv", "mape.csv", "mape_trace.csv", "report.md", "trials"} <= files
    assert json.loads((tmp_path / "summary.json").read_text())["schema"] == 1
    again = summarize(cfg, load_trials(tmp_path))
    assert again.to_json(timing=False) == s.to_json(timing=False)
    rows = list(csv.DictReader(open(tmp_path / "mape_trace.csv")))
    for trial in {r["trial"] for r in rows}:
        secs = [float(r["seconds"]) for r in rows if r["trial"] == trial]
        assert secs == sorted(secs)


def test_sweep_bookkeeping(tmp_path):
    cfg = _fast(tmp_path)
    single = sweep_scales(replace(cfg, out=None), [2])
    assert single[0].to_json(timing=False) == run_experiment(cfg).to_json(timing=False)
    sums = sweep_scales(cfg, [1, 2])
    rows = list(csv.DictReader(open(tmp_path / "sweep_mape.csv")))
    assert len(rows) == sum(s.trials for s in sums) == 4
    assert [s.config["depcon"]["N"] for s in sums] == [1, 2]


def test_baseline_experiment():
    s = run_experiment(_fast(method="nelder-mead", baseline=replace(default_config().baseline,
                                                                     max_evals=20)))
    assert s.method == "nelder-mead" and s.trials == 2


def test_benchmarks_have_expected_data():
    lv = make_benchmark(default_config("lotka-volterra"))
    assert len(lv.obs) == 80 and lv.obs.times[-1] == pytest.approx(10.0)
    circ = make_benchmark(default_config("circadian"))
    assert len(circ.obs) == 80 and circ.obs.times[-1] == pytest.approx(144.0)
    assert set(np.unique(circ.input.values)) == {0.0, 250.0}


def test_toml_config(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text('[experiment]\nbenchmark = "circadian"\ntrials = 3\nseed = 9\n'
                    '[depcon]\nN = 5\nlo = [6.0, 0.0575, 5.0, 0.1375]\n[data]\nnoise_sd = 0.01\n')
    cfg = load_config(path)
    assert (cfg.benchmark, cfg.trials, cfg.seed, cfg.depcon.N) == ("circadian", 3, 9, 5)
    assert cfg.depcon.lo == (6.0, 0.0575, 5.0, 0.1375) and cfg.data.noise_sd == 0.01
    assert cfg.depcon.coords == default_config("circadian").depcon.coords
    assert config_from_dict(config_to_dict(cfg)) == cfg


@pytest.mark.parametrize("text", ['[experiment]\nbogus = 1\n', '[depcon]\nlearning = 0.1\n',
                                  '[extras]\nx = 1\n', 'not toml [[[',
                                  '[experiment]\nbenchmark = "pendulum"\n'])
def test_config_errors(tmp_path, text):
    path = tmp_path / "bad.toml"
    path.write_text(text)
    with pytest.raises(ConfigError):
        load_config(path).validate()


@pytest.mark.parametrize("change", [dict(trials=0), dict(method="sgd"), dict(jobs=0)])
def test_experiment_validation(change):
    with pytest.raises(ConfigError):
        replace(default_config(), **change).validate()
