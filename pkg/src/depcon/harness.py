"""Experiment configs, trial orchestration, MAPE statistics and plot-data output."""
from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .baselines import METHODS as BASELINE_METHODS
from .baselines import BaselineConfig, run_baseline_trial
from .errors import ConfigError, DomainError, InitializationError
from .models import (CIRCADIAN_TRUE, CIRCADIAN_Y0, LV_TRUE, LV_Y0, LightSchedule,
                     circadian_model, generate_observations, lv_model, make_light_schedule,
                     make_pulse_train)
from .signal import build_hierarchy
from .training import DepconConfig, MultiscaleProblem, TrialResult, train

SCHEMA = 1
BENCHMARKS = ("lotka-volterra", "circadian")
METHODS = ("depcon",) + BASELINE_METHODS


def mape(estimate, truth) -> float:
    """Mean absolute relative error, averaged over parameters."""
    est, tru = np.asarray(estimate, float), np.asarray(truth, float)
    if est.shape != tru.shape:
        raise DomainError("estimate and truth differ in length")
    if np.any(tru == 0):
        raise DomainError("MAPE is undefined for a zero true component")
    return float(np.mean(np.abs(est - tru) / np.abs(tru)))


def sample_initial(truth, seed: int) -> np.ndarray:
    """Uniform draw from [truth/4, 4 truth] per component."""
    truth = np.asarray(truth, float)
    return np.random.default_rng(seed).uniform(truth / 4, truth * 4)


@dataclass
class DataConfig:
    """Synthetic benchmark data. LV uses the pulse fields, circadian the light fields."""

    T: float = 10.0
    n_obs: int = 80
    noise_sd: float = 0.0
    dt: float = 0.05
    n_pulses: int = 5
    pulse_width: float = 0.5
    amplitude: float = 1.0
    light_period: float = 24.0
    on_fraction: float = 0.5
    lux: float = 250.0
    jitter: float | None = None  # hours; None keeps the schedule regular
    input_seed: int | None = None  # None: use the experiment seed


@dataclass
class ExperimentConfig:
    benchmark: str = "lotka-volterra"
    method: str = "depcon"
    trials: int = 30
    seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    depcon: DepconConfig = field(default_factory=DepconConfig)
    baseline: BaselineConfig = field(default_factory=BaselineConfig)
    out: str | None = None
    jobs: int = 1

    def validate(self) -> None:
        if self.benchmark not in BENCHMARKS:
            raise ConfigError(f"unknown benchmark {self.benchmark!r}")
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        if self.data.n_obs < 2 or not self.data.T > 0 or not self.data.dt > 0:
            raise ConfigError("data needs T > 0, dt > 0 and n_obs >= 2")
        d_p = 4
        if self.method == "depcon":
            self.depcon.validate(d_p)
        else:
            replace(self.baseline, method=self.method).validate(d_p)

    @property
    def truth(self) -> np.ndarray:
        return (LV_TRUE if self.benchmark == "lotka-volterra" else CIRCADIAN_TRUE).copy()


def default_config(benchmark: str = "lotka-volterra", method: str = "depcon") -> ExperimentConfig:
    """Pinned defaults for each benchmark."""
    if benchmark not in BENCHMARKS:
        raise ConfigError(f"unknown benchmark {benchmark!r}")
    truth = LV_TRUE if benchmark == "lotka-volterra" else CIRCADIAN_TRUE
    box = dict(lo=tuple((truth / 4).tolist()), hi=tuple((truth * 4).tolist()))
    if benchmark == "lotka-volterra":
        data = DataConfig(input_seed=1)
        dc = DepconConfig(N=8, tau_max=0.02, max_iter=4000, trace_every=20, **box)
        trials = 30
    else:
        data = DataConfig(T=144.0, dt=0.5)
        dc = DepconConfig(N=8, tau_max=0.02, max_iter=3000, lr_theta=3e-4, lr_p=1e-2,
                          coords="log", residual=True, trace_every=20, **box)
        trials = 10
    bc = BaselineConfig(method=method if method in BASELINE_METHODS else "nelder-mead",
                        max_evals=2000, **box)
    return ExperimentConfig(benchmark, method, trials, 0, data, dc, bc)


# config files: TOML with sections [experiment], [data], [depcon], [baseline]

def _apply(obj, table: dict, section: str):
    known = {f.name: f for f in fields(obj)}
    kw = {}
    for key, value in table.items():
        if key not in known:
            raise ConfigError(f"[{section}] unknown key {key!r}")
        if isinstance(value, list):
            value = tuple(value)
        kw[key] = value
    return replace(obj, **kw)


def config_from_dict(d: dict) -> ExperimentConfig:
    d = dict(d)
    for key in d:
        if key not in ("experiment", "data", "depcon", "baseline"):
            raise ConfigError(f"unknown section [{key}]")
    exp = dict(d.get("experiment", {}))
    cfg = default_config(exp.get("benchmark", "lotka-volterra"), exp.get("method", "depcon"))
    top = {k: v for k, v in exp.items()}
    for key in top:
        if key not in ("benchmark", "method", "trials", "seed", "out", "jobs"):
            raise ConfigError(f"[experiment] unknown key {key!r}")
    cfg = replace(cfg, **top)
    cfg.data = _apply(cfg.data, d.get("data", {}), "data")
    cfg.depcon = _apply(cfg.depcon, d.get("depcon", {}), "depcon")
    cfg.baseline = _apply(cfg.baseline, d.get("baseline", {}), "baseline")
    try:
        cfg.validate()
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return config_from_dict(raw)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    d = asdict(cfg)
    exp = {k: d.pop(k) for k in ("benchmark", "method", "trials", "seed", "out", "jobs")}
    return {"experiment": exp, **d}


# data

@dataclass
class Benchmark:
    model: object
    input: object
    obs: object
    y0: np.ndarray
    truth: np.ndarray


def make_benchmark(cfg: ExperimentConfig) -> Benchmark:
    """Input signal and observations; deterministic in the experiment seed."""
    d = cfg.data
    seed = cfg.seed if d.input_seed is None else d.input_seed
    if cfg.benchmark == "lotka-volterra":
        model, y0 = lv_model(), LV_Y0.copy()
        S = make_pulse_train(d.T, d.dt, d.n_pulses, d.pulse_width, d.amplitude, seed)
    else:
        model, y0 = circadian_model(), CIRCADIAN_Y0.copy()
        sched = LightSchedule(d.light_period, d.on_fraction, d.lux,
                              seed=None if d.jitter is None else seed,
                              jitter=0.0 if d.jitter is None else d.jitter)
        S = make_light_schedule(sched, d.T, d.dt)
    obs = generate_observations(model, cfg.truth, S, y0, d.T, d.n_obs, d.noise_sd, seed)
    return Benchmark(model, S, obs, y0, cfg.truth)


# trials

def _run_trial(args) -> TrialResult:
    cfg, index = args
    bench = make_benchmark(cfg)
    seed = cfg.seed + index
    if cfg.method == "depcon":
        dc = replace(cfg.depcon, seed=seed)
        problem = _problem(cfg, bench)
        try:
            return train(bench.model, bench.input, bench.obs, bench.y0, dc, problem=problem)
        except InitializationError:
            p = np.random.default_rng(seed).uniform(*dc.box)
            return TrialResult("depcon", p.tolist(), [p.tolist()], [math.inf], [0.0],
                               "divergence", 0, initial=p.tolist(), seed=seed)
    bc = replace(cfg.baseline, method=cfg.method)
    return run_baseline_trial(bench.model, bench.input, bench.obs, bench.y0, bc, seed,
                              bench.truth, problem=_problem(cfg, bench, scales=False))


_PROBLEMS: dict = {}


def _problem(cfg: ExperimentConfig, bench: Benchmark, scales: bool = True):
    # the per-scale inputs depend only on data and hierarchy settings; reuse them
    N, tau_max = (cfg.depcon.N, cfg.depcon.tau_max) if scales else (1, 1.0)
    h = cfg.depcon.h if scales else cfg.baseline.h
    key = (json.dumps(asdict(cfg.data)), cfg.benchmark, cfg.seed, N, tau_max, h)
    if key not in _PROBLEMS:
        _PROBLEMS.clear()
        _PROBLEMS[key] = MultiscaleProblem(bench.model, build_hierarchy(bench.input, N, tau_max),
                                           bench.obs, bench.y0, h)
    return _PROBLEMS[key]


@dataclass
class ExperimentSummary:
    benchmark: str
    method: str
    trials: int
    truth: list
    estimate_mean: list
    estimate_sd: list
    mapes: list
    mape_mean: float
    mape_sd: float
    mape_median: float
    diverged: int
    terminations: dict
    config: dict
    wall_mean: float = 0.0
    wall_total: float = 0.0
    schema: int = SCHEMA

    def to_dict(self, timing: bool = True) -> dict:
        d = asdict(self)
        if not timing:
            d.pop("wall_mean")
            d.pop("wall_total")
        return d

    def to_json(self, timing: bool = True) -> str:
        return json.dumps(self.to_dict(timing), indent=1, sort_keys=True)


def summarize(cfg: ExperimentConfig, results: list[TrialResult]) -> ExperimentSummary:
    truth = cfg.truth
    est = np.array([r.estimate for r in results])
    mapes = [mape(e, truth) for e in est]
    terms = {t: sum(r.termination == t for r in results) for t in ("tolerance", "max-iter", "divergence")}
    walls = [r.time_history[-1] if r.time_history else 0.0 for r in results]
    cfg_d = config_to_dict(cfg)
    cfg_d["experiment"].pop("out")
    cfg_d["experiment"].pop("jobs")
    return ExperimentSummary(
        benchmark=cfg.benchmark, method=cfg.method, trials=len(results),
        truth=truth.tolist(), estimate_mean=est.mean(axis=0).tolist(),
        estimate_sd=est.std(axis=0).tolist(), mapes=mapes,
        mape_mean=float(np.mean(mapes)), mape_sd=float(np.std(mapes)),
        mape_median=float(np.median(mapes)), diverged=terms["divergence"], terminations=terms,
        config=cfg_d, wall_mean=float(np.mean(walls)), wall_total=float(np.sum(walls)))


def run_trials(cfg: ExperimentConfig, progress=None) -> list[TrialResult]:
    jobs = [(cfg, i) for i in range(cfg.trials)]
    if cfg.jobs == 1:
        results = []
        for job in jobs:
            results.append(_run_trial(job))
            if progress:
                progress(len(results), cfg.trials, results[-1])
        return results
    import multiprocessing

    ctx = multiprocessing.get_context("fork" if os.name == "posix" else "spawn")
    with ProcessPoolExecutor(cfg.jobs, mp_context=ctx) as pool:
        results = []
        # map preserves trial order, so the reduction is deterministic
        for r in pool.map(_run_trial, jobs):
            results.append(r)
            if progress:
                progress(len(results), cfg.trials, r)
    return results


def run_experiment(cfg: ExperimentConfig, progress=None) -> ExperimentSummary:
    """Run ``cfg.trials`` trials (trial seed = base seed + index) and write outputs
    to ``cfg.out`` when set."""
    cfg.validate()
    results = run_trials(cfg, progress)
    summary = summarize(cfg, results)
    if cfg.out:
        write_outputs(cfg, results, summary, Path(cfg.out))
    return summary


# output

def _csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def mape_trace(result: TrialResult, truth) -> list[tuple]:
    """(step, seconds, MAPE) along the recorded estimate history."""
    rows = []
    times = result.time_history
    for k, (step, est) in enumerate(zip(result.trace_iterations, result.estimate_history)):
        if result.method == "depcon":
            t = times[step] if step < len(times) else float("nan")
        else:
            t = times[k] if k < len(times) else float("nan")
        rows.append((step, t, mape(est, truth)))
    return rows


def write_outputs(cfg: ExperimentConfig, results, summary: ExperimentSummary, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "trials").mkdir(exist_ok=True)
    for i, r in enumerate(results):
        (out / "trials" / f"trial_{i:03d}.json").write_text(r.to_json())
    (out / "summary.json").write_text(summary.to_json())
    truth = cfg.truth
    names = ("p1", "p2", "p3", "p4") if cfg.benchmark == "lotka-volterra" else ("tau_c", "gamma", "G", "k")
    _csv(out / "scatter.csv", ("trial", "parameter", "truth", "estimate", "initial"),
         [(i, names[j], truth[j], r.estimate[j], r.initial[j] if r.initial else "")
          for i, r in enumerate(results) for j in range(len(truth))])
    _csv(out / "mape.csv", ("trial", "seed", "mape", "termination"),
         [(i, r.seed, m, r.termination) for i, (r, m) in enumerate(zip(results, summary.mapes))])
    _csv(out / "mape_trace.csv", ("trial", "step", "seconds", "mape"),
         [(i,) + row for i, r in enumerate(results) for row in mape_trace(r, truth)])
    (out / "report.md").write_text(markdown_report([summary]))


def markdown_report(summaries) -> str:
    lines = ["| benchmark | method | trials | MAPE mean | MAPE sd | MAPE median | diverged | estimate mean (sd) |",
             "|---|---|---|---|---|---|---|---|"]
    for s in summaries:
        est = ", ".join(f"{m:.3g} ({sd:.2g})" for m, sd in zip(s.estimate_mean, s.estimate_sd))
        n = s.config.get("depcon", {}).get("N") if s.method == "depcon" else "-"
        lines.append(f"| {s.benchmark} | {s.method}{'' if n == '-' else f' N={n}'} | {s.trials} | "
                     f"{s.mape_mean:.4f} | {s.mape_sd:.4f} | {s.mape_median:.4f} | {s.diverged} | {est} |")
    return "\n".join(lines) + "\n"


def sweep_scales(cfg: ExperimentConfig, Ns, progress=None) -> list[ExperimentSummary]:
    """One experiment per scale count N on identical data; writes a box-plot CSV."""
    summaries = []
    for N in Ns:
        sub = replace(cfg, depcon=replace(cfg.depcon, N=int(N)),
                      out=None if cfg.out is None else str(Path(cfg.out) / f"N{int(N)}"))
        summaries.append(run_experiment(sub, progress))
    if cfg.out:
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        _csv(out / "sweep_mape.csv", ("N", "trial", "mape"),
             [(int(N), i, m) for N, s in zip(Ns, summaries) for i, m in enumerate(s.mapes)])
        (out / "report.md").write_text(markdown_report(summaries))
    return summaries


def run_baselines(cfg: ExperimentConfig, progress=None) -> list[ExperimentSummary]:
    """Every baseline method on the benchmark and data of ``cfg``."""
    out = []
    for method in BASELINE_METHODS:
        sub = replace(cfg, method=method,
                      out=None if cfg.out is None else str(Path(cfg.out) / method))
        out.append(run_experiment(sub, progress))
    if cfg.out:
        (Path(cfg.out) / "report.md").write_text(markdown_report(out))
    return out


def load_trials(out) -> list[TrialResult]:
    files = sorted((Path(out) / "trials").glob("trial_*.json"))
    return [TrialResult.from_dict(json.loads(f.read_text())) for f in files]

