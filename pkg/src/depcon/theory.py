"""Numerical checks of the smoothing theory behind the method.

Each check returns a SweepReport: the swept values, what was measured at
each, any fitted rate, and named pass/fail assertions.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .baselines import BaselineConfig, minimize
from .errors import ContractError, DivergenceError
from .neural import AdamState, PredictorNet, adam_step, forward
from .ode import ObservationSet, OdeModel, input_at_half_steps, solve_on_samples
from .signal import SampledSignal, kernel_l2_norm, kernel_weights, l2_distance, l2_norm, smooth
from .training import DepconConfig, MultiscaleProblem, _Coords


@dataclass
class SweepReport:
    name: str
    variable: str
    values: list
    measured: list
    fitted: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)
    notes: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.values) != len(self.measured):
            raise ContractError("one measurement per swept value")

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True, default=_jsonable)


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(type(x))


def markdown_table(reports) -> str:
    lines = ["| check | variable | values | measured | fitted | result |", "|---|---|---|---|---|---|"]
    for r in reports:
        vals = ", ".join(f"{v:.4g}" if isinstance(v, float) else str(v) for v in r.values)
        meas = ", ".join(f"{m:.3g}" if isinstance(m, float) else str(m) for m in r.measured)
        fit = ", ".join(f"{k}={v:.3g}" for k, v in r.fitted.items())
        failed = [k for k, ok in r.checks.items() if not ok]
        lines.append(f"| {r.name} | {r.variable} | {vals} | {meas} | {fit} | "
                     f"{'pass' if not failed else 'FAIL: ' + ', '.join(failed)} |")
    return "\n".join(lines) + "\n"


def loglog_slope(x, y) -> float:
    x, y = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    return float(np.polyfit(x, y, 1)[0])


def _strictly_decreasing(v) -> bool:
    return bool(np.all(np.diff(np.asarray(v, float)) < 0))


def latin_hypercube(n: int, lo, hi, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    u = (np.array([rng.permutation(n) for _ in lo]).T + rng.random((n, lo.size))) / n
    return lo + u * (hi - lo)


# mollifier

def check_mollifier_convergence(source: SampledSignal, taus) -> SweepReport:
    """L2 distance between the smoothed and raw signal as tau shrinks."""
    taus = [float(t) for t in taus]
    if not _strictly_decreasing(taus):
        raise ContractError("taus must be strictly decreasing")
    dist = [l2_distance(smooth(source, t), source) for t in taus]
    norm = l2_norm(source)
    if norm == 0:
        checks = {"all_zero": all(d == 0 for d in dist)}
    else:
        checks = {"strictly_decreasing": _strictly_decreasing(dist),
                  "final_below_5pct": dist[-1] < 0.05 * norm}
    return SweepReport("mollifier_convergence", "tau", taus, dist, checks=checks,
                       notes={"source_norm": norm})


def check_kernel_scaling(taus, rtol: float = 0.01) -> SweepReport:
    """||K_tau||_2 tau^(1/4) should not depend on tau."""
    taus = [float(t) for t in taus]
    scaled = [kernel_l2_norm(t) * t ** 0.25 for t in taus]
    spread = max(scaled) / min(scaled) - 1.0
    exact = (8 * np.pi) ** -0.25
    return SweepReport("kernel_scaling", "tau", taus, scaled,
                       fitted={"constant": float(np.mean(scaled)), "exact": exact, "spread": spread},
                       checks={"constant_within_tol": spread <= rtol})


def check_kernel_mass(taus, dt: float, atol: float = 1e-12) -> SweepReport:
    """Discrete kernel weights sum to one."""
    taus = [float(t) for t in taus]
    err = [abs(float(kernel_weights(t, dt).sum()) - 1.0) for t in taus]
    return SweepReport("kernel_mass", "tau", taus, err,
                       checks={"unit_mass": max(err) <= atol})


# trajectories

def _solve(model, p, signal, y0, grid, with_sens=False):
    return solve_on_samples(model, p, input_at_half_steps(signal, grid), y0, grid, with_sens)


def check_trajectory_stability(model: OdeModel, p, input: SampledSignal, y0, tau_pairs,
                               h: float | None = None, max_spread: float = 50.0) -> SweepReport:
    """Ratio ||y_tau1 - y_tau2|| / ||S_tau1 - S_tau2|| over pairs of scales.

    Norms are L2 over the input's time span. Pairs with equal scales (both
    norms zero) or a diverged solve are skipped and listed in the notes.
    """
    h = input.dt / 4 if h is None else h
    T = input.t_end - input.t0
    grid = input.t0 + np.linspace(0.0, T, int(np.ceil(T / h)) + 1)
    ratios, skipped = [], []
    cache = {}

    def traj(tau):
        if tau not in cache:
            s = smooth(input, tau) if tau > 0 else input
            try:
                cache[tau] = (s, _solve(model, p, s, y0, grid).states)
            except DivergenceError:
                cache[tau] = (s, None)
        return cache[tau]

    for t1, t2 in tau_pairs:
        (s1, y1), (s2, y2) = traj(float(t1)), traj(float(t2))
        ds = l2_distance(s1, s2)
        if y1 is None or y2 is None or ds == 0:
            skipped.append([float(t1), float(t2)])
            ratios.append(float("nan"))
            continue
        dy = float(np.sqrt(np.trapezoid(np.sum((y1 - y2) ** 2, axis=1), grid)))
        ratios.append(dy / ds)
    good = [r for r in ratios if np.isfinite(r)]
    spread = max(good) / min(good) if good else float("nan")
    checks = {"finite": bool(good) and all(np.isfinite(good)),
              "common_constant": bool(good) and (min(good) == 0 or spread < max_spread)}
    return SweepReport("trajectory_stability", "tau_pair", [list(map(float, pr)) for pr in tau_pairs],
                       ratios, fitted={"max_ratio": max(good) if good else float("nan"),
                                       "spread": spread},
                       checks=checks, notes={"skipped": skipped})


# minimizers across scales

def _scale_problem(model, input, obs, y0, taus, h):
    """A problem whose scale k is the input smoothed at taus[k]."""
    problem = MultiscaleProblem.__new__(MultiscaleProblem)
    base = MultiscaleProblem(model, _Hier(input, [input]), obs, y0, h)
    problem.__dict__.update(base.__dict__)
    problem.inputs = [input_at_half_steps(smooth(input, t) if t > 0 else input, base.grid)
                      for t in taus]
    return problem


class _Hier:
    def __init__(self, source, smoothed):
        self.smoothed = smoothed


def lm_minimizer(problem: MultiscaleProblem, k: int, starts, lo, hi, max_evals: int = 400):
    """Best LM solution of the scale-k loss over the given starting points."""
    mask = list(problem.obs.mask)
    scale = 1.0 / np.sqrt(len(problem.obs))
    cache = {}

    def solve(p):
        key = p.tobytes()
        if key not in cache:
            cache.clear()
            cache[key] = solve_on_samples(problem.model, p, problem.inputs[k], problem.y0,
                                          problem.grid)
        return cache[key]

    def residuals(p):
        return scale * (solve(p).states[np.ix_(problem.idx, mask)] - problem.obs.values).ravel()

    def jac(p):
        Z = solve(p).sens[problem.idx][:, mask, :]
        return scale * Z.reshape(-1, Z.shape[-1])

    cfg = BaselineConfig("levenberg-marquardt", tuple(lo), tuple(hi), max_evals, lm_tol=1e-15)
    best = None
    for x0 in starts:
        res = minimize(None, x0, cfg, residuals=residuals, jac=jac)
        if best is None or res.fun < best.fun:
            best = res
    return best


def delta_tau(problem: MultiscaleProblem, k: int, samples) -> float:
    """max over samples of |L_tau^(1/2) - L^(1/2)|, with the raw input at scale 0."""
    out = 0.0
    for p in samples:
        try:
            a = problem.scale_loss(k, p)
            b = problem.scale_loss(0, p)
        except DivergenceError:
            continue
        if np.isfinite(a) and np.isfinite(b):
            out = max(out, abs(np.sqrt(a) - np.sqrt(b)))
    return out


def check_minimizer_convergence(model: OdeModel, input: SampledSignal, obs: ObservationSet, y0,
                                truth, taus, h: float | None = None, n_starts: int = 3,
                                n_delta: int = 100, seed: int = 0, perturb: float = 0.1,
                                tol_frac: float = 0.02, min_slope: float = 0.4) -> SweepReport:
    """Scale-wise minimizers p_tau by LM and their distance to the truth.

    LM starts from the truth perturbed by up to ``perturb`` (relative). The
    rate against delta_tau is fitted over the positive scales; delta_tau
    uses a Latin-hypercube sample of the box [truth/4, 4 truth].
    """
    taus = [float(t) for t in taus]
    if not np.all(np.diff(taus) < 0):
        raise ContractError("taus must be decreasing")
    truth = np.asarray(truth, float)
    lo, hi = truth / 4, truth * 4
    # scale 0 holds the raw input so delta_tau can compare against it
    problem = _scale_problem(model, input, obs, y0, [0.0] + taus, h)
    rng = np.random.default_rng(seed)
    starts = [truth * (1 + perturb * rng.uniform(-1, 1, truth.size)) for _ in range(n_starts)]
    samples = latin_hypercube(n_delta, lo, hi, seed)
    dist, deltas, minimizers, converged = [], [], [], []
    for k, tau in enumerate(taus, start=1):
        res = lm_minimizer(problem, k, starts, lo, hi)
        minimizers.append(res.x.tolist())
        converged.append(bool(res.converged))
        dist.append(float(np.linalg.norm(res.x - truth)))
        deltas.append(delta_tau(problem, k, samples) if tau > 0 else 0.0)
    pos = [i for i, t in enumerate(taus) if t > 0 and dist[i] > 0 and deltas[i] > 0]
    slope = loglog_slope([deltas[i] for i in pos], [dist[i] for i in pos]) if len(pos) >= 2 else float("nan")
    checks = {"strictly_decreasing": _strictly_decreasing(dist),
              "final_close": dist[-1] < tol_frac * float(np.linalg.norm(truth)),
              "rate": bool(slope >= min_slope),
              "delta_monotone": bool(np.all(np.diff(deltas) <= 0))}
    return SweepReport("minimizer_convergence", "tau", taus, dist,
                       fitted={"slope_vs_delta": slope},
                       checks=checks,
                       notes={"delta_tau": deltas, "minimizers": minimizers,
                              "lm_converged": converged})


# corrector accuracy

def adam_corrector(problem: MultiscaleProblem, k: int, p0, eps: float, lr: float = 1e-2,
                   max_iter: int = 20000, decay: float = 0.5, patience: int = 200):
    """Adam on one scale's loss until ||grad|| <= eps.

    The step size is halved whenever the gradient norm has not reached a new
    low for ``patience`` iterations, which lets fixed-step Adam settle below
    its noise floor. Returns (p, grad norm, iterations).
    """
    p = np.asarray(p0, float).copy()
    state = AdamState(p.size, lr)
    best, since = np.inf, 0
    for it in range(max_iter):
        L, g = problem.scale_loss_and_grad(k, p)
        gn = float(np.linalg.norm(g))
        if gn <= eps:
            return p, gn, it
        if gn < best:
            best, since = gn, 0
        else:
            since += 1
            if since >= patience:
                state.lr *= decay
                since = 0
        p = adam_step(state, p, g)
    return p, gn, max_iter


def check_corrector_error_scaling(model: OdeModel, input: SampledSignal, obs: ObservationSet, y0,
                                  truth, tau: float, epsilons, h: float | None = None,
                                  offset: float = 0.1, seed: int = 0, lr: float = 1e-2,
                                  ref_eps: float = 1e-8, min_slope: float = 0.8) -> SweepReport:
    """Distance of the eps-stopped corrector from the scale minimizer, vs eps.

    The reference minimizer comes from LM, then Adam polishes it to
    ``ref_eps``. Every corrector run starts from the same point, offset from
    the reference by ``offset`` (relative) in a seeded direction.
    """
    eps_list = [float(e) for e in epsilons]
    if not _strictly_decreasing(eps_list):
        raise ContractError("epsilons must be decreasing")
    truth = np.asarray(truth, float)
    problem = _scale_problem(model, input, obs, y0, [tau], h)
    ref = lm_minimizer(problem, 0, [truth], truth / 4, truth * 4).x
    ref, ref_g, _ = adam_corrector(problem, 0, ref, ref_eps, lr=1e-4)
    direction = np.random.default_rng(seed).choice([-1.0, 1.0], truth.size)
    start = ref * (1 + offset * direction)
    errors, grads, iters = [], [], []
    for eps in eps_list:
        p, gn, it = adam_corrector(problem, 0, start, eps, lr=lr)
        errors.append(float(np.linalg.norm(p - ref)))
        grads.append(gn)
        iters.append(it)
    slope = loglog_slope(eps_list, errors) if min(errors) > 0 else float("nan")
    kappa = max(e / x for e, x in zip(errors, eps_list))
    checks = {"strictly_decreasing": _strictly_decreasing(errors),
              "reached_tolerance": all(g <= e for g, e in zip(grads, eps_list)),
              "linear_bound": all(e <= kappa * x * (1 + 1e-12) for e, x in zip(errors, eps_list)),
              "slope": bool(slope >= min_slope)}
    return SweepReport("corrector_error_scaling", "epsilon", eps_list, errors,
                       fitted={"slope": slope, "kappa": kappa},
                       checks=checks,
                       notes={"reference": ref.tolist(), "reference_grad": ref_g,
                              "grad_norms": grads, "iterations": iters, "tau": tau})


# one predictor-corrector step

def spectral_lipschitz(net: PredictorNet) -> float:
    """Product of layer spectral norms (plus one for a residual net): an upper
    bound on the network's Lipschitz constant, since ReLU is 1-Lipschitz."""
    L = float(np.prod([np.linalg.norm(W, 2) for W in net.weights]))
    return L + 1.0 if net.residual else L


def sampled_lipschitz(net: PredictorNet, lo, hi, n_pairs: int = 1000, seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    best = 0.0
    for _ in range(n_pairs):
        a, b = rng.uniform(lo, hi), rng.uniform(lo, hi)
        d = np.linalg.norm(a - b)
        if d > 0:
            best = max(best, float(np.linalg.norm(forward(net, a) - forward(net, b)) / d))
    return best


def check_one_step_bound(problem: MultiscaleProblem, net: PredictorNet, config: DepconConfig,
                         chain, oracle, n: int, seed: int = 0, slack: float = 0.10) -> SweepReport:
    """Tracking error across one predictor application, scale n -> n-1.

    ``chain`` is the run's chain (coarse to fine) and ``oracle[m]`` the
    scale-wise minimizer at scale m. Everything is measured in the chain's
    own coordinates. The bound checked is

        e_{n-1} <= kappa eps + L e_n + |beta_n|

    with L the spectral-norm upper bound, beta_n = f(p*_n) - p*_{n-1}, and
    kappa eps = |grad L_{n-1}(p_{n-1})| / lambda_min at p*_{n-1} from the
    Gauss-Newton Hessian.
    """
    N = len(chain) - 1
    if not 1 <= n <= N:
        raise ContractError("n must lie in [1, N]")
    lo, hi = config.box
    cs = _Coords(config.coords, lo, hi)
    u = lambda p: cs.to_u(np.asarray(p, float))
    p_n, p_m = np.asarray(chain[N - n], float), np.asarray(chain[N - n + 1], float)
    e_n = float(np.linalg.norm(u(p_n) - u(oracle[n])))
    e_m = float(np.linalg.norm(u(p_m) - u(oracle[n - 1])))
    beta = float(np.linalg.norm(forward(net, u(oracle[n])) - u(oracle[n - 1])))
    L_up = spectral_lipschitz(net)
    L_lo = sampled_lipschitz(net, cs.to_u(lo), cs.to_u(hi), seed=seed)
    kappa_eps = _kappa_eps(problem, n - 1, p_m, oracle[n - 1], cs)
    bound = kappa_eps + L_up * e_n + beta
    checks = {"bound_holds": e_m <= bound * (1 + slack) + 1e-12,
              "lipschitz_consistent": L_lo <= L_up * (1 + 1e-9)}
    return SweepReport("one_step_bound", "n", [n], [e_m],
                       fitted={"bound": bound, "lipschitz_upper": L_up, "lipschitz_sampled": L_lo,
                               "kappa_eps": kappa_eps, "beta": beta, "e_n": e_n},
                       checks=checks)


def _kappa_eps(problem: MultiscaleProblem, m: int, p, p_star, cs) -> float:
    try:
        _, g = problem.scale_loss_and_grad(m, np.asarray(p, float))
        traj = solve_on_samples(problem.model, np.asarray(p_star, float), problem.inputs[m],
                                problem.y0, problem.grid)
    except DivergenceError:
        return float("inf")
    Z = traj.sens[problem.idx][:, list(problem.obs.mask), :].reshape(-1, len(p))
    H = 2.0 / len(problem.obs) * Z.T @ Z
    # move gradient and Hessian into chain coordinates
    J = cs.pullback(cs.to_u(np.asarray(p_star, float)), np.asarray(p_star, float), np.ones(len(p)))
    Hu = H * np.outer(J, J)
    gu = cs.pullback(cs.to_u(np.asarray(p, float)), np.asarray(p, float), g)
    lam = float(np.linalg.eigvalsh(Hu)[0])
    return float(np.linalg.norm(gu)) / lam if lam > 0 else float("inf")


def oracle_chain(problem: MultiscaleProblem, truth, n_starts: int = 3, seed: int = 0,
                 perturb: float = 0.1):
    """Scale-wise LM minimizers for every scale of ``problem`` (index = scale)."""
    truth = np.asarray(truth, float)
    rng = np.random.default_rng(seed)
    starts = [truth * (1 + perturb * rng.uniform(-1, 1, truth.size)) for _ in range(n_starts)]
    out = []
    for k in range(problem.n_scales):
        res = lm_minimizer(problem, k, starts, truth / 4, truth * 4)
        out.append(res.x)
        starts = [res.x]
    return out


# the suite behind `depcon theory`

def step_signal(T: float = 100.0, dt: float = 0.01, at: float = 50.0) -> SampledSignal:
    t = dt * np.arange(int(round(T / dt)) + 1)
    return SampledSignal(0.0, dt, (t >= at - 1e-9 * dt).astype(float))


def run_suite(seed: int = 0, train_iters: int = 1500) -> list[SweepReport]:
    """Every check, on a unit step and on the default Lotka-Volterra data."""
    from .harness import default_config, make_benchmark
    from .signal import build_hierarchy
    from .training import train

    halvings = [2.0 ** -k for k in range(9)]
    reports = [check_kernel_mass(halvings, 0.01),
               check_mollifier_convergence(step_signal(), halvings),
               check_kernel_scaling([0.5, 1.0, 2.0, 4.0])]
    cfg = default_config("lotka-volterra")
    bench = make_benchmark(cfg)
    args = (bench.model, bench.input, bench.obs, bench.y0)
    grid = [0.05, 0.1, 0.2, 0.4]
    reports.append(check_trajectory_stability(bench.model, bench.truth, bench.input, bench.y0,
                                              [(a, b) for i, a in enumerate(grid) for b in grid[i + 1:]]))
    reports.append(check_minimizer_convergence(*args, bench.truth, [0.4, 0.2, 0.1, 0.05, 0.0],
                                               seed=seed))
    reports.append(check_corrector_error_scaling(*args, bench.truth, 0.2, [1e-2, 1e-3, 1e-4],
                                                 seed=seed))
    dc = replace(cfg.depcon, seed=seed, max_iter=train_iters)
    problem = MultiscaleProblem(bench.model, build_hierarchy(bench.input, dc.N, dc.tau_max),
                                bench.obs, bench.y0, dc.h)
    result = train(*args, dc, problem=problem)
    oracle = oracle_chain(problem, bench.truth, seed=seed)
    reports.append(check_one_step_bound(problem, result.net, dc, result.chain, oracle, 1, seed))
    return reports
