"""Classical optimizers run directly on the unsmoothed loss.

Nelder-Mead, Levenberg-Marquardt, L-BFGS and differential evolution, each
confined to a parameter box and to a hard evaluation budget. A candidate
whose ODE solve diverges is scored +inf (derivative-free methods) or
triggers a backtrack (derivative-based methods).
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DivergenceError
from .ode import ObservationSet, OdeModel
from .signal import build_hierarchy
from .training import MultiscaleProblem, TrialResult

METHODS = ("nelder-mead", "levenberg-marquardt", "l-bfgs", "differential-evolution")


@dataclass
class BaselineConfig:
    method: str = "nelder-mead"
    lo: tuple = ()
    hi: tuple = ()
    max_evals: int = 2000
    seed: int = 0
    # Nelder-Mead
    nm_scale: float = 0.05
    nm_xtol: float = 1e-8
    nm_ftol: float = 1e-12
    # Levenberg-Marquardt
    lm_lambda0: float = 1e-3
    lm_growth: float = 10.0
    lm_tol: float = 1e-12
    # L-BFGS
    lbfgs_memory: int = 10
    lbfgs_gtol: float = 1e-8
    # differential evolution
    de_population: int = 40
    de_F: float = 0.8
    de_CR: float = 0.9
    de_generations: int | None = None
    h: float | None = None

    def validate(self, d_p: int | None = None) -> None:
        if self.method not in METHODS:
            raise ConfigError(f"unknown baseline method {self.method!r}")
        lo, hi = np.asarray(self.lo, float), np.asarray(self.hi, float)
        if lo.shape != hi.shape or lo.ndim != 1 or lo.size == 0 or not np.all(lo < hi):
            raise ConfigError("box bounds must satisfy lo < hi componentwise")
        if d_p is not None and lo.size != d_p:
            raise ConfigError(f"box has {lo.size} components, model has {d_p} parameters")
        if self.max_evals < 1:
            raise ConfigError("max_evals must be >= 1")
        if self.method == "differential-evolution" and self.de_population < 4:
            raise ConfigError("differential evolution needs a population of at least 4")

    @property
    def box(self):
        return np.asarray(self.lo, float), np.asarray(self.hi, float)


@dataclass
class MinimizeResult:
    x: np.ndarray
    fun: float
    evals: int
    converged: bool
    diverged: bool
    history: list = field(default_factory=list)


class _BudgetExhausted(Exception):
    pass


class _Counter:
    """Counts evaluations, maps divergence to +inf, keeps the best point."""

    def __init__(self, budget: int):
        self.budget = budget
        self.evals = 0
        self.best_x = None
        self.best_f = np.inf
        self.finite_seen = False
        self.history = []  # (evaluation, seconds, best f, best x)
        self.start = time.perf_counter()

    def __call__(self, fn, x):
        if self.evals >= self.budget:
            raise _BudgetExhausted
        self.evals += 1
        try:
            out = fn(x)
        except (DivergenceError, FloatingPointError, OverflowError):
            return None
        f = out[0] if isinstance(out, tuple) else out
        if not np.all(np.isfinite(np.atleast_1d(f))):
            return None
        value = float(f if np.ndim(f) == 0 else np.sum(np.square(f)))
        self.finite_seen = True
        if value < self.best_f:
            self.best_f = value
            self.best_x = np.array(x, dtype=float)
            self.history.append((self.evals, time.perf_counter() - self.start, value,
                                 self.best_x.tolist()))
        return out


def nelder_mead(objective, x0, lo, hi, counter, scale=0.05, xtol=1e-8, ftol=1e-12):
    """Box-clipped Nelder-Mead with coefficients (1, 2, 0.5, 0.5)."""
    d = x0.size

    def f(x):
        v = counter(objective, x)
        return np.inf if v is None else float(v)

    simplex = [np.clip(x0, lo, hi)]
    for i in range(d):
        x = simplex[0].copy()
        step = scale * (hi[i] - lo[i])
        x[i] = x[i] + step if x[i] + step <= hi[i] else x[i] - step
        simplex.append(x)
    simplex = np.array(simplex)
    fs = np.array([f(x) for x in simplex])
    while True:
        order = np.argsort(fs, kind="stable")
        simplex, fs = simplex[order], fs[order]
        size = np.max(np.abs(simplex[1:] - simplex[0]))
        if np.isfinite(fs[0]) and (fs[-1] - fs[0] <= ftol and size <= xtol):
            return True
        centroid = simplex[:-1].mean(axis=0)
        xr = np.clip(centroid + (centroid - simplex[-1]), lo, hi)
        fr = f(xr)
        if fr < fs[0]:
            xe = np.clip(centroid + 2.0 * (centroid - simplex[-1]), lo, hi)
            fe = f(xe)
            simplex[-1], fs[-1] = (xe, fe) if fe < fr else (xr, fr)
            continue
        if fr < fs[-2]:
            simplex[-1], fs[-1] = xr, fr
            continue
        if fr < fs[-1]:
            xc = np.clip(centroid + 0.5 * (xr - centroid), lo, hi)
        else:
            xc = np.clip(centroid + 0.5 * (simplex[-1] - centroid), lo, hi)
        fc = f(xc)
        if fc < min(fr, fs[-1]):
            simplex[-1], fs[-1] = xc, fc
            continue
        for i in range(1, d + 1):
            simplex[i] = simplex[0] + 0.5 * (simplex[i] - simplex[0])
            fs[i] = f(simplex[i])


def levenberg_marquardt(residuals_and_jac, x0, lo, hi, counter, lambda0=1e-3,
                        growth=10.0, tol=1e-12):
    """Projected Levenberg-Marquardt with Marquardt's diagonal scaling.

    ``residuals_and_jac(x)`` returns (r, J). Steps that leave the box are
    projected back onto it; rejected or divergent steps raise the damping.
    """
    x = np.clip(x0, lo, hi)
    out = counter(residuals_and_jac, x)
    if out is None:
        return False
    r, J = out
    cost = float(r @ r)
    lam = lambda0
    while True:
        g = J.T @ r
        A = J.T @ J
        D = np.maximum(np.diag(A), 1e-12)
        while True:
            try:
                step = np.linalg.solve(A + lam * np.diag(D), -g)
            except np.linalg.LinAlgError:
                lam *= growth
                continue
            x_new = np.clip(x + step, lo, hi)
            out = counter(residuals_and_jac, x_new)
            if out is not None and float(out[0] @ out[0]) < cost:
                break
            lam *= growth
            if lam > 1e16:
                return False
        r, J = out
        new_cost = float(r @ r)
        moved = np.linalg.norm(x_new - x)
        x = x_new
        done = (cost - new_cost <= tol * max(cost, 1e-300)
                or moved <= tol * (1.0 + np.linalg.norm(x))
                or new_cost <= 1e-30)
        cost = new_cost
        lam = max(lam / growth, 1e-15)
        if done:
            return True


def lbfgs(value_and_grad, x0, lo, hi, counter, memory=10, gtol=1e-8, c1=1e-4):
    """Projected L-BFGS with Armijo backtracking (halving)."""
    x = np.clip(x0, lo, hi)
    out = counter(value_and_grad, x)
    if out is None:
        return False
    f, g = out
    S, Y = [], []
    while True:
        # projected gradient: ignore components pushing out of an active bound
        pg = g.copy()
        pg[(x <= lo) & (g > 0)] = 0.0
        pg[(x >= hi) & (g < 0)] = 0.0
        if np.linalg.norm(pg) <= gtol:
            return True
        q = pg.copy()
        alphas = []
        for s, y in reversed(list(zip(S, Y))):
            a = (s @ q) / (y @ s)
            alphas.append(a)
            q -= a * y
        if S:
            q *= (S[-1] @ Y[-1]) / (Y[-1] @ Y[-1])
        for (s, y), a in zip(zip(S, Y), reversed(alphas)):
            q += (a - (y @ q) / (y @ s)) * s
        d = -q
        if d @ pg >= 0:
            d = -pg
            S, Y = [], []
        step = 1.0
        while True:
            x_new = np.clip(x + step * d, lo, hi)
            out = counter(value_and_grad, x_new)
            if out is not None and out[0] <= f + c1 * (g @ (x_new - x)):
                break
            step *= 0.5
            if step < 1e-20:
                return False
        f_new, g_new = out
        s, y = x_new - x, g_new - g
        if s @ y > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            S.append(s)
            Y.append(y)
            if len(S) > memory:
                S.pop(0)
                Y.pop(0)
        x, f, g = x_new, f_new, g_new


def differential_evolution(objective, x0, lo, hi, counter, rng, population=40, F=0.8,
                           CR=0.9, generations=None):
    """DE/rand/1/bin; ``x0`` seeds one member, the rest are uniform in the box."""
    d = x0.size

    def f(x):
        v = counter(objective, x)
        return np.inf if v is None else float(v)

    pop = rng.uniform(lo, hi, (population, d))
    pop[0] = np.clip(x0, lo, hi)
    fit = np.array([f(x) for x in pop])
    gen = 0
    while generations is None or gen < generations:
        gen += 1
        for i in range(population):
            a, b, c = rng.choice([j for j in range(population) if j != i], 3, replace=False)
            mutant = np.clip(pop[a] + F * (pop[b] - pop[c]), lo, hi)
            cross = rng.random(d) < CR
            cross[rng.integers(d)] = True
            trial = np.where(cross, mutant, pop[i])
            ft = f(trial)
            if ft <= fit[i]:
                pop[i], fit[i] = trial, ft
    return True


def minimize(objective=None, x0=None, config: BaselineConfig | None = None, grad=None,
             residuals=None, jac=None) -> MinimizeResult:
    """Minimise within ``config``'s box using ``config.method``.

    Nelder-Mead and DE need only ``objective``; L-BFGS needs ``grad`` and LM
    needs ``residuals`` and ``jac`` (objective = sum of squared residuals).
    """
    config.validate()
    lo, hi = config.box
    x0 = np.asarray(x0, dtype=float)
    counter = _Counter(config.max_evals)
    method = config.method
    rng = np.random.default_rng(config.seed)
    converged = False
    try:
        if method == "nelder-mead":
            converged = nelder_mead(objective, x0, lo, hi, counter, config.nm_scale,
                                    config.nm_xtol, config.nm_ftol)
        elif method == "levenberg-marquardt":
            if residuals is None or jac is None:
                raise ConfigError("levenberg-marquardt needs residuals and jac")
            converged = levenberg_marquardt(lambda x: _pair(residuals, jac, x), x0, lo, hi,
                                            counter, config.lm_lambda0, config.lm_growth,
                                            config.lm_tol)
        elif method == "l-bfgs":
            if grad is None:
                raise ConfigError("l-bfgs needs a gradient")
            converged = lbfgs(lambda x: _pair(objective, grad, x), x0, lo, hi, counter,
                              config.lbfgs_memory, config.lbfgs_gtol)
        else:
            converged = differential_evolution(objective, x0, lo, hi, counter, rng,
                                               config.de_population, config.de_F,
                                               config.de_CR, config.de_generations)
    except _BudgetExhausted:
        converged = False
    diverged = not counter.finite_seen
    x = counter.best_x if counter.best_x is not None else np.clip(x0, lo, hi)
    return MinimizeResult(x, counter.best_f, counter.evals, bool(converged), diverged,
                          counter.history)


def _pair(f, g, x):
    return f(x), g(x)


def run_baseline_trial(model: OdeModel, input, obs: ObservationSet, y0, config: BaselineConfig,
                       seed: int, truth, problem: MultiscaleProblem | None = None) -> TrialResult:
    """One baseline run on the unsmoothed loss from a random initial guess.

    The initial guess is uniform in [truth/4, 4 truth] per component.
    """
    from .harness import sample_initial

    config.validate(model.param_dim)
    if problem is None:
        problem = MultiscaleProblem(model, build_hierarchy(input, 1, 1.0), obs, y0, config.h)
    x0 = sample_initial(truth, seed)
    cfg = BaselineConfig(**{**config.__dict__, "seed": seed})
    scale = 1.0 / np.sqrt(len(obs))
    idx = problem.idx
    mask = list(obs.mask)
    from .ode import solve_on_samples

    def objective(p):
        return problem.scale_loss(0, p)

    def value_and_grad(p):
        return problem.scale_loss_and_grad(0, p)

    cache = {}

    def solve(p):
        key = p.tobytes()
        if key not in cache:
            cache.clear()
            cache[key] = solve_on_samples(model, p, problem.inputs[0], problem.y0, problem.grid)
        return cache[key]

    def residuals(p):
        traj = solve(p)
        return scale * (traj.states[np.ix_(idx, mask)] - obs.values).ravel()

    def jac(p):
        traj = solve(p)
        Z = traj.sens[idx][:, mask, :]
        return scale * Z.reshape(-1, Z.shape[-1])

    vg = {}

    def grad(p):
        return vg["g"]

    def obj_with_grad(p):
        L, g = value_and_grad(p)
        vg["g"] = g
        return L

    if cfg.method == "l-bfgs":
        res = minimize(obj_with_grad, x0, cfg, grad=grad)
    elif cfg.method == "levenberg-marquardt":
        res = minimize(None, x0, cfg, residuals=residuals, jac=jac)
    else:
        res = minimize(objective, x0, cfg)

    termination = "divergence" if res.diverged else ("tolerance" if res.converged else "max-iter")
    est = np.clip(res.x, *cfg.box)
    return TrialResult(
        method=cfg.method,
        estimate=est.tolist(),
        chain=[est.tolist()],
        loss_history=[h[2] for h in res.history],
        time_history=[h[1] for h in res.history],
        termination=termination,
        iterations=len(res.history),
        initial=x0.tolist(),
        estimate_history=[h[3] for h in res.history],
        trace_iterations=[h[0] for h in res.history],
        grad_norm=float("nan"),
        evaluations=res.evals,
        seed=seed,
    )
