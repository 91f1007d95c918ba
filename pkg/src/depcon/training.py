"""The predictor-corrector training loop.

A shared predictor network maps the parameter estimate at one smoothing
scale to the next finer one. Each predicted parameter is scored against the
data by integrating the system driven by the input smoothed at its scale;
the summed losses are differentiated with forward sensitivities at the
leaves and reverse mode through the predictor chain, and Adam updates the
network together with the coarsest-scale parameter.
"""
from __future__ import annotations

import copy
import json
import time
from dataclasses import dataclass, field, fields

import numpy as np

from .errors import ConfigError, ContractError, DivergenceError, InitializationError
from .neural import AdamState, adam_step, backward_chain, forward_chain, init_predictor
from .ode import (ObservationSet, OdeModel, input_at_half_steps, loss_on_samples,
                  observation_grid, observation_indices)
from .signal import SampledSignal, ScaleHierarchy, build_hierarchy

TERMINATION = ("tolerance", "max-iter", "divergence")
COORDS = ("raw", "box", "log", "logit")


class _Coords:
    """Map between parameters p and the coordinates u the chain runs in.

    raw: u = p. box: the box maps affinely onto [-1, 1]^d. log: the same
    on log p, which keeps every chain entry positive. logit: log p runs
    through a logistic squash, so every real u lands inside the box.
    """

    def __init__(self, kind: str, lo, hi):
        self.kind = kind
        if kind in ("log", "logit"):
            lo, hi = np.log(lo), np.log(hi)
        self.center, self.half = (lo + hi) / 2, (hi - lo) / 2
        if kind == "raw":
            self.center, self.half = np.zeros_like(lo), np.ones_like(lo)

    def to_u(self, p):
        x = (np.log(p) if self.kind in ("log", "logit") else p) - self.center
        if self.kind == "logit":
            return np.arctanh(np.clip(x / self.half, -1 + 1e-12, 1 - 1e-12))
        return x / self.half

    def to_p(self, u):
        if self.kind == "logit":
            return np.exp(self.center + self.half * np.tanh(u))
        x = self.center + self.half * u
        return np.exp(x) if self.kind == "log" else x

    def pullback(self, u, p, g):
        # dL/du = dL/dp * dp/du
        if self.kind == "logit":
            return g * p * self.half * (1.0 - np.tanh(u) ** 2)
        return g * self.half * (p if self.kind == "log" else 1.0)


@dataclass
class DepconConfig:
    N: int = 8
    tau_max: float = 1.0
    lo: tuple = ()
    hi: tuple = ()
    lr_p: float = 1e-2
    lr_theta: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    max_iter: int = 2000
    tol: float = 1e-6
    seed: int = 0
    h: float | None = None
    penalty: float = 1e6
    trace_every: int = 1
    coords: str = "raw"
    lr_decay: float = 1.0  # learning rates shrink geometrically to this factor at max_iter
    residual: bool = False

    def validate(self, d_p: int | None = None) -> None:
        lo, hi = np.asarray(self.lo, float), np.asarray(self.hi, float)
        if lo.shape != hi.shape or lo.ndim != 1 or lo.size == 0:
            raise ConfigError("box bounds lo/hi must be equal-length vectors")
        if d_p is not None and lo.size != d_p:
            raise ConfigError(f"box has {lo.size} components, model has {d_p} parameters")
        if not np.all(lo < hi):
            raise ConfigError("box needs lo < hi componentwise")
        if int(self.N) != self.N or self.N < 1:
            raise ConfigError("N must be an integer >= 1")
        if not self.tol > 0:
            raise ConfigError("tol must be > 0")
        if self.max_iter < 1:
            raise ConfigError("max_iter must be >= 1")
        if not self.tau_max > 0:
            raise ConfigError("tau_max must be > 0")
        if not 0 < self.lr_decay <= 1:
            raise ConfigError("lr_decay must lie in (0, 1]")
        if self.coords not in COORDS:
            raise ConfigError(f"coords must be one of {COORDS}")
        if self.coords == "log" and not np.all(lo > 0):
            raise ConfigError("log coordinates need a positive box")

    @property
    def box(self) -> tuple[np.ndarray, np.ndarray]:
        return np.asarray(self.lo, float), np.asarray(self.hi, float)


@dataclass
class TrialResult:
    """One estimation run; shared by the predictor-corrector and the baselines."""

    method: str
    estimate: list
    chain: list
    loss_history: list
    time_history: list
    termination: str
    iterations: int
    initial: list = field(default_factory=list)
    estimate_history: list = field(default_factory=list)
    trace_iterations: list = field(default_factory=list)
    grad_norm: float = float("nan")
    diverged_scales: int = 0
    evaluations: int = 0
    seed: int = 0
    net: object = field(default=None, repr=False, compare=False)  # trained predictor, not serialized

    def to_dict(self, timing: bool = True) -> dict:
        d = {f.name: copy.deepcopy(getattr(self, f.name)) for f in fields(self) if f.name != "net"}
        if not timing:
            d.pop("time_history")
        return d

    def to_json(self, timing: bool = True) -> str:
        return json.dumps(self.to_dict(timing), indent=1)

    @classmethod
    def from_dict(cls, d: dict) -> "TrialResult":
        d = dict(d)
        d.setdefault("time_history", [])
        return cls(**d)


class MultiscaleProblem:
    """Inputs sampled at every scale on a grid that contains the observation times."""

    def __init__(self, model: OdeModel, hierarchy: ScaleHierarchy, obs: ObservationSet,
                 y0, h: float | None = None):
        self.model = model
        self.hierarchy = hierarchy
        self.obs = obs
        self.y0 = np.asarray(y0, dtype=float)
        source = hierarchy.smoothed[0]
        h = source.dt / 4 if h is None else h
        T = float(obs.times[-1])
        if obs.times[0] != 0.0:
            raise ContractError("observations must start at t = 0")
        self.grid = observation_grid(T, len(obs), h)
        self.h = float(self.grid[1] - self.grid[0])
        self.idx = observation_indices(self.grid, obs)
        self.inputs = [input_at_half_steps(s, self.grid) for s in hierarchy.smoothed]

    @property
    def n_scales(self) -> int:
        return len(self.inputs)

    def scale_loss_and_grad(self, n: int, p, with_grad: bool = True):
        return loss_on_samples(self.model, p, self.inputs[n], self.y0, self.h, self.idx,
                               self.obs, with_grad)

    def scale_loss(self, n: int, p) -> float:
        return self.scale_loss_and_grad(n, p, with_grad=False)[0]


def multiscale_loss_and_grads(problem: MultiscaleProblem, chain, penalty: float = 1e6):
    """Total loss sum_n L_{tau_n}(chain[N - n]) and per-chain-entry gradients.

    ``chain`` runs coarse to fine (chain[0] = p at tau_N, chain[N] = p at
    tau_0). Returns (total, cotangents aligned with chain, diverged flags).
    A diverged scale (or one whose loss reaches ``penalty``) contributes
    ``penalty`` and a zero cotangent.
    """
    N = problem.n_scales - 1
    if len(chain) != N + 1:
        raise ContractError(f"chain has {len(chain)} entries, hierarchy has {N + 1} scales")
    total = 0.0
    cotangents = []
    diverged = []
    for k, p in enumerate(chain):
        try:
            L, g = problem.scale_loss_and_grad(N - k, p)
            if not (np.isfinite(L) and L < penalty and np.all(np.isfinite(g))):
                raise DivergenceError(float("nan"))
        except DivergenceError:
            L, g = penalty, np.zeros(problem.model.param_dim)
            diverged.append(True)
        else:
            diverged.append(False)
        total += L
        cotangents.append(g)
    return total, cotangents, diverged


def train(model: OdeModel, input: SampledSignal, obs: ObservationSet, y0,
          config: DepconConfig, truth=None, problem: MultiscaleProblem | None = None) -> TrialResult:
    """Run the predictor-corrector loop until the gradient norm drops to
    ``config.tol`` or ``config.max_iter`` iterations pass."""
    config.validate(model.param_dim)
    lo, hi = config.box
    if problem is None:
        problem = MultiscaleProblem(model, build_hierarchy(input, config.N, config.tau_max),
                                    obs, y0, config.h)
    N = problem.n_scales - 1
    cs = _Coords(config.coords, lo, hi)
    u_lo, u_hi = cs.to_u(lo), cs.to_u(hi)
    rng = np.random.default_rng(config.seed)
    p_N = rng.uniform(lo, hi)
    u_N = cs.to_u(p_N)
    net = init_predictor(int(rng.integers(2**63)), model.param_dim, residual=config.residual)
    n_theta = net.n_params
    lr = np.concatenate([np.full(n_theta, config.lr_theta), np.full(model.param_dim, config.lr_p)])
    adam = AdamState(n_theta + model.param_dim, lr, config.beta1, config.beta2, config.eps_adam)
    params = np.concatenate([net.flat(), u_N])

    result = TrialResult("depcon", [], [], [], [], "max-iter", 0, initial=p_N.tolist(),
                         seed=config.seed)
    start = time.perf_counter()
    for it in range(config.max_iter):
        u_chain, tape = forward_chain(net, u_N, N)
        chain = [cs.to_p(u) for u in u_chain]
        total, cot, diverged = multiscale_loss_and_grads(problem, chain, config.penalty)
        if it == 0 and all(diverged):
            raise InitializationError("every scale diverged at the initial parameters")
        grad_theta, grad_uN = backward_chain(net, tape, [cs.pullback(u, p, g) for u, p, g in zip(u_chain, chain, cot)])
        grad = np.concatenate([grad_theta, grad_uN])
        gnorm = float(np.linalg.norm(grad))
        result.loss_history.append(total)
        result.time_history.append(time.perf_counter() - start)
        result.diverged_scales = max(result.diverged_scales, sum(diverged))
        if it % config.trace_every == 0:
            result.trace_iterations.append(it)
            result.estimate_history.append(np.clip(chain[-1], lo, hi).tolist())
        result.iterations = it + 1
        result.grad_norm = gnorm
        if gnorm <= config.tol:
            result.termination = "tolerance"
            break
        if not np.all(np.isfinite(grad)):
            result.termination = "divergence"
            break
        if config.lr_decay != 1.0:
            adam.lr = lr * config.lr_decay ** (it / config.max_iter)
        params = adam_step(adam, params, grad)
        params[n_theta:] = np.clip(params[n_theta:], u_lo, u_hi)
        net.set_flat(params[:n_theta])
        u_N = params[n_theta:].copy()
    else:
        # report the chain of the final iterate
        chain = [cs.to_p(u) for u in forward_chain(net, u_N, N)[0]]

    reported = [np.clip(p, lo, hi) for p in chain]
    result.chain = [p.tolist() for p in reported]
    result.estimate = reported[-1].tolist()
    result.net = net
    return result


def estimate(model: OdeModel, input: SampledSignal, obs: ObservationSet, y0,
             config: DepconConfig) -> np.ndarray:
    return np.asarray(train(model, input, obs, y0, config).estimate)
