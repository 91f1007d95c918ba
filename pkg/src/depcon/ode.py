"""Fixed-step RK4 integration, forward sensitivities and the data-misfit loss.

Model right-hand sides and Jacobians are numba-compiled functions with the
signature ``f(y, p, s, c, out)``: ``s`` is the scalar input value, ``c`` a
vector of model constants and ``out`` a preallocated result buffer.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from numba import njit

from .errors import ContractError, DivergenceError, DomainError
from .signal import SampledSignal


@dataclass(frozen=True, eq=False)
class OdeModel:
    """dy/dt = F(y, p, S(t)) with analytic Jacobians in y, p and s."""

    name: str
    state_dim: int
    param_dim: int
    rhs: Callable
    jac_y: Callable
    jac_p: Callable
    jac_s: Callable
    constants: np.ndarray = field(default_factory=lambda: np.zeros(1))
    observed: tuple[int, ...] = ()
    state_names: tuple[str, ...] = ()
    param_names: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "constants", np.ascontiguousarray(self.constants, dtype=float))
        if not self.observed:
            object.__setattr__(self, "observed", tuple(range(self.state_dim)))

    def _args(self, y, p, s):
        return (np.ascontiguousarray(y, dtype=float), np.ascontiguousarray(p, dtype=float),
                float(s), self.constants)

    def f(self, y, p, s):
        out = np.empty(self.state_dim)
        self.rhs(*self._args(y, p, s), out)
        return out

    def dfdy(self, y, p, s):
        out = np.empty((self.state_dim, self.state_dim))
        self.jac_y(*self._args(y, p, s), out)
        return out

    def dfdp(self, y, p, s):
        out = np.empty((self.state_dim, self.param_dim))
        self.jac_p(*self._args(y, p, s), out)
        return out

    def dfds(self, y, p, s):
        out = np.empty(self.state_dim)
        self.jac_s(*self._args(y, p, s), out)
        return out


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    sens: np.ndarray | None = None

    @property
    def h(self) -> float:
        return float(self.times[1] - self.times[0])


@dataclass(frozen=True, eq=False)
class ObservationSet:
    """Observed components (``mask``) of the state at times ``times``."""

    times: np.ndarray
    values: np.ndarray
    mask: tuple[int, ...]
    noise_sd: float = 0.0

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values, dtype=float).reshape(times.size, len(self.mask))
        if times.size < 2:
            raise DomainError("need at least 2 observation times")
        if np.any(np.diff(times) <= 0) or times[0] < 0:
            raise DomainError("observation times must be increasing and >= 0")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", tuple(int(m) for m in self.mask))

    def __len__(self):
        return self.times.size


def time_grid(T: float, h: float) -> np.ndarray:
    n = int(round(T / h))
    if n < 1 or not math.isclose(n * h, T, rel_tol=1e-9):
        raise DomainError(f"step {h} does not divide horizon {T}")
    return np.linspace(0.0, T, n + 1)


def observation_grid(T: float, n_obs: int, max_h: float) -> np.ndarray:
    """Largest uniform grid with step <= ``max_h`` that contains the
    ``n_obs`` equally spaced observation times on [0, T]."""
    spacing = T / (n_obs - 1)
    per_obs = max(1, int(math.ceil(spacing / max_h - 1e-12)))
    return np.linspace(0.0, T, (n_obs - 1) * per_obs + 1)


def _check_grid(t_grid) -> tuple[np.ndarray, float]:
    t = np.asarray(t_grid, dtype=float)
    if t.ndim != 1 or t.size < 2:
        raise DomainError("time grid needs at least 2 points")
    h = (t[-1] - t[0]) / (t.size - 1)
    if not h > 0 or np.max(np.abs(np.diff(t) - h)) > 1e-9 * max(1.0, abs(t[-1])):
        raise DomainError("time grid must be uniform and increasing")
    return t, h


def input_at_half_steps(signal: SampledSignal, t_grid) -> np.ndarray:
    """Input values at every grid point and step midpoint (RK4 stage times)."""
    t, h = _check_grid(t_grid)
    half = t[0] + 0.5 * h * np.arange(2 * t.size - 1)
    return np.ascontiguousarray(signal(half), dtype=float)


_KERNELS: dict = {}


def _kernel(model: OdeModel):
    """RK4 kernel specialised to the model's functions (compiled once each).

    Capturing the model functions in a closure lets numba inline them; passing
    them as arguments instead costs about ten times more per step.
    """
    key = (model.rhs, model.jac_y, model.jac_p)
    if key not in _KERNELS:
        _KERNELS[key] = _make_kernel(*key)
    return _KERNELS[key]


def _make_kernel(rhs, jac_y, jac_p):
    @njit
    def kernel(y0, p, c, s_half, h, with_sens):
        n_steps = (s_half.size - 1) // 2
        dy = y0.size
        dp = p.size
        Y = np.empty((n_steps + 1, dy))
        Z = np.zeros((n_steps + 1 if with_sens else 1, dy, dp))
        y = y0.copy()
        z = np.zeros((dy, dp))
        yt = np.empty(dy)
        zt = np.zeros((dy, dp))
        K = np.zeros((4, dy))
        KZ = np.zeros((4, dy, dp))
        Jy = np.empty((dy, dy))
        Jp = np.empty((dy, dp))
        Y[0] = y
        for k in range(n_steps):
            for st in range(4):
                # stage times t, t + h/2, t + h/2, t + h
                a = 0.0 if st == 0 else (h if st == 3 else 0.5 * h)
                prev = st - 1 if st > 0 else 0
                for i in range(dy):
                    yt[i] = y[i] + a * K[prev, i]
                s = s_half[2 * k + (st + 1) // 2]
                rhs(yt, p, s, c, K[st])
                if with_sens:
                    # dZ/dt = F_y Z + F_p at the stage point
                    for i in range(dy):
                        for j in range(dp):
                            zt[i, j] = z[i, j] + a * KZ[prev, i, j]
                    jac_y(yt, p, s, c, Jy)
                    jac_p(yt, p, s, c, Jp)
                    for i in range(dy):
                        for j in range(dp):
                            acc = Jp[i, j]
                            for l in range(dy):
                                acc += Jy[i, l] * zt[l, j]
                            KZ[st, i, j] = acc
            ok = True
            for i in range(dy):
                y[i] += (h / 6.0) * (K[0, i] + 2.0 * K[1, i] + 2.0 * K[2, i] + K[3, i])
                Y[k + 1, i] = y[i]
                if not np.isfinite(y[i]):
                    ok = False
            if with_sens:
                for i in range(dy):
                    for j in range(dp):
                        z[i, j] += (h / 6.0) * (KZ[0, i, j] + 2.0 * KZ[1, i, j]
                                                + 2.0 * KZ[2, i, j] + KZ[3, i, j])
                        Z[k + 1, i, j] = z[i, j]
                        if not np.isfinite(z[i, j]):
                            ok = False
            if not ok:
                return Y, Z, k + 1
        return Y, Z, -1

    return kernel


def _solve(model: OdeModel, p, s_half, y0, t, h, with_sens) -> Trajectory:
    p = np.ascontiguousarray(p, dtype=float)
    y0 = np.ascontiguousarray(y0, dtype=float)
    if p.shape != (model.param_dim,):
        raise ContractError(f"{model.name}: expected {model.param_dim} parameters, got {p.shape}")
    if y0.shape != (model.state_dim,):
        raise ContractError(f"{model.name}: expected state of size {model.state_dim}")
    Y, Z, bad = _kernel(model)(y0, p, model.constants, s_half, h, with_sens)
    if bad >= 0:
        raise DivergenceError(t[bad])
    return Trajectory(t, Y, Z if with_sens else None)


def integrate(model: OdeModel, p, input: SampledSignal, y0, t_grid) -> Trajectory:
    """RK4 trajectory of the model on the uniform grid ``t_grid``."""
    t, h = _check_grid(t_grid)
    return _solve(model, p, input_at_half_steps(input, t), y0, t, h, False)


def integrate_with_sensitivity(model: OdeModel, p, input: SampledSignal, y0, t_grid) -> Trajectory:
    """RK4 on the state augmented with Z = dy/dp, where
    dZ/dt = F_y Z + F_p and Z(0) = 0."""
    t, h = _check_grid(t_grid)
    return _solve(model, p, input_at_half_steps(input, t), y0, t, h, True)


def solve_on_samples(model: OdeModel, p, s_half, y0, t_grid, with_sens=True) -> Trajectory:
    """Like the integrators above, with the input already sampled at half steps.

    Used by the training loops, which integrate the same inputs many times.
    """
    t, h = _check_grid(t_grid)
    if s_half.size != 2 * t.size - 1:
        raise ContractError("input samples do not match the time grid")
    return _solve(model, p, s_half, y0, t, h, with_sens)


@njit(cache=True)
def _misfit(Y, Z, idx, mask, values, with_grad):
    # (1/N_o) sum |r|^2 and (2/N_o) sum Z^T r over observed components
    n_obs = idx.size
    dp = Z.shape[2]
    L = 0.0
    g = np.zeros(dp)
    for i in range(n_obs):
        k = idx[i]
        for m in range(mask.size):
            r = Y[k, mask[m]] - values[i, m]
            L += r * r
            if with_grad:
                for j in range(dp):
                    g[j] += 2.0 * Z[k, mask[m], j] * r
    return L / n_obs, g / n_obs


def loss_on_samples(model: OdeModel, p, s_half, y0, h: float, idx, obs: ObservationSet,
                    with_grad: bool = True):
    """Loss (and gradient) for an input pre-sampled at half steps.

    The fast path used inside training loops; raises DivergenceError like
    ``integrate``.
    """
    p = np.ascontiguousarray(p, dtype=float)
    Y, Z, bad = _kernel(model)(y0, p, model.constants, s_half, h, with_grad)
    if bad >= 0:
        raise DivergenceError(bad * h)
    mask = np.asarray(obs.mask, dtype=np.int64)
    L, g = _misfit(Y, Z, idx, mask, obs.values, with_grad)
    return L, (g if with_grad else None)


def observation_indices(times, obs: ObservationSet) -> np.ndarray:
    t, h = _check_grid(times)
    u = (obs.times - t[0]) / h
    idx = np.rint(u).astype(np.int64)
    if np.any(idx < 0) or np.any(idx >= t.size) or np.any(np.abs(u - idx) > 1e-6):
        raise DomainError("observation times are not on the trajectory grid")
    return idx


def residuals(traj: Trajectory, obs: ObservationSet, idx=None) -> np.ndarray:
    """Model minus data at the observation times, shape (N_o, len(mask))."""
    if idx is None:
        idx = observation_indices(traj.times, obs)
    return traj.states[np.ix_(idx, obs.mask)] - obs.values


def loss(traj: Trajectory, obs: ObservationSet, idx=None) -> float:
    """Mean over observation times of the squared residual norm."""
    r = residuals(traj, obs, idx)
    return float(np.sum(r * r)) / len(obs)


def residual_jacobian(traj: Trajectory, obs: ObservationSet, idx=None) -> np.ndarray:
    """d residuals / dp, shape (N_o * len(mask), d_p), rows ordered like
    ``residuals(...).ravel()``."""
    if traj.sens is None:
        raise ContractError("trajectory carries no sensitivities")
    if idx is None:
        idx = observation_indices(traj.times, obs)
    Z = traj.sens[idx][:, obs.mask, :]
    return Z.reshape(-1, Z.shape[-1])


def loss_gradient(traj: Trajectory, obs: ObservationSet, idx=None) -> np.ndarray:
    """(2/N_o) sum_i Z(t_i)^T (y(t_i) - y_o(t_i)) over observed components."""
    if traj.sens is None:
        raise ContractError("loss_gradient needs a trajectory with sensitivities")
    if idx is None:
        idx = observation_indices(traj.times, obs)
    r = residuals(traj, obs, idx).ravel()
    J = residual_jacobian(traj, obs, idx)
    return (2.0 / len(obs)) * (J.T @ r)


def check_jacobians(model: OdeModel, n_points: int = 50, seed: int = 0,
                    y_scale=1.0, p_center=None, s_range=(0.0, 1.0),
                    step: float = 1e-6, rtol: float = 1e-5) -> float:
    """Compare analytic Jacobians with central differences at random points.

    Returns the worst relative error; raises ContractError above ``rtol``.
    """
    rng = np.random.default_rng(seed)
    p_center = np.ones(model.param_dim) if p_center is None else np.asarray(p_center, float)
    worst = 0.0
    for _ in range(n_points):
        y = rng.uniform(-1, 1, model.state_dim) * y_scale
        p = p_center * rng.uniform(0.5, 1.5, model.param_dim)
        s = rng.uniform(*s_range)
        pairs = (
            (model.dfdy(y, p, s), _fd(lambda v: model.f(v, p, s), y, step)),
            (model.dfdp(y, p, s), _fd(lambda v: model.f(y, v, s), p, step)),
            (model.dfds(y, p, s).reshape(-1, 1),
             _fd(lambda v: model.f(y, p, v[0]), np.array([s]), step)),
        )
        for analytic, numeric in pairs:
            scale = max(np.max(np.abs(numeric)), 1.0)
            worst = max(worst, float(np.max(np.abs(analytic - numeric))) / scale)
    if worst > rtol:
        raise ContractError(f"{model.name}: Jacobian mismatch {worst:.3g} > {rtol:g}")
    return worst


def _fd(fn, x, step):
    x = np.asarray(x, dtype=float)
    cols = []
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = step * max(1.0, abs(x[j]))
        cols.append((fn(x + e) - fn(x - e)) / (2 * e[j]))
    return np.stack(cols, axis=-1)


def save_trajectory_csv(traj: Trajectory, path) -> None:
    dy = traj.states.shape[1]
    header = ["t"] + [f"y{i + 1}" for i in range(dy)]
    cols = [traj.times[:, None], traj.states]
    if traj.sens is not None:
        dp = traj.sens.shape[2]
        header += [f"z{j + 1}{k + 1}" for j in range(dy) for k in range(dp)]
        cols.append(traj.sens.reshape(traj.times.size, -1))
    _write_table(path, header, np.hstack(cols))


def save_observations_csv(obs: ObservationSet, path) -> None:
    header = ["t"] + [f"y{m + 1}" for m in obs.mask]
    _write_table(path, header, np.hstack([obs.times[:, None], obs.values]))


def load_observations_csv(path, noise_sd: float = 0.0) -> ObservationSet:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], [r for r in rows[1:] if r]
    data = np.array(body, dtype=float)
    mask = tuple(int(name[1:]) - 1 for name in header[1:])
    return ObservationSet(data[:, 0], data[:, 1:], mask, noise_sd)


def _write_table(path, header: Sequence[str], data: np.ndarray) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in data:
            w.writerow([repr(float(v)) for v in row])
