"""Benchmark systems, synthetic inputs and synthetic observations.

Two benchmarks (a forced Lotka-Volterra system and a light-driven
circadian pacemaker) plus three scalar models used as test oracles.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import DomainError
from .ode import ObservationSet, OdeModel, integrate, observation_grid, observation_indices
from .signal import SampledSignal

LV_TRUE = np.array([2.0, 0.5, 1.0, 1.0])
LV_Y0 = np.array([1.0, 2.0])
CIRCADIAN_TRUE = np.array([24.0, 0.23, 20.0, 0.55])
CIRCADIAN_Y0 = np.array([0.5, 1.0, 0.0])
# alpha0, beta, S0, q
CIRCADIAN_CONSTANTS = np.array([0.05, 0.0075, 9500.0, 0.5])


# Lotka-Volterra with opposing forcing: +S on prey, -S on predator.

@njit(cache=True)
def _lv_rhs(y, p, s, c, out):
    out[0] = p[0] * y[0] - p[1] * y[0] * y[1] + s
    out[1] = -p[2] * y[1] + p[3] * y[0] * y[1] - s


@njit(cache=True)
def _lv_jac_y(y, p, s, c, out):
    out[0, 0] = p[0] - p[1] * y[1]
    out[0, 1] = -p[1] * y[0]
    out[1, 0] = p[3] * y[1]
    out[1, 1] = -p[2] + p[3] * y[0]


@njit(cache=True)
def _lv_jac_p(y, p, s, c, out):
    out[:, :] = 0.0
    out[0, 0] = y[0]
    out[0, 1] = -y[0] * y[1]
    out[1, 2] = -y[1]
    out[1, 3] = y[0] * y[1]


@njit(cache=True)
def _lv_jac_s(y, p, s, c, out):
    out[0] = 1.0
    out[1] = -1.0


def lv_model() -> OdeModel:
    return OdeModel("lotka-volterra", 2, 4, _lv_rhs, _lv_jac_y, _lv_jac_p, _lv_jac_s,
                    np.zeros(1), (0, 1), ("prey", "predator"), ("p1", "p2", "p3", "p4"))


# Circadian pacemaker: photoreceptor state n drives the van der Pol-type
# oscillator (y1, y2). State order (n, y1, y2); p = (tau_c, gamma, G, k).

_OMEGA = math.pi / 12.0


@njit(cache=True)
def _drive(s, c):
    # alpha(S) = alpha0 (S/S0)^q and its derivative; zero for S <= 0
    if s <= 0.0:
        return 0.0, 0.0
    a = c[0] * (s / c[2]) ** c[3]
    return a, a * c[3] / s


@njit(cache=True)
def _circ_rhs(y, p, s, c, out):
    n, x, xc = y[0], y[1], y[2]
    a, _ = _drive(s, c)
    B = p[2] * a * (1.0 - n) * (1.0 - 0.4 * x) * (1.0 - 0.4 * xc)
    w = (24.0 / (0.99669 * p[0])) ** 2
    out[0] = 60.0 * (a * (1.0 - n) - c[1] * n)
    out[1] = _OMEGA * (xc + B)
    out[2] = _OMEGA * (p[1] * (xc - 4.0 * xc ** 3 / 3.0) - x * (w + p[3] * B))


@njit(cache=True)
def _circ_jac_y(y, p, s, c, out):
    n, x, xc = y[0], y[1], y[2]
    a, _ = _drive(s, c)
    A = (1.0 - 0.4 * x) * (1.0 - 0.4 * xc)
    B = p[2] * a * (1.0 - n) * A
    dB_dn = -p[2] * a * A
    dB_dx = -0.4 * p[2] * a * (1.0 - n) * (1.0 - 0.4 * xc)
    dB_dxc = -0.4 * p[2] * a * (1.0 - n) * (1.0 - 0.4 * x)
    w = (24.0 / (0.99669 * p[0])) ** 2
    out[0, 0] = -60.0 * (a + c[1])
    out[0, 1] = 0.0
    out[0, 2] = 0.0
    out[1, 0] = _OMEGA * dB_dn
    out[1, 1] = _OMEGA * dB_dx
    out[1, 2] = _OMEGA * (1.0 + dB_dxc)
    out[2, 0] = -_OMEGA * x * p[3] * dB_dn
    out[2, 1] = -_OMEGA * (w + p[3] * B + x * p[3] * dB_dx)
    out[2, 2] = _OMEGA * (p[1] * (1.0 - 4.0 * xc * xc) - x * p[3] * dB_dxc)


@njit(cache=True)
def _circ_jac_p(y, p, s, c, out):
    n, x, xc = y[0], y[1], y[2]
    a, _ = _drive(s, c)
    drive = a * (1.0 - n) * (1.0 - 0.4 * x) * (1.0 - 0.4 * xc)
    w = (24.0 / (0.99669 * p[0])) ** 2
    out[:, :] = 0.0
    out[1, 2] = _OMEGA * drive
    out[2, 0] = _OMEGA * x * 2.0 * w / p[0]
    out[2, 1] = _OMEGA * (xc - 4.0 * xc ** 3 / 3.0)
    out[2, 2] = -_OMEGA * x * p[3] * drive
    out[2, 3] = -_OMEGA * x * p[2] * drive


@njit(cache=True)
def _circ_jac_s(y, p, s, c, out):
    n, x, xc = y[0], y[1], y[2]
    _, da = _drive(s, c)
    dB = p[2] * da * (1.0 - n) * (1.0 - 0.4 * x) * (1.0 - 0.4 * xc)
    out[0] = 60.0 * da * (1.0 - n)
    out[1] = _OMEGA * dB
    out[2] = -_OMEGA * x * p[3] * dB


def circadian_model(constants=None) -> OdeModel:
    """Light-driven circadian pacemaker; only (y1, y2) are observed.

    ``constants`` overrides (alpha0, beta, S0, q) of the photic drive.
    """
    c = CIRCADIAN_CONSTANTS if constants is None else np.asarray(constants, float)
    return OdeModel("circadian", 3, 4, _circ_rhs, _circ_jac_y, _circ_jac_p, _circ_jac_s,
                    c.copy(), (1, 2), ("n", "y1", "y2"), ("tau_c", "gamma", "G", "k"))


# Scalar test models.

@njit(cache=True)
def _growth_rhs(y, p, s, c, out):
    out[0] = p[0] * y[0]


@njit(cache=True)
def _growth_jac_y(y, p, s, c, out):
    out[0, 0] = p[0]


@njit(cache=True)
def _growth_jac_p(y, p, s, c, out):
    out[0, 0] = y[0]


@njit(cache=True)
def _relax_rhs(y, p, s, c, out):
    out[0] = -p[0] * y[0] + s


@njit(cache=True)
def _relax_jac_y(y, p, s, c, out):
    out[0, 0] = -p[0]


@njit(cache=True)
def _relax_jac_p(y, p, s, c, out):
    out[0, 0] = -y[0]


@njit(cache=True)
def _integrator_rhs(y, p, s, c, out):
    out[0] = s


@njit(cache=True)
def _zero_matrix(y, p, s, c, out):
    out[:, :] = 0.0


@njit(cache=True)
def _zero_vector(y, p, s, c, out):
    out[:] = 0.0


@njit(cache=True)
def _unit_vector(y, p, s, c, out):
    out[:] = 1.0


def growth_model() -> OdeModel:
    """dy/dt = p y."""
    return OdeModel("growth", 1, 1, _growth_rhs, _growth_jac_y, _growth_jac_p, _zero_vector)


def relaxation_model() -> OdeModel:
    """dy/dt = -p y + S."""
    return OdeModel("relaxation", 1, 1, _relax_rhs, _relax_jac_y, _relax_jac_p, _unit_vector)


def integrator_model() -> OdeModel:
    """dy/dt = S; the single parameter is ignored."""
    return OdeModel("integrator", 1, 1, _integrator_rhs, _zero_matrix, _zero_matrix, _unit_vector)


MODELS = {"lotka-volterra": lv_model, "circadian": circadian_model}


# Synthetic inputs.

@dataclass(frozen=True)
class LightSchedule:
    """Square-wave light: ``lux`` for the first ``on_fraction`` of every
    period (shifted by ``phase``). A seed adds a per-period onset jitter
    drawn uniformly from [-jitter, jitter] hours."""

    period: float = 24.0
    on_fraction: float = 0.5
    lux: float = 250.0
    phase: float = 0.0
    seed: int | None = None
    jitter: float = 1.0

    def __post_init__(self):
        if not 0 < self.on_fraction < 1:
            raise DomainError("on_fraction must lie in (0, 1)")
        if self.lux < 0:
            raise DomainError("lux must be >= 0")
        if not self.period > 0:
            raise DomainError("period must be > 0")


def make_light_schedule(sched: LightSchedule, T: float, dt: float) -> SampledSignal:
    if not T > 0:
        raise DomainError("T must be > 0")
    n = int(round(T / dt)) + 1
    t = dt * np.arange(n)
    n_periods = int(math.ceil(T / sched.period)) + 1
    onsets = sched.phase + sched.period * np.arange(-1, n_periods)
    if sched.seed is not None:
        rng = np.random.default_rng(sched.seed)
        onsets = onsets + rng.uniform(-sched.jitter, sched.jitter, onsets.size)
    width = sched.on_fraction * sched.period
    values = np.zeros(n)
    eps = 1e-9 * dt
    for start in onsets:
        values[(t >= start - eps) & (t < start + width - eps)] = sched.lux
    # the last sample would govern [T, T + dt); keep the value in force before T
    values[-1] = values[-2]
    return SampledSignal(0.0, dt, values)


def make_pulse_train(T: float, dt: float, n_pulses: int = 6, width: float = 0.5,
                     amplitude: float = 1.0, seed: int = 0) -> SampledSignal:
    """Rectangular pulses of fixed width at random, non-overlapping onsets."""
    rng = np.random.default_rng(seed)
    n = int(round(T / dt)) + 1
    t = dt * np.arange(n)
    # n_pulses slots of equal length; one pulse at a random offset per slot
    slot = T / n_pulses
    if slot <= width:
        raise DomainError("pulses do not fit in the horizon")
    onsets = slot * np.arange(n_pulses) + rng.uniform(0.0, slot - width, n_pulses)
    onsets = np.round(onsets / dt) * dt
    values = np.zeros(n)
    eps = 1e-9 * dt
    for start in onsets:
        values[(t >= start - eps) & (t < start + width - eps)] = amplitude
    return SampledSignal(0.0, dt, values)


def generate_observations(model: OdeModel, true_p, input: SampledSignal, y0, T: float,
                          n_obs: int, noise_sd: float = 0.0, seed: int = 0,
                          max_h: float | None = None) -> ObservationSet:
    """Sample ``n_obs`` equally spaced observations of the masked states.

    The integration grid is the finest one with step <= ``max_h`` (default a
    quarter of the input spacing) that contains every observation time.
    """
    if n_obs < 2:
        raise DomainError("need at least 2 observations")
    max_h = input.dt / 4 if max_h is None else max_h
    grid = observation_grid(T, n_obs, max_h)
    traj = integrate(model, true_p, input, y0, grid)
    times = np.linspace(0.0, T, n_obs)
    obs = ObservationSet(times, np.zeros((n_obs, len(model.observed))), model.observed, noise_sd)
    values = traj.states[np.ix_(observation_indices(grid, obs), model.observed)]
    if noise_sd > 0:
        values = values + np.random.default_rng(seed).normal(0.0, noise_sd, values.shape)
    return ObservationSet(times, values, model.observed, noise_sd)
