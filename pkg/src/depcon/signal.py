"""Sampled exogenous inputs and their heat-kernel smoothing hierarchy."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError, DomainError

# kernel support in standard deviations; sigma = sqrt(2 tau)
TRUNCATION_SIGMAS = 6.0


@dataclass(frozen=True, eq=False)
class SampledSignal:
    """Scalar signal on a uniform grid, zero outside its sampled range.

    ``tau`` is the diffusion time the signal was smoothed with (0 for a raw
    input). Between samples the signal is held at the previous sample, at
    every scale, so a smoothed signal tends to the raw one as tau -> 0.
    """

    t0: float
    dt: float
    values: np.ndarray
    tau: float = 0.0

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 1 or values.size < 2:
            raise DomainError("a signal needs at least 2 samples")
        if not self.dt > 0:
            raise DomainError(f"dt must be positive, got {self.dt}")
        if not np.all(np.isfinite(values)):
            raise DomainError("signal values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "t0", float(self.t0))
        object.__setattr__(self, "dt", float(self.dt))

    def __len__(self):
        return self.values.size

    @property
    def t_end(self) -> float:
        return self.t0 + (self.values.size - 1) * self.dt

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.values.size)

    def same_grid(self, other: "SampledSignal") -> bool:
        return (
            self.values.size == other.values.size
            and math.isclose(self.t0, other.t0, rel_tol=1e-12, abs_tol=1e-12)
            and math.isclose(self.dt, other.dt, rel_tol=1e-12)
        )

    def __call__(self, t, mode: str | None = None):
        """Evaluate at time(s) ``t``.

        mode is ``"left"`` (previous sample, the default) or ``"linear"``.
        """
        if mode is None:
            mode = "left"
        t = np.asarray(t, dtype=float)
        u = (t - self.t0) / self.dt
        n = self.values.size
        inside = (u >= -1e-9) & (u <= n - 1 + 1e-9)
        if mode == "left":
            idx = np.clip(np.floor(u + 1e-9).astype(np.int64), 0, n - 1)
            out = np.where(inside, self.values[idx], 0.0)
        elif mode == "linear":
            out = np.interp(t, self.times, self.values, left=0.0, right=0.0)
            out = np.where(inside, out, 0.0)
        else:
            raise DomainError(f"unknown interpolation mode {mode!r}")
        return out if out.ndim else float(out)


@dataclass(frozen=True, eq=False)
class ScaleHierarchy:
    tau_max: float
    N: int
    scales: np.ndarray
    smoothed: tuple[SampledSignal, ...] = field(repr=False)

    def __len__(self):
        return len(self.smoothed)


def heat_kernel(tau: float, t):
    """Heat kernel (4 pi tau)^(-1/2) exp(-t^2 / (4 tau))."""
    if not tau > 0:
        raise DomainError(f"heat kernel needs tau > 0, got {tau}")
    t = np.asarray(t, dtype=float)
    out = np.exp(-t * t / (4.0 * tau)) / math.sqrt(4.0 * math.pi * tau)
    return out if out.ndim else float(out)


def kernel_weights(tau: float, dt: float) -> np.ndarray:
    """Truncated heat-kernel weights on a grid of spacing ``dt``, unit sum."""
    half = int(math.floor(TRUNCATION_SIGMAS * math.sqrt(2.0 * tau) / dt))
    k = np.arange(-half, half + 1)
    w = heat_kernel(tau, k * dt)
    return w / w.sum()


def smooth(source: SampledSignal, tau: float) -> SampledSignal:
    """Convolve the zero-extended ``source`` with the heat kernel.

    The convolution integral over [t0, t_end] is discretised with the
    trapezoid rule, so the two end samples carry half weight.
    """
    if tau < 0 or not math.isfinite(tau):
        raise DomainError(f"tau must be >= 0, got {tau}")
    if tau == 0:
        return SampledSignal(source.t0, source.dt, source.values.copy(), 0.0)
    w = kernel_weights(tau, source.dt)
    half = (w.size - 1) // 2
    x = source.values.copy()
    x[0] *= 0.5
    x[-1] *= 0.5
    full = np.convolve(x, w)
    out = full[half:half + x.size]
    return SampledSignal(source.t0, source.dt, out, float(tau))


def build_hierarchy(source: SampledSignal, N: int, tau_max: float = 1.0) -> ScaleHierarchy:
    if int(N) != N or N < 1:
        raise DomainError(f"N must be an integer >= 1, got {N}")
    if not tau_max > 0:
        raise DomainError(f"tau_max must be > 0, got {tau_max}")
    N = int(N)
    scales = tau_max * np.arange(N + 1) / N
    smoothed = (source,) + tuple(smooth(source, float(tau)) for tau in scales[1:])
    return ScaleHierarchy(float(tau_max), N, scales, smoothed)


def l2_distance(a: SampledSignal, b: SampledSignal) -> float:
    """Trapezoidal L2 norm of ``a - b`` over the shared grid."""
    if not a.same_grid(b):
        raise DomainError("signals live on different grids")
    d = a.values - b.values
    return math.sqrt(float(np.trapezoid(d * d, dx=a.dt)))


def l2_norm(a: SampledSignal) -> float:
    return math.sqrt(float(np.trapezoid(a.values * a.values, dx=a.dt)))


def kernel_l2_norm(tau: float, points: int = 20001) -> float:
    """L2 norm of the heat kernel over the real line, by quadrature."""
    half_width = 12.0 * math.sqrt(2.0 * tau)
    t = np.linspace(-half_width, half_width, points)
    k = heat_kernel(tau, t)
    return math.sqrt(float(np.trapezoid(k * k, t)))


def load_signal_csv(path, rtol: float = 1e-9) -> SampledSignal:
    """Read a two-column ``time,value`` CSV with a one-line header."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 3:
        raise DomainError(f"{path}: need a header and at least 2 samples")
    data = np.array([[float(r[0]), float(r[1])] for r in rows[1:] if r], dtype=float)
    t = data[:, 0]
    steps = np.diff(t)
    dt = (t[-1] - t[0]) / (t.size - 1)
    if not dt > 0 or np.max(np.abs(steps - dt)) > rtol * dt:
        raise ContractError(f"{path}: time column is not uniformly spaced")
    return SampledSignal(t[0], dt, data[:, 1])


def save_signal_csv(signal: SampledSignal, path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time", "value"])
        for t, v in zip(signal.times, signal.values):
            w.writerow([repr(float(t)), repr(float(v))])
