"""Predictor MLP, reverse-mode gradients through its repeated application, Adam."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError

HIDDEN = (64, 32, 16)
_MAGIC = b"PNET"


@dataclass(eq=False)
class PredictorNet:
    """Fully connected ReLU network d_p -> 64 -> 32 -> 16 -> d_p.

    ``weights[l]`` has shape (out, in); the last layer is linear.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    residual: bool = False  # output = input + MLP(input)

    def __post_init__(self):
        if len(self.weights) != len(self.biases):
            raise ContractError("one bias per weight matrix")
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape[0] != b.shape[0]:
                raise ContractError(f"layer {l}: bias does not match weight rows")
            if l and W.shape[1] != self.weights[l - 1].shape[0]:
                raise ContractError(f"layer {l}: input size mismatch")

    @property
    def sizes(self) -> tuple[int, ...]:
        return (self.weights[0].shape[1],) + tuple(W.shape[0] for W in self.weights)

    @property
    def n_params(self) -> int:
        return sum(W.size + b.size for W, b in zip(self.weights, self.biases))

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for W, b in zip(self.weights, self.biases) for a in (W, b)])

    def set_flat(self, theta: np.ndarray) -> None:
        if theta.size != self.n_params:
            raise ContractError("flat parameter vector has the wrong length")
        i = 0
        for W, b in zip(self.weights, self.biases):
            W[...] = theta[i:i + W.size].reshape(W.shape)
            i += W.size
            b[...] = theta[i:i + b.size]
            i += b.size

    def copy(self) -> "PredictorNet":
        return PredictorNet([W.copy() for W in self.weights], [b.copy() for b in self.biases],
                            self.residual)

    def save(self, path) -> None:
        sizes = self.sizes
        header = _MAGIC + struct.pack(f"<II{len(sizes)}I", int(self.residual), len(sizes), *sizes)
        Path(path).write_bytes(header + self.flat().astype("<f8").tobytes())

    @classmethod
    def load(cls, path) -> "PredictorNet":
        raw = Path(path).read_bytes()
        if raw[:4] != _MAGIC:
            raise ContractError(f"{path}: not a predictor checkpoint")
        residual, n = struct.unpack_from("<II", raw, 4)
        sizes = struct.unpack_from(f"<{n}I", raw, 12)
        theta = np.frombuffer(raw, dtype="<f8", offset=12 + 4 * n).astype(float)
        net = cls([np.zeros((o, i)) for i, o in zip(sizes[:-1], sizes[1:])],
                  [np.zeros(o) for o in sizes[1:]], bool(residual))
        net.set_flat(theta)
        return net


@dataclass
class ChainTape:
    """Inputs and pre-activations of every predictor application in a chain."""

    inputs: list[np.ndarray] = field(default_factory=list)
    preacts: list[list[np.ndarray]] = field(default_factory=list)
    sizes: tuple[int, ...] = ()

    def __len__(self):
        return len(self.inputs)


def init_predictor(seed: int, d_p: int, hidden=HIDDEN, output_scale: float = 0.01,
                   residual: bool = False) -> PredictorNet:
    """Kaiming-uniform weights, zero biases, output layer shrunk by ``output_scale``."""
    rng = np.random.default_rng(seed)
    sizes = (d_p,) + tuple(hidden) + (d_p,)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, (fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    weights[-1] *= output_scale
    return PredictorNet(weights, biases, residual)


def _forward(net: PredictorNet, p: np.ndarray):
    a = p
    zs = []
    last = len(net.weights) - 1
    for l, (W, b) in enumerate(zip(net.weights, net.biases)):
        z = W @ a + b
        zs.append(z)
        a = z if l == last else np.maximum(z, 0.0)
    if net.residual:
        a = a + p
    return a, zs


def forward(net: PredictorNet, p) -> np.ndarray:
    """One predictor application: parameters at scale n -> scale n-1."""
    return _forward(net, np.asarray(p, dtype=float))[0]


def forward_chain(net: PredictorNet, p_N, N: int):
    """Apply the predictor N times starting from ``p_N``.

    Returns the chain [p_N, f(p_N), ..., f^N(p_N)] and a tape for
    ``backward_chain``.
    """
    if N < 1:
        raise ContractError("N must be >= 1")
    chain = [np.asarray(p_N, dtype=float).copy()]
    tape = ChainTape(sizes=net.sizes)
    for _ in range(N):
        out, zs = _forward(net, chain[-1])
        tape.inputs.append(chain[-1])
        tape.preacts.append(zs)
        chain.append(out)
    return chain, tape


def replay(net: PredictorNet, tape: ChainTape) -> list[np.ndarray]:
    """Recompute the chain from the inputs recorded on the tape."""
    return [tape.inputs[0]] + [_forward(net, x)[0] for x in tape.inputs]


def _vjp(net: PredictorNet, x, zs, g):
    """Pull cotangent ``g`` of one application back to (dW, db) and dx."""
    dWs, dbs = [None] * len(net.weights), [None] * len(net.weights)
    last = len(net.weights) - 1
    skip = g if net.residual else 0.0
    for l in range(last, -1, -1):
        if l != last:
            g = g * (zs[l] > 0.0)
        a_in = x if l == 0 else np.maximum(zs[l - 1], 0.0)
        dWs[l] = np.outer(g, a_in)
        dbs[l] = g
        g = net.weights[l].T @ g
    return dWs, dbs, g + skip


def backward_chain(net: PredictorNet, tape: ChainTape, cotangents):
    """Gradient of sum_n <cotangents[n], chain[n]> w.r.t. the flattened
    network parameters and the chain's first entry p_N."""
    if tape.sizes != net.sizes:
        raise ContractError("tape was recorded with a different network")
    N = len(tape)
    if len(cotangents) != N + 1:
        raise ContractError(f"expected {N + 1} cotangents, got {len(cotangents)}")
    dW = [np.zeros_like(W) for W in net.weights]
    db = [np.zeros_like(b) for b in net.biases]
    g = np.asarray(cotangents[N], dtype=float)
    for k in range(N, 0, -1):
        dWk, dbk, gx = _vjp(net, tape.inputs[k - 1], tape.preacts[k - 1], g)
        for l in range(len(dW)):
            dW[l] += dWk[l]
            db[l] += dbk[l]
        g = np.asarray(cotangents[k - 1], dtype=float) + gx
    grad_theta = np.concatenate([a.ravel() for W, b in zip(dW, db) for a in (W, b)])
    return grad_theta, g


@dataclass
class AdamState:
    """Bias-corrected Adam. ``lr`` may be a scalar or one rate per parameter."""

    size: int
    lr: float | np.ndarray = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: np.ndarray = None
    v: np.ndarray = None

    def __post_init__(self):
        if self.m is None:
            self.m = np.zeros(self.size)
        if self.v is None:
            self.v = np.zeros(self.size)
        if self.m.shape != (self.size,) or self.v.shape != (self.size,):
            raise ContractError("moment vectors do not match the parameter count")


def adam_step(state: AdamState, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """Return updated parameters; advances ``state`` in place."""
    params = np.asarray(params, dtype=float)
    grad = np.asarray(grad, dtype=float)
    if params.shape != (state.size,) or grad.shape != (state.size,):
        raise ContractError("params/grad length does not match the optimizer state")
    state.step += 1
    state.m = state.beta1 * state.m + (1 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1 - state.beta2) * grad * grad
    m_hat = state.m / (1 - state.beta1 ** state.step)
    v_hat = state.v / (1 - state.beta2 ** state.step)
    return params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
