"""Multilayer perceptron pitch controller trained by full-batch backpropagation.

Hidden units compute ``sgm(W y_prev - threshold)``; the output layer is linear.
Training minimises the summed squared error

    eps = sum_n sum_j (target_nj - y_nj)^2

with the update ``W += alpha * sum_n delta_n y_n`` where the output error term
is ``target - y`` and hidden terms are propagated through ``sgm'``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .netio import Scaler, TrainingDivergedError, dump_network
from .refgen import ReferenceDataset

MLP_INPUTS = ("v", "p_pu")


def sigmoid(x):
    """Logistic function, evaluated without overflow for large ``|x|``."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


@dataclass
class MlpNetwork:
    layer_sizes: tuple[int, ...]
    weights: list[np.ndarray]  # weights[k] has shape (N_{k+1}, N_k)
    thresholds: list[np.ndarray]  # thresholds[k] has shape (N_{k+1},)
    in_scaler: Scaler = field(default_factory=lambda: Scaler.for_inputs(MLP_INPUTS))
    out_scaler: Scaler = field(default_factory=Scaler.for_pitch)
    input_names: tuple[str, ...] = MLP_INPUTS

    def __post_init__(self):
        self.layer_sizes = tuple(int(n) for n in self.layer_sizes)
        if len(self.layer_sizes) < 2 or min(self.layer_sizes) < 1:
            raise ValueError("need at least input and output layers of positive size")
        if len(self.weights) != len(self.layer_sizes) - 1 or len(self.thresholds) != len(self.weights):
            raise ValueError("one weight matrix and threshold vector per layer transition")
        for k, (w, th) in enumerate(zip(self.weights, self.thresholds)):
            shape = (self.layer_sizes[k + 1], self.layer_sizes[k])
            if w.shape != shape or th.shape != (shape[0],):
                raise ValueError(f"layer {k}: expected weights {shape}, got {w.shape}")

    @classmethod
    def initialise(cls, layer_sizes=(2, 5, 1), init_scale: float = 0.5, seed: int = 0, **kw) -> "MlpNetwork":
        rng = np.random.Generator(np.random.PCG64(seed))
        weights, thresholds = [], []
        for n_in, n_out in zip(layer_sizes[:-1], layer_sizes[1:]):
            weights.append(rng.uniform(-init_scale, init_scale, size=(n_out, n_in)))
            thresholds.append(rng.uniform(-init_scale, init_scale, size=n_out))
        return cls(tuple(layer_sizes), weights, thresholds, **kw)

    def copy(self) -> "MlpNetwork":
        return MlpNetwork(
            self.layer_sizes,
            [w.copy() for w in self.weights],
            [t.copy() for t in self.thresholds],
            self.in_scaler,
            self.out_scaler,
            self.input_names,
        )

    def params_flat(self) -> np.ndarray:
        parts = []
        for w, th in zip(self.weights, self.thresholds):
            parts += [w.ravel(), th.ravel()]
        return np.concatenate(parts)

    def set_params_flat(self, flat: np.ndarray) -> None:
        pos = 0
        for w, th in zip(self.weights, self.thresholds):
            w[...] = flat[pos : pos + w.size].reshape(w.shape)
            pos += w.size
            th[...] = flat[pos : pos + th.size]
            pos += th.size

    def to_dict(self) -> dict:
        return {
            "kind": "mlp",
            "layer_sizes": list(self.layer_sizes),
            "input_names": list(self.input_names),
            "input_scaling": self.in_scaler.to_dict(),
            "output_scaling": self.out_scaler.to_dict(),
            "hidden_activation": "sigmoid",
            "output_activation": "identity",
            "weights": [w.ravel().tolist() for w in self.weights],
            "thresholds": [t.tolist() for t in self.thresholds],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MlpNetwork":
        sizes = tuple(d["layer_sizes"])
        weights = [
            np.array(w, dtype=float).reshape(n_out, n_in)
            for w, n_in, n_out in zip(d["weights"], sizes[:-1], sizes[1:])
        ]
        thresholds = [np.array(t, dtype=float) for t in d["thresholds"]]
        return cls(
            sizes,
            weights,
            thresholds,
            Scaler.from_dict(d["input_scaling"]),
            Scaler.from_dict(d["output_scaling"]),
            tuple(d["input_names"]),
        )

    def save(self, path: str | Path) -> Path:
        return dump_network(self.to_dict(), path)


@dataclass(frozen=True)
class MlpTrainConfig:
    learning_rate: float = 0.03
    max_epochs: int = 20000
    target_error: float = 1e-6  # per sample, in normalised output units
    seed: int = 0
    init_scale: float = 0.5

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if not self.target_error > 0:
            raise ValueError("target_error must be positive")


def forward(net: MlpNetwork, x) -> tuple[np.ndarray, list[np.ndarray]]:
    """Propagate normalised inputs.

    ``x`` is one sample of shape ``(N_0,)`` or a batch ``(I, N_0)``. Returns the
    output and the activations of every layer (input first).
    """
    y = np.asarray(x, dtype=float)
    if y.shape[-1] != net.layer_sizes[0]:
        raise ValueError(f"expected {net.layer_sizes[0]} inputs, got {y.shape[-1]}")
    acts = [y]
    last = len(net.weights) - 1
    for k, (w, th) in enumerate(zip(net.weights, net.thresholds)):
        z = y @ w.T - th
        y = z if k == last else sigmoid(z)
        acts.append(y)
    return y, acts


def total_error(net: MlpNetwork, x: np.ndarray, target: np.ndarray) -> float:
    out, _ = forward(net, x)
    return float(np.sum((np.asarray(target).reshape(out.shape) - out) ** 2))


def error_terms(net: MlpNetwork, x: np.ndarray, target: np.ndarray):
    """Backpropagated error terms and the resulting weight/threshold steps.

    Returns ``(eps, dW, dth)`` where ``dW[k] = sum_n delta_n^(k+1) y_n^(k)`` and
    ``dth[k] = -sum_n delta_n^(k+1)``; the gradient of ``eps`` is ``-2 dW``.
    """
    out, acts = forward(net, x)
    target = np.asarray(target, dtype=float).reshape(out.shape)
    delta = target - out
    eps = float(np.sum(delta**2))
    dW = [None] * len(net.weights)
    dth = [None] * len(net.weights)
    for k in range(len(net.weights) - 1, -1, -1):
        dW[k] = delta.T @ acts[k]
        dth[k] = -delta.sum(axis=0)
        if k:
            y = acts[k]
            delta = (delta @ net.weights[k]) * y * (1.0 - y)
    return eps, dW, dth


def gradient(net: MlpNetwork, x: np.ndarray, target: np.ndarray) -> np.ndarray:
    """d eps / d params, flattened in :meth:`MlpNetwork.params_flat` order."""
    _, dW, dth = error_terms(net, x, target)
    parts = []
    for w, th in zip(dW, dth):
        parts += [-2.0 * w.ravel(), -2.0 * th.ravel()]
    return np.concatenate(parts)


def _arrays(net: MlpNetwork, dataset: ReferenceDataset):
    x = net.in_scaler.forward(dataset.inputs(net.input_names))
    y = net.out_scaler.forward(dataset.column("beta_star")[:, None])
    return x, y


def train_epoch(net: MlpNetwork, dataset: ReferenceDataset, cfg: MlpTrainConfig, *, _arrays_cache=None) -> float:
    """One full-batch update; returns the summed squared error after it."""
    if not len(dataset):
        raise ValueError("dataset is empty")
    x, y = _arrays_cache or _arrays(net, dataset)
    _, dW, dth = error_terms(net, x, y)
    for k in range(len(net.weights)):
        net.weights[k] += cfg.learning_rate * dW[k]
        net.thresholds[k] += cfg.learning_rate * dth[k]
    return total_error(net, x, y)


def train(net: MlpNetwork, dataset: ReferenceDataset, cfg: MlpTrainConfig | None = None):
    """Train a copy of ``net``; returns ``(trained_net, error_history)``."""
    cfg = cfg or MlpTrainConfig()
    if not len(dataset):
        raise ValueError("dataset is empty")
    net = net.copy()
    arrays = _arrays(net, dataset)
    goal = cfg.target_error * len(dataset)
    history: list[float] = []
    for epoch in range(1, cfg.max_epochs + 1):
        with np.errstate(over="ignore", invalid="ignore"):
            eps = train_epoch(net, dataset, cfg, _arrays_cache=arrays)
        if not np.isfinite(eps):
            raise TrainingDivergedError(epoch, eps)
        history.append(eps)
        if eps < goal:
            break
    return net, history


def fit(dataset: ReferenceDataset, cfg: MlpTrainConfig | None = None, hidden: int = 5):
    """Initialise a 2-hidden-1 network from ``cfg.seed`` and train it."""
    cfg = cfg or MlpTrainConfig()
    net = MlpNetwork.initialise((len(MLP_INPUTS), hidden, 1), cfg.init_scale, cfg.seed)
    return train(net, dataset, cfg)


def predict_pitch(net: MlpNetwork, v: float, p_pu: float) -> float:
    z = net.in_scaler.forward([v, p_pu])
    out, _ = forward(net, z)
    beta = float(net.out_scaler.inverse(out)[0])
    return min(max(beta, float(net.out_scaler.lo[0])), float(net.out_scaler.hi[0]))


def rmse_deg(net: MlpNetwork, dataset: ReferenceDataset) -> float:
    pred = np.array([predict_pitch(net, s.v, s.p_pu) for s in dataset.samples])
    return float(np.sqrt(np.mean((pred - dataset.column("beta_star")) ** 2)))
