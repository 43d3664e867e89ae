"""Radial-basis-function pitch controller with LMS-trained output weights.

Hidden unit ``j`` responds ``exp(-(|u - c_j| / sigma_j)^2)`` to the normalised
input ``u``; the output is the linear combination ``y_i = sum_j W_ij F_j(u)``.
Centres and widths are placed once and frozen. Output weights follow the
per-sample LMS rule ``W_ij += alpha * (target_i - y_i) * F_j``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .netio import Scaler, TrainingDivergedError, dump_network
from .refgen import ReferenceDataset

RBF_INPUTS = ("v", "p_pu", "omega_pu")
WIDTH_OVERLAP = 1.5


class CenterStrategy(str, Enum):
    SAMPLE = "sample"
    GRID = "grid"


@dataclass
class RbfNetwork:
    centers: np.ndarray  # (H, input_dim), normalised input space
    widths: np.ndarray  # (H,)
    out_weights: np.ndarray  # (L, H)
    in_scaler: Scaler = field(default_factory=lambda: Scaler.for_inputs(RBF_INPUTS))
    out_scaler: Scaler = field(default_factory=Scaler.for_pitch)
    input_names: tuple[str, ...] = RBF_INPUTS

    def __post_init__(self):
        self.centers = np.atleast_2d(np.asarray(self.centers, dtype=float))
        self.widths = np.asarray(self.widths, dtype=float).ravel()
        self.out_weights = np.atleast_2d(np.asarray(self.out_weights, dtype=float))
        h = self.centers.shape[0]
        if h < 1:
            raise ValueError("need at least one hidden unit")
        if self.widths.shape != (h,) or np.any(self.widths <= 0):
            raise ValueError("need one positive width per centre")
        if self.out_weights.shape[1] != h:
            raise ValueError("out_weights must have one column per centre")

    @property
    def n_hidden(self) -> int:
        return self.centers.shape[0]

    @property
    def input_dim(self) -> int:
        return self.centers.shape[1]

    @property
    def output_dim(self) -> int:
        return self.out_weights.shape[0]

    def copy(self) -> "RbfNetwork":
        return RbfNetwork(
            self.centers.copy(),
            self.widths.copy(),
            self.out_weights.copy(),
            self.in_scaler,
            self.out_scaler,
            self.input_names,
        )

    def to_dict(self) -> dict:
        return {
            "kind": "rbf",
            "hidden": self.n_hidden,
            "input_dim": self.input_dim,
            "output_dim": self.output_dim,
            "input_names": list(self.input_names),
            "input_scaling": self.in_scaler.to_dict(),
            "output_scaling": self.out_scaler.to_dict(),
            "centers": self.centers.ravel().tolist(),
            "widths": self.widths.tolist(),
            "out_weights": self.out_weights.ravel().tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RbfNetwork":
        h, n_in, n_out = d["hidden"], d["input_dim"], d["output_dim"]
        return cls(
            np.array(d["centers"], dtype=float).reshape(h, n_in),
            np.array(d["widths"], dtype=float),
            np.array(d["out_weights"], dtype=float).reshape(n_out, h),
            Scaler.from_dict(d["input_scaling"]),
            Scaler.from_dict(d["output_scaling"]),
            tuple(d["input_names"]),
        )

    def save(self, path: str | Path) -> Path:
        return dump_network(self.to_dict(), path)


@dataclass(frozen=True)
class RbfTrainConfig:
    learning_rate: float = 0.05
    max_epochs: int = 5000
    target_error: float = 1e-4  # per sample; the stopping threshold is this times N
    seed: int = 0
    center_strategy: CenterStrategy = CenterStrategy.SAMPLE
    hidden: int = 10

    def __post_init__(self):
        object.__setattr__(self, "center_strategy", CenterStrategy(self.center_strategy))
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.max_epochs < 1 or self.hidden < 1:
            raise ValueError("max_epochs and hidden must be >= 1")


def rbf_activation(u, c, sigma: float) -> float:
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    d = np.linalg.norm(np.asarray(u, dtype=float) - np.asarray(c, dtype=float))
    return math.exp(-((d / sigma) ** 2))


def hidden_outputs(net: RbfNetwork, u) -> np.ndarray:
    """Activations of every unit; ``u`` is ``(input_dim,)`` or ``(I, input_dim)``."""
    u = np.asarray(u, dtype=float)
    if u.shape[-1] != net.input_dim:
        raise ValueError(f"expected {net.input_dim} inputs, got {u.shape[-1]}")
    diff = u[..., None, :] - net.centers
    return np.exp(-np.sum(diff**2, axis=-1) / net.widths**2)


def forward(net: RbfNetwork, u) -> np.ndarray:
    return hidden_outputs(net, u) @ net.out_weights.T


def _evenly_spaced(n: int, h: int) -> np.ndarray:
    # both ends included; consecutive picks differ by floor or ceil of (n-1)/(h-1)
    if h == 1:
        return np.array([(n - 1) // 2])
    return np.floor(np.arange(h) * (n - 1) / (h - 1) + 0.5).astype(int)


def place_centers(
    dataset: ReferenceDataset,
    H: int = 10,
    strategy: CenterStrategy | str = CenterStrategy.SAMPLE,
    seed: int = 0,
    input_names: tuple[str, ...] = RBF_INPUTS,
    in_scaler: Scaler | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Choose centres in normalised input space and a shared width.

    ``sample`` picks ``H`` dataset rows evenly spaced along the wind-sorted
    order; ``grid`` lays a uniform lattice over the unit box and keeps ``H``
    evenly spaced lattice points. The width is the mean nearest-neighbour
    centre distance times ``WIDTH_OVERLAP``. ``seed`` is accepted for
    interface symmetry; both strategies are deterministic.
    """
    strategy = CenterStrategy(strategy)
    in_scaler = in_scaler or Scaler.for_inputs(input_names)
    x = in_scaler.forward(dataset.inputs(input_names))
    n, dim = x.shape
    if strategy is CenterStrategy.SAMPLE:
        if n < H:
            raise ValueError(f"dataset has {n} rows, fewer than H={H}")
        order = np.argsort(dataset.column("v"), kind="stable")
        centers = x[order[_evenly_spaced(n, H)]]
    else:
        m = max(2, math.ceil(H ** (1.0 / dim)))
        axes = np.linspace(0.0, 1.0, m)
        lattice = np.stack(np.meshgrid(*([axes] * dim), indexing="ij"), axis=-1).reshape(-1, dim)
        centers = lattice[_evenly_spaced(len(lattice), H)]
    if H > 1:
        dist = np.linalg.norm(centers[:, None, :] - centers[None, :, :], axis=-1)
        np.fill_diagonal(dist, np.inf)
        nn = dist.min(axis=1)
        positive = nn[nn > 0]
        scale = float(positive.mean()) if positive.size else 0.0
    else:
        scale = 0.0
    if scale <= 0:
        spread = np.ptp(x, axis=0)
        scale = float(np.linalg.norm(spread)) or 1.0
    widths = np.full(H, WIDTH_OVERLAP * scale)
    return centers, widths


def _arrays(net: RbfNetwork, dataset: ReferenceDataset):
    u = net.in_scaler.forward(dataset.inputs(net.input_names))
    y = net.out_scaler.forward(dataset.column("beta_star")[:, None])
    return u, y


def total_error(net: RbfNetwork, u: np.ndarray, target: np.ndarray) -> float:
    return float(np.sum((forward(net, u) - target) ** 2))


def stability_bound(net: RbfNetwork, dataset: ReferenceDataset) -> float:
    """Largest stable LMS step, ``2 / max_n sum_j F_j(u_n)^2``."""
    u, _ = _arrays(net, dataset)
    f = hidden_outputs(net, u)
    return 2.0 / float(np.max(np.sum(f**2, axis=1)))


def train(net: RbfNetwork, dataset: ReferenceDataset, cfg: RbfTrainConfig | None = None):
    """LMS on the output weights; returns ``(trained_net, error_history)``.

    Each epoch sweeps the dataset in order, one update per sample, then
    records the total squared error over the whole set.
    """
    cfg = cfg or RbfTrainConfig()
    if not len(dataset):
        raise ValueError("dataset is empty")
    net = net.copy()
    u, y = _arrays(net, dataset)
    f_all = hidden_outputs(net, u)
    w = net.out_weights
    goal = cfg.target_error * len(dataset)
    history: list[float] = []
    for epoch in range(1, cfg.max_epochs + 1):
        with np.errstate(over="ignore", invalid="ignore"):
            for f, target in zip(f_all, y):
                err = target - w @ f
                w += cfg.learning_rate * np.outer(err, f)
            eps = float(np.sum((f_all @ w.T - y) ** 2))
        if not np.isfinite(eps):
            raise TrainingDivergedError(epoch, eps, "use a learning rate below the LMS stability bound")
        history.append(eps)
        if eps < goal:
            break
    return net, history


def build(dataset: ReferenceDataset, cfg: RbfTrainConfig | None = None) -> RbfNetwork:
    """Place centres and start from small seeded random output weights."""
    cfg = cfg or RbfTrainConfig()
    centers, widths = place_centers(dataset, cfg.hidden, cfg.center_strategy, cfg.seed)
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    weights = rng.uniform(-0.05, 0.05, size=(1, cfg.hidden))
    return RbfNetwork(centers, widths, weights)


def fit(dataset: ReferenceDataset, cfg: RbfTrainConfig | None = None):
    cfg = cfg or RbfTrainConfig()
    return train(build(dataset, cfg), dataset, cfg)


def predict_pitch(net: RbfNetwork, v: float, p_pu: float, omega_pu: float) -> float:
    u = net.in_scaler.forward([v, p_pu, omega_pu])
    beta = float(net.out_scaler.inverse(forward(net, u))[0])
    return min(max(beta, float(net.out_scaler.lo[0])), float(net.out_scaler.hi[0]))


def rmse_deg(net: RbfNetwork, dataset: ReferenceDataset) -> float:
    pred = np.array([predict_pitch(net, s.v, s.p_pu, s.omega_pu) for s in dataset.samples])
    return float(np.sqrt(np.mean((pred - dataset.column("beta_star")) ** 2)))
