"""Input/output scaling and the shared on-disk format for trained networks.

Networks are stored as JSON with a ``format``/``version`` header and a
``kind`` tag. Floats are written with ``repr`` precision, so a save/load
round trip is exact.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from .config import atomic_write_text

FORMAT_NAME = "wecslab-network"
FORMAT_VERSION = 1

# Normalisation bounds for controller inputs; the wind range spans cut-in to cut-out.
INPUT_BOUNDS = {
    "v": (4.0, 25.0),
    "p_pu": (0.0, 1.05),
    "omega_pu": (0.0, 1.05),
}
PITCH_BOUNDS = (-2.0, 30.0)


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch: int, error: float, hint: str = "lower the learning rate"):
        super().__init__(f"training diverged at epoch {epoch} (error={error}); {hint}")
        self.epoch = epoch
        self.error = error


@dataclass(frozen=True)
class Scaler:
    """Affine map of each column from [lo, hi] onto [0, 1]."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lo, dtype=float))
        hi = np.atleast_1d(np.asarray(self.hi, dtype=float))
        if lo.shape != hi.shape or np.any(hi <= lo):
            raise ValueError("scaler needs hi > lo elementwise")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def for_inputs(cls, names) -> "Scaler":
        lo, hi = zip(*(INPUT_BOUNDS[n] for n in names))
        return cls(np.array(lo), np.array(hi))

    @classmethod
    def for_pitch(cls, beta_min: float = PITCH_BOUNDS[0], beta_max: float = PITCH_BOUNDS[1]) -> "Scaler":
        return cls(np.array([beta_min]), np.array([beta_max]))

    def forward(self, x):
        return (np.asarray(x, dtype=float) - self.lo) / (self.hi - self.lo)

    def inverse(self, z):
        return np.asarray(z, dtype=float) * (self.hi - self.lo) + self.lo

    def to_dict(self) -> dict:
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Scaler":
        return cls(np.array(d["lo"]), np.array(d["hi"]))


def dump_network(payload: dict[str, Any], path: str | Path) -> Path:
    doc = {"format": FORMAT_NAME, "version": FORMAT_VERSION, **payload}
    return atomic_write_text(path, json.dumps(doc, indent=1) + "\n")


def read_network_doc(path: str | Path) -> dict[str, Any]:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != FORMAT_NAME:
        raise ValueError(f"{path}: not a {FORMAT_NAME} file")
    if doc.get("version") != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported version {doc.get('version')}")
    return doc


def load_network(path: str | Path):
    """Load either network kind, dispatching on the ``kind`` tag."""
    doc = read_network_doc(path)
    kind = doc.get("kind")
    if kind == "mlp":
        from .mlp import MlpNetwork

        return MlpNetwork.from_dict(doc)
    if kind == "rbf":
        from .rbf import RbfNetwork

        return RbfNetwork.from_dict(doc)
    raise ValueError(f"{path}: unknown network kind {kind!r}")
