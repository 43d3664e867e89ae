"""Turbulent wind: mean speed plus an ARMA-driven fluctuation.

The fluctuation follows

    g_t = sum_i ar[i] g_{t-1-i} + eta_t - sum_j ma[j] eta_{t-1-j}

with Gaussian white noise ``eta`` drawn from numpy's PCG64 generator
(``numpy.random.Generator(PCG64(seed)).standard_normal``). The raw series
is rescaled to unit sample variance and multiplied by ``TI * v_mean`` so the
requested turbulence intensity holds whatever coefficients are chosen.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import atomic_write_text, csv_text, read_csv_columns

WIND_HEADER = ("t", "v_w")
# samples discarded before the recorded window so the start is not biased
# toward the zero initial history
BURN_IN = 500


@dataclass(frozen=True)
class ArmaParams:
    ar_coeffs: tuple[float, ...] = (1.0, -0.25)
    ma_coeffs: tuple[float, ...] = (0.5,)
    noise_std: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "ar_coeffs", tuple(float(a) for a in self.ar_coeffs))
        object.__setattr__(self, "ma_coeffs", tuple(float(m) for m in self.ma_coeffs))
        if not self.noise_std > 0:
            raise ValueError("noise_std must be positive")


@dataclass(frozen=True)
class WindConfig:
    v_mean: float = 12.0
    turbulence_intensity: float = 0.16
    dt: float = 1.0
    duration: float = 600.0
    seed: int = 0

    def __post_init__(self):
        if not self.v_mean > 0:
            raise ValueError("v_mean must be positive")
        if not 0 <= self.turbulence_intensity < 1:
            raise ValueError("turbulence_intensity must be in [0, 1)")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.duration < self.dt:
            raise ValueError("duration must be at least dt")

    @property
    def n_samples(self) -> int:
        return int(round(self.duration / self.dt)) + 1


@dataclass(frozen=True)
class WindSeries:
    t: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        v = np.asarray(self.v, dtype=float)
        if t.shape != v.shape or t.ndim != 1 or t.size < 1:
            raise ValueError("t and v must be equal-length 1-D arrays")
        if t.size > 1:
            steps = np.diff(t)
            if np.any(steps <= 0) or not np.allclose(steps, steps[0], rtol=1e-9, atol=1e-9):
                raise ValueError("t must be a uniform strictly increasing grid")
        if np.any(v < 0):
            raise ValueError("wind speed must be non-negative")
        t.flags.writeable = False
        v.flags.writeable = False
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "v", v)

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0]) if self.t.size > 1 else 0.0

    def at(self, time: float) -> float:
        """Linear interpolation, held constant beyond either end."""
        return float(np.interp(time, self.t, self.v))

    def to_csv(self, path: str | Path) -> Path:
        rows = zip(self.t.tolist(), self.v.tolist())
        return atomic_write_text(path, csv_text(WIND_HEADER, rows))

    @classmethod
    def from_csv(cls, path: str | Path) -> "WindSeries":
        cols = read_csv_columns(path, WIND_HEADER)
        return cls(np.array(cols["t"]), np.array(cols["v_w"]))

    @classmethod
    def constant(cls, v: float, duration: float, dt: float = 1.0) -> "WindSeries":
        n = int(round(duration / dt)) + 1
        return cls(np.arange(n) * dt, np.full(n, float(v)))


@dataclass
class ArmaState:
    """Most recent first: ``g_hist[0]`` is g_{t-1}, ``eta_hist[0]`` is eta_{t-1}."""

    g_hist: deque = field(default_factory=deque)
    eta_hist: deque = field(default_factory=deque)

    @classmethod
    def zeros(cls, arma: ArmaParams) -> "ArmaState":
        n, m = len(arma.ar_coeffs), len(arma.ma_coeffs)
        return cls(deque([0.0] * n, maxlen=n), deque([0.0] * m, maxlen=m))


def arma_step(state: ArmaState, eta: float, arma: ArmaParams) -> float:
    """Advance the recursion by one sample, updating ``state`` in place."""
    if len(state.g_hist) != len(arma.ar_coeffs) or len(state.eta_hist) != len(arma.ma_coeffs):
        raise ValueError("ARMA history length does not match the coefficient count")
    g = eta
    for a, past in zip(arma.ar_coeffs, state.g_hist):
        g += a * past
    for m, past in zip(arma.ma_coeffs, state.eta_hist):
        g -= m * past
    if state.g_hist.maxlen:
        state.g_hist.appendleft(g)
    if state.eta_hist.maxlen:
        state.eta_hist.appendleft(eta)
    return g


def check_stationarity(arma: ArmaParams) -> bool:
    """True iff every AR root lies strictly outside the unit circle.

    Equivalently, every eigenvalue of the AR companion matrix has modulus < 1.
    """
    ar = np.asarray(arma.ar_coeffs, dtype=float)
    if ar.size == 0:
        return True
    companion = np.zeros((ar.size, ar.size))
    companion[0, :] = ar
    companion[1:, :-1] = np.eye(ar.size - 1)
    return bool(np.all(np.abs(np.linalg.eigvals(companion)) < 1.0))


def arma_series(n: int, arma: ArmaParams, rng: np.random.Generator, burn_in: int = BURN_IN) -> np.ndarray:
    eta = rng.standard_normal(n + burn_in) * arma.noise_std
    state = ArmaState.zeros(arma)
    out = np.empty(n + burn_in)
    for k, e in enumerate(eta):
        out[k] = arma_step(state, float(e), arma)
    return out[burn_in:]


def generate_wind(cfg: WindConfig, arma: ArmaParams | None = None) -> WindSeries:
    arma = arma or ArmaParams()
    if not check_stationarity(arma):
        raise ValueError(f"AR coefficients {arma.ar_coeffs} are not stationary")
    n = cfg.n_samples
    t = np.arange(n) * cfg.dt
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    g = arma_series(n, arma, rng)
    std = g.std()
    g_hat = g / std if n > 1 and std > 0 else np.zeros(n)
    sigma = cfg.turbulence_intensity * cfg.v_mean
    v = np.maximum(cfg.v_mean + sigma * g_hat, 0.0)
    return WindSeries(t, v)
