"""Reference (optimal) pitch schedule used to train every controller.

Below rated wind the blades sit at the mechanical minimum and the rotor
tracks the optimal tip-speed ratio. Above rated the rotor is held at rated
speed and the pitch is the angle whose Cp delivers exactly rated power,
found by bisection. Cp is not monotone in pitch everywhere, but at every
above-rated speed it crosses the rated-power level only once between the
pitch limits, so the bracket always holds a single root.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import atomic_write_text, csv_text, read_csv_columns
from .turbine import OperatingPoint, TurbineParams, available_power, power_coefficient

DATASET_HEADER = ("v", "p_pu", "omega_pu", "beta_star")
P_PU_MAX = 1.05


class PitchSaturationWarning(RuntimeWarning):
    """Even full feathering leaves more than rated power available."""


@dataclass(frozen=True)
class ReferenceSample:
    v: float
    p_pu: float
    omega_pu: float
    beta_star: float


@dataclass(frozen=True)
class ReferenceDataset:
    samples: tuple[ReferenceSample, ...]
    v_grid_step: float

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        if any(b.v < a.v for a, b in zip(self.samples, self.samples[1:])):
            raise ValueError("samples must be sorted by wind speed")

    def __len__(self) -> int:
        return len(self.samples)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(s, name) for s in self.samples], dtype=float)

    def inputs(self, names: tuple[str, ...]) -> np.ndarray:
        return np.column_stack([self.column(n) for n in names])

    def subset(self, idx) -> "ReferenceDataset":
        idx = sorted(int(i) for i in idx)
        return ReferenceDataset(tuple(self.samples[i] for i in idx), self.v_grid_step)

    def split(
        self, holdout: float = 0.2, seed: int = 0, mode: str = "interleaved"
    ) -> tuple["ReferenceDataset", "ReferenceDataset"]:
        """Split into ``(train, held_out)``.

        ``interleaved`` holds out every ``round(1/holdout)``-th interior row
        (offset by ``seed``), so held-out points are interpolation tests and
        the grid ends stay in training. ``random`` draws a seeded permutation.
        """
        n = len(self.samples)
        if mode == "interleaved":
            k = max(2, int(round(1.0 / holdout)))
            offset = k // 2 + seed % k
            test = [i for i in range(1, n - 1) if i % k == offset % k]
        elif mode == "random":
            rng = np.random.Generator(np.random.PCG64(seed))
            test = rng.permutation(n)[: int(round(holdout * n))].tolist()
        else:
            raise ValueError(f"unknown split mode {mode!r}")
        held = set(test)
        return self.subset(i for i in range(n) if i not in held), self.subset(held)

    def to_csv(self, path: str | Path) -> Path:
        rows = ((s.v, s.p_pu, s.omega_pu, s.beta_star) for s in self.samples)
        return atomic_write_text(path, csv_text(DATASET_HEADER, rows))

    @classmethod
    def from_csv(cls, path: str | Path) -> "ReferenceDataset":
        cols = read_csv_columns(path, DATASET_HEADER)
        samples = [ReferenceSample(*vals) for vals in zip(*(cols[h] for h in DATASET_HEADER))]
        if not samples:
            raise ValueError(f"{path}: dataset has no rows")
        vs = [s.v for s in samples]
        step = float(np.median(np.diff(vs))) if len(vs) > 1 else 0.0
        return cls(tuple(samples), step)


def required_cp(v: float, params: TurbineParams) -> float:
    return params.p_rated / available_power(v, params)


def optimal_pitch(
    v: float,
    omega: float,
    params: TurbineParams,
    tol: float = 1e-6,
    *,
    return_flag: bool = False,
):
    """Pitch that holds rated power at ``(v, omega)``.

    Returns ``beta_min`` at or below rated wind, or whenever minimum pitch
    cannot reach rated power. With ``return_flag=True`` the result is
    ``(beta, saturated)``; otherwise saturation at ``beta_max`` issues a
    :class:`PitchSaturationWarning`.
    """
    if not params.v_cutin <= v <= params.v_cutout:
        raise ValueError(f"v={v} outside [{params.v_cutin}, {params.v_cutout}]")
    lam = omega * params.radius / v
    target = required_cp(v, params)
    form = params.lambda_i_form

    def excess(beta: float) -> float:
        return power_coefficient(lam, beta, form) - target

    beta, saturated = params.beta_min, False
    if v > params.v_rated and excess(params.beta_min) > 0:
        if excess(params.beta_max) > 0:
            beta, saturated = params.beta_max, True
        else:
            lo, hi = params.beta_min, params.beta_max
            # excess(lo) > 0 >= excess(hi), with a single sign change between
            while True:
                mid = 0.5 * (lo + hi)
                e = excess(mid)
                if abs(e) < tol or hi - lo < 1e-12:
                    break
                if e > 0:
                    lo = mid
                else:
                    hi = mid
            beta = mid
    if return_flag:
        return beta, saturated
    if saturated:
        warnings.warn(f"pitch saturated at beta_max for v={v}", PitchSaturationWarning, stacklevel=2)
    return beta


def equilibrium_omega(v: float, params: TurbineParams, op: OperatingPoint | None = None) -> float:
    """Steady rotor speed: optimal tip-speed ratio tracking, capped at rated."""
    op = op or OperatingPoint.from_params(params)
    return min(op.lambda_star * v / params.radius, op.omega_rated)


def reference_sample(v: float, params: TurbineParams, op: OperatingPoint) -> tuple[ReferenceSample, bool]:
    omega = equilibrium_omega(v, params, op)
    beta, saturated = optimal_pitch(v, omega, params, return_flag=True)
    cp = power_coefficient(omega * params.radius / v, beta, params.lambda_i_form)
    p_pu = float(min(1.0, available_power(v, params) * cp / params.p_rated))
    return ReferenceSample(float(v), p_pu, float(omega / op.omega_rated), float(beta)), saturated


def build_training_set(
    params: TurbineParams | None = None,
    v_min: float = 4.0,
    v_max: float = 25.0,
    step: float = 0.5,
) -> ReferenceDataset:
    params = params or TurbineParams()
    if not params.v_cutin <= v_min <= v_max <= params.v_cutout:
        raise ValueError("need v_cutin <= v_min <= v_max <= v_cutout")
    if step <= 0:
        raise ValueError("step must be positive")
    op = OperatingPoint.from_params(params)
    n = int(math.floor((v_max - v_min) / step + 1e-9)) + 1
    samples, saturated = [], []
    for k in range(n):
        v = round(v_min + k * step, 10)
        s, sat = reference_sample(v, params, op)
        samples.append(s)
        if sat:
            saturated.append(v)
    if saturated:
        warnings.warn(f"pitch saturated at beta_max for v={saturated}", PitchSaturationWarning, stacklevel=2)
    above = [s.beta_star for s in samples if s.v >= params.v_rated]
    if any(b < a for a, b in zip(above, above[1:])):
        raise ValueError("reference pitch is not non-decreasing above rated wind")
    return ReferenceDataset(tuple(samples), step)
