"""Aerodynamic and mechanical plant of the turbine.

Angles are in degrees throughout. The power coefficient surface is the
familiar exponential Cp(lambda, beta) model; two readings of the
intermediate ratio ``lambda_i`` are supported:

``corrected``
    1/lambda_i = 1/(lambda + 0.08 beta) - 0.035/(beta^3 + 1)
``literal``
    lambda_i = 1/(lambda + 0.8 beta) - 0.035/(beta^3 + 1)

The corrected form has a pole at beta = -1 deg, and the interval between
the pole and beta = -2 deg produces Betz-grazing nonsense.  Negative pitch
is therefore evaluated on the beta = 0 curve (``AERO_BETA_FLOOR``); the
actuator itself still travels down to ``beta_min``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace
from enum import Enum
from pathlib import Path

import numpy as np

BETZ_LIMIT = 16.0 / 27.0
AERO_BETA_FLOOR = 0.0


class LambdaIForm(str, Enum):
    CORRECTED = "corrected"
    LITERAL = "literal"


class SingularInputError(ValueError):
    """Raised when lambda_i cannot be formed from (lambda, beta)."""


@dataclass(frozen=True)
class TurbineParams:
    rho: float = 1.225
    radius: float = 37.5
    p_rated: float = 2.0e6
    v_rated: float = 12.0
    v_cutin: float = 4.0
    v_cutout: float = 25.0
    beta_min: float = -2.0
    beta_max: float = 30.0
    beta_rate_max: float = 8.0
    inertia: float = 6.0e6
    lambda_i_form: LambdaIForm = LambdaIForm.CORRECTED

    def __post_init__(self):
        object.__setattr__(self, "lambda_i_form", LambdaIForm(self.lambda_i_form))
        if not (self.rho > 0 and self.radius > 0 and self.p_rated > 0):
            raise ValueError("rho, radius and p_rated must be positive")
        if not (self.v_cutin < self.v_rated < self.v_cutout):
            raise ValueError("require v_cutin < v_rated < v_cutout")
        if not self.beta_min < self.beta_max:
            raise ValueError("require beta_min < beta_max")
        if self.beta_rate_max <= 0 or self.inertia <= 0:
            raise ValueError("beta_rate_max and inertia must be positive")

    @property
    def area(self) -> float:
        return math.pi * self.radius**2

    def with_overrides(self, **kw) -> "TurbineParams":
        return replace(self, **kw)


@dataclass(frozen=True)
class RotorState:
    omega: float
    beta: float


@dataclass(frozen=True)
class AeroOutput:
    cp: float
    lam: float
    power: float
    torque: float
    stalled: bool = False
    singular: bool = False


def load_turbine_params(path: str | Path) -> TurbineParams:
    """Read a flat ``key = value`` file; unknown keys are an error."""
    from .config import read_kv

    raw = read_kv(path)
    known = {f.name: f for f in fields(TurbineParams)}
    kw = {}
    for key, value in raw.items():
        if key not in known:
            raise ValueError(f"unknown turbine parameter {key!r}")
        kw[key] = value if key == "lambda_i_form" else float(value)
    return TurbineParams(**kw)


def tip_speed_ratio(omega: float, v: float, radius: float) -> float:
    if v <= 0:
        raise ValueError(f"tip-speed ratio needs v > 0, got {v}")
    return omega * radius / v


def lambda_i(lam: float, beta: float, form: LambdaIForm | str = LambdaIForm.CORRECTED) -> float:
    form = LambdaIForm(form)
    cube = beta**3 + 1.0
    if cube == 0.0:
        raise SingularInputError("beta^3 + 1 = 0")
    if form is LambdaIForm.CORRECTED:
        base = lam + 0.08 * beta
        if base == 0.0:
            raise SingularInputError("lambda + 0.08 beta = 0")
        inv = 1.0 / base - 0.035 / cube
        if inv <= 0.0:
            raise SingularInputError(f"1/lambda_i = {inv} <= 0")
        return 1.0 / inv
    base = lam + 0.8 * beta
    if base == 0.0:
        raise SingularInputError("lambda + 0.8 beta = 0")
    li = 1.0 / base - 0.035 / cube
    if li <= 0.0:
        raise SingularInputError(f"lambda_i = {li} <= 0")
    return li


def _cp_raw(lam: float, beta: float, form: LambdaIForm | str) -> tuple[float, bool]:
    try:
        li = lambda_i(lam, beta, form)
    except SingularInputError:
        return 0.0, True
    expo = -21.0 / li
    if expo < -700.0:
        return 0.0068 * lam, False
    return 0.5176 * (116.0 / li - 0.4 * beta - 5.0) * math.exp(expo) + 0.0068 * lam, False


def power_coefficient_flagged(
    lam: float,
    beta: float,
    form: LambdaIForm | str = LambdaIForm.CORRECTED,
    beta_floor: float | None = AERO_BETA_FLOOR,
) -> tuple[float, bool]:
    """Return ``(cp, singular)``; negative raw values are clamped to 0."""
    if beta_floor is not None and beta < beta_floor:
        beta = beta_floor
    raw, singular = _cp_raw(lam, beta, form)
    return max(raw, 0.0), singular


def power_coefficient(
    lam: float,
    beta: float,
    form: LambdaIForm | str = LambdaIForm.CORRECTED,
    beta_floor: float | None = AERO_BETA_FLOOR,
) -> float:
    """Clamped Cp(lambda, beta); singular inputs map to 0.

    ``beta_floor=None`` evaluates negative angles on the raw surface.
    """
    return power_coefficient_flagged(lam, beta, form, beta_floor)[0]


def available_power(v: float, params: TurbineParams) -> float:
    """Kinetic power through the rotor disc, 0.5 rho pi R^2 v^3."""
    return 0.5 * params.rho * params.area * v**3


def aerodynamic_power(v: float, omega: float, beta: float, params: TurbineParams) -> AeroOutput:
    lam = tip_speed_ratio(omega, v, params.radius)
    cp, singular = power_coefficient_flagged(lam, beta, params.lambda_i_form)
    power = available_power(v, params) * cp
    if omega > 0:
        return AeroOutput(cp, lam, power, power / omega, singular=singular)
    return AeroOutput(cp, lam, power, 0.0, stalled=power > 0, singular=singular)


def control_torque(omega: float, k_gain: float) -> float:
    return k_gain * omega * omega


def torque_gain(params: TurbineParams, cp_max: float, lambda_star: float) -> float:
    """Gain K of the K omega^2 law, with A taken as the swept area pi R^2."""
    if lambda_star <= 0:
        raise ValueError("lambda_star must be positive")
    return 0.5 * params.rho * params.area * params.radius**3 * cp_max / lambda_star**3


def _golden_max(f, a: float, b: float, tol: float) -> float:
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def find_cp_max(beta: float = 0.0, form: LambdaIForm | str = LambdaIForm.CORRECTED) -> tuple[float, float]:
    """Maximise Cp over lambda at fixed pitch.

    A 0.01-step grid on [0.1, 15] brackets the maximum, then golden-section
    search narrows it to 1e-6. Returns ``(cp_max, lambda_star)``; a fully
    clamped curve yields ``(0.0, lambda at the first grid point)``.
    """
    grid = np.round(np.arange(0.1, 15.0 + 1e-9, 0.01), 10)
    values = np.array([power_coefficient(lam, beta, form) for lam in grid])
    k = int(np.argmax(values))
    if values[k] <= 0.0:
        return 0.0, float(grid[0])
    lo = grid[max(k - 1, 0)]
    hi = grid[min(k + 1, len(grid) - 1)]
    lam = _golden_max(lambda x: power_coefficient(x, beta, form), lo, hi, 1e-6)
    cp = power_coefficient(lam, beta, form)
    if cp < values[k]:
        return float(values[k]), float(grid[k])
    return float(cp), float(lam)


@dataclass(frozen=True)
class OperatingPoint:
    """Constants of the speed/torque schedule derived from the Cp surface."""

    cp_max: float
    lambda_star: float
    omega_rated: float
    k_gain: float
    torque_rated: float

    @classmethod
    def from_params(cls, params: TurbineParams) -> "OperatingPoint":
        cp_max, lam = find_cp_max(AERO_BETA_FLOOR, params.lambda_i_form)
        omega_rated = lam * params.v_rated / params.radius
        return cls(
            cp_max=cp_max,
            lambda_star=lam,
            omega_rated=omega_rated,
            k_gain=torque_gain(params, cp_max, lam),
            torque_rated=params.p_rated / omega_rated,
        )


def step_rotor(state: RotorState, gamma_aero: float, gamma_c: float, params: TurbineParams, dt: float) -> RotorState:
    """Explicit Euler step of J domega/dt = gamma_aero - gamma_c, omega >= 0."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    omega = state.omega + dt * (gamma_aero - gamma_c) / params.inertia
    return RotorState(omega=max(0.0, omega), beta=state.beta)


def pitch_actuator_step(beta_actual: float, beta_cmd: float, params: TurbineParams, dt: float) -> float:
    """Rate-limited move toward the command, then saturation into the travel range."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    max_step = params.beta_rate_max * dt
    step = min(max(beta_cmd - beta_actual, -max_step), max_step)
    return min(max(beta_actual + step, params.beta_min), params.beta_max)
