"""Closed-loop simulation: wind, controller, pitch actuator and rotor.

Each step interpolates the wind, gates operation on the cut-in/cut-out
speeds, chooses the operating region with a small hysteresis band around
rated wind, asks the controller for a pitch command above rated, and then
advances the rate-limited actuator and the rotor by one explicit Euler step.

Generator torque follows ``K omega^2`` below rated and ``min(K omega^2,
torque_rated)`` above, so pitch alone regulates power at high wind.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from enum import Enum
from pathlib import Path
from typing import Iterator, Mapping, Protocol, Sequence

import numpy as np

from .config import atomic_write_text, csv_text, read_csv_columns
from .netio import INPUT_BOUNDS
from .refgen import equilibrium_omega
from .turbine import (
    OperatingPoint,
    TurbineParams,
    available_power,
    pitch_actuator_step,
    power_coefficient,
)
from .wind import WindSeries

TRACE_HEADER = ("t", "v_w", "beta_cmd", "beta", "omega", "lambda", "cp", "p_pu", "torque_pu")
REGION_BAND = 0.2  # m/s, full width of the hysteresis band around v_rated
DEFAULT_SETTLE_TIME = 30.0


class ControllerKind(str, Enum):
    MLP = "mlp"
    RBF = "rbf"
    GFS = "gfs"
    FIXED_PITCH = "fixed_pitch"
    NONE = "none"
    PI = "pi"


class TorqueMode(str, Enum):
    K_OMEGA_SQ_CAPPED = "k_omega_sq_capped"


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.05
    duration: float = 600.0
    controller: ControllerKind = ControllerKind.MLP
    torque_mode: TorqueMode = TorqueMode.K_OMEGA_SQ_CAPPED
    record_every: int = 1

    def __post_init__(self):
        object.__setattr__(self, "controller", ControllerKind(self.controller))
        object.__setattr__(self, "torque_mode", TorqueMode(self.torque_mode))
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.duration >= self.dt:
            raise ValueError("duration must be at least one step")
        if self.record_every < 1:
            raise ValueError("record_every must be >= 1")

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / self.dt))


# ---------------------------------------------------------------- controllers


class Controller(Protocol):
    name: str

    def reset(self, dt: float) -> None: ...

    def command(self, v: float, p_pu: float, omega_pu: float) -> float: ...


def _clip(name: str, x: float) -> float:
    # Above rated the reference schedule holds power and speed at exactly 1 pu,
    # so the networks never saw larger values; saturate them at rated.
    lo, hi = INPUT_BOUNDS[name]
    if name != "v":
        hi = min(hi, 1.0)
    return min(max(x, lo), hi)


class MlpController:
    """Pitch from the ``(v, p_pu)`` perceptron; power input saturates at rated."""

    name = "mlp"

    def __init__(self, net):
        from .mlp import MLP_INPUTS

        if tuple(net.input_names) != MLP_INPUTS or net.layer_sizes[0] != len(MLP_INPUTS):
            raise ValueError(f"MLP controller needs inputs {MLP_INPUTS}, network has {net.input_names}")
        if net.layer_sizes[-1] != 1:
            raise ValueError("MLP controller needs a single output")
        self.net = net

    def reset(self, dt: float) -> None:
        pass

    def command(self, v: float, p_pu: float, omega_pu: float) -> float:
        from .mlp import predict_pitch

        return predict_pitch(self.net, _clip("v", v), _clip("p_pu", p_pu))


class RbfController:
    name = "rbf"

    def __init__(self, net):
        from .rbf import RBF_INPUTS

        if tuple(net.input_names) != RBF_INPUTS or net.input_dim != len(RBF_INPUTS):
            raise ValueError(f"RBF controller needs inputs {RBF_INPUTS}, network has {net.input_names}")
        if net.output_dim != 1:
            raise ValueError("RBF controller needs a single output")
        self.net = net

    def reset(self, dt: float) -> None:
        pass

    def command(self, v: float, p_pu: float, omega_pu: float) -> float:
        from .rbf import predict_pitch

        return predict_pitch(self.net, _clip("v", v), _clip("p_pu", p_pu), _clip("omega_pu", omega_pu))


class GfsController:
    name = "gfs"

    def __init__(self, rule_base, params: TurbineParams | None = None):
        params = params or TurbineParams()
        self.rule_base = rule_base
        self.beta_min, self.beta_max = params.beta_min, params.beta_max

    def reset(self, dt: float) -> None:
        pass

    def command(self, v: float, p_pu: float, omega_pu: float) -> float:
        from .gfs import infer_pitch

        return infer_pitch(self.rule_base, v, self.beta_min, self.beta_max)


class FixedPitchController:
    """Baseline that holds one angle whatever the wind."""

    name = "fixed_pitch"

    def __init__(self, beta: float = -2.0):
        self.beta = float(beta)

    def reset(self, dt: float) -> None:
        pass

    def command(self, v: float, p_pu: float, omega_pu: float) -> float:
        return self.beta


class NoController(FixedPitchController):
    """No pitch action at all, not even feathering outside the operating window."""

    name = "none"


class PiController:
    """Textbook PI on the power error with clamping anti-windup.

    ``beta = kp * e + ki * integral(e)`` with ``e = p_pu - 1``, offset from
    ``beta_min`` and saturated to the actuator range.
    """

    name = "pi"

    def __init__(self, params: TurbineParams | None = None, kp: float = 10.0, ki: float = 4.0):
        params = params or TurbineParams()
        self.kp, self.ki = kp, ki
        self.beta_min, self.beta_max = params.beta_min, params.beta_max
        self.integral = 0.0
        self.dt = 0.05

    def reset(self, dt: float) -> None:
        self.integral = 0.0
        self.dt = dt

    def command(self, v: float, p_pu: float, omega_pu: float) -> float:
        err = p_pu - 1.0
        candidate = self.integral + self.ki * err * self.dt
        raw = self.beta_min + self.kp * err + candidate
        if self.beta_min <= raw <= self.beta_max:
            self.integral = candidate
        return min(max(raw, self.beta_min), self.beta_max)


def make_controller(kind: ControllerKind | str, artifact=None, params: TurbineParams | None = None) -> Controller:
    """Wrap a trained network or rule base (``artifact``) as a controller."""
    kind = ControllerKind(kind)
    params = params or TurbineParams()
    if kind is ControllerKind.MLP:
        return MlpController(artifact)
    if kind is ControllerKind.RBF:
        return RbfController(artifact)
    if kind is ControllerKind.GFS:
        return GfsController(artifact, params)
    if kind is ControllerKind.FIXED_PITCH:
        return FixedPitchController(params.beta_min if artifact is None else float(artifact))
    if kind is ControllerKind.NONE:
        return NoController(params.beta_min)
    return PiController(params)


# ---------------------------------------------------------------- traces


@dataclass(frozen=True)
class TraceRecord:
    t: float
    v: float
    beta_cmd: float
    beta: float
    omega: float
    lam: float
    cp: float
    p_pu: float
    torque_pu: float


class Trace:
    """Recorded simulation columns, one numpy array per ``TRACE_HEADER`` entry."""

    def __init__(self, data: np.ndarray, name: str = ""):
        data = np.asarray(data, dtype=float)
        if data.ndim != 2 or data.shape[1] != len(TRACE_HEADER):
            raise ValueError(f"trace data must have {len(TRACE_HEADER)} columns")
        if data.shape[0] == 0:
            raise ValueError("trace is empty")
        self.data = data
        self.data.setflags(write=False)
        self.name = name

    def column(self, key: str) -> np.ndarray:
        return self.data[:, TRACE_HEADER.index(key)]

    t = property(lambda self: self.column("t"))
    v_w = property(lambda self: self.column("v_w"))
    beta_cmd = property(lambda self: self.column("beta_cmd"))
    beta = property(lambda self: self.column("beta"))
    omega = property(lambda self: self.column("omega"))
    lam = property(lambda self: self.column("lambda"))
    cp = property(lambda self: self.column("cp"))
    p_pu = property(lambda self: self.column("p_pu"))
    torque_pu = property(lambda self: self.column("torque_pu"))

    def __len__(self) -> int:
        return self.data.shape[0]

    def __getitem__(self, i: int) -> TraceRecord:
        return TraceRecord(*(float(x) for x in self.data[i]))

    def __iter__(self) -> Iterator[TraceRecord]:
        return (self[i] for i in range(len(self)))

    def slice(self, start: int, stop: int | None = None) -> "Trace":
        return Trace(self.data[start:stop].copy(), self.name)

    @classmethod
    def concat(cls, parts: Sequence["Trace"]) -> "Trace":
        return cls(np.vstack([p.data for p in parts]), parts[0].name if parts else "")

    def to_csv(self, path: str | Path) -> Path:
        return atomic_write_text(path, csv_text(TRACE_HEADER, self.data.tolist()))

    @classmethod
    def from_csv(cls, path: str | Path, name: str | None = None) -> "Trace":
        cols = read_csv_columns(path, TRACE_HEADER)
        if not cols["t"]:
            raise ValueError(f"{path}: trace has no rows")
        data = np.column_stack([cols[h] for h in TRACE_HEADER])
        return cls(data, Path(path).stem if name is None else name)


# ---------------------------------------------------------------- engine


def run(
    wind: WindSeries,
    params: TurbineParams,
    ctrl: Controller,
    cfg: SimConfig | None = None,
    *,
    omega0: float | None = None,
    op: OperatingPoint | None = None,
) -> Trace:
    """Simulate ``cfg.duration`` seconds and return the recorded trace.

    ``omega0`` overrides the initial rotor speed, which otherwise starts at
    the steady-state value for the first wind sample. Pitch starts at
    ``beta_min``.
    """
    cfg = cfg or SimConfig()
    op = op or OperatingPoint.from_params(params)
    n = cfg.n_steps
    if wind.t[0] > 0.0 or wind.t[-1] < n * cfg.dt - 1e-9:
        raise ValueError(f"wind covers [{wind.t[0]}, {wind.t[-1]}] s, simulation needs [0, {n * cfg.dt}] s")
    if not callable(getattr(ctrl, "command", None)):
        raise TypeError("controller must provide command(v, p_pu, omega_pu)")
    ctrl.reset(cfg.dt)
    feather = not isinstance(ctrl, NoController)

    times = np.arange(n + 1) * cfg.dt
    speeds = np.interp(times, wind.t, wind.v)
    half_band = 0.5 * REGION_BAND
    radius, inertia, form = params.radius, params.inertia, params.lambda_i_form
    k_gain, torque_rated, omega_rated = op.k_gain, op.torque_rated, op.omega_rated

    v0 = float(speeds[0])
    omega = float(omega0) if omega0 is not None else equilibrium_omega(max(v0, 0.0), params, op)
    if omega < 0:
        raise ValueError("omega0 must be non-negative")
    beta = params.beta_min
    above = v0 > params.v_rated

    out = np.empty(((n // cfg.record_every) + 1, len(TRACE_HEADER)))
    row = 0
    for k in range(n + 1):
        v = float(speeds[k])
        above = v >= params.v_rated - half_band if above else v > params.v_rated + half_band
        running = params.v_cutin <= v <= params.v_cutout
        lam = omega * radius / v if v > 0 else 0.0
        if running:
            cp = power_coefficient(lam, beta, form)
            power = available_power(v, params) * cp
        else:
            cp = power = 0.0
        gamma_aero = power / omega if omega > 0 else 0.0
        gamma_c = k_gain * omega * omega
        if above:
            gamma_c = min(gamma_c, torque_rated)
        p_pu = power / params.p_rated

        if not running and feather:
            beta_cmd = params.beta_max
        elif above and running:
            beta_cmd = float(ctrl.command(v, p_pu, omega / omega_rated))
        elif isinstance(ctrl, NoController):
            beta_cmd = ctrl.beta
        else:
            beta_cmd = params.beta_min
        if not math.isfinite(beta_cmd):
            raise FloatingPointError(f"controller returned {beta_cmd} at t={k * cfg.dt}")

        if k % cfg.record_every == 0:
            out[row] = (times[k], v, beta_cmd, beta, omega, lam, cp, p_pu, gamma_c / torque_rated)
            row += 1
        if k == n:
            break
        beta = pitch_actuator_step(beta, beta_cmd, params, cfg.dt)
        omega = max(0.0, omega + cfg.dt * (gamma_aero - gamma_c) / inertia)
    return Trace(out[:row], getattr(ctrl, "name", ""))


# ---------------------------------------------------------------- metrics


@dataclass(frozen=True)
class Metrics:
    mean_p_pu: float
    std_p_pu: float
    min_p_pu: float
    max_p_pu: float
    pitch_travel_deg: float
    frac_time_below_0_9pu: float
    max_abs_pitch_rate: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1) + "\n"

    def save(self, path: str | Path) -> Path:
        return atomic_write_text(path, self.to_json())

    @classmethod
    def load(cls, path: str | Path) -> "Metrics":
        doc = json.loads(Path(path).read_text())
        return cls(**{f.name: float(doc[f.name]) for f in fields(cls)})


METRIC_NAMES = tuple(f.name for f in fields(Metrics))


class RunningStats:
    """Streaming count/mean/variance/min/max that merges chunk summaries exactly.

    Chunks are combined with the pairwise update for the sum of squared
    deviations, so feeding a series in pieces gives the same moments as one
    pass over the whole.
    """

    def __init__(self):
        self.n = 0
        self.mean = 0.0
        self.m2 = 0.0
        self.min = math.inf
        self.max = -math.inf

    def update(self, x) -> "RunningStats":
        x = np.asarray(x, dtype=float).ravel()
        if x.size == 0:
            return self
        nb = x.size
        mb = float(x.mean())
        m2b = float(np.sum((x - mb) ** 2))
        n = self.n + nb
        delta = mb - self.mean
        self.mean += delta * nb / n
        self.m2 += m2b + delta * delta * self.n * nb / n
        self.n = n
        self.min = min(self.min, float(x.min()))
        self.max = max(self.max, float(x.max()))
        return self

    @property
    def std(self) -> float:
        return math.sqrt(self.m2 / self.n) if self.n else math.nan


def compute_metrics(trace: Trace, settle_time: float = DEFAULT_SETTLE_TIME) -> Metrics:
    """Power and pitch-activity statistics over ``t >= settle_time``."""
    keep = trace.t >= settle_time
    if not keep.any():
        raise ValueError(f"no samples at or after settle_time={settle_time}")
    t, p, beta = trace.t[keep], trace.p_pu[keep], trace.beta[keep]
    stats = RunningStats().update(p)
    if t.size > 1:
        dbeta = np.abs(np.diff(beta))
        rate = float(np.max(dbeta / np.diff(t)))
        travel = float(dbeta.sum())
    else:
        rate = travel = 0.0
    return Metrics(
        mean_p_pu=stats.mean,
        std_p_pu=stats.std,
        min_p_pu=stats.min,
        max_p_pu=stats.max,
        pitch_travel_deg=travel,
        frac_time_below_0_9pu=float(np.mean(p < 0.9)),
        max_abs_pitch_rate=rate,
    )


@dataclass(frozen=True)
class ComparisonRow:
    controller: str
    metrics: Metrics
    std_reduction: float  # 1 - std / std of the baseline
    min_delta: float  # min_p_pu minus the baseline's


COMPARISON_HEADER = ("controller", *METRIC_NAMES, "baseline", "std_reduction", "min_delta")


@dataclass(frozen=True)
class ComparisonReport:
    baseline: str
    rows: tuple[ComparisonRow, ...]

    def __len__(self) -> int:
        return len(self.rows)

    def row(self, name: str) -> ComparisonRow:
        for r in self.rows:
            if r.controller == name:
                return r
        raise KeyError(name)

    def to_csv(self, path: str | Path) -> Path:
        body = (
            (r.controller, *(getattr(r.metrics, m) for m in METRIC_NAMES), self.baseline, r.std_reduction, r.min_delta)
            for r in self.rows
        )
        return atomic_write_text(path, csv_text(COMPARISON_HEADER, body))


def compare(
    traces: Mapping[str, Trace],
    settle_time: float = DEFAULT_SETTLE_TIME,
    baseline: str = "fixed_pitch",
) -> ComparisonReport:
    """Metrics per named trace plus changes relative to a baseline trace.

    The baseline is ``baseline`` when present, otherwise the first trace.
    All traces must share the same time and wind columns.
    """
    if len(traces) < 2:
        raise ValueError("need at least two traces to compare")
    names = list(traces)
    ref = traces[names[0]]
    for name in names[1:]:
        other = traces[name]
        if not (np.array_equal(other.t, ref.t) and np.array_equal(other.v_w, ref.v_w)):
            raise ValueError(f"trace {name!r} was driven by different wind than {names[0]!r}")
    base_name = baseline if baseline in traces else names[0]
    metrics = {name: compute_metrics(traces[name], settle_time) for name in names}
    base = metrics[base_name]
    rows = []
    for name in names:
        m = metrics[name]
        if base.std_p_pu > 0:
            reduction = 1.0 - m.std_p_pu / base.std_p_pu
        else:
            reduction = 0.0 if m.std_p_pu == 0 else -math.inf
        rows.append(ComparisonRow(name, m, reduction, m.min_p_pu - base.min_p_pu))
    return ComparisonReport(base_name, tuple(rows))
