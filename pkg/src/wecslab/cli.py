"""Command-line front end.

Subcommands::

    wind       generate a turbulent wind trace
    refgen     tabulate the reference pitch schedule
    train      fit an MLP or RBF pitch controller to a reference table
    evolve     evolve a fuzzy rule base
    simulate   run one closed-loop simulation and plot it
    compare    tabulate metrics of several traces driven by the same wind
    repro      run the whole chain with fixed seeds

Every command exits 0 on success, 2 on a usage or configuration error and
1 on a runtime failure, printing one diagnostic line to stderr.

Config files hold flat ``key = value`` lines. A bare key applies to every
setting of that name (``seed``, ``dt`` ...); a ``section.key`` form targets
one of ``turbine``, ``wind``, ``mlp``, ``rbf``, ``ga`` or ``sim``. Command
line flags override the file.
"""
from __future__ import annotations

import argparse
import concurrent.futures
import dataclasses
import json
import sys
import warnings
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Sequence

from . import __version__
from .config import atomic_write_text, csv_text, read_kv
from .gfs import GaConfig, RuleBase, evolve
from .mlp import MlpTrainConfig
from .netio import TrainingDivergedError, load_network
from .rbf import RbfTrainConfig
from .refgen import PitchSaturationWarning, ReferenceDataset, build_training_set
from .simloop import ControllerKind, SimConfig, Trace, compare, compute_metrics, make_controller, run
from .turbine import TurbineParams
from .wind import WindConfig, WindSeries, generate_wind

SECTIONS: dict[str, type] = {
    "turbine": TurbineParams,
    "wind": WindConfig,
    "mlp": MlpTrainConfig,
    "rbf": RbfTrainConfig,
    "ga": GaConfig,
    "sim": SimConfig,
}
HISTORY_HEADER = ("epoch", "error")
TRAINED_KINDS = ("mlp", "rbf", "gfs")


class UsageError(Exception):
    """Bad arguments or configuration (exit status 2)."""


# ---------------------------------------------------------------- configuration


def _coerce(cls: type, name: str, raw: str) -> Any:
    default = next(f for f in dataclasses.fields(cls) if f.name == name).default
    if isinstance(default, bool):
        return raw.lower() in ("1", "true", "yes", "on")
    if isinstance(default, int) or name in ("replacement_count", "offspring_count"):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


class RunConfig:
    """Per-section overrides gathered from a config file and the command line."""

    def __init__(self, values: dict[str, str] | None = None):
        self.sections: dict[str, dict[str, Any]] = {name: {} for name in SECTIONS}
        for key, raw in (values or {}).items():
            self.set(key, raw)

    @classmethod
    def load(cls, path: str | Path | None) -> "RunConfig":
        if path is None:
            return cls()
        try:
            return cls(read_kv(path))
        except OSError as exc:
            raise UsageError(f"cannot read config {path}: {exc.strerror}") from None
        except ValueError as exc:
            raise UsageError(f"{path}: {exc}") from None

    def set(self, key: str, raw: Any) -> None:
        section, _, name = key.rpartition(".")
        targets = [section] if section else list(SECTIONS)
        if section and section not in SECTIONS:
            raise UsageError(f"unknown config section {section!r}")
        hit = False
        for sec in targets:
            cls = SECTIONS[sec]
            if name in {f.name for f in dataclasses.fields(cls)}:
                try:
                    value = _coerce(cls, name, raw) if isinstance(raw, str) else raw
                except ValueError:
                    raise UsageError(f"config key {key!r}: cannot parse {raw!r}") from None
                self.sections[sec][name] = value
                hit = True
        if not hit:
            raise UsageError(f"unknown config key {key!r}")

    def build(self, section: str, **extra):
        kw = {**self.sections[section], **{k: v for k, v in extra.items() if v is not None}}
        try:
            return SECTIONS[section](**kw)
        except (TypeError, ValueError) as exc:
            raise UsageError(f"invalid {section} settings: {exc}") from None


def _config_from_args(args) -> RunConfig:
    cfg = RunConfig.load(getattr(args, "config", None))
    if getattr(args, "seed", None) is not None:
        cfg.set("seed", str(args.seed))
    return cfg


# ---------------------------------------------------------------- manifest


@dataclasses.dataclass
class RunManifest:
    command: str
    config_paths: list[str]
    seeds: dict[str, int]
    artifacts: dict[str, str]
    tool_version: str = __version__
    timestamp: str = ""

    def missing(self) -> list[str]:
        return [p for p in [*self.config_paths, *self.artifacts.values()] if not Path(p).exists()]

    def save(self, path: str | Path) -> Path:
        missing = self.missing()
        if missing:
            raise FileNotFoundError(f"manifest references missing files: {', '.join(missing)}")
        return atomic_write_text(path, json.dumps(dataclasses.asdict(self), indent=1) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "RunManifest":
        return cls(**json.loads(Path(path).read_text()))


# ---------------------------------------------------------------- helpers


def _turbine(cfg: RunConfig) -> TurbineParams:
    return cfg.build("turbine")


def _load_dataset(path: str) -> ReferenceDataset:
    try:
        return ReferenceDataset.from_csv(path)
    except OSError as exc:
        raise UsageError(f"cannot read dataset {path}: {exc.strerror}") from None
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _load_artifact(kind: ControllerKind, path: str | None):
    if kind.value not in TRAINED_KINDS:
        return None
    if path is None:
        raise UsageError(f"controller {kind.value!r} needs --model")
    try:
        if kind is ControllerKind.GFS:
            return RuleBase.load(path)
        net = load_network(path)
    except OSError as exc:
        raise UsageError(f"cannot read model {path}: {exc.strerror}") from None
    except (ValueError, KeyError) as exc:
        raise UsageError(f"{path}: {exc}") from None
    expected = "MlpNetwork" if kind is ControllerKind.MLP else "RbfNetwork"
    if type(net).__name__ != expected:
        raise UsageError(f"{path} holds a {type(net).__name__}, not a {kind.value} network")
    return net


def _wind_for(args, cfg: RunConfig) -> WindSeries:
    if getattr(args, "wind", None):
        try:
            return WindSeries.from_csv(args.wind)
        except OSError as exc:
            raise UsageError(f"cannot read wind {args.wind}: {exc.strerror}") from None
    return generate_wind(
        cfg.build(
            "wind",
            v_mean=args.v_mean,
            turbulence_intensity=args.ti,
            duration=args.duration,
        )
    )


def _say(msg: str) -> None:
    print(msg, flush=True)


# ---------------------------------------------------------------- commands


def cmd_wind(args) -> int:
    cfg = _config_from_args(args)
    wind_cfg = cfg.build("wind", v_mean=args.v_mean, turbulence_intensity=args.ti, duration=args.duration, dt=args.dt)
    series = generate_wind(wind_cfg)
    out = series.to_csv(args.out)
    v = series.v
    _say(f"wrote {out}: {v.size} samples, mean {v.mean():.4f} std {v.std():.4f} min {v.min():.4f} max {v.max():.4f} m/s")
    return 0


def cmd_refgen(args) -> int:
    params = _turbine(_config_from_args(args))
    v_min = params.v_rated if args.v_min is None else args.v_min
    v_max = params.v_cutout if args.v_max is None else args.v_max
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", PitchSaturationWarning)
            ds = build_training_set(params, v_min, v_max, args.step)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    out = ds.to_csv(args.out)
    _say(f"wrote {out}: {len(ds)} rows over [{v_min}, {v_max}] m/s")
    return 0


def cmd_train(args) -> int:
    from . import mlp, rbf

    cfg = _config_from_args(args)
    ds = _load_dataset(args.dataset)
    if args.holdout > 0:
        train_set, held_out = ds.split(args.holdout)
    else:
        train_set, held_out = ds, None
    if len(train_set) < 2:
        raise UsageError("dataset too small to train on")
    module = mlp if args.kind == "mlp" else rbf
    extra = {"learning_rate": args.learning_rate, "max_epochs": args.epochs}
    train_cfg = cfg.build(args.kind, **extra)
    net, history = module.fit(train_set, train_cfg)
    prefix = Path(args.out)
    model_path = net.save(prefix.with_suffix(".json"))
    hist_path = atomic_write_text(
        prefix.with_name(prefix.name + "_history.csv"),
        csv_text(HISTORY_HEADER, ((k, e) for k, e in enumerate(history, start=1))),
    )
    train_rmse = module.rmse_deg(net, train_set)
    msg = f"wrote {model_path} and {hist_path}: {len(history)} epochs, final error {history[-1]:.6g}, train RMSE {train_rmse:.4f} deg"
    if held_out is not None and len(held_out):
        msg += f", held-out RMSE {module.rmse_deg(net, held_out):.4f} deg"
    _say(msg)
    return 0


def cmd_evolve(args) -> int:
    cfg = _config_from_args(args)
    ds = _load_dataset(args.dataset)
    ga_cfg = cfg.build("ga", iterations=args.iterations, population_size=args.population)
    result = evolve(ga_cfg, ds, _turbine(cfg))
    prefix = Path(args.out)
    rb_path = result.rule_base.save(prefix.with_suffix(".rules"))
    hist_path = result.save_history(prefix.with_name(prefix.name + "_history.csv"))
    _say(f"wrote {rb_path} and {hist_path}: best fitness {result.history[-1][1]:.4f}")
    _say(result.rule_base.describe())
    return 0


def _simulate_one(
    kind: ControllerKind, artifact, wind: WindSeries, params: TurbineParams, sim_cfg: SimConfig, prefix: Path, plots: bool
) -> dict[str, Path]:
    from .plotting import plot_trace

    trace = run(wind, params, make_controller(kind, artifact, params), sim_cfg)
    paths = {"trace": trace.to_csv(prefix.with_name(prefix.name + "_trace.csv"))}
    settle = min(30.0, 0.5 * sim_cfg.duration)
    paths["metrics"] = compute_metrics(trace, settle).save(prefix.with_name(prefix.name + "_metrics.json"))
    if plots:
        paths.update(plot_trace(trace, prefix))
    return paths


def cmd_simulate(args) -> int:
    cfg = _config_from_args(args)
    params = _turbine(cfg)
    kind = ControllerKind(args.controller)
    artifact = _load_artifact(kind, args.model)
    wind = _wind_for(args, cfg)
    duration = args.duration if args.duration is not None else float(wind.t[-1])
    sim_cfg = cfg.build("sim", dt=args.dt, duration=duration, controller=kind)
    paths = _simulate_one(kind, artifact, wind, params, sim_cfg, Path(args.out), not args.no_plots)
    m = json.loads(Path(paths["metrics"]).read_text())
    _say(
        f"wrote {len(paths)} files with prefix {args.out}: mean {m['mean_p_pu']:.4f} std {m['std_p_pu']:.4f} "
        f"min {m['min_p_pu']:.4f} pu"
    )
    return 0


def _trace_name(path: Path) -> str:
    stem = path.stem
    return stem[: -len("_trace")] if stem.endswith("_trace") else stem


def cmd_compare(args) -> int:
    from .plotting import plot_comparison

    if len(args.traces) < 2:
        raise UsageError("compare needs at least two traces")
    traces = {}
    for p in map(Path, args.traces):
        try:
            traces[_trace_name(p)] = Trace.from_csv(p)
        except OSError as exc:
            raise UsageError(f"cannot read trace {p}: {exc.strerror}") from None
    report = compare(traces, args.settle_time, args.baseline)
    out = report.to_csv(args.out)
    if not args.no_plots:
        plot_comparison(traces, Path(args.out).with_suffix(".svg"))
    for r in report.rows:
        _say(f"{r.controller:>12s}  std {r.metrics.std_p_pu:.4f}  min {r.metrics.min_p_pu:.4f}  std reduction {r.std_reduction:+.3f}")
    _say(f"wrote {out}")
    return 0


def cmd_repro(args) -> int:
    """Wind, reference table, training, evolution, simulations and comparison."""
    from . import mlp, rbf

    cfg = _config_from_args(args)
    seed = args.seed if args.seed is not None else 0
    cfg.set("seed", str(seed))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    params = _turbine(cfg)
    artifacts: dict[str, Path] = {}

    wind_cfg = cfg.build("wind", v_mean=args.v_mean, turbulence_intensity=args.ti, duration=args.duration)
    wind = generate_wind(wind_cfg)
    artifacts["wind"] = wind.to_csv(out / "wind.csv")

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", PitchSaturationWarning)
        ds = build_training_set(params, params.v_rated, params.v_cutout)
    artifacts["dataset"] = ds.to_csv(out / "reference.csv")

    models: dict[ControllerKind, Any] = {}
    for kind, module in ((ControllerKind.MLP, mlp), (ControllerKind.RBF, rbf)):
        net, history = module.fit(ds, cfg.build(kind.value))
        artifacts[f"{kind.value}_model"] = net.save(out / f"{kind.value}.json")
        artifacts[f"{kind.value}_history"] = atomic_write_text(
            out / f"{kind.value}_history.csv", csv_text(HISTORY_HEADER, enumerate(history, start=1))
        )
        models[kind] = net
        _say(f"{kind.value}: {len(history)} epochs, RMSE {module.rmse_deg(net, ds):.4f} deg")
    result = evolve(cfg.build("ga"), ds, params)
    artifacts["gfs_rules"] = result.rule_base.save(out / "gfs.rules")
    artifacts["gfs_history"] = result.save_history(out / "gfs_history.csv")
    models[ControllerKind.GFS] = result.rule_base
    _say("gfs rule base:\n" + result.rule_base.describe())

    sim_cfg = cfg.build("sim", dt=args.dt, duration=float(wind.t[-1]))
    kinds = [ControllerKind.MLP, ControllerKind.RBF, ControllerKind.GFS, ControllerKind.FIXED_PITCH]
    jobs = [(k, models.get(k), wind, params, sim_cfg, out / k.value, not args.no_plots) for k in kinds]
    if args.jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_simulate_one, *zip(*jobs)))
    else:
        results = [_simulate_one(*job) for job in jobs]
    for k, paths in zip(kinds, results):
        for name, p in paths.items():
            artifacts[f"{k.value}_{name}"] = p

    traces = {k.value: Trace.from_csv(artifacts[f"{k.value}_trace"]) for k in kinds}
    report = compare(traces, min(30.0, 0.5 * sim_cfg.duration))
    artifacts["comparison"] = report.to_csv(out / "comparison.csv")
    if not args.no_plots:
        from .plotting import plot_comparison

        artifacts["comparison_plot"] = plot_comparison(traces, out / "comparison.svg")
    for r in report.rows:
        _say(f"{r.controller:>12s}  std {r.metrics.std_p_pu:.4f}  min {r.metrics.min_p_pu:.4f}  std reduction {r.std_reduction:+.3f}")

    manifest = RunManifest(
        command="repro",
        config_paths=[str(args.config)] if args.config else [],
        seeds={"wind": wind_cfg.seed, "mlp": cfg.build("mlp").seed, "rbf": cfg.build("rbf").seed, "ga": cfg.build("ga").seed},
        artifacts={k: str(v) for k, v in artifacts.items()},
        timestamp=datetime.now(timezone.utc).isoformat(timespec="seconds"),
    )
    _say(f"wrote {manifest.save(out / 'manifest.json')}")
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wecslab", description="Pitch-control experiments for a variable-speed wind turbine.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--seed", type=int, help="seed for every random stream")

    def wind_flags(p, duration_default=None):
        p.add_argument("--v-mean", type=float, help="mean wind speed (m/s)")
        p.add_argument("--ti", type=float, help="turbulence intensity (fraction)")
        p.add_argument("--duration", type=float, default=duration_default, help="length (s)")

    p = sub.add_parser("wind", parents=[common], help="generate a wind trace")
    wind_flags(p)
    p.add_argument("--dt", type=float, help="sample spacing (s)")
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_wind)

    p = sub.add_parser("refgen", parents=[common], help="tabulate the reference pitch schedule")
    p.add_argument("--v-min", type=float, help="lowest wind speed (default: rated)")
    p.add_argument("--v-max", type=float, help="highest wind speed (default: cut-out)")
    p.add_argument("--step", type=float, default=0.5, help="grid spacing (m/s)")
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_refgen)

    p = sub.add_parser("train", parents=[common], help="train an MLP or RBF controller")
    p.add_argument("kind", choices=("mlp", "rbf"))
    p.add_argument("--dataset", required=True, help="reference CSV from refgen")
    p.add_argument("--holdout", type=float, default=0.2, help="held-out fraction for the RMSE report (0 trains on all rows)")
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--epochs", type=int, help="maximum epochs")
    p.add_argument("--out", required=True, help="output prefix (writes <prefix>.json and <prefix>_history.csv)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evolve", parents=[common], help="evolve a fuzzy rule base")
    p.add_argument("--dataset", required=True, help="reference CSV from refgen")
    p.add_argument("--iterations", type=int)
    p.add_argument("--population", type=int)
    p.add_argument("--out", required=True, help="output prefix (writes <prefix>.rules and <prefix>_history.csv)")
    p.set_defaults(func=cmd_evolve)

    p = sub.add_parser("simulate", parents=[common], help="run one closed-loop simulation")
    p.add_argument("--controller", required=True, choices=[k.value for k in ControllerKind])
    p.add_argument("--model", help="trained network (.json) or rule base (.rules)")
    p.add_argument("--wind", help="wind CSV; generated from the wind flags when omitted")
    wind_flags(p)
    p.add_argument("--dt", type=float, help="integration step (s)")
    p.add_argument("--no-plots", action="store_true")
    p.add_argument("--out", required=True, help="output prefix")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("compare", help="compare traces driven by the same wind")
    p.add_argument("traces", nargs="+", help="trace CSV files")
    p.add_argument("--baseline", default="fixed_pitch")
    p.add_argument("--settle-time", type=float, default=30.0)
    p.add_argument("--no-plots", action="store_true")
    p.add_argument("--out", required=True, help="comparison CSV path")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("repro", parents=[common], help="regenerate the full artifact set")
    p.add_argument("--v-mean", type=float, default=16.0)
    p.add_argument("--ti", type=float, default=0.16)
    p.add_argument("--duration", type=float, default=600.0)
    p.add_argument("--dt", type=float, help="integration step (s)")
    p.add_argument("--jobs", type=int, default=1, help="parallel simulations")
    p.add_argument("--no-plots", action="store_true")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_repro)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"wecslab {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except TrainingDivergedError as exc:
        print(f"wecslab {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError, FloatingPointError) as exc:
        print(f"wecslab {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
