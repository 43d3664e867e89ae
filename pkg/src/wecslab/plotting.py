"""SVG line charts of simulation traces.

Figures are built on bare :class:`matplotlib.figure.Figure` objects (no
pyplot state), and written with a fixed hash salt and no date stamp so the
same trace always produces the same bytes.
"""
from __future__ import annotations

import io
from pathlib import Path
from typing import Mapping

import matplotlib

matplotlib.use("Agg")

from matplotlib.figure import Figure  # noqa: E402

from .config import atomic_write_text  # noqa: E402
from .simloop import Trace  # noqa: E402

_STYLE = {
    "svg.hashsalt": "wecslab",
    "svg.fonttype": "none",
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.linewidth": 0.8,
}

# (file suffix, column, y label, fixed y-range or None)
PANELS = (
    ("wind", "v_w", "wind speed (m/s)", None),
    ("pitch", "beta", "pitch angle (deg)", None),
    ("rotor_speed", "omega", "rotor speed (rad/s)", None),
    ("power", "p_pu", "output power (pu)", (0.0, 1.1)),
)


def _save_svg(fig: Figure, path: Path) -> Path:
    buf = io.StringIO()
    with matplotlib.rc_context(_STYLE):
        fig.savefig(buf, format="svg", metadata={"Date": None})
    return atomic_write_text(path, buf.getvalue())


def _new_axes(ylabel: str):
    with matplotlib.rc_context(_STYLE):
        fig = Figure(figsize=(6.4, 2.6))
        ax = fig.add_subplot()
        ax.set_xlabel("time (s)")
        ax.set_ylabel(ylabel)
    return fig, ax


def _include_range(ax, lo: float, hi: float) -> None:
    cur_lo, cur_hi = ax.get_ylim()
    ax.set_ylim(min(cur_lo, lo), max(cur_hi, hi))


def panel_figure(trace: Trace, panel: str) -> Figure:
    """Build the figure for one of the ``PANELS`` suffixes."""
    by_name = {p[0]: p for p in PANELS}
    if panel not in by_name:
        raise ValueError(f"unknown panel {panel!r}; choose from {', '.join(by_name)}")
    _, column, ylabel, must_show = by_name[panel]
    with matplotlib.rc_context(_STYLE):
        fig, ax = _new_axes(ylabel)
        ax.plot(trace.t, trace.column(column), color="C0")
        if column == "beta":
            ax.plot(trace.t, trace.beta_cmd, color="C1", linestyle="--", label="command")
            ax.legend(loc="upper right")
        if must_show:
            ax.axhline(1.0, color="0.4", linewidth=0.6, linestyle=":")
            _include_range(ax, *must_show)
        ax.set_xlim(trace.t[0], trace.t[-1])
        fig.tight_layout()
    return fig


def plot_trace(trace: Trace, prefix: str | Path) -> dict[str, Path]:
    """Write one SVG per panel as ``<prefix>_<panel>.svg``; returns the paths."""
    prefix = Path(prefix)
    return {
        suffix: _save_svg(panel_figure(trace, suffix), prefix.with_name(f"{prefix.name}_{suffix}.svg"))
        for suffix, *_ in PANELS
    }


def plot_comparison(traces: Mapping[str, Trace], path: str | Path) -> Path:
    """Overlay the power traces of several controllers on one chart."""
    with matplotlib.rc_context(_STYLE):
        fig, ax = _new_axes("output power (pu)")
        for name, trace in traces.items():
            ax.plot(trace.t, trace.p_pu, label=name)
        ax.axhline(1.0, color="0.4", linewidth=0.6, linestyle=":")
        _include_range(ax, 0.0, 1.1)
        ax.legend(loc="upper right", ncol=len(traces))
        fig.tight_layout()
    return _save_svg(fig, Path(path))
