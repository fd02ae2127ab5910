"""PNG figures for the CLI report path.  Uses the non-interactive Agg backend."""

from __future__ import annotations

import os
import tempfile
from contextlib import contextmanager
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0
COLORS = ["#1b6ca8", "#d1495b", "#66a182", "#edae49", "#5c4d7d"]

STYLE = {
    "axes.prop_cycle": matplotlib.cycler(color=COLORS),
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "font.size": 8,
    "axes.labelsize": 8,
    "axes.titlesize": 9,
    "legend.fontsize": 7,
    "legend.frameon": False,
    "xtick.labelsize": 7,
    "ytick.labelsize": 7,
    "lines.linewidth": 1.0,
    "figure.dpi": 100,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
}


def fig_size(width: float = 6.5, rows: int = 1) -> tuple[float, float]:
    return width, width * GOLDEN * 0.55 * rows + 0.4


@contextmanager
def styled():
    with plt.rc_context(STYLE):
        yield


def save(fig, path) -> Path:
    """Save then rename so a reader never sees a half-written image."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.stem}.", suffix=".png")
    os.close(fd)
    try:
        fig.savefig(tmp, format="png", metadata={"Software": None})
        os.replace(tmp, path)
    finally:
        plt.close(fig)
        if os.path.exists(tmp):
            os.unlink(tmp)
    return path


def plot_breakdown(bd, path) -> Path:
    """Four voltage components over the last periods of a single-tone injection."""
    with styled():
        fig, (ax_i, ax_v) = plt.subplots(2, 1, sharex=True, figsize=fig_size(rows=2))
        n_show = int(round(3.0 / (bd.f * (bd.t[1] - bd.t[0]))))
        sl = slice(max(len(bd.t) - n_show, 0), None)
        t = bd.t[sl] - bd.t[sl][0]
        ax_i.plot(t, bd.current[sl], color="k")
        ax_i.set_ylabel("current [A]")
        ax_i.set_title(f"{bd.f:g} Hz, T_c = {bd.t_c:g} s")
        for name in ("init", "socvar", "ohmic", "rc"):
            ax_v.plot(t, 1e3 * getattr(bd, name)[sl], label=name)
        ax_v.set_ylabel("voltage [mV]")
        ax_v.set_xlabel("time [s]")
        ax_v.legend(ncol=4, loc="upper right")
        return save(fig, path)


def plot_measurements(data: dict, path) -> Path:
    """Current, voltage and true SoC across every simulated block."""
    with styled():
        fig, axes = plt.subplots(3, 1, sharex=True, figsize=fig_size(rows=3))
        for name in sorted(data, key=lambda k: data[k].t[0]):
            m = data[name]
            axes[0].plot(m.t, m.i, lw=0.5)
            axes[1].plot(m.t, m.v, lw=0.5)
            if m.z_true is not None:
                axes[2].plot(m.t, 100 * m.z_true, color="k")
        axes[0].set_ylabel("current [A]")
        axes[1].set_ylabel("voltage [V]")
        axes[2].set_ylabel("true SoC [%]")
        axes[2].set_xlabel("time [s]")
        return save(fig, path)


def _trace_panel(ax, trace, name, scale=1.0, label=None, unit=""):
    ax.plot(trace.t, scale * trace.series(name), label=label or f"{name} estimate")
    if name in trace.truth:
        ax.plot(trace.t, scale * np.asarray(trace.truth[name]), "k--", lw=0.8, label="truth")
    ax.set_ylabel(f"{name} {unit}".strip())


def plot_estimation(result, path) -> Path:
    """Parameter, SoC, capacity and voltage-fit traces of one run."""
    traces = result.traces
    tr3 = traces["step3"]
    with styled():
        fig, axes = plt.subplots(3, 2, figsize=fig_size(rows=3))
        axes = axes.ravel()
        if result.mode == "sequential":
            _trace_panel(axes[0], traces["step1"], "r_s", unit="[ohm]")
            _trace_panel(axes[1], traces["step2"], "r_t", unit="[ohm]")
            _trace_panel(axes[2], traces["step2"], "tau", unit="[s]")
        else:
            for ax, name, unit in zip(axes[:3], ("r_s", "r_t", "tau"), ("[ohm]", "[ohm]", "[s]")):
                _trace_panel(ax, tr3, name, unit=unit)
        _trace_panel(axes[3], tr3, "soc", scale=100.0, unit="[%]")
        _trace_panel(axes[4], tr3, "q_b", unit="[Ah]")
        axes[5].plot(tr3.t, 1e3 * (tr3.v_pred - tr3.v_meas), lw=0.5)
        axes[5].set_ylabel("v_pred - v_meas [mV]")
        for ax in axes:
            ax.set_xlabel("time [s]")
        axes[3].legend(loc="best")
        fig.suptitle(f"{result.mode} estimation")
        fig.tight_layout()
        return save(fig, path)


def plot_compare(per_seed: list[dict], traces: dict, path) -> Path:
    """Post-convergence SoC error per arm plus one pair of SoC error traces."""
    arms = sorted({row["arm"] for row in per_seed})
    with styled():
        fig, (ax_box, ax_tr) = plt.subplots(1, 2, figsize=fig_size())
        errs = [[100 * row["soc_static_error"] for row in per_seed if row["arm"] == arm] for arm in arms]
        ax_box.boxplot(errs, tick_labels=arms)
        ax_box.set_ylabel("mean |SoC error| after settling [%]")
        for arm, trace in traces.items():
            if "soc" in trace.truth:
                ax_tr.plot(trace.t - trace.t[0], 100 * (trace.series("soc") - trace.truth["soc"]), label=arm)
        ax_tr.set_xlabel("time [s]")
        ax_tr.set_ylabel("SoC error [%]")
        ax_tr.legend()
        fig.tight_layout()
        return save(fig, path)
