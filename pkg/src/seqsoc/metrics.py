"""Error, convergence and voltage-fit metrics for estimation traces."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .pipeline import SequentialResult

# Per-quantity convergence bands: relative for parameters, absolute for SoC.
DEFAULT_BANDS = {"r_s": 0.05, "r_t": 0.15, "tau": 0.15, "q_b": 0.02, "soc": 0.01}
HOLD_SECONDS = 120.0
SETTLE_SECONDS = 600.0


def convergence_time(t, err, band: float, hold: float = HOLD_SECONDS) -> float | None:
    """Earliest time (relative to ``t[0]``) from which ``|err| <= band`` holds for ``hold`` seconds.

    A run ending while still in band counts only if the remaining stretch is
    itself at least ``hold`` long.  Returns ``None`` when never converged.
    """
    t = np.asarray(t, dtype=float)
    inside = np.abs(np.asarray(err, dtype=float)) <= band
    start = None
    for k in range(len(t)):
        if inside[k]:
            if start is None:
                start = k
            if t[k] - t[start] >= hold:
                return float(t[start] - t[0])
        else:
            start = None
    return None


def rmse(a, b) -> float:
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    return float(np.sqrt(np.mean(d**2))) if d.size else 0.0


def static_error(t, err, settle: float = SETTLE_SECONDS) -> float:
    """Mean absolute error after ``settle`` seconds from the start of the trace."""
    t = np.asarray(t, dtype=float)
    err = np.abs(np.asarray(err, dtype=float))
    window = t - t[0] >= settle
    if not np.any(window):
        return math.nan
    return float(np.mean(err[window]))


@dataclass
class QuantityMetrics:
    estimate: float
    truth: float | None = None
    abs_error: float | None = None
    rel_error: float | None = None
    convergence_time: float | None = None
    converged: bool | None = None


@dataclass
class MetricsReport:
    mode: str
    duration: float
    quantities: dict[str, QuantityMetrics]
    voltage_rmse: float
    innovation_mean: float
    innovation_std: float
    soc_static_error: float | None = None
    soc_max_error_after_settle: float | None = None
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def rows(self) -> list[tuple]:
        out = []
        for name, q in self.quantities.items():
            out.append((name, q.estimate, q.truth, q.abs_error, q.rel_error, q.convergence_time))
        return out


def _quantity(trace, name: str, band: float, relative: bool) -> QuantityMetrics:
    series = trace.series(name)
    est = float(series[-1])
    truth = trace.truth.get(name)
    if truth is None:
        return QuantityMetrics(est)
    truth = np.asarray(truth, dtype=float)
    err = series - truth
    scale = np.abs(truth) if relative else 1.0
    conv = convergence_time(trace.t, err / scale, band)
    final_truth = float(truth[-1])
    return QuantityMetrics(
        estimate=est,
        truth=final_truth,
        abs_error=abs(est - final_truth),
        rel_error=abs(est - final_truth) / abs(final_truth) if final_truth else None,
        convergence_time=conv,
        converged=conv is not None and abs(err[-1] / (scale[-1] if relative else 1.0)) <= band,
    )


def build_report(
    result: SequentialResult, bands: dict | None = None, settle: float = SETTLE_SECONDS
) -> MetricsReport:
    bands = {**DEFAULT_BANDS, **(bands or {})}
    soc_trace = result.traces["step3"]
    quantities: dict[str, QuantityMetrics] = {}
    if result.mode == "sequential":
        sources = {"r_s": result.traces["step1"], "r_t": result.traces["step2"], "tau": result.traces["step2"]}
    else:
        sources = {"r_s": soc_trace, "r_t": soc_trace, "tau": soc_trace}
    sources.update(q_b=soc_trace, soc=soc_trace)
    for name, trace in sources.items():
        quantities[name] = _quantity(trace, name, bands[name], relative=name != "soc")

    innov = soc_trace.innovations
    report = MetricsReport(
        mode=result.mode,
        duration=float(soc_trace.t[-1] - soc_trace.t[0]) if len(soc_trace.t) else 0.0,
        quantities=quantities,
        voltage_rmse=rmse(soc_trace.v_pred, soc_trace.v_meas),
        innovation_mean=float(np.mean(innov)),
        innovation_std=float(np.std(innov)),
    )
    z_true = soc_trace.truth.get("soc")
    if z_true is not None:
        err = soc_trace.series("soc") - z_true
        report.soc_static_error = static_error(soc_trace.t, err, settle)
        after = soc_trace.t - soc_trace.t[0] >= settle
        report.soc_max_error_after_settle = float(np.max(np.abs(err[after]))) if np.any(after) else None
    for name, q in quantities.items():
        if q.truth is not None and q.convergence_time is None:
            report.notes.append(f"{name} not converged")
    return report
