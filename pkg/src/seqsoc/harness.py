"""Experiment commands behind the CLI verbs.

Each command takes a resolved :class:`ScenarioConfig`, a seed and an output
directory, writes its data files atomically and returns a JSON-ready summary.
Data files depend only on (config, seed); the summary carries a timestamp.
"""

from __future__ import annotations

import datetime as _dt
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import io as sio
from .cell import CellSpec, linearize_ocv
from .config import ConfigError, ScenarioConfig, config_to_dict
from .metrics import build_report
from .pipeline import (
    DivergenceError,
    SequentialResult,
    attach_truth,
    concurrent_profile,
    derive_seed,
    run_concurrent_baseline,
    run_sequential_on_data,
    simulate_sequential_data,
)
from .signals import (
    CurrentProfile,
    analysis_duration,
    analysis_sample_period,
    component_amplitude_oracle,
    component_breakdown,
    drive_cycle_profile,
    sum_profiles,
)

log = logging.getLogger(__name__)

STEPS = ("step1", "step2", "step3")


def _depth(label: str):
    return None if label == "recursive" else 1


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _resolve(base_dir, path) -> Path:
    p = Path(path)
    return p if p.is_absolute() or base_dir is None else Path(base_dir) / p


def resolve_drive(config: ScenarioConfig, spec: CellSpec, seed: int, base_dir=None) -> CurrentProfile:
    """Drive-cycle current for Step 3: synthetic from a sub-seed, or loaded from CSV."""
    plan = config.step_plans()[2]
    if config.drive.source == "csv":
        try:
            profile = sio.read_profile_csv(_resolve(base_dir, config.drive.path))
        except OSError as exc:
            raise ConfigError(f"drive.path: {exc.strerror}: {config.drive.path}") from None
        if abs(profile.t_s - plan.t_s) > sio.UNIFORM_TOL:
            raise ConfigError(f"drive CSV sampled at {profile.t_s} s, step 3 expects {plan.t_s} s")
        if len(profile) < plan.samples:
            raise ConfigError(f"drive CSV has {len(profile)} samples, step 3 needs {plan.samples}")
        return profile
    drive_seed = config.drive.seed if config.drive.seed is not None else derive_seed(seed, "drive")
    peak = config.drive.peak if config.drive.peak is not None else spec.q_b
    return drive_cycle_profile(plan.t_s, plan.duration, peak, drive_seed)


def _estimator_kwargs(config: ScenarioConfig) -> dict:
    return dict(
        sensitivity_depth=_depth(config.estimator.rc_sensitivity),
        soc_drift=config.estimator.soc_drift,
        capacity_sensitivity_depth=_depth(config.estimator.capacity_sensitivity),
    )


def _bands(config: ScenarioConfig) -> dict:
    m = config.metrics
    return {"r_s": m.r_s_band, "r_t": m.rc_band, "tau": m.rc_band, "q_b": m.q_b_band, "soc": m.soc_band}


def _ordered(data: dict) -> list[str]:
    return sorted(data, key=lambda k: float(data[k].t[0]))


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def cmd_simulate(config: ScenarioConfig, seed: int, out, plots: bool = True, base_dir=None) -> dict:
    out = Path(out)
    spec = config.cell_spec()
    plans = config.step_plans()
    drive = resolve_drive(config, spec, seed, base_dir)
    data = simulate_sequential_data(spec, plans, drive, seed, config.z0)
    files = []
    for name in _ordered(data):
        files.append(sio.write_measurement_csv(out / f"{name}.csv", data[name]))
    blocks = [data[k] for k in _ordered(data)]
    full = sio.write_table(
        out / "full_run.csv",
        ("t_s", "i_A", "v_V", "z_true", "vc_true"),
        [np.concatenate([getattr(b, a) for b in blocks]) for a in ("t", "i", "v", "z_true", "vc_true")],
    )
    files.append(full)
    files.append(sio.write_profile_csv(out / "drive.csv", drive))
    if plots:
        from .plotting import plot_measurements

        files.append(plot_measurements(data, out / "timeline.png"))
    summary = {
        "command": "simulate",
        "generated_at": _now(),
        "seed": seed,
        "cell": spec.name,
        "blocks": {
            name: {"t_start_s": float(m.t[0]), "samples": len(m), "t_s": m.t_s, "duration_s": len(m) * m.t_s}
            for name, m in data.items()
        },
        "files": sorted(p.name for p in files),
        "config": config_to_dict(config),
    }
    sio.write_json(out / "simulate_summary.json", summary)
    return summary


# ---------------------------------------------------------------------------
# estimate
# ---------------------------------------------------------------------------


def load_csv_data(config: ScenarioConfig, base_dir=None) -> dict:
    data = {}
    for step in STEPS:
        path = _resolve(base_dir, getattr(config.data, step))
        try:
            data[step] = sio.read_measurement_csv(path)
        except OSError as exc:
            raise ConfigError(f"data.{step}: {exc.strerror}: {path}") from None
    return data


def run_estimate(config: ScenarioConfig, seed: int, base_dir=None) -> SequentialResult:
    spec = config.cell_spec()
    plans = config.step_plans()
    if config.data.source == "csv":
        data = load_csv_data(config, base_dir)
        return run_sequential_on_data(
            data, plans, config.inits, config.noise, spec.eta, spec.ocv, **_estimator_kwargs(config)
        )
    drive = resolve_drive(config, spec, seed, base_dir)
    data = simulate_sequential_data(spec, plans, drive, seed, config.z0)
    result = run_sequential_on_data(
        data, plans, config.inits, config.noise, spec.eta, spec.ocv, **_estimator_kwargs(config)
    )
    return attach_truth(result, spec)


def cmd_estimate(config: ScenarioConfig, seed: int, out, plots: bool = True, base_dir=None) -> dict:
    out = Path(out)
    result = run_estimate(config, seed, base_dir)
    report = build_report(result, _bands(config), config.metrics.settle)
    files = [sio.write_trace_csv(out / f"trace_{step}.csv", result.traces[step]) for step in STEPS]
    if plots:
        from .plotting import plot_estimation

        files.append(plot_estimation(result, out / "estimation.png"))
    summary = {
        "command": "estimate",
        "generated_at": _now(),
        "seed": seed,
        "data_source": config.data.source,
        "estimates": result.final_estimates(),
        "metrics": report.to_dict(),
        "provenance": result.provenance,
        "flags": {step: result.traces[step].flags for step in STEPS},
        "files": sorted(p.name for p in files),
        "config": config_to_dict(config),
    }
    sio.write_json(out / "estimate_summary.json", summary)
    summary["report"] = report
    return summary


# ---------------------------------------------------------------------------
# compare
# ---------------------------------------------------------------------------

COMPARE_COLUMNS = (
    "seed",
    "arm",
    "diverged",
    "soc_static_error",
    "soc_convergence_time_s",
    "r_s_rel_error",
    "r_t_rel_error",
    "tau_rel_error",
    "q_b_rel_error",
    "r_t_converged",
    "tau_converged",
    "voltage_rmse_V",
)


def concurrent_drive(config: ScenarioConfig, spec: CellSpec, seed: int, base_dir=None) -> CurrentProfile:
    plan = config.step_plans()[2]
    c = config.compare
    duration = c.duration if c.duration is not None else plan.duration
    profile = concurrent_profile(spec.q_b, duration, plan.t_s, c.frequencies)
    if c.amplitude is not None:
        profile = CurrentProfile(profile.t_s, profile.samples * c.amplitude / (0.5 * spec.q_b), profile.label)
    if c.include_drive:
        drive = resolve_drive(config, spec, seed, base_dir)
        profile = sum_profiles([profile, drive.head(len(profile))])
    return profile


def _row(seed: int, arm: str, result: SequentialResult | None, config: ScenarioConfig) -> dict:
    row = {h: None for h in COMPARE_COLUMNS}
    row.update(seed=seed, arm=arm, diverged=result is None)
    if result is None:
        return row
    report = build_report(result, _bands(config), config.metrics.settle)
    q = report.quantities
    band = config.metrics.rc_band
    row.update(
        soc_static_error=report.soc_static_error,
        soc_convergence_time_s=q["soc"].convergence_time,
        r_s_rel_error=q["r_s"].rel_error,
        r_t_rel_error=q["r_t"].rel_error,
        tau_rel_error=q["tau"].rel_error,
        q_b_rel_error=q["q_b"].rel_error,
        r_t_converged=q["r_t"].rel_error <= band,
        tau_converged=q["tau"].rel_error <= band,
        voltage_rmse_V=report.voltage_rmse,
    )
    return row


def _compare_one(args) -> tuple[list[dict], dict]:
    config, seed, base_dir = args
    logging.getLogger("seqsoc").setLevel(logging.ERROR)
    spec = config.cell_spec()
    plans = config.step_plans()
    traces = {}
    try:
        drive = resolve_drive(config, spec, seed, base_dir)
        data = simulate_sequential_data(spec, plans, drive, seed, config.z0)
        seq = attach_truth(
            run_sequential_on_data(
                data, plans, config.inits, config.noise, spec.eta, spec.ocv, **_estimator_kwargs(config)
            ),
            spec,
        )
        traces["sequential"] = seq.traces["step3"]
    except DivergenceError:
        seq = None
    try:
        conc = run_concurrent_baseline(
            spec,
            concurrent_drive(config, spec, seed, base_dir),
            config.inits,
            config.noise,
            seed=seed,
            macro_ratio=config.compare.macro_ratio,
            z0=config.z0,
            sensitivity_depth=_depth(config.compare.sensitivity),
        )
        traces["concurrent"] = conc.traces["step3"]
    except DivergenceError:
        conc = None
    return [_row(seed, "sequential", seq, config), _row(seed, "concurrent", conc, config)], traces


def _median(values) -> float | None:
    vals = [float(v) for v in values if v is not None and not math.isnan(float(v))]
    return float(np.median(vals)) if vals else None


def summarize_compare(rows: list[dict]) -> dict:
    out = {}
    for arm in ("sequential", "concurrent"):
        mine = [r for r in rows if r["arm"] == arm]
        ok = [r for r in mine if not r["diverged"]]
        out[arm] = {
            "runs": len(mine),
            "diverged": len(mine) - len(ok),
            "median_soc_static_error": _median(r["soc_static_error"] for r in ok),
            "median_soc_convergence_time_s": _median(r["soc_convergence_time_s"] for r in ok),
            "median_r_t_rel_error": _median(r["r_t_rel_error"] for r in ok),
            "median_tau_rel_error": _median(r["tau_rel_error"] for r in ok),
            "median_q_b_rel_error": _median(r["q_b_rel_error"] for r in ok),
            "rc_failure_fraction": (
                sum(1 for r in ok if not (r["r_t_converged"] and r["tau_converged"])) + len(mine) - len(ok)
            )
            / max(len(mine), 1),
            "median_voltage_rmse_V": _median(r["voltage_rmse_V"] for r in ok),
        }
    return out


def run_compare(config: ScenarioConfig, seed: int, base_dir=None) -> tuple[list[dict], dict]:
    seeds = [seed + k for k in range(config.compare.seeds)]
    jobs = [(config, s, base_dir) for s in seeds]
    if config.compare.jobs > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=config.compare.jobs) as pool:
            results = list(pool.map(_compare_one, jobs))
    else:
        results = [_compare_one(j) for j in jobs]
    rows = [row for pair, _ in results for row in pair]
    return rows, results[0][1]


def cmd_compare(config: ScenarioConfig, seed: int, out, plots: bool = True, base_dir=None) -> dict:
    out = Path(out)
    rows, first_traces = run_compare(config, seed, base_dir)
    summary_table = summarize_compare(rows)
    files = [sio.write_rows(out / "compare_seeds.csv", COMPARE_COLUMNS, rows)]
    metrics = list(summary_table["sequential"])
    files.append(
        sio.write_rows(
            out / "compare_summary.csv",
            ("metric", "sequential", "concurrent"),
            [(m, summary_table["sequential"][m], summary_table["concurrent"][m]) for m in metrics],
        )
    )
    if plots:
        from .plotting import plot_compare

        files.append(plot_compare(rows, first_traces, out / "compare.png"))
    summary = {
        "command": "compare",
        "generated_at": _now(),
        "seed": seed,
        "seeds": [seed + k for k in range(config.compare.seeds)],
        "summary": summary_table,
        "files": sorted(p.name for p in files),
        "config": config_to_dict(config),
    }
    sio.write_json(out / "compare_summary.json", summary)
    summary["rows"] = rows
    return summary


# ---------------------------------------------------------------------------
# analyze
# ---------------------------------------------------------------------------

AMPLITUDE_COLUMNS = (
    "f_Hz",
    "t_s",
    "init_V",
    "socvar_V",
    "ohmic_V",
    "rc_V",
    "socvar_oracle_V",
    "ohmic_oracle_V",
    "rc_oracle_V",
    "ohmic_over_rc",
    "ohmic_over_socvar",
    "rc_over_ohmic",
)


def run_analyze(config: ScenarioConfig) -> list:
    spec = config.cell_spec()
    a_cfg = config.analyze
    a_fit, b_fit = linearize_ocv(spec.ocv, *a_cfg.z_range)
    a = a_cfg.a if a_cfg.a is not None else a_fit
    out = []
    for f in a_cfg.frequencies:
        t_s = analysis_sample_period(f)
        duration = analysis_duration(f, a_cfg.t_c, spec.ecm.tau)
        bd = component_breakdown(spec, a, f, a_cfg.amplitude, a_cfg.t_c, duration, t_s, a_cfg.z0, b_fit)
        oracle = component_amplitude_oracle(spec, a, f, a_cfg.amplitude, a_cfg.t_c)
        out.append((bd, oracle, t_s))
    return out


def cmd_analyze(config: ScenarioConfig, seed: int, out, plots: bool = True, base_dir=None) -> dict:
    summary = {"command": "analyze", "generated_at": _now(), "seed": seed, "frequencies": [], "files": []}
    if not config.analyze.frequencies:
        return summary
    out = Path(out)
    files = []
    rows = []
    for bd, oracle, t_s in run_analyze(config):
        amp = bd.amplitudes
        files.append(sio.write_breakdown_csv(out / f"breakdown_{bd.f:g}Hz.csv", bd))
        if plots:
            from .plotting import plot_breakdown

            files.append(plot_breakdown(bd, out / f"breakdown_{bd.f:g}Hz.png"))
        rows.append(
            {
                "f_Hz": bd.f,
                "t_s": t_s,
                "init_V": amp["init"],
                "socvar_V": amp["socvar"],
                "ohmic_V": amp["ohmic"],
                "rc_V": amp["rc"],
                "socvar_oracle_V": oracle["socvar"],
                "ohmic_oracle_V": oracle["ohmic"],
                "rc_oracle_V": oracle["rc"],
                "ohmic_over_rc": amp["ohmic"] / amp["rc"],
                "ohmic_over_socvar": amp["ohmic"] / amp["socvar"],
                "rc_over_ohmic": amp["rc"] / amp["ohmic"],
            }
        )
    files.append(sio.write_rows(out / "breakdown_amplitudes.csv", AMPLITUDE_COLUMNS, rows))
    summary.update(frequencies=rows, files=sorted(p.name for p in files), config=config_to_dict(config))
    sio.write_json(out / "analyze_summary.json", summary)
    return summary


COMMANDS = {
    "simulate": cmd_simulate,
    "estimate": cmd_estimate,
    "compare": cmd_compare,
    "analyze": cmd_analyze,
}

