"""Scenario configuration: YAML (or JSON) text to typed dataclasses and back.

Every section is a dataclass with defaults, so an empty file is a valid
scenario reproducing the 20 degC experiment.  Unknown keys and bad values
are reported with the line they appear on.
"""

from __future__ import annotations

import dataclasses
import json
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .cell import CellSpec, EcmParams, OcvCurve, preset
from .pipeline import EstimatorNoise, Inits, StepPlan, default_plans


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, source: str | None = None):
        where = source or "<config>"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}")
        self.line = line


@dataclass
class CellConfig:
    """Either a preset name or a complete inline cell."""

    preset: str | None = "samsung-18650-20C"
    q_b: float | None = None
    eta: float | None = None
    r_s: float | None = None
    r_t: float | None = None
    tau: float | None = None
    ocv: tuple[float, ...] | None = None
    sigma_v: float | None = None  # overrides the preset's noise when set
    name: str | None = None


@dataclass
class PlanConfig:
    duration: float
    t_s: float
    frequencies: tuple[float, ...] = ()
    amplitudes: tuple[float, ...] = ()
    f_3db: float | None = None
    hold_up: float = 0.0
    gap_before: float = 0.0
    oversample: int = 10


@dataclass
class PlansConfig:
    step1: PlanConfig | None = None
    step2: PlanConfig | None = None
    step3: PlanConfig | None = None


@dataclass
class DriveConfig:
    source: str = "synthetic"  # synthetic | csv
    path: str | None = None
    peak: float | None = None  # A, defaults to 1C of the cell
    seed: int | None = None  # defaults to a sub-seed of the top-level seed


@dataclass
class DataConfig:
    source: str = "simulate"  # simulate | csv
    step1: str | None = None
    step2: str | None = None
    step3: str | None = None


@dataclass
class EstimatorConfig:
    rc_sensitivity: str = "one-step"  # one-step | recursive
    capacity_sensitivity: str = "recursive"
    soc_drift: bool = True


@dataclass
class CompareConfig:
    seeds: int = 20
    macro_ratio: int = 10
    frequencies: tuple[float, ...] = (0.01, 0.05, 0.1)
    amplitude: float | None = None  # A per tone, defaults to 0.5C
    duration: float | None = None  # defaults to the step 3 duration
    include_drive: bool = False
    sensitivity: str = "recursive"
    jobs: int = 1


@dataclass
class AnalyzeConfig:
    frequencies: tuple[float, ...] = (0.4, 0.004, 0.0004)
    t_c: float = 80.0
    amplitude: float = 1.0
    z0: float = 0.8
    z_range: tuple[float, float] = (0.3, 0.9)
    a: float | None = None  # OCV slope, fitted over z_range when unset


@dataclass
class MetricsConfig:
    settle: float = 600.0
    soc_band: float = 0.01
    q_b_band: float = 0.02
    rc_band: float = 0.15
    r_s_band: float = 0.05


@dataclass
class ScenarioConfig:
    seed: int = 0
    z0: float = 0.8
    out: str = "out"
    cell: CellConfig = field(default_factory=CellConfig)
    plans: PlansConfig = field(default_factory=PlansConfig)
    drive: DriveConfig = field(default_factory=DriveConfig)
    data: DataConfig = field(default_factory=DataConfig)
    inits: Inits = field(default_factory=Inits)
    noise: EstimatorNoise = field(default_factory=EstimatorNoise)
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    compare: CompareConfig = field(default_factory=CompareConfig)
    analyze: AnalyzeConfig = field(default_factory=AnalyzeConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)

    # -- resolution -------------------------------------------------------

    def cell_spec(self) -> CellSpec:
        c = self.cell
        inline = [c.q_b, c.eta, c.r_s, c.r_t, c.tau, c.ocv]
        if c.preset is not None:
            base = preset(c.preset)
            spec = CellSpec(
                q_b=c.q_b if c.q_b is not None else base.q_b,
                eta=c.eta if c.eta is not None else base.eta,
                ecm=EcmParams(
                    r_s=c.r_s if c.r_s is not None else base.ecm.r_s,
                    r_t=c.r_t if c.r_t is not None else base.ecm.r_t,
                    tau=c.tau if c.tau is not None else base.ecm.tau,
                ),
                ocv=OcvCurve(*c.ocv) if c.ocv is not None else base.ocv,
                sigma_v=base.sigma_v,
                name=c.name or base.name,
            )
        else:
            if any(v is None for v in inline):
                raise ValueError("inline cell needs q_b, eta, r_s, r_t, tau and ocv (5 coefficients)")
            if len(c.ocv) != 5:
                raise ValueError("ocv needs exactly 5 coefficients")
            spec = CellSpec(c.q_b, c.eta, EcmParams(c.r_s, c.r_t, c.tau), OcvCurve(*c.ocv), name=c.name or "inline")
        if c.sigma_v is not None:
            spec = spec.with_noise(c.sigma_v)
        return spec

    def step_plans(self) -> tuple[StepPlan, StepPlan, StepPlan]:
        spec = self.cell_spec()
        defaults = default_plans(spec.q_b)
        plans = []
        for default, given in zip(defaults, (self.plans.step1, self.plans.step2, self.plans.step3)):
            plans.append(StepPlan(**dataclasses.asdict(given)) if given is not None else default)
        return tuple(plans)


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------


def _line_index(text: str) -> dict[tuple, int]:
    """Map key paths to 1-based line numbers using the YAML node tree."""
    lines: dict[tuple, int] = {}
    try:
        root = yaml.compose(text)
    except yaml.YAMLError:
        return lines

    def walk(node, path):
        if isinstance(node, yaml.MappingNode):
            for key, value in node.value:
                sub = path + (key.value,)
                lines[sub] = key.start_mark.line + 1
                walk(value, sub)

    if root is not None:
        walk(root, ())
    return lines


def _unwrap_optional(tp):
    if typing.get_origin(tp) in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        return args[0] if len(args) == 1 else tp, True
    return tp, False


def _coerce(value, tp, path, lines, source):
    line = lines.get(path)
    tp, optional = _unwrap_optional(tp)
    if value is None:
        if optional:
            return None
        raise ConfigError(f"{'.'.join(path)} must not be null", line, source)
    if dataclasses.is_dataclass(tp):
        return _build(tp, value, path, lines, source)
    origin = typing.get_origin(tp)
    try:
        if origin is tuple:
            if not isinstance(value, (list, tuple)):
                raise TypeError
            return tuple(float(v) for v in value)
        if tp is bool:
            if not isinstance(value, bool):
                raise TypeError
            return value
        if tp is int:
            if isinstance(value, bool) or int(value) != value:
                raise TypeError
            return int(value)
        if tp is float:
            if isinstance(value, bool):
                raise TypeError
            return float(value)
        if tp is str:
            if not isinstance(value, str):
                raise TypeError
            return value
    except (TypeError, ValueError):
        raise ConfigError(
            f"{'.'.join(path)}: expected {getattr(tp, '__name__', tp)}, got {value!r}", line, source
        ) from None
    return value


def _build(cls, mapping, path, lines, source):
    line = lines.get(path)
    if not isinstance(mapping, dict):
        raise ConfigError(f"{'.'.join(path) or 'top level'} must be a mapping", line, source)
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    for key in mapping:
        if key not in names:
            raise ConfigError(
                f"unknown key {'.'.join(path + (str(key),))!r}; expected one of {sorted(names)}",
                lines.get(path + (key,)),
                source,
            )
    kwargs = {k: _coerce(v, hints[k], path + (k,), lines, source) for k, v in mapping.items()}
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{'.'.join(path) or 'config'}: {exc}", line, source) from None


def parse_config(text: str, source: str | None = None, fmt: str = "yaml") -> ScenarioConfig:
    """Parse YAML (default) or JSON text into a validated :class:`ScenarioConfig`."""
    try:
        data = json.loads(text) if fmt == "json" else yaml.safe_load(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg}", exc.lineno, source) from None
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"invalid YAML: {getattr(exc, 'problem', exc)}", mark.line + 1 if mark else None, source) from None
    lines = _line_index(text) if fmt == "yaml" else {}
    config = _build(ScenarioConfig, data or {}, (), lines, source)
    validate(config, lines, source)
    return config


def validate(config: ScenarioConfig, lines: dict | None = None, source: str | None = None) -> None:
    lines = lines or {}

    def fail(path, msg):
        raise ConfigError(msg, lines.get(path), source)

    try:
        config.cell_spec()
    except KeyError as exc:
        fail(("cell", "preset"), str(exc.args[0]))
    except ValueError as exc:
        fail(("cell",), str(exc))
    try:
        config.step_plans()
    except (TypeError, ValueError) as exc:
        fail(("plans",), str(exc))
    if config.drive.source not in ("synthetic", "csv"):
        fail(("drive", "source"), f"drive.source must be 'synthetic' or 'csv', got {config.drive.source!r}")
    if config.drive.source == "csv" and not config.drive.path:
        fail(("drive", "source"), "drive.source 'csv' needs drive.path")
    if config.data.source not in ("simulate", "csv"):
        fail(("data", "source"), f"data.source must be 'simulate' or 'csv', got {config.data.source!r}")
    if config.data.source == "csv":
        for step in ("step1", "step2", "step3"):
            if not getattr(config.data, step):
                fail(("data", "source"), f"data.source 'csv' needs data.{step}")
    for key in ("rc_sensitivity", "capacity_sensitivity"):
        if getattr(config.estimator, key) not in ("one-step", "recursive"):
            fail(("estimator", key), f"estimator.{key} must be 'one-step' or 'recursive'")
    if config.compare.sensitivity not in ("one-step", "recursive"):
        fail(("compare", "sensitivity"), "compare.sensitivity must be 'one-step' or 'recursive'")
    if config.compare.seeds < 1:
        fail(("compare", "seeds"), "compare.seeds must be >= 1")
    if config.compare.macro_ratio < 1:
        fail(("compare", "macro_ratio"), "compare.macro_ratio must be >= 1")
    if config.compare.jobs < 1:
        fail(("compare", "jobs"), "compare.jobs must be >= 1")
    if config.analyze.t_c <= 0:
        fail(("analyze", "t_c"), "analyze.t_c must be positive")
    if any(f <= 0 for f in config.analyze.frequencies):
        fail(("analyze", "frequencies"), "analyze.frequencies must be positive")
    if len(config.analyze.z_range) != 2 or not 0 < config.analyze.z_range[0] < config.analyze.z_range[1] < 1:
        fail(("analyze", "z_range"), "analyze.z_range must be [lo, hi] inside (0, 1)")
    if not 0 < config.z0 < 1:
        fail(("z0",), "z0 must lie in (0, 1)")


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", source=str(path)) from None
    fmt = "json" if path.suffix.lower() == ".json" else "yaml"
    return parse_config(text, str(path), fmt)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def _plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, tuple):
        return [_plain(v) for v in obj]
    return obj


def config_to_dict(config: ScenarioConfig) -> dict:
    return _plain(config)


def dump_config(config: ScenarioConfig, fmt: str = "yaml") -> str:
    data = config_to_dict(config)
    if fmt == "json":
        return json.dumps(data, indent=2) + "\n"
    return yaml.safe_dump(data, sort_keys=False, default_flow_style=None)
