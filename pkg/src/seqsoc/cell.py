"""First-order equivalent-circuit cell: OCV curve, dynamics and noisy simulation.

Sign convention is fixed project-wide: positive current discharges the cell.
Capacity is stored in ampere-hours and converted with 3600 s/h inside the
dynamics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

SECONDS_PER_HOUR = 3600.0
OCV_GUARD = 1e-4


class OcvDomainError(ValueError):
    """Raised when the OCV curve is evaluated too close to its log singularities."""

    saturation_index: int | None = None


@dataclass(frozen=True)
class OcvCurve:
    """Five-coefficient OCV-SoC relation.

    ``v = k0 - k1/z - k2*z + k3*ln(z) + k4*ln(1 - z)``, defined on ``0 < z < 1``.
    """

    k0: float
    k1: float
    k2: float
    k3: float
    k4: float

    def coefficients(self) -> tuple[float, float, float, float, float]:
        return (self.k0, self.k1, self.k2, self.k3, self.k4)


@dataclass(frozen=True)
class EcmParams:
    """Ohmic resistance, RC-pair resistance and RC time constant."""

    r_s: float
    r_t: float
    tau: float

    def __post_init__(self):
        if not (self.r_s > 0 and self.r_t > 0 and self.tau > 0):
            raise ValueError(f"ECM parameters must be positive, got {self}")

    @property
    def c_t(self) -> float:
        return self.tau / self.r_t


@dataclass(frozen=True)
class CellSpec:
    q_b: float  # Ah
    eta: float
    ecm: EcmParams
    ocv: OcvCurve
    sigma_v: float = 0.0  # V
    name: str = "cell"

    def __post_init__(self):
        if self.q_b <= 0:
            raise ValueError(f"capacity must be positive, got {self.q_b}")
        if not 0 < self.eta <= 1:
            raise ValueError(f"efficiency must lie in (0, 1], got {self.eta}")
        if self.sigma_v < 0:
            raise ValueError(f"noise std must be non-negative, got {self.sigma_v}")

    def with_noise(self, sigma_v: float) -> "CellSpec":
        return replace(self, sigma_v=sigma_v)


@dataclass(frozen=True)
class BatteryState:
    v_c: float
    z: float


SAMSUNG_OCV = OcvCurve(2.6031, 0.0674, -1.527, 0.6265, -0.0297)

PRESETS: dict[str, CellSpec] = {
    "samsung-18650-20C": CellSpec(
        q_b=2.47,
        eta=0.98,
        ecm=EcmParams(r_s=0.1, r_t=0.03, tau=15.0),
        ocv=SAMSUNG_OCV,
        sigma_v=0.02,
        name="samsung-18650-20C",
    ),
    # Only the capacity is reported as changing at 40 degC; the ECM
    # parameters are kept at their 20 degC values.
    "samsung-18650-40C": CellSpec(
        q_b=2.62,
        eta=0.98,
        ecm=EcmParams(r_s=0.1, r_t=0.03, tau=15.0),
        ocv=SAMSUNG_OCV,
        sigma_v=0.02,
        name="samsung-18650-40C",
    ),
}


def preset(name: str) -> CellSpec:
    try:
        return PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown cell preset {name!r}; choose from {sorted(PRESETS)}") from None


def _check_domain(z, guard: float) -> None:
    z_arr = np.asarray(z, dtype=float)
    if np.any(~np.isfinite(z_arr)) or np.any(z_arr < guard) or np.any(z_arr > 1.0 - guard):
        raise OcvDomainError(f"SoC {z} outside guarded OCV domain [{guard}, {1.0 - guard}]")


def ocv(curve: OcvCurve, z, guard: float = OCV_GUARD):
    """Open-circuit voltage at SoC ``z`` (scalar or array)."""
    _check_domain(z, guard)
    k0, k1, k2, k3, k4 = curve.coefficients()
    z = np.asarray(z, dtype=float)
    v = k0 - k1 / z - k2 * z + k3 * np.log(z) + k4 * np.log1p(-z)
    return float(v) if v.ndim == 0 else v


def ocv_slope(curve: OcvCurve, z, guard: float = OCV_GUARD):
    """Analytic dOCV/dz."""
    _check_domain(z, guard)
    _, k1, k2, k3, k4 = curve.coefficients()
    z = np.asarray(z, dtype=float)
    d = k1 / z**2 - k2 + k3 / z - k4 / (1.0 - z)
    return float(d) if d.ndim == 0 else d


def linearize_ocv(
    curve: OcvCurve, z_lo: float, z_hi: float, points: int = 201, guard: float = OCV_GUARD
) -> tuple[float, float]:
    """Least-squares affine fit ``ocv(z) ~ a*z + b`` over ``[z_lo, z_hi]``.

    Only meant for frequency-separation analysis; estimators use the full
    nonlinear curve.
    """
    if not z_lo < z_hi:
        raise OcvDomainError(f"empty SoC interval [{z_lo}, {z_hi}]")
    _check_domain([z_lo, z_hi], guard)
    zs = np.linspace(z_lo, z_hi, max(points, 100))
    design = np.column_stack([zs, np.ones_like(zs)])
    (a, b), *_ = np.linalg.lstsq(design, ocv(curve, zs, guard), rcond=None)
    return float(a), float(b)


def clamp_soc(z: float, guard: float = OCV_GUARD) -> float:
    return min(max(z, guard), 1.0 - guard)


def step_state(
    spec: CellSpec, state: BatteryState, i_b: float, t_s: float
) -> tuple[BatteryState, bool]:
    """Advance one sample with ``i_b`` held constant over ``t_s`` seconds.

    Exact zero-order-hold solution of the RC pair plus coulomb counting.
    Returns the new state and whether the SoC had to be clamped to [0, 1].
    """
    if t_s <= 0:
        raise ValueError(f"sample period must be positive, got {t_s}")
    decay = math.exp(-t_s / spec.ecm.tau)
    v_c = decay * state.v_c + spec.ecm.r_t * (1.0 - decay) * i_b
    z = state.z - spec.eta * t_s * i_b / (spec.q_b * SECONDS_PER_HOUR)
    saturated = z < 0.0 or z > 1.0
    if saturated:
        z = min(max(z, 0.0), 1.0)
    return BatteryState(v_c=v_c, z=z), saturated


def terminal_voltage(
    spec: CellSpec, state: BatteryState, i_b: float, guard: float = OCV_GUARD
) -> float:
    """Noise-free terminal voltage ``ocv(z) - R_s*i_b - v_c``."""
    return ocv(spec.ocv, state.z, guard) - spec.ecm.r_s * i_b - state.v_c


@dataclass
class Measurement:
    """Sampled run: time, current, noisy voltage and the hidden truth.

    ``z_true[k]``/``vc_true[k]`` is the state at ``t[k]``, before ``i[k]`` is
    applied over the following sample period.  ``final_state`` is the state
    after the last sample.
    """

    t: np.ndarray
    i: np.ndarray
    v: np.ndarray
    z_true: np.ndarray | None = None
    vc_true: np.ndarray | None = None
    v_clean: np.ndarray | None = None
    final_state: BatteryState | None = None
    saturation_index: int | None = None
    meta: dict = field(default_factory=dict)
    sample_period: float | None = None

    def __len__(self) -> int:
        return len(self.t)

    @property
    def t_s(self) -> float:
        if self.sample_period is not None:
            return self.sample_period
        if len(self.t) < 2:
            raise ValueError("need at least two samples to infer the sample period")
        return float(self.t[1] - self.t[0])

    @property
    def has_truth(self) -> bool:
        return self.z_true is not None and self.vc_true is not None


def simulate(
    spec: CellSpec,
    profile,
    init: BatteryState,
    seed: int | np.random.Generator | None = 0,
    t0: float = 0.0,
    guard: float = OCV_GUARD,
    decimate: int = 1,
) -> Measurement:
    """Run ``profile`` through the cell and add gaussian voltage noise.

    ``profile`` is a :class:`seqsoc.signals.CurrentProfile`.  With
    ``decimate=n`` the cell is integrated on the profile's grid but only every
    n-th sample is measured, i.e. the profile is a finely resolved physical
    current observed at ``n * profile.t_s``.  The result is deterministic for
    a given integer seed.
    """
    if not 0.0 <= init.z <= 1.0:
        raise ValueError(f"initial SoC {init.z} outside [0, 1]")
    if decimate < 1:
        raise ValueError("decimate must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    current = np.asarray(profile.samples, dtype=float)
    n = len(current)
    z_true = np.empty(n)
    vc_true = np.empty(n)
    state = init
    first_saturation = None
    for k in range(n):
        z_true[k] = state.z
        vc_true[k] = state.v_c
        state, saturated = step_state(spec, state, current[k], profile.t_s)
        if saturated and first_saturation is None:
            first_saturation = k // decimate
    keep = slice(None, None, decimate)
    current, z_true, vc_true = current[keep], z_true[keep], vc_true[keep]
    m = len(current)
    try:
        v_clean = ocv(spec.ocv, z_true, guard) - spec.ecm.r_s * current - vc_true
    except OcvDomainError as exc:
        if first_saturation is None:
            raise
        err = OcvDomainError(f"{exc}; SoC saturated first at sample {first_saturation}")
        err.saturation_index = first_saturation
        raise err from None
    noise = rng.normal(0.0, spec.sigma_v, m) if spec.sigma_v > 0 else np.zeros(m)
    return Measurement(
        t=t0 + decimate * profile.t_s * np.arange(m),
        i=current.copy(),
        v=v_clean + noise,
        z_true=z_true,
        vc_true=vc_true,
        v_clean=v_clean,
        final_state=state,
        saturation_index=first_saturation,
        meta={"label": getattr(profile, "label", ""), "cell": spec.name},
        sample_period=decimate * profile.t_s,
    )
