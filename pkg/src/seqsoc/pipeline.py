"""Sequential three-step SoC/SoH estimation and the all-at-once baseline.

Step 1 identifies the ohmic resistance from high-passed data under a
high-frequency injection, Step 2 identifies the RC pair under a
medium-frequency injection given Step 1's resistance, and Step 3 runs a dual
EKF over ``[v_c, z]`` with the capacity as parameter given both.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .cell import (
    OCV_GUARD,
    SECONDS_PER_HOUR,
    BatteryState,
    CellSpec,
    EcmParams,
    Measurement,
    OcvCurve,
    clamp_soc,
    ocv,
    ocv_slope,
    simulate,
)
from .estimators import (
    GaussianEstimate,
    ModelCallbacks,
    NoiseConfig,
    dekf_step,
    ekf_predict,
    ekf_update,
)
from .signals import CurrentProfile, design_highpass, multisine_profile, zero_profile

log = logging.getLogger(__name__)

R_FLOOR = 1e-6
TAU_BOUNDS = (0.1, 1000.0)
Q_FLOOR = 1e-3


class PipelineError(RuntimeError):
    """Estimation failed at runtime; ``step`` names the stage."""

    def __init__(self, message: str, step: str = ""):
        super().__init__(f"[{step}] {message}" if step else message)
        self.step = step


class DegenerateExcitationError(PipelineError):
    pass


class DivergenceError(PipelineError):
    pass


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StepPlan:
    """Injection for one step: summed cosines, sampling, filter and hold-up.

    A plan without frequencies takes its current from an external profile
    (the drive cycle in Step 3).
    """

    duration: float
    t_s: float
    frequencies: tuple[float, ...] = ()
    amplitudes: tuple[float, ...] = ()
    f_3db: float | None = None
    hold_up: float = 0.0
    gap_before: float = 0.0
    oversample: int = 10

    def __post_init__(self):
        object.__setattr__(self, "frequencies", tuple(float(f) for f in self.frequencies))
        object.__setattr__(self, "amplitudes", tuple(float(a) for a in self.amplitudes))
        if self.t_s <= 0 or self.duration <= 0:
            raise ValueError("duration and sample period must be positive")
        if len(self.frequencies) != len(self.amplitudes):
            raise ValueError("need one amplitude per injection frequency")
        if not 0 <= self.hold_up < self.duration:
            raise ValueError(f"hold-up {self.hold_up} s must be shorter than duration {self.duration} s")
        if self.gap_before < 0:
            raise ValueError("gap must be non-negative")
        if self.oversample < 1:
            raise ValueError("oversample must be >= 1")
        nyquist = 0.5 / self.t_s
        for f in self.frequencies + ((self.f_3db,) if self.f_3db else ()):
            if not 0 < f < nyquist:
                raise ValueError(f"{f} Hz outside (0, {nyquist}) Hz for t_s={self.t_s} s")

    @property
    def samples(self) -> int:
        return int(round(self.duration / self.t_s))

    @property
    def hold_up_samples(self) -> int:
        return int(round(self.hold_up / self.t_s))

    def profile(self) -> CurrentProfile:
        return multisine_profile(self.amplitudes, self.frequencies, self.t_s, self.duration)

    def physical_profile(self) -> CurrentProfile:
        """Injection resolved ``oversample`` times finer than it is measured."""
        return multisine_profile(
            self.amplitudes, self.frequencies, self.t_s / self.oversample, self.duration
        )


def default_plans(q_b: float = 2.47, step3_duration: float = 3600.0) -> tuple[StepPlan, StepPlan, StepPlan]:
    """Injection timeline of the 20 degC experiment: amplitudes at 0.5C."""
    half_c = 0.5 * q_b
    return (
        StepPlan(duration=200.0, t_s=0.1, frequencies=(0.5,), amplitudes=(half_c,), f_3db=0.05, hold_up=20.0),
        StepPlan(
            duration=900.0,
            t_s=1.0,
            frequencies=(0.02, 0.004),
            amplitudes=(half_c, half_c),
            f_3db=0.002,
            hold_up=400.0,
            gap_before=87.0,
        ),
        StepPlan(duration=step3_duration, t_s=1.0, gap_before=13.0),
    )


@dataclass(frozen=True)
class Inits:
    r_s: float = 0.02
    r_t: float = 0.03
    tau: float = 15.0
    q_b: float = 2.0
    soc: float = 0.5
    v_c: float = 0.0
    # prior standard deviations
    r_s_std: float = 0.1
    r_t_std: float = 0.01
    tau_std: float = 5.0
    q_b_std: float = 0.5
    soc_std: float = 0.3
    v_c_std: float = 0.01


@dataclass(frozen=True)
class EstimatorNoise:
    """Filter tuning.  ``None`` entries fall back to documented defaults.

    ``sigma_v`` is the assumed voltage-noise std in volts; the rest are
    per-step standard deviations of the random walks / state process noise.
    """

    sigma_v: float = 0.02
    r_s_walk: float | None = None  # default 1e-4 * initial guess
    r_t_walk: float | None = None
    tau_walk: float | None = None
    q_b_walk: float = 1e-5
    v_c_process: float = 1e-4
    soc_process: float = 1e-6

    def walk(self, name: str, init: float) -> float:
        value = getattr(self, f"{name}_walk")
        return 1e-4 * init if value is None else value

    @property
    def sigma_v_floor(self) -> float:
        # the filters need a strictly positive measurement covariance
        return max(self.sigma_v, 1e-4)


# ---------------------------------------------------------------------------
# Traces
# ---------------------------------------------------------------------------


@dataclass
class EstimationTrace:
    """Time-indexed estimates with covariance diagonals and innovations."""

    step: str
    names: tuple[str, ...]
    t: np.ndarray
    estimates: np.ndarray
    cov_diag: np.ndarray
    innovations: np.ndarray
    v_pred: np.ndarray | None = None
    v_meas: np.ndarray | None = None
    truth: dict[str, np.ndarray] = field(default_factory=dict)
    flags: dict[str, object] = field(default_factory=dict)

    def final(self, name: str) -> float:
        return float(self.estimates[-1, self.names.index(name)])

    def series(self, name: str) -> np.ndarray:
        return self.estimates[:, self.names.index(name)]


@dataclass
class SequentialResult:
    r_s_hat: float
    r_t_hat: float
    tau_hat: float
    q_b_trace: np.ndarray
    soc_trace: np.ndarray
    v_pred_trace: np.ndarray
    traces: dict[str, EstimationTrace]
    measurements: dict[str, Measurement]
    provenance: dict[str, dict]
    mode: str = "sequential"

    @property
    def q_b_hat(self) -> float:
        return float(self.q_b_trace[-1])

    @property
    def soc_hat(self) -> float:
        return float(self.soc_trace[-1])

    @property
    def soc_trace_truth(self) -> np.ndarray | None:
        return self.traces["step3"].truth.get("soc")

    def final_estimates(self) -> dict[str, float]:
        return {
            "r_s": self.r_s_hat,
            "r_t": self.r_t_hat,
            "tau": self.tau_hat,
            "q_b": self.q_b_hat,
            "soc": self.soc_hat,
        }


# ---------------------------------------------------------------------------
# Step 1: ohmic resistance
# ---------------------------------------------------------------------------


def _excitation_ok(i_bf: np.ndarray, threshold: float) -> bool:
    return bool(np.any(np.abs(i_bf) >= threshold))


_RS_MODEL = ModelCallbacks(
    output=lambda x, theta, u: np.array([-theta[0] * u]),
    output_jac_theta=lambda x, theta, u: np.array([[-float(u)]]),
    bounds={"theta": ([0.01], [0.5]), "u": (-2.0, 2.0)},
)


def step1_estimate_rs(
    i_bf,
    v_bf,
    init: float,
    noise: NoiseConfig,
    t=None,
    p0: float = 0.1**2,
    min_excitation: float = 1e-3,
) -> EstimationTrace:
    """Scalar EKF on ``v_bf = -R_s * i_bf`` over filtered, hold-up-trimmed data."""
    i_bf = np.asarray(i_bf, dtype=float)
    v_bf = np.asarray(v_bf, dtype=float)
    n = i_bf.size
    est = GaussianEstimate([init], [[p0]])
    estimates = np.empty((n, 1))
    cov = np.empty((n, 1))
    innov = np.empty(n)
    for k in range(n):
        est = ekf_predict(est, noise)
        est, nu = ekf_update(est, v_bf[k], _RS_MODEL, noise, context=(None, i_bf[k]))
        if est.mean[0] < R_FLOOR:
            est = GaussianEstimate([R_FLOOR], est.cov)
        estimates[k] = est.mean
        cov[k] = np.diag(est.cov)
        innov[k] = nu[0]
    trace = EstimationTrace(
        "step1",
        ("r_s",),
        np.arange(n, dtype=float) if t is None else np.asarray(t, dtype=float),
        estimates,
        cov,
        innov,
        v_pred=v_bf - innov,
        v_meas=v_bf,
    )
    trace.flags["degenerate"] = not _excitation_ok(i_bf, min_excitation)
    return trace


# ---------------------------------------------------------------------------
# Step 2: RC pair
# ---------------------------------------------------------------------------


def i2_coefficients(tau: float, t_s: float) -> tuple[float, float]:
    """``(alpha, beta)`` in ``i2[k] = alpha*(i[k] + i[k-1]) - beta*i2[k-1]``."""
    return t_s / (t_s + 2.0 * tau), (t_s - 2.0 * tau) / (t_s + 2.0 * tau)


def _rc_model(r_s_hat: float) -> ModelCallbacks:
    # u = (i_bf, i2, di2/dtau, filtered charge)
    def output(x, theta, u):
        v = -r_s_hat * u[0] - theta[0] * u[1]
        if theta.size == 3:
            v -= theta[2] * u[3]
        return np.array([v])

    def output_jac_theta(x, theta, u):
        row = [-u[1], -theta[0] * u[2]]
        if theta.size == 3:
            row.append(-u[3])
        return np.array([row])

    return ModelCallbacks(output=output, output_jac_theta=output_jac_theta)


def filtered_charge(i_b, t_s: float, f_3db: float) -> np.ndarray:
    """High-passed left-Riemann charge ``t_s * sum(i[:k])`` in ampere-seconds."""
    i_b = np.asarray(i_b, dtype=float)
    charge = np.concatenate([[0.0], np.cumsum(i_b[:-1])]) * t_s
    return design_highpass(f_3db, t_s).run(charge)


def step2_estimate_rc(
    i_bf,
    v_bf,
    r_s_hat: float,
    init: tuple[float, float],
    noise: NoiseConfig,
    t_s: float = 1.0,
    hold_up: int = 0,
    t=None,
    p0=((0.01**2, 0.0), (0.0, 5.0**2)),
    sensitivity_depth: int | None = 1,
    charge_bf=None,
    drift_prior: tuple[float, float] = (0.0, 1e-3),
    min_excitation: float = 1e-3,
) -> EstimationTrace:
    """EKF on ``theta = [R_t, tau]`` (plus an SoC-drift gain when ``charge_bf`` is given).

    The bilinear-discretized RC current ``i2`` is recomputed every sample with
    the latest ``tau`` estimate.  Its sensitivity to ``tau`` enters the output
    Jacobian; ``sensitivity_depth=1`` keeps only the current-sample term,
    ``None`` propagates it through the recursion.  The first ``hold_up``
    samples drive the recursion but do not update the estimate.

    With ``charge_bf`` (see :func:`filtered_charge`) the output gains a term
    ``-kappa * charge_bf`` absorbing the OCV drift caused by the injected
    charge, ``kappa = slope * eta / (3600 * Q_b)``.  ``drift_prior`` is the
    mean and std of ``kappa``; its random-walk covariance is the last
    diagonal entry of ``noise.sigma_r`` when that matrix is 3x3, else 0.
    """
    if sensitivity_depth not in (1, None):
        raise ValueError("sensitivity_depth must be 1 (one-step) or None (recursive)")
    i_bf = np.asarray(i_bf, dtype=float)
    v_bf = np.asarray(v_bf, dtype=float)
    n = i_bf.size
    model = _rc_model(r_s_hat)
    drift = charge_bf is not None
    p0 = np.asarray(p0, dtype=float)
    if drift:
        charge_bf = np.asarray(charge_bf, dtype=float)
        mean0 = [init[0], init[1], drift_prior[0]]
        cov0 = np.zeros((3, 3))
        cov0[:2, :2] = p0
        cov0[2, 2] = drift_prior[1] ** 2
        sigma_r = np.asarray(noise.sigma_r, dtype=float)
        if sigma_r.shape != (3, 3):
            walk = np.zeros((3, 3))
            walk[:2, :2] = noise.r(2)
            noise = NoiseConfig(sigma_r=walk, sigma_w=noise.sigma_w, sigma_v=noise.sigma_v)
        est = GaussianEstimate(mean0, cov0)
        names = ("r_t", "tau", "kappa")
    else:
        est = GaussianEstimate(list(init), p0)
        names = ("r_t", "tau")
    estimates = np.empty((n, len(names)))
    cov = np.empty((n, len(names)))
    innov = np.zeros(n)
    v_pred = np.empty(n)
    i2 = 0.0
    sens = 0.0
    i_prev = i_bf[0]
    projected = 0
    for k in range(n):
        updating = k >= hold_up
        if updating:
            est = ekf_predict(est, noise)
        tau = est.mean[1]
        alpha, beta = i2_coefficients(tau, t_s)
        d_alpha = -2.0 * t_s / (t_s + 2.0 * tau) ** 2
        d_beta = -4.0 * t_s / (t_s + 2.0 * tau) ** 2
        i_sum = i_bf[k] + i_prev
        carried = -beta * sens if sensitivity_depth is None else 0.0
        sens = d_alpha * i_sum - d_beta * i2 + carried
        i2 = alpha * i_sum - beta * i2
        u = (i_bf[k], i2, sens, charge_bf[k] if drift else 0.0)
        v_pred[k] = model.output(None, est.mean, u)[0]
        if updating:
            est, nu = ekf_update(est, v_bf[k], model, noise, context=(None, u))
            innov[k] = nu[0]
            mean = est.mean.copy()
            mean[0] = max(mean[0], R_FLOOR)
            mean[1] = min(max(mean[1], TAU_BOUNDS[0]), TAU_BOUNDS[1])
            if not np.array_equal(mean, est.mean):
                projected += 1
                est = GaussianEstimate(mean, est.cov)
        estimates[k] = est.mean
        cov[k] = np.diag(est.cov)
        i_prev = i_bf[k]
    if projected:
        log.warning("step2: parameter projection active on %d samples", projected)
    trace = EstimationTrace(
        "step2",
        names,
        np.arange(n, dtype=float) * t_s if t is None else np.asarray(t, dtype=float),
        estimates,
        cov,
        innov,
        v_pred=v_pred,
        v_meas=v_bf,
    )
    trace.flags.update(
        degenerate=not _excitation_ok(i_bf[hold_up:], min_excitation),
        projected_samples=projected,
        hold_up_samples=hold_up,
    )
    return trace


# ---------------------------------------------------------------------------
# Step 3 and the concurrent baseline: dual EKF on [v_c, z]
# ---------------------------------------------------------------------------


class _ClampCounter:
    def __init__(self, guard: float):
        self.guard = guard
        self.events = 0

    def soc(self, z: float) -> float:
        zc = clamp_soc(z, self.guard)
        if zc != z:
            self.events += 1
        return zc


def soc_soh_model(
    params: EcmParams, eta: float, t_s: float, curve: OcvCurve, guard: float = OCV_GUARD, clamp=None
) -> ModelCallbacks:
    """Dual-EKF model with ``X = [v_c, z]``, ``theta = [Q_b]`` and ``u = (i_prev, i_now)``.

    ``i_prev`` is the current held over the interval leading to the
    measurement, ``i_now`` the current at the measurement instant.
    """
    clamp = clamp or _ClampCounter(guard)
    decay = math.exp(-t_s / params.tau)
    gain = params.r_t * (1.0 - decay)
    k_z = eta * t_s / SECONDS_PER_HOUR

    def transition(x, theta, u):
        return np.array([decay * x[0] + gain * u[0], x[1] - k_z * u[0] / theta[0]])

    def transition_jac_x(x, theta, u):
        return np.array([[decay, 0.0], [0.0, 1.0]])

    def transition_jac_theta(x, theta, u):
        return np.array([[0.0], [k_z * u[0] / theta[0] ** 2]])

    def output(x, theta, u):
        z = clamp.soc(float(x[1]))
        return np.array([ocv(curve, z, guard) - x[0] - params.r_s * u[1]])

    def output_jac_x(x, theta, u):
        z = clamp_soc(float(x[1]), guard)
        return np.array([[-1.0, ocv_slope(curve, z, guard)]])

    def output_jac_theta(x, theta, u):
        return np.zeros((1, 1))

    return ModelCallbacks(
        output=output,
        output_jac_theta=output_jac_theta,
        transition=transition,
        transition_jac_x=transition_jac_x,
        output_jac_x=output_jac_x,
        transition_jac_theta=transition_jac_theta,
        bounds={"x": ([-0.05, 0.1], [0.05, 0.95]), "theta": ([1.5], [3.0]), "u": ([-2.5, -2.5], [2.5, 2.5])},
    )


def joint_model(
    eta: float, t_s: float, curve: OcvCurve, guard: float = OCV_GUARD, clamp=None
) -> ModelCallbacks:
    """Dual-EKF model with ``X = [v_c, z]`` and every parameter ``theta = [R_s, R_t, tau, Q_b]`` unknown."""
    clamp = clamp or _ClampCounter(guard)
    k_z = eta * t_s / SECONDS_PER_HOUR

    def transition(x, theta, u):
        _, r_t, tau, q_b = theta
        decay = math.exp(-t_s / tau)
        return np.array([decay * x[0] + r_t * (1.0 - decay) * u[0], x[1] - k_z * u[0] / q_b])

    def transition_jac_x(x, theta, u):
        return np.array([[math.exp(-t_s / theta[2]), 0.0], [0.0, 1.0]])

    def transition_jac_theta(x, theta, u):
        _, r_t, tau, q_b = theta
        decay = math.exp(-t_s / tau)
        d_tau = t_s / tau**2 * decay * (x[0] - r_t * u[0])
        return np.array(
            [[0.0, (1.0 - decay) * u[0], d_tau, 0.0], [0.0, 0.0, 0.0, k_z * u[0] / q_b**2]]
        )

    def output(x, theta, u):
        z = clamp.soc(float(x[1]))
        return np.array([ocv(curve, z, guard) - x[0] - theta[0] * u[1]])

    def output_jac_x(x, theta, u):
        z = clamp_soc(float(x[1]), guard)
        return np.array([[-1.0, ocv_slope(curve, z, guard)]])

    def output_jac_theta(x, theta, u):
        return np.array([[-u[1], 0.0, 0.0, 0.0]])

    return ModelCallbacks(
        output=output,
        output_jac_theta=output_jac_theta,
        transition=transition,
        transition_jac_x=transition_jac_x,
        output_jac_x=output_jac_x,
        transition_jac_theta=transition_jac_theta,
        bounds={
            "x": ([-0.05, 0.1], [0.05, 0.95]),
            "theta": ([0.02, 0.01, 5.0, 1.5], [0.3, 0.1, 50.0, 3.0]),
            "u": ([-2.5, -2.5], [2.5, 2.5]),
        },
    )


def _run_dual(
    step: str,
    names: tuple[str, ...],
    meas: Measurement,
    model: ModelCallbacks,
    theta0: GaussianEstimate,
    x0: GaussianEstimate,
    noise: NoiseConfig,
    project,
    i_prev: float = 0.0,
    macro_ratio: int = 1,
    sensitivity_depth: int | None = 1,
    divergence_sigma: float = 10.0,
    divergence_run: int = 50,
    clamp: _ClampCounter | None = None,
) -> EstimationTrace:
    if sensitivity_depth not in (1, None):
        raise ValueError("sensitivity_depth must be 1 (one-step) or None (recursive)")
    n = len(meas)
    n_t = theta0.dim
    theta, x = theta0, x0
    estimates = np.empty((n, n_t + 2))
    cov = np.empty((n, n_t + 2))
    innov = np.empty(n)
    v_pred = np.empty(n)
    sens = None
    outliers = 0
    for k in range(n):
        u = (i_prev, meas.i[k])
        theta, x, diag = dekf_step(
            theta,
            x,
            meas.v[k],
            u,
            model,
            noise,
            sensitivity=sens,
            predict=k > 0,
            update_params=(k % macro_ratio == 0),
        )
        if sensitivity_depth is None:
            sens = diag.sensitivity
        projected = project(theta.mean)
        if projected is not None:
            theta = GaussianEstimate(projected, theta.cov)
        innov[k] = diag.innovation[0]
        v_pred[k] = meas.v[k] - innov[k]
        estimates[k, :2] = x.mean
        estimates[k, 2:] = theta.mean
        cov[k, :2] = np.diag(x.cov)
        cov[k, 2:] = np.diag(theta.cov)
        i_prev = meas.i[k]
        if abs(innov[k]) > divergence_sigma * math.sqrt(diag.innovation_var):
            outliers += 1
            if outliers >= divergence_run:
                raise DivergenceError(
                    f"innovation above {divergence_sigma} sigma for {divergence_run} consecutive samples "
                    f"(t={meas.t[k]:.1f} s)",
                    step,
                )
        else:
            outliers = 0
    trace = EstimationTrace(
        step, ("v_c", "soc") + names, meas.t.copy(), estimates, cov, innov, v_pred=v_pred, v_meas=meas.v.copy()
    )
    if meas.has_truth:
        trace.truth = {"soc": meas.z_true.copy(), "v_c": meas.vc_true.copy()}
    if clamp is not None:
        trace.flags["ocv_clamp_events"] = clamp.events
        if clamp.events:
            log.warning("%s: OCV domain clamp applied %d times", step, clamp.events)
    return trace


def _project_positive_q(theta: np.ndarray):
    if theta[0] < Q_FLOOR:
        return np.array([Q_FLOOR])
    return None


def step3_estimate_soc_soh(
    meas: Measurement,
    params: EcmParams,
    init: tuple[float, float, float],
    curve: OcvCurve,
    noise: NoiseConfig,
    eta: float,
    init_std: tuple[float, float, float] = (0.3, 0.01, 0.5),
    i_prev: float = 0.0,
    sensitivity_depth: int | None = 1,
    guard: float = OCV_GUARD,
) -> EstimationTrace:
    """Dual EKF for SoC and capacity on raw current/voltage.

    ``init`` is ``(soc, v_c, q_b)`` and ``init_std`` their prior standard
    deviations.  ``i_prev`` is the current held just before the first sample.
    The prior describes the state at the first sample, so no prediction is
    made there.
    """
    soc0, vc0, q0 = init
    soc_std, vc_std, q_std = init_std
    clamp = _ClampCounter(guard)
    model = soc_soh_model(params, eta, meas.t_s, curve, guard, clamp)
    return _run_dual(
        "step3",
        ("q_b",),
        meas,
        model,
        GaussianEstimate([q0], [[q_std**2]]),
        GaussianEstimate([vc0, soc0], np.diag([vc_std**2, soc_std**2])),
        noise,
        _project_positive_q,
        i_prev=i_prev,
        sensitivity_depth=sensitivity_depth,
        clamp=clamp,
    )


# ---------------------------------------------------------------------------
# Orchestration
# ---------------------------------------------------------------------------


def _filtered(meas: Measurement, f_3db: float) -> tuple[np.ndarray, np.ndarray]:
    filt = design_highpass(f_3db, meas.t_s)
    return filt.clone().run(meas.i), filt.clone().run(meas.v)


# Consumers of the top-level seed, in spawn order.
SEED_CONSUMERS = ("step1", "step2", "step3", "concurrent", "drive")


def _seed_sequence(seed: int) -> list[np.random.Generator]:
    children = np.random.SeedSequence(seed).spawn(len(SEED_CONSUMERS))
    return [np.random.default_rng(s) for s in children[:4]]


def derive_seed(seed: int, consumer: str) -> int:
    """Deterministic integer sub-seed of ``seed`` for a named consumer."""
    child = np.random.SeedSequence(seed).spawn(len(SEED_CONSUMERS))[SEED_CONSUMERS.index(consumer)]
    return int(child.generate_state(1)[0])


def simulate_sequential_data(
    spec: CellSpec,
    plans: tuple[StepPlan, StepPlan, StepPlan],
    drive: CurrentProfile,
    seed: int,
    z0: float = 0.8,
) -> dict[str, Measurement]:
    """Simulate the full injection timeline, one measurement block per step and gap."""
    if abs(drive.t_s - plans[2].t_s) > 1e-12:
        raise ValueError(f"drive cycle sampled at {drive.t_s} s, step 3 expects {plans[2].t_s} s")
    rngs = _seed_sequence(seed)
    state = BatteryState(v_c=0.0, z=z0)
    t = 0.0
    out: dict[str, Measurement] = {}
    for idx, (name, plan) in enumerate(zip(("step1", "step2", "step3"), plans)):
        if plan.gap_before > 0:
            gap = simulate(spec.with_noise(0.0), zero_profile(plan.t_s, plan.gap_before), state, 0, t0=t)
            out[f"gap{idx}"] = gap
            state = gap.final_state
            t += plan.gap_before
        if plan.frequencies:
            meas = simulate(spec, plan.physical_profile(), state, rngs[idx], t0=t, decimate=plan.oversample)
        else:
            meas = simulate(spec, drive.head(plan.samples), state, rngs[idx], t0=t)
        if meas.saturation_index is not None:
            raise PipelineError(f"SoC saturated at sample {meas.saturation_index}", name)
        out[name] = meas
        state = meas.final_state
        t += len(meas) * meas.t_s
    return out


def run_sequential_on_data(
    data: dict[str, Measurement],
    plans: tuple[StepPlan, StepPlan, StepPlan],
    inits: Inits,
    noise: EstimatorNoise,
    eta: float,
    curve: OcvCurve,
    sensitivity_depth: int | None = 1,
    soc_drift: bool = True,
    capacity_sensitivity_depth: int | None = None,
) -> SequentialResult:
    """Run Steps 1-3 in order on recorded or simulated blocks ``step1..step3``.

    ``soc_drift`` adds the injected-charge OCV drift to the Step 2 output
    model; without it Step 2 assumes that term is negligible.
    """
    for name in ("step1", "step2", "step3"):
        if name not in data:
            raise PipelineError("missing data block", name)
    p1, p2, p3 = plans
    r_v = noise.sigma_v_floor**2

    m1 = data["step1"]
    i_bf, v_bf = _filtered(m1, p1.f_3db)
    h1 = p1.hold_up_samples
    noise1 = NoiseConfig(sigma_r=noise.walk("r_s", inits.r_s) ** 2, sigma_v=r_v)
    tr1 = step1_estimate_rs(i_bf[h1:], v_bf[h1:], inits.r_s, noise1, t=m1.t[h1:], p0=inits.r_s_std**2)
    if tr1.flags["degenerate"]:
        raise DegenerateExcitationError("filtered current carries no excitation", "step1")
    r_s_hat = tr1.final("r_s")

    m2 = data["step2"]
    i_bf, v_bf = _filtered(m2, p2.f_3db)
    noise2 = NoiseConfig(
        sigma_r=np.diag([noise.walk("r_t", inits.r_t) ** 2, noise.walk("tau", inits.tau) ** 2]),
        sigma_v=r_v,
    )
    tr2 = step2_estimate_rc(
        i_bf,
        v_bf,
        r_s_hat,
        (inits.r_t, inits.tau),
        noise2,
        t_s=m2.t_s,
        hold_up=p2.hold_up_samples,
        t=m2.t,
        p0=np.diag([inits.r_t_std**2, inits.tau_std**2]),
        sensitivity_depth=sensitivity_depth,
        charge_bf=filtered_charge(m2.i, m2.t_s, p2.f_3db) if soc_drift else None,
    )
    if tr2.flags["degenerate"]:
        raise DegenerateExcitationError("filtered current carries no excitation", "step2")
    r_t_hat, tau_hat = tr2.final("r_t"), tr2.final("tau")

    m3 = data["step3"]
    params = EcmParams(r_s=r_s_hat, r_t=r_t_hat, tau=tau_hat)
    noise3 = NoiseConfig(
        sigma_r=noise.q_b_walk**2,
        sigma_w=np.diag([noise.v_c_process**2, noise.soc_process**2]),
        sigma_v=r_v,
    )
    tr3 = step3_estimate_soc_soh(
        m3,
        params,
        (inits.soc, inits.v_c, inits.q_b),
        curve,
        noise3,
        eta,
        init_std=(inits.soc_std, inits.v_c_std, inits.q_b_std),
        sensitivity_depth=capacity_sensitivity_depth,
    )
    provenance = {
        "step1": {"r_s_init": inits.r_s, "samples": len(tr1.t)},
        "step2": {"r_s_used": r_s_hat, "samples": len(tr2.t)},
        "step3": {"r_s_used": r_s_hat, "r_t_used": r_t_hat, "tau_used": tau_hat, "samples": len(tr3.t)},
    }
    return SequentialResult(
        r_s_hat=r_s_hat,
        r_t_hat=r_t_hat,
        tau_hat=tau_hat,
        q_b_trace=tr3.series("q_b").copy(),
        soc_trace=tr3.series("soc").copy(),
        v_pred_trace=tr3.v_pred,
        traces={"step1": tr1, "step2": tr2, "step3": tr3},
        measurements=data,
        provenance=provenance,
    )


def run_sequential(
    spec: CellSpec,
    plans: tuple[StepPlan, StepPlan, StepPlan],
    drive: CurrentProfile,
    inits: Inits,
    noise: EstimatorNoise,
    seed: int = 0,
    z0: float = 0.8,
    sensitivity_depth: int | None = 1,
    soc_drift: bool = True,
    capacity_sensitivity_depth: int | None = None,
) -> SequentialResult:
    """Simulate the injection timeline on ``spec`` and run the three steps."""
    data = simulate_sequential_data(spec, plans, drive, seed, z0)
    result = run_sequential_on_data(
        data, plans, inits, noise, spec.eta, spec.ocv, sensitivity_depth, soc_drift,
        capacity_sensitivity_depth,
    )
    return attach_truth(result, spec)


def attach_truth(result: SequentialResult, spec: CellSpec) -> SequentialResult:
    """Record the simulated cell's constant parameters as truth on each trace."""
    traces = result.traces
    traces["step3"].truth["q_b"] = np.full(len(traces["step3"].t), spec.q_b)
    traces["step1"].truth["r_s"] = np.full(len(traces["step1"].t), spec.ecm.r_s)
    traces["step2"].truth["r_t"] = np.full(len(traces["step2"].t), spec.ecm.r_t)
    traces["step2"].truth["tau"] = np.full(len(traces["step2"].t), spec.ecm.tau)
    return result


def concurrent_profile(
    q_b: float = 2.47, duration: float = 3600.0, t_s: float = 1.0, frequencies=(0.01, 0.05, 0.1)
) -> CurrentProfile:
    """Three-tone injection at 0.5C per tone."""
    half_c = 0.5 * q_b
    return multisine_profile([half_c] * len(frequencies), frequencies, t_s, duration)


def _project_joint(theta: np.ndarray):
    lo = np.array([R_FLOOR, R_FLOOR, TAU_BOUNDS[0], Q_FLOOR])
    hi = np.array([np.inf, np.inf, TAU_BOUNDS[1], np.inf])
    clipped = np.clip(theta, lo, hi)
    return None if np.array_equal(clipped, theta) else clipped


def run_concurrent_baseline(
    spec: CellSpec,
    drive: CurrentProfile,
    inits: Inits,
    noise: EstimatorNoise,
    seed: int = 0,
    macro_ratio: int = 10,
    z0: float = 0.8,
    sensitivity_depth: int | None = None,
    min_components: int = 3,
) -> SequentialResult:
    """Estimate ``[v_c, z]`` and ``[R_s, R_t, tau, Q_b]`` all at once.

    The parameter filter updates every ``macro_ratio`` samples while the
    state filter runs every sample.  The sensitivity recursion defaults to
    the same full depth Step 3 uses so both arms share one engine setting.
    """
    spectrum = np.abs(np.fft.rfft(drive.samples - drive.samples.mean()))
    peaks = int(np.sum(spectrum > 0.1 * spectrum.max())) if spectrum.max() > 0 else 0
    if peaks < min_components:
        raise DegenerateExcitationError(
            f"drive has {peaks} significant frequency components, need {min_components}", "concurrent"
        )
    rng = _seed_sequence(seed)[3]
    meas = simulate(spec, drive, BatteryState(0.0, z0), rng)
    return run_concurrent_on_data(meas, inits, noise, spec, macro_ratio, sensitivity_depth)


def run_concurrent_on_data(
    meas: Measurement,
    inits: Inits,
    noise: EstimatorNoise,
    spec: CellSpec,
    macro_ratio: int = 10,
    sensitivity_depth: int | None = None,
) -> SequentialResult:
    if macro_ratio < 1:
        raise ValueError("macro_ratio must be >= 1")
    clamp = _ClampCounter(OCV_GUARD)
    model = joint_model(spec.eta, meas.t_s, spec.ocv, clamp=clamp)
    theta0 = GaussianEstimate(
        [inits.r_s, inits.r_t, inits.tau, inits.q_b],
        np.diag([inits.r_s_std**2, inits.r_t_std**2, inits.tau_std**2, inits.q_b_std**2]),
    )
    walks = [
        noise.walk("r_s", inits.r_s),
        noise.walk("r_t", inits.r_t),
        noise.walk("tau", inits.tau),
        noise.q_b_walk,
    ]
    cfg = NoiseConfig(
        sigma_r=np.diag(np.square(walks)),
        sigma_w=np.diag([noise.v_c_process**2, noise.soc_process**2]),
        sigma_v=noise.sigma_v_floor**2,
    )
    tr = _run_dual(
        "concurrent",
        ("r_s", "r_t", "tau", "q_b"),
        meas,
        model,
        theta0,
        GaussianEstimate([inits.v_c, inits.soc], np.diag([inits.v_c_std**2, inits.soc_std**2])),
        cfg,
        _project_joint,
        macro_ratio=macro_ratio,
        sensitivity_depth=sensitivity_depth,
        clamp=clamp,
    )
    n = len(tr.t)
    tr.truth.update(
        r_s=np.full(n, spec.ecm.r_s),
        r_t=np.full(n, spec.ecm.r_t),
        tau=np.full(n, spec.ecm.tau),
        q_b=np.full(n, spec.q_b),
    )
    return SequentialResult(
        r_s_hat=tr.final("r_s"),
        r_t_hat=tr.final("r_t"),
        tau_hat=tr.final("tau"),
        q_b_trace=tr.series("q_b").copy(),
        soc_trace=tr.series("soc").copy(),
        v_pred_trace=tr.v_pred,
        traces={"step3": tr},
        measurements={"step3": meas},
        provenance={"concurrent": {"macro_ratio": macro_ratio, "samples": n}},
        mode="concurrent",
    )
