"""Small-dimension EKF and dual EKF engines.

Parameters follow a random walk; states follow a user-supplied transition.
All steps are pure: an estimate goes in, a new estimate comes out.
Covariances are symmetrized after every predict/update.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

COND_LIMIT = 1e12


class SingularInnovationError(np.linalg.LinAlgError):
    pass


class DimensionError(ValueError):
    pass


def _as_matrix(x, n: int | None = None) -> np.ndarray:
    m = np.atleast_2d(np.asarray(x, dtype=float))
    if n is not None and m.shape != (n, n):
        if m.size == 1:
            return np.eye(n) * float(m.ravel()[0])
        if m.shape == (1, n) or m.shape == (n, 1):
            return np.diag(m.ravel())
        raise DimensionError(f"expected {n}x{n} matrix, got shape {m.shape}")
    return m


def symmetrize(p: np.ndarray) -> np.ndarray:
    return 0.5 * (p + p.T)


@dataclass(frozen=True, eq=False)
class GaussianEstimate:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float)).copy()
        cov = _as_matrix(self.cov, mean.size).copy()
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.size

    def std(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.cov), 0.0, None))


@dataclass(frozen=True)
class NoiseConfig:
    """Process noise for parameters (``sigma_r``) and states (``sigma_w``), measurement noise ``sigma_v``.

    All entries are covariances.  Scalars or diagonals are expanded on use.
    """

    sigma_r: object = 0.0
    sigma_w: object = 0.0
    sigma_v: object = 1.0

    def r(self, n: int) -> np.ndarray:
        return _as_matrix(self.sigma_r, n)

    def w(self, n: int) -> np.ndarray:
        return _as_matrix(self.sigma_w, n)

    def v(self, n: int) -> np.ndarray:
        return _as_matrix(self.sigma_v, n)


Fn = Callable[[np.ndarray, np.ndarray, object], np.ndarray]


@dataclass
class ModelCallbacks:
    """State-space model ``X' = H(X, theta, u)``, ``Y = G(X, theta, u)`` with Jacobians.

    ``output_jac_theta`` is the partial of G at fixed X.  When the parameters
    also enter the transition, supply ``transition_jac_theta`` and the dual
    filter forms the total derivative through the predicted state.
    ``bounds`` maps ``"x"``, ``"theta"``, ``"u"`` to ``(low, high)`` arrays used
    when sampling points for :func:`validate_jacobians`.
    """

    output: Fn
    output_jac_theta: Fn | None = None
    transition: Fn | None = None
    transition_jac_x: Fn | None = None
    output_jac_x: Fn | None = None
    transition_jac_theta: Fn | None = None
    bounds: dict = field(default_factory=dict)


def _innovation_gain(cov: np.ndarray, c: np.ndarray, r_v: np.ndarray) -> np.ndarray:
    s = c @ cov @ c.T + r_v
    if s.shape == (1, 1):
        if not s[0, 0] > 0:
            raise SingularInnovationError(f"innovation variance {s[0, 0]} is not positive")
        return cov @ c.T / s[0, 0]
    if np.linalg.cond(s) > COND_LIMIT:
        raise SingularInnovationError("innovation covariance is ill-conditioned")
    return np.linalg.solve(s, c @ cov).T


def ekf_predict(est: GaussianEstimate, noise: NoiseConfig) -> GaussianEstimate:
    """Random-walk prediction: mean kept, process covariance added."""
    return GaussianEstimate(est.mean, symmetrize(est.cov + noise.r(est.dim)))


def ekf_update(
    est: GaussianEstimate,
    y,
    model: ModelCallbacks,
    noise: NoiseConfig,
    context: tuple = (None, None),
) -> tuple[GaussianEstimate, np.ndarray]:
    """Measurement update of a parameter estimate.

    ``context`` is ``(X, u)`` passed through to the output function and its
    parameter Jacobian.  Returns the posterior and the innovation.
    """
    x, u = context
    y = np.atleast_1d(np.asarray(y, dtype=float))
    theta = est.mean
    c = np.atleast_2d(model.output_jac_theta(x, theta, u))
    if c.shape != (y.size, est.dim):
        raise DimensionError(f"output Jacobian has shape {c.shape}, expected {(y.size, est.dim)}")
    innovation = y - np.atleast_1d(model.output(x, theta, u))
    gain = _innovation_gain(est.cov, c, noise.v(y.size))
    mean = theta + gain @ innovation
    cov = symmetrize((np.eye(est.dim) - gain @ c) @ est.cov)
    return GaussianEstimate(mean, cov), innovation


@dataclass
class DekfDiagnostics:
    innovation: np.ndarray
    innovation_var: float
    state_prior: np.ndarray
    c_theta: np.ndarray
    sensitivity: np.ndarray


def dekf_step(
    param_est: GaussianEstimate,
    state_est: GaussianEstimate,
    y,
    u,
    model: ModelCallbacks,
    noise: NoiseConfig,
    sensitivity: np.ndarray | None = None,
    predict: bool = True,
    update_params: bool = True,
) -> tuple[GaussianEstimate, GaussianEstimate, DekfDiagnostics]:
    """One dual-EKF cycle in the fixed order: parameter predict, state predict,
    state update, parameter update.

    The parameter update evaluates the output at the *predicted* state.  Its
    Jacobian is the total derivative ``dG/dtheta = dG/dtheta|_X + C_X dX-/dtheta``
    where ``dX-/dtheta = dH/dtheta + A * sensitivity``.  Passing
    ``sensitivity=None`` (or zeros) truncates the recursion to one step; feed
    back ``diagnostics.sensitivity`` to carry it further.

    ``predict=False`` skips both predictions (first sample, prior already at
    the measurement instant).  ``update_params=False`` leaves the parameter
    filter untouched for this sample.
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    n_x, n_t = state_est.dim, param_est.dim
    theta = param_est.mean
    if sensitivity is None:
        sensitivity = np.zeros((n_x, n_t))

    # parameter prediction
    if predict and update_params:
        theta_prior = ekf_predict(param_est, noise)
    else:
        theta_prior = param_est

    # state prediction
    x_prev = state_est.mean
    if predict:
        x_prior = np.atleast_1d(model.transition(x_prev, theta, u)).astype(float)
        a = np.atleast_2d(model.transition_jac_x(x_prev, theta, u))
        p_x = symmetrize(a @ state_est.cov @ a.T + noise.w(n_x))
        dx_dtheta = a @ sensitivity
        if model.transition_jac_theta is not None:
            dx_dtheta = dx_dtheta + np.atleast_2d(model.transition_jac_theta(x_prev, theta, u))
    else:
        x_prior = x_prev.copy()
        p_x = state_est.cov
        dx_dtheta = sensitivity

    # state update
    y_hat = np.atleast_1d(model.output(x_prior, theta, u))
    innovation = y - y_hat
    c_x = np.atleast_2d(model.output_jac_x(x_prior, theta, u))
    r_v = noise.v(y.size)
    k_x = _innovation_gain(p_x, c_x, r_v)
    x_post = x_prior + k_x @ innovation
    p_x_post = symmetrize((np.eye(n_x) - k_x @ c_x) @ p_x)
    innovation_var = float((c_x @ p_x @ c_x.T + r_v)[0, 0])

    # parameter update, output still evaluated at the predicted state
    c_theta = c_x @ dx_dtheta
    if model.output_jac_theta is not None:
        c_theta = c_theta + np.atleast_2d(model.output_jac_theta(x_prior, theta, u))
    if update_params:
        k_t = _innovation_gain(theta_prior.cov, c_theta, r_v)
        theta_post = GaussianEstimate(
            theta_prior.mean + k_t @ innovation,
            symmetrize((np.eye(n_t) - k_t @ c_theta) @ theta_prior.cov),
        )
    else:
        theta_post = theta_prior

    new_sensitivity = dx_dtheta - k_x @ c_theta
    diagnostics = DekfDiagnostics(innovation, innovation_var, x_prior, c_theta, new_sensitivity)
    return theta_post, GaussianEstimate(x_post, p_x_post), diagnostics


@dataclass
class JacobianReport:
    max_rel_error: float
    passed: bool
    failures: list[str]
    per_jacobian: dict[str, float]


def _central_difference(fn, arg_index: int, args: list, step: float = 1e-6) -> np.ndarray:
    base = np.atleast_1d(np.asarray(args[arg_index], dtype=float))
    cols = []
    for j in range(base.size):
        h = step * max(1.0, abs(base[j]))
        plus, minus = base.copy(), base.copy()
        plus[j] += h
        minus[j] -= h
        a_plus, a_minus = list(args), list(args)
        a_plus[arg_index] = plus
        a_minus[arg_index] = minus
        cols.append((np.atleast_1d(fn(*a_plus)) - np.atleast_1d(fn(*a_minus))) / (2 * h))
    return np.column_stack(cols)


def _draw(bounds, rng):
    if bounds is None:
        return None
    lo, hi = (np.atleast_1d(np.asarray(b, dtype=float)) for b in bounds)
    return rng.uniform(lo, hi)


def validate_jacobians(
    model: ModelCallbacks, samples: int = 20, seed: int = 0, tol: float = 1e-3
) -> JacobianReport:
    """Compare each supplied Jacobian with central finite differences at random points."""
    rng = np.random.default_rng(seed)
    checks = [
        ("output_jac_theta", model.output, model.output_jac_theta, 1),
        ("output_jac_x", model.output, model.output_jac_x, 0),
        ("transition_jac_x", model.transition, model.transition_jac_x, 0),
        ("transition_jac_theta", model.transition, model.transition_jac_theta, 1),
    ]
    per: dict[str, float] = {}
    failures: list[str] = []
    for _ in range(samples):
        x = _draw(model.bounds.get("x"), rng)
        theta = _draw(model.bounds.get("theta"), rng)
        u = _draw(model.bounds.get("u"), rng)
        for name, fn, jac, idx in checks:
            if fn is None or jac is None:
                continue
            args = [x, theta, u]
            analytic = np.atleast_2d(jac(*args))
            numeric = _central_difference(fn, idx, args)
            scale = max(float(np.max(np.abs(numeric))), float(np.max(np.abs(analytic))), 1e-12)
            err = float(np.max(np.abs(analytic - numeric))) / scale
            per[name] = max(per.get(name, 0.0), err)
            if err >= tol and name not in failures:
                failures.append(name)
    worst = max(per.values(), default=0.0)
    return JacobianReport(worst, not failures, failures, per)
