"""Current profiles, first-order high-pass filtering and frequency-separation analysis."""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import signal as sps

from .cell import SECONDS_PER_HOUR, CellSpec


class NyquistError(ValueError):
    pass


class ProfileMismatchError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class CurrentProfile:
    """Uniformly sampled current in amps (positive = discharge)."""

    t_s: float
    samples: np.ndarray
    label: str = ""

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=float)
        if samples.ndim != 1 or samples.size == 0:
            raise ValueError("profile needs a non-empty 1-D sample sequence")
        if not self.t_s > 0:
            raise ValueError(f"sample period must be positive, got {self.t_s}")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return self.samples.size

    def __eq__(self, other) -> bool:
        if not isinstance(other, CurrentProfile):
            return NotImplemented
        return (
            self.t_s == other.t_s
            and self.label == other.label
            and np.array_equal(self.samples, other.samples)
        )

    @property
    def duration(self) -> float:
        return self.t_s * len(self)

    @property
    def times(self) -> np.ndarray:
        return self.t_s * np.arange(len(self))

    def head(self, n: int) -> "CurrentProfile":
        return CurrentProfile(self.t_s, self.samples[:n], self.label)


def zero_profile(t_s: float, duration: float, label: str = "idle") -> CurrentProfile:
    n = max(int(round(duration / t_s)), 1)
    return CurrentProfile(t_s, np.zeros(n), label)


def sine_profile(m: float, f: float, t_s: float, duration: float) -> CurrentProfile:
    """``m*cos(2*pi*f*k*t_s)`` sampled for ``duration`` seconds."""
    if f <= 0:
        raise ValueError(f"frequency must be positive, got {f}")
    if f >= 0.5 / t_s:
        raise NyquistError(f"{f} Hz is at or above Nyquist for t_s={t_s} s")
    if duration < 1.0 / f - 1e-12:
        raise ValueError(f"duration {duration} s shorter than one period of {f} Hz")
    n = int(round(duration / t_s))
    k = np.arange(n)
    return CurrentProfile(t_s, m * np.cos(2.0 * math.pi * f * k * t_s), f"sine{f:g}Hz")


def sum_profiles(profiles) -> CurrentProfile:
    profiles = list(profiles)
    if not profiles:
        raise ProfileMismatchError("nothing to sum")
    t_s = profiles[0].t_s
    n = len(profiles[0])
    for p in profiles[1:]:
        if p.t_s != t_s or len(p) != n:
            raise ProfileMismatchError(
                f"cannot sum profiles with (t_s, n) = ({p.t_s}, {len(p)}) and ({t_s}, {n})"
            )
    total = np.sum([p.samples for p in profiles], axis=0)
    return CurrentProfile(t_s, total, "+".join(p.label for p in profiles if p.label))


def multisine_profile(amplitudes, frequencies, t_s: float, duration: float) -> CurrentProfile:
    amplitudes = list(amplitudes)
    frequencies = list(frequencies)
    if len(amplitudes) != len(frequencies):
        raise ProfileMismatchError("need one amplitude per frequency")
    return sum_profiles(sine_profile(m, f, t_s, duration) for m, f in zip(amplitudes, frequencies))


def drive_cycle_profile(
    t_s: float, duration: float, peak: float, seed: int = 0
) -> CurrentProfile:
    """Synthetic urban-style drive current.

    Repeats micro-trips of acceleration ramp, noisy cruise, regenerative
    braking and idle.  Regen never returns more charge than the trip drew, so
    the mean current is positive.  The result is rescaled so the largest
    absolute sample equals ``peak``.
    """
    if t_s <= 0:
        raise ValueError(f"sample period must be positive, got {t_s}")
    rng = np.random.default_rng(seed)
    n = max(int(round(duration / t_s)), 2)
    pieces = []
    total = 0
    while total < n:
        level = rng.uniform(0.4, 1.0)
        t_acc = rng.uniform(8.0, 25.0)
        t_cruise = rng.uniform(15.0, 60.0)
        t_brake = rng.uniform(5.0, min(15.0, t_acc))
        t_idle = rng.uniform(5.0, 20.0)
        regen = rng.uniform(0.2, 0.5) * level
        n_acc = max(int(t_acc / t_s), 1)
        n_cruise = max(int(t_cruise / t_s), 1)
        n_brake = max(int(t_brake / t_s), 1)
        n_idle = max(int(t_idle / t_s), 1)
        acc = np.linspace(0.0, 1.2 * level, n_acc, endpoint=False)
        cruise = level * (1.0 + 0.1 * np.sin(np.linspace(0.0, rng.uniform(2, 6) * math.pi, n_cruise)))
        brake = -regen * np.sin(np.linspace(0.0, math.pi, n_brake, endpoint=False))
        pieces.extend([acc, cruise, brake, np.zeros(n_idle)])
        total += n_acc + n_cruise + n_brake + n_idle
    samples = np.concatenate(pieces)[:n]
    samples *= peak / np.max(np.abs(samples))
    return CurrentProfile(t_s, samples, f"drive{seed}")


@dataclass
class HighPassFilter:
    """First-order high-pass difference equation ``y = b0*x + b1*x_prev + a1*y_prev``.

    State is seeded from the first input unless ``at_rest`` is set, in which
    case the filter starts from zero input history (step-response analysis).
    """

    f_3db: float
    t_s: float
    b0: float
    b1: float
    a1: float
    at_rest: bool = False
    _x_prev: float = field(default=0.0, repr=False)
    _y_prev: float = field(default=0.0, repr=False)
    _primed: bool = field(default=False, repr=False)

    @property
    def t_c(self) -> float:
        return 1.0 / (2.0 * math.pi * self.f_3db)

    def reset(self) -> None:
        self._x_prev = 0.0
        self._y_prev = 0.0
        self._primed = False

    def clone(self) -> "HighPassFilter":
        return copy.copy(self)

    def step(self, x: float) -> float:
        if not self._primed:
            self._primed = True
            if not self.at_rest:
                self._x_prev = x
        y = self.b0 * x + self.b1 * self._x_prev + self.a1 * self._y_prev
        self._x_prev = x
        self._y_prev = y
        return y

    def run(self, xs) -> np.ndarray:
        """Filter a whole sequence, continuing from the current state."""
        xs = np.asarray(xs, dtype=float)
        if xs.size == 0:
            return xs.copy()
        if not self._primed:
            self._primed = True
            if not self.at_rest:
                self._x_prev = xs[0]
        # lfilter's transposed direct form II state for this first-order section
        zi = [self.b1 * self._x_prev + self.a1 * self._y_prev]
        ys, _ = sps.lfilter([self.b0, self.b1], [1.0, -self.a1], xs, zi=zi)
        self._x_prev = float(xs[-1])
        self._y_prev = float(ys[-1])
        return ys

    def frequency_response(self, f) -> np.ndarray:
        z = np.exp(-2j * math.pi * np.asarray(f, dtype=float) * self.t_s)
        return (self.b0 + self.b1 * z) / (1.0 - self.a1 * z)


def design_highpass(f_3db: float, t_s: float, at_rest: bool = False) -> HighPassFilter:
    """Bilinear transform of ``s/(s + wc)`` prewarped so the -3 dB point lands on ``f_3db``."""
    if not 0 < f_3db < 0.5 / t_s:
        raise NyquistError(f"cut-off {f_3db} Hz must lie in (0, {0.5 / t_s}) Hz")
    c = math.tan(math.pi * f_3db * t_s)
    b0 = 1.0 / (1.0 + c)
    return HighPassFilter(
        f_3db=f_3db, t_s=t_s, b0=b0, b1=-b0, a1=(1.0 - c) / (1.0 + c), at_rest=at_rest
    )


def apply_filter(filt: HighPassFilter, sample: float) -> float:
    return filt.step(sample)


def f3db_from_tc(t_c: float) -> float:
    return 1.0 / (2.0 * math.pi * t_c)


def initial_soc_decay(a: float, b: float, z0: float, t_c: float, t):
    """Filtered contribution of the constant OCV at initial SoC."""
    if t_c <= 0:
        raise ValueError(f"filter time constant must be positive, got {t_c}")
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("time must be non-negative")
    out = (a * z0 + b) * np.exp(-t / t_c)
    return float(out) if out.ndim == 0 else out


COMPONENTS = ("init", "socvar", "ohmic", "rc")


@dataclass
class ComponentBreakdown:
    """Per-sample voltage components of the filtered, linearized cell response."""

    t: np.ndarray
    current: np.ndarray
    init: np.ndarray
    socvar: np.ndarray
    ohmic: np.ndarray
    rc: np.ndarray
    amplitudes: dict[str, float]
    f: float
    t_c: float

    @property
    def total(self) -> np.ndarray:
        return self.init + self.socvar + self.ohmic + self.rc

    def ratio(self, num: str, den: str) -> float:
        return self.amplitudes[num] / self.amplitudes[den]


def _sine_amplitude(y: np.ndarray, t: np.ndarray, f: float) -> float:
    design = np.column_stack(
        [np.cos(2 * math.pi * f * t), np.sin(2 * math.pi * f * t), np.ones_like(t)]
    )
    (c, s, _), *_ = np.linalg.lstsq(design, y, rcond=None)
    return float(math.hypot(c, s))


def component_breakdown(
    spec: CellSpec,
    a: float,
    f: float,
    m: float,
    t_c: float,
    duration: float,
    t_s: float,
    z0: float = 0.8,
    b: float | None = None,
    settle_periods: int = 2,
) -> ComponentBreakdown:
    """Split the high-passed response to ``m*cos(2*pi*f*t)`` into its four parts.

    The cell is linearized as ``ocv = a*z + b``.  Every term is produced by the
    same discrete LTI operators as the cell simulator, so the four parts sum
    to the filtered linearized terminal-voltage deviation.  Steady-state
    amplitudes are fitted over the last ``settle_periods`` whole periods.
    """
    profile = sine_profile(m, f, t_s, duration)
    if b is None:
        b = 0.0
    t = profile.times
    i = profile.samples
    filt = design_highpass(f3db_from_tc(t_c), t_s, at_rest=True)
    i_bf = filt.clone().run(i)

    init = filt.clone().run(np.full_like(i, a * z0 + b))
    charge = np.concatenate([[0.0], np.cumsum(i_bf[:-1])]) * t_s
    socvar = -a * spec.eta * charge / (spec.q_b * SECONDS_PER_HOUR)
    ohmic = -spec.ecm.r_s * i_bf
    decay = math.exp(-t_s / spec.ecm.tau)
    # v_c[k+1] = decay*v_c[k] + R_t*(1-decay)*i_bf[k], v_c[0] = 0
    vc = sps.lfilter([0.0, spec.ecm.r_t * (1.0 - decay)], [1.0, -decay], i_bf)
    rc = -vc

    n_settle = int(round(settle_periods / (f * t_s)))
    window = slice(max(len(t) - n_settle, 0), None)
    amplitudes = {
        "init": float(np.max(np.abs(init[window]))),
        "socvar": _sine_amplitude(socvar[window], t[window], f),
        "ohmic": _sine_amplitude(ohmic[window], t[window], f),
        "rc": _sine_amplitude(rc[window], t[window], f),
    }
    return ComponentBreakdown(t, i, init, socvar, ohmic, rc, amplitudes, f, t_c)


def component_amplitude_oracle(
    spec: CellSpec, a: float, f: float, m: float, t_c: float
) -> dict[str, float]:
    """Continuous-time steady-state amplitudes of the current-driven components."""
    w = 2.0 * math.pi * f
    hpf = w * t_c / math.hypot(1.0, w * t_c)
    return {
        "socvar": abs(a) * spec.eta * m / (spec.q_b * SECONDS_PER_HOUR * w) * hpf,
        "ohmic": spec.ecm.r_s * m * hpf,
        "rc": spec.ecm.r_t * m / math.hypot(1.0, w * spec.ecm.tau) * hpf,
    }


def analysis_sample_period(f: float, max_t_s: float = 1.0, per_period: int = 50) -> float:
    return min(max_t_s, 1.0 / (per_period * f))


def analysis_duration(f: float, t_c: float, tau: float, periods: int = 4) -> float:
    """Long enough for transients (filter and RC) to die and ``periods`` cycles to follow."""
    settle = 10.0 * max(t_c, tau)
    return math.ceil((settle + periods / f) * f) / f
