"""Isometric force-fatigue muscle model driven by electrical pulse trains.

Everything here is closed form: the stimulation signal, the Ca2+-troponin
concentration (a superposition of lobes, one per pulse), the
Michaelis-Menten-Hill nonlinearities and the steady-state force analysis.
No ODE is integrated in this module.

Unit conventions
----------------
Time is in milliseconds and force in kN throughout the package. The force
scaling factor A keeps its customary kN/s unit in the public API (as do the
fatigue constants alpha_a in 1/s^2 and tau_fat in s); the ms-converted
values are exposed as properties on :class:`ModelParams`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ModelParams",
    "PulseTrain",
    "ScalingFactors",
    "HillState",
    "UnreachableForce",
    "compute_scaling",
    "eval_signal",
    "eval_cn",
    "eval_lobe",
    "eval_m1",
    "eval_m2",
    "argmax_cn_interval",
    "steady_state_root",
]


class UnreachableForce(ValueError):
    """Requested steady force exceeds the saturated maximum A*(tau_1 + tau_2)."""


@dataclass(frozen=True)
class ModelParams:
    """Physiological constants of the force-fatigue model.

    Defaults are the standard quadriceps values used across the test suite.
    ``k_m`` has no canonical published value and should be set explicitly
    in any serious configuration; 0.103 is a plausible magnitude used as
    the suite default.
    """

    tau_c: float = 20.0      # ms, rise/decay constant of the concentration
    r_bar: float = 1.143     # dimensionless tetanic enhancement
    a_rest: float = 3.009    # kN/s, force scaling of the non-fatigued muscle
    k_m: float = 0.103       # dimensionless half-saturation of m1
    tau_1: float = 50.95     # ms, force decline constant (no bound cross-bridges)
    tau_2: float = 124.4     # ms, force decline constant (friction term)
    alpha_a: float = -0.4    # 1/s^2, fatigue forcing coefficient (<= 0)
    tau_fat: float = 127.0   # s, recovery constant of the scaling factor A

    def __post_init__(self) -> None:
        for name in ("tau_c", "tau_1", "tau_2", "tau_fat", "k_m", "a_rest"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.r_bar < 1.0:
            raise ValueError(f"r_bar must be >= 1, got {self.r_bar}")
        if self.alpha_a > 0.0:
            raise ValueError(f"alpha_a must be <= 0, got {self.alpha_a}")

    @property
    def a_rest_ms(self) -> float:
        """A at rest in kN/ms."""
        return self.a_rest * 1e-3

    @property
    def alpha_a_ms(self) -> float:
        """Fatigue coefficient in 1/ms^2."""
        return self.alpha_a * 1e-6

    @property
    def tau_fat_ms(self) -> float:
        """Recovery constant in ms."""
        return self.tau_fat * 1e3


@dataclass(frozen=True)
class PulseTrain:
    """A finite train of impulses on [0, horizon].

    ``times`` holds t_0 .. t_n with t_0 = 0 and t_n < horizon, strictly
    increasing, with consecutive gaps of at least ``i_min``. Amplitudes are
    the convexified pulse weights in [0, 1].
    """

    times: tuple[float, ...]
    amplitudes: tuple[float, ...]
    horizon: float
    i_min: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "times", tuple(float(x) for x in self.times))
        object.__setattr__(self, "amplitudes", tuple(float(x) for x in self.amplitudes))
        object.__setattr__(self, "horizon", float(self.horizon))
        object.__setattr__(self, "i_min", float(self.i_min))
        if len(self.times) == 0:
            raise ValueError("a pulse train needs at least one impulse time")
        if len(self.times) != len(self.amplitudes):
            raise ValueError("times and amplitudes must have equal length")
        if self.times[0] != 0.0:
            raise ValueError(f"first impulse must be at t=0, got {self.times[0]}")
        gaps = [b - a for a, b in zip(self.times, self.times[1:])]
        if any(g <= 0.0 for g in gaps):
            raise ValueError("impulse times must be strictly increasing")
        if self.i_min > 0.0 and any(g < self.i_min - 1e-9 for g in gaps):
            raise ValueError(f"interpulse gap below i_min={self.i_min}: gaps={gaps}")
        if self.times[-1] >= self.horizon:
            raise ValueError(
                f"last impulse {self.times[-1]} must precede horizon {self.horizon}"
            )
        eps = 1e-12
        if any(a < -eps or a > 1.0 + eps for a in self.amplitudes):
            raise ValueError(f"amplitudes must lie in [0, 1], got {self.amplitudes}")

    @property
    def n(self) -> int:
        """Index of the last pulse (the train has n+1 pulses)."""
        return len(self.times) - 1

    @property
    def gaps(self) -> tuple[float, ...]:
        return tuple(b - a for a, b in zip(self.times, self.times[1:]))

    def interval(self, k: int) -> tuple[float, float]:
        """The k-th inter-pulse interval [t_k, t_{k+1}], with t_{n+1} = horizon."""
        if not 0 <= k <= self.n:
            raise IndexError(f"interval index {k} out of range 0..{self.n}")
        hi = self.times[k + 1] if k < self.n else self.horizon
        return self.times[k], hi


@dataclass(frozen=True)
class ScalingFactors:
    """Tetanic memory factors R_0 .. R_n, with R_0 = 1."""

    values: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))

    def __len__(self) -> int:
        return len(self.values)

    def __getitem__(self, i: int) -> float:
        return self.values[i]


@dataclass(frozen=True)
class HillState:
    """Instantaneous model state (c_n dimensionless, force in kN, a in kN/s)."""

    c_n: float
    force: float
    a: float

    @classmethod
    def rest(cls, params: ModelParams) -> "HillState":
        return cls(c_n=0.0, force=0.0, a=params.a_rest)


def compute_scaling(train: PulseTrain, params: ModelParams) -> ScalingFactors:
    """Memory factors of successive contractions.

    R_0 = 1 and R_i = 1 + (r_bar - 1) * exp(-(t_i - t_{i-1}) / tau_c): a
    pulse arriving shortly after its predecessor is enhanced, up to r_bar.
    """
    return ScalingFactors(_scaling_from_times(train.times, params))


def _scaling_from_times(times, params: ModelParams) -> tuple[float, ...]:
    out = [1.0]
    for prev, cur in zip(times, times[1:]):
        out.append(1.0 + (params.r_bar - 1.0) * math.exp(-(cur - prev) / params.tau_c))
    return tuple(out)


def _pulse_weights(train: PulseTrain, params: ModelParams) -> np.ndarray:
    scaling = _scaling_from_times(train.times, params)
    return np.array([r * eta for r, eta in zip(scaling, train.amplitudes)])


def _superpose(times, weights, tau_c: float, t, shape) -> np.ndarray | float:
    """Sum of per-pulse terms shape((t - t_i)/tau_c) * weight_i * H(t - t_i)."""
    t_arr = np.asarray(t, dtype=float)
    u = (t_arr[..., None] - np.asarray(times)) / tau_c
    active = u >= 0.0
    vals = shape(np.where(active, u, 0.0)) * np.asarray(weights)
    out = np.where(active, vals, 0.0).sum(axis=-1)
    return float(out) if t_arr.ndim == 0 else out


def eval_signal(train: PulseTrain, params: ModelParams, t) -> float | np.ndarray:
    """Stimulation signal E(t) in 1/ms.

    E(t) = (1/tau_c) sum_i R_i eta_i exp(-(t - t_i)/tau_c) H(t - t_i), with
    the Heaviside convention H(0) = 1 (each pulse contributes from its own
    instant, E is right-continuous).
    """
    w = _pulse_weights(train, params)
    return _superpose(train.times, w / params.tau_c, params.tau_c, t, lambda u: np.exp(-u))


def eval_cn(train: PulseTrain, params: ModelParams, t) -> float | np.ndarray:
    """Normalized Ca2+ concentration, exactly, with no integration.

    c_N(t) = sum_i R_i eta_i ((t - t_i)/tau_c) exp(-(t - t_i)/tau_c) H(t - t_i).
    Accepts a scalar or an array of times.
    """
    w = _pulse_weights(train, params)
    return _superpose(train.times, w, params.tau_c, t, lambda u: u * np.exp(-u))


def eval_lobe(train: PulseTrain, params: ModelParams, k: int, t) -> float | np.ndarray:
    """Contribution of pulse k alone: R_k eta_k ((t-t_k)/tau_c) e^{-(t-t_k)/tau_c}."""
    if not 0 <= k <= train.n:
        raise IndexError(f"lobe index {k} out of range 0..{train.n}")
    w = _pulse_weights(train, params)
    return _superpose((train.times[k],), (w[k],), params.tau_c, t, lambda u: u * np.exp(-u))


def eval_m1(c_n, params: ModelParams) -> float | np.ndarray:
    """Saturation nonlinearity m1 = c_n / (k_m + c_n), in [0, 1)."""
    c = np.asarray(c_n, dtype=float)
    out = c / (params.k_m + c)
    return float(out) if c.ndim == 0 else out


def eval_m2(c_n, params: ModelParams) -> float | np.ndarray:
    """Force decay rate m2 = 1 / (tau_1 + tau_2 * m1(c_n)) in 1/ms.

    Decreasing in c_n, bounded in [1/(tau_1 + tau_2), 1/tau_1].
    """
    m1 = np.asarray(eval_m1(c_n, params), dtype=float)
    out = 1.0 / (params.tau_1 + params.tau_2 * m1)
    return float(out) if out.ndim == 0 else out


def argmax_cn_interval(train: PulseTrain, params: ModelParams, k: int) -> float:
    """Location of the concentration maximum on [t_k, t_{k+1}].

    The unique stationary point of c_N restricted to the k-th interval is
    tau_c plus the pulse-weighted mean of the impulse times; the result is
    clamped into the interval. Weights are computed relative to t_k so the
    exponentials never overflow.
    """
    if not 0 <= k <= train.n:
        raise IndexError(f"interval index {k} out of range 0..{train.n}")
    lo, hi = train.interval(k)
    w = _pulse_weights(train, params)[: k + 1]
    if not np.any(w > 0.0):
        raise ValueError(f"all amplitudes up to pulse {k} are zero; argmax undefined")
    times = np.asarray(train.times[: k + 1])
    shifted = w * np.exp((times - train.times[k]) / params.tau_c)
    t_star = params.tau_c + float(shifted @ times) / float(shifted.sum())
    return min(max(t_star, lo), hi)


def steady_state_root(
    params: ModelParams, a_current: float, f_ref: float
) -> tuple[float, float]:
    """Concentration level at which the force settles to ``f_ref``.

    Setting the force derivative to zero gives the quadratic
    A tau_2 m1^2 + A tau_1 m1 - F_ref = 0 (A in kN/ms), which has exactly
    one positive root m1+ because the root product is negative. Returns
    (m1+, c_n_ref) with c_n_ref = k_m m1+ / (1 - m1+).

    Raises UnreachableForce when m1+ >= 1, i.e. ``f_ref`` exceeds the
    saturated steady force A (tau_1 + tau_2).
    """
    if f_ref <= 0.0:
        raise ValueError(f"f_ref must be positive, got {f_ref}")
    if a_current <= 0.0:
        raise ValueError(f"a_current must be positive, got {a_current}")
    a_ms = a_current * 1e-3
    # Stable positive-root form: 2c / (b + sqrt(b^2 + 4ac)) avoids cancellation.
    b = a_ms * params.tau_1
    disc = math.sqrt(b * b + 4.0 * a_ms * params.tau_2 * f_ref)
    m1_plus = 2.0 * f_ref / (b + disc)
    if m1_plus >= 1.0:
        f_max = a_ms * (params.tau_1 + params.tau_2)
        raise UnreachableForce(
            f"f_ref={f_ref} kN is at or above the saturated steady force "
            f"{f_max:.6g} kN for a={a_current} kN/s"
        )
    c_n_ref = params.k_m * m1_plus / (1.0 - m1_plus)
    return m1_plus, c_n_ref
