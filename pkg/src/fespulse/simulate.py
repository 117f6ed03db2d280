"""Ground-truth trajectories by direct numerical integration.

The concentration layer is always evaluated in closed form (see
:mod:`fespulse.model`); only the force and fatigue states are integrated.
Every integration step is split at impulse times so the right-hand side is
smooth within each step. Three independent force evaluations are provided:
a fixed-step RK4 / adaptive RK45 integrator, a nested adaptive-quadrature
evaluation of the exact integral form, and a time-reparameterized
re-derivation used as a consistency check.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.integrate import IntegrationWarning, quad
from scipy.interpolate import PchipInterpolator

from .model import ModelParams, PulseTrain, eval_cn, eval_m1, eval_m2, _scaling_from_times

__all__ = [
    "SimOptions",
    "Trajectory",
    "Rest",
    "StepTooLarge",
    "QuadratureNoConvergence",
    "simulate_force",
    "simulate_force_fatigue",
    "oracle_force_quadrature",
    "reparam_force_check",
]


class StepTooLarge(RuntimeError):
    """Adaptive step controller underflowed the minimum step size."""


class QuadratureNoConvergence(RuntimeError):
    """Adaptive quadrature failed to reach the requested tolerance."""


@dataclass(frozen=True)
class SimOptions:
    """Integrator options. ``step=None`` resolves to tau_c / 50."""

    step: float | None = None
    method: str = "rk4"          # "rk4" (fixed step) or "adaptive"
    abs_tol: float = 1e-10
    rel_tol: float = 1e-8
    refine_at_pulses: bool = True

    def __post_init__(self) -> None:
        if self.step is not None and self.step <= 0.0:
            raise ValueError(f"step must be positive, got {self.step}")
        if self.method not in ("rk4", "adaptive"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.abs_tol <= 0.0 or self.rel_tol <= 0.0:
            raise ValueError("tolerances must be positive")


@dataclass(frozen=True, eq=False)
class Trajectory:
    """A time grid plus aligned state channels."""

    grid: np.ndarray
    channels: dict[str, np.ndarray]

    def __post_init__(self) -> None:
        if np.any(np.diff(self.grid) <= 0.0):
            raise ValueError("trajectory grid must be strictly increasing")
        for name, vals in self.channels.items():
            if len(vals) != len(self.grid):
                raise ValueError(f"channel {name!r} length mismatch with grid")

    def channel(self, name: str) -> np.ndarray:
        return self.channels[name]

    def terminal(self, name: str) -> float:
        return float(self.channels[name][-1])

    def at(self, name: str, t: float) -> float:
        """Exact-grid lookup; raises if t is not a grid point."""
        i = int(np.searchsorted(self.grid, t))
        for j in (i - 1, i, i + 1):
            if 0 <= j < len(self.grid) and abs(self.grid[j] - t) < 1e-9:
                return float(self.channels[name][j])
        raise KeyError(f"t={t} is not on the trajectory grid")


@dataclass(frozen=True)
class Rest:
    """A stimulation-free span inside a fatigue program."""

    duration: float

    def __post_init__(self) -> None:
        if self.duration <= 0.0:
            raise ValueError(f"rest duration must be positive, got {self.duration}")


def _interval_nodes(lo: float, hi: float, step: float, min_sub: int) -> np.ndarray:
    m = max(min_sub, int(math.ceil((hi - lo) / step - 1e-12)))
    return np.linspace(lo, hi, m + 1)


def _segment_grid(breaks, step: float, min_sub: int) -> list[np.ndarray]:
    return [
        _interval_nodes(a, b, step, min_sub)
        for a, b in zip(breaks, breaks[1:])
        if b - a > 1e-12
    ]


# Dormand-Prince 5(4) tableau.
_DP_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_DP_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_DP_B5 = (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0)
_DP_B4 = (5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40)


def _rk45_interval(rhs, lo, hi, y0, rel_tol, abs_tol, h0):
    """Adaptive RK45 over [lo, hi]; returns accepted nodes and states."""
    y = np.asarray(y0, dtype=float)
    t = lo
    h = min(h0, hi - lo)
    h_min = max(1e-13, (hi - lo) * 1e-14)
    ts = [lo]
    ys = [y.copy()]
    k = [np.zeros_like(y) for _ in range(7)]
    while t < hi - 1e-12:
        h = min(h, hi - t)
        if h < h_min:
            raise StepTooLarge(f"adaptive step underflow at t={t} (h={h})")
        for i in range(7):
            yi = y.copy()
            for j, a in enumerate(_DP_A[i] if i < 6 else _DP_B5[:6]):
                yi += h * a * k[j]
            k[i] = rhs(t + _DP_C[i] * h, yi)
        y5 = y + h * sum(b * ki for b, ki in zip(_DP_B5, k))
        y4 = y + h * sum(b * ki for b, ki in zip(_DP_B4, k))
        scale = abs_tol + rel_tol * np.maximum(np.abs(y), np.abs(y5))
        err = float(np.max(np.abs(y5 - y4) / scale))
        if err <= 1.0:
            t += h
            y = y5
            ts.append(t)
            ys.append(y.copy())
        factor = 0.9 * err ** -0.2 if err > 0.0 else 5.0
        h *= min(5.0, max(0.2, factor))
    return ts, ys


def _rk4_linear_sweep(nodes: np.ndarray, m1, m2, a_val: float, f0: float):
    """RK4 for F' = -m2(t) F + m1(t) a_val on a uniform node array.

    ``m1`` / ``m2`` are arrays sampled at nodes and midpoints, shape
    (2*len(nodes)-1,): values at node 0, mid 0, node 1, mid 1, ...
    """
    h = nodes[1] - nodes[0]
    out = np.empty(len(nodes))
    out[0] = f = f0
    for j in range(len(nodes) - 1):
        m1a, m2a = m1[2 * j], m2[2 * j]
        m1m, m2m = m1[2 * j + 1], m2[2 * j + 1]
        m1b, m2b = m1[2 * j + 2], m2[2 * j + 2]
        k1 = -m2a * f + m1a * a_val
        k2 = -m2m * (f + 0.5 * h * k1) + m1m * a_val
        k3 = -m2m * (f + 0.5 * h * k2) + m1m * a_val
        k4 = -m2b * (f + h * k3) + m1b * a_val
        f += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        out[j + 1] = f
    return out


def _stage_times(nodes: np.ndarray) -> np.ndarray:
    """Nodes interleaved with midpoints: t0, t0+h/2, t1, t1+h/2, ..., tm."""
    mids = 0.5 * (nodes[:-1] + nodes[1:])
    out = np.empty(2 * len(nodes) - 1)
    out[0::2] = nodes
    out[1::2] = mids
    return out


def simulate_force(
    train: PulseTrain, params: ModelParams, opts: SimOptions | None = None
) -> Trajectory:
    """Integrate F' = -m2 F + m1 A from rest with A fixed at a_rest.

    The concentration entering m1 and m2 comes from the closed form, never
    from integrating the stimulation signal. The output grid contains every
    impulse time exactly once.
    """
    opts = opts or SimOptions()
    step = opts.step if opts.step is not None else params.tau_c / 50.0
    min_sub = 4 if opts.refine_at_pulses else 1
    breaks = list(train.times) + [train.horizon]
    a_val = params.a_rest_ms

    grid_parts: list[np.ndarray] = []
    force_parts: list[np.ndarray] = []
    f = 0.0
    if opts.method == "rk4":
        for nodes in _segment_grid(breaks, step, min_sub):
            st = _stage_times(nodes)
            m1 = np.asarray(eval_m1(eval_cn(train, params, st), params))
            m2 = np.asarray(eval_m2(eval_cn(train, params, st), params))
            vals = _rk4_linear_sweep(nodes, m1, m2, a_val, f)
            f = float(vals[-1])
            grid_parts.append(nodes)
            force_parts.append(vals)
    else:
        def rhs(t, y):
            c = eval_cn(train, params, t)
            return np.array([-eval_m2(c, params) * y[0] + eval_m1(c, params) * a_val])

        for lo, hi in zip(breaks, breaks[1:]):
            if hi - lo <= 1e-12:
                continue
            ts, ys = _rk45_interval(rhs, lo, hi, [f], opts.rel_tol, opts.abs_tol, step)
            f = float(ys[-1][0])
            grid_parts.append(np.asarray(ts))
            force_parts.append(np.array([y[0] for y in ys]))

    grid = np.concatenate([p[:-1] for p in grid_parts] + [grid_parts[-1][-1:]])
    force = np.concatenate([p[:-1] for p in force_parts] + [force_parts[-1][-1:]])
    c_n = np.asarray(eval_cn(train, params, grid))
    return Trajectory(grid=grid, channels={"c_n": c_n, "force": force})


def _flatten_program(segments) -> tuple[list[float], list[float], list[float], float]:
    """Global pulse times/amplitudes and segment boundaries of a program."""
    times: list[float] = []
    amps: list[float] = []
    bounds = [0.0]
    cur = 0.0
    for seg in segments:
        if isinstance(seg, PulseTrain):
            times.extend(cur + t for t in seg.times)
            amps.extend(seg.amplitudes)
            cur += seg.horizon
        elif isinstance(seg, Rest):
            cur += seg.duration
        else:
            raise TypeError(f"program segment must be PulseTrain or Rest, got {seg!r}")
        bounds.append(cur)
    if not times:
        # A pure-rest program still integrates (trivially) from rest.
        times, amps = [0.0], [0.0]
    if any(b - a <= 0.0 for a, b in zip(times, times[1:])):
        raise ValueError("program pulses must be strictly increasing in global time")
    return times, amps, bounds, cur


def _global_cn_factory(times, amps, params: ModelParams):
    scal = _scaling_from_times(times, params)
    w = np.array([r * e for r, e in zip(scal, amps)])
    t_arr = np.asarray(times)

    def cn(t):
        tt = np.asarray(t, dtype=float)
        u = (tt[..., None] - t_arr) / params.tau_c
        act = u >= 0.0
        vals = np.where(act, u, 0.0)
        out = (np.where(act, vals * np.exp(-vals), 0.0) * w).sum(axis=-1)
        return float(out) if tt.ndim == 0 else out

    return cn


def simulate_force_fatigue(
    segments, params: ModelParams, opts: SimOptions | None = None
) -> Trajectory:
    """Co-integrate force and fatigue over a sequence of trains and rests.

    ``segments`` is an iterable of :class:`PulseTrain` and :class:`Rest`
    covering [0, t_f] back to back. During rests the concentration keeps
    its closed-form decay from all earlier pulses; the scaling memory runs
    across segment boundaries (and dies off naturally over long rests).
    The ``a`` channel is reported in kN/s.
    """
    opts = opts or SimOptions()
    step = opts.step if opts.step is not None else params.tau_c / 50.0
    min_sub = 4 if opts.refine_at_pulses else 1
    times, amps, bounds, t_f = _flatten_program(segments)
    if t_f <= 0.0:
        raise ValueError("program must have positive total duration")
    cn = _global_cn_factory(times, amps, params)

    breaks = sorted(set(t for t in times if t < t_f) | set(bounds))
    a_rest = params.a_rest_ms
    alpha = params.alpha_a_ms
    tau_fat = params.tau_fat_ms

    grid_parts: list[np.ndarray] = []
    f_parts: list[np.ndarray] = []
    a_parts: list[np.ndarray] = []
    f, a = 0.0, a_rest

    if opts.method == "adaptive":
        def rhs(t, y):
            c = cn(t)
            m1 = c / (params.k_m + c)
            m2 = 1.0 / (params.tau_1 + params.tau_2 * m1)
            return np.array(
                [-m2 * y[0] + m1 * y[1], -(y[1] - a_rest) / tau_fat + alpha * y[0]]
            )

        for lo, hi in zip(breaks, breaks[1:]):
            if hi - lo <= 1e-12:
                continue
            ts, ys = _rk45_interval(rhs, lo, hi, [f, a], opts.rel_tol, opts.abs_tol, step)
            f, a = float(ys[-1][0]), float(ys[-1][1])
            grid_parts.append(np.asarray(ts))
            f_parts.append(np.array([y[0] for y in ys]))
            a_parts.append(np.array([y[1] for y in ys]))
    else:
        for nodes in _segment_grid(breaks, step, min_sub):
            st = _stage_times(nodes)
            c = cn(st)
            m1 = np.asarray(eval_m1(c, params))
            m2 = np.asarray(eval_m2(c, params))
            h = nodes[1] - nodes[0]
            fs = np.empty(len(nodes))
            as_ = np.empty(len(nodes))
            fs[0], as_[0] = f, a
            for j in range(len(nodes) - 1):
                i0, i1, i2 = 2 * j, 2 * j + 1, 2 * j + 2

                def deriv(fv, av, i):
                    return (
                        -m2[i] * fv + m1[i] * av,
                        -(av - a_rest) / tau_fat + alpha * fv,
                    )

                k1f, k1a = deriv(f, a, i0)
                k2f, k2a = deriv(f + 0.5 * h * k1f, a + 0.5 * h * k1a, i1)
                k3f, k3a = deriv(f + 0.5 * h * k2f, a + 0.5 * h * k2a, i1)
                k4f, k4a = deriv(f + h * k3f, a + h * k3a, i2)
                f += h / 6.0 * (k1f + 2 * k2f + 2 * k3f + k4f)
                a += h / 6.0 * (k1a + 2 * k2a + 2 * k3a + k4a)
                fs[j + 1], as_[j + 1] = f, a
            grid_parts.append(nodes)
            f_parts.append(fs)
            a_parts.append(as_)

    grid = np.concatenate([p[:-1] for p in grid_parts] + [grid_parts[-1][-1:]])
    force = np.concatenate([p[:-1] for p in f_parts] + [f_parts[-1][-1:]])
    a_ch = np.concatenate([p[:-1] for p in a_parts] + [a_parts[-1][-1:]]) * 1e3
    return Trajectory(
        grid=grid, channels={"c_n": np.asarray(cn(grid)), "force": force, "a": a_ch}
    )


def _checked_quad(f, lo: float, hi: float, epsabs: float = 1e-13) -> float:
    if hi - lo <= 0.0:
        return 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("error", IntegrationWarning)
        try:
            val, err = quad(f, lo, hi, epsabs=epsabs, epsrel=1e-11, limit=200)
        except IntegrationWarning as exc:
            raise QuadratureNoConvergence(f"quad failed on [{lo}, {hi}]: {exc}") from exc
    if err > max(1e-9, 1e-8 * abs(val)):
        raise QuadratureNoConvergence(
            f"quad error estimate {err} too large on [{lo}, {hi}]"
        )
    return val


class _ScalarHill:
    """Scalar closed-form concentration and Hill values tuned for the many
    pointwise calls adaptive quadrature makes."""

    def __init__(self, train: PulseTrain, params: ModelParams):
        from .model import _pulse_weights

        self.times = list(train.times)
        self.weights = [float(w) for w in _pulse_weights(train, params)]
        self.tau_c = params.tau_c
        self.k_m = params.k_m
        self.tau_1 = params.tau_1
        self.tau_2 = params.tau_2

    def cn(self, s: float) -> float:
        total = 0.0
        for t_i, w in zip(self.times, self.weights):
            if s < t_i:
                break
            u = (s - t_i) / self.tau_c
            total += w * u * math.exp(-u)
        return total

    def m1(self, s: float) -> float:
        c = self.cn(s)
        return c / (self.k_m + c)

    def m2(self, s: float) -> float:
        return 1.0 / (self.tau_1 + self.tau_2 * self.m1(s))


class _M2Accumulator:
    """Cached per-interval quadratures of m2, so Phi(s) = int_0^s m2 costs
    one partial quadrature regardless of how many pulse intervals precede s."""

    def __init__(self, train: PulseTrain, params: ModelParams, t_end: float):
        self._hill = _ScalarHill(train, params)
        self._m2 = self._hill.m2
        self.breaks = [0.0] + [t for t in train.times if 0.0 < t < t_end] + [t_end]
        self._cum = [0.0]
        for a, b in zip(self.breaks, self.breaks[1:]):
            self._cum.append(self._cum[-1] + _checked_quad(self._m2, a, b))

    def m2(self, s: float) -> float:
        return self._m2(s)

    def phi(self, s: float) -> float:
        j = max(0, min(np.searchsorted(self.breaks, s, side="right") - 1, len(self.breaks) - 2))
        return self._cum[j] + _checked_quad(self._m2, self.breaks[j], s)


def oracle_force_quadrature(train: PulseTrain, params: ModelParams, t: float) -> float:
    """Force via the exact integral form, by nested adaptive quadrature.

    F(t) = A int_0^t exp(-int_s^t m2(u) du) m1(s) ds. The inner integral is
    itself quadrature-evaluated (with per-interval caching); absolute error
    target 1e-10. Fatigue-free model only.
    """
    t = float(t)
    if t < 0.0 or t > train.horizon + 1e-9:
        raise ValueError(f"t={t} outside [0, {train.horizon}]")
    if t == 0.0:
        return 0.0
    acc = _M2Accumulator(train, params, t)
    phi_t = acc.phi(t)
    m1 = acc._hill.m1
    phi = acc.phi

    def integrand(s: float) -> float:
        return math.exp(phi(s) - phi_t) * m1(s)

    total = 0.0
    for a, b in zip(acc.breaks, acc.breaks[1:]):
        total += _checked_quad(integrand, a, b, epsabs=1e-12)
    return params.a_rest_ms * total


_GAUSS_X, _GAUSS_W = np.polynomial.legendre.leggauss(10)


def _gauss_cells(edges: np.ndarray, fn) -> float:
    """Composite 10-point Gauss-Legendre integral of fn over cell edges."""
    lo, hi = edges[:-1], edges[1:]
    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    pts = mid[:, None] + half[:, None] * _GAUSS_X[None, :]
    vals = fn(pts.ravel()).reshape(pts.shape)
    return float(((vals @ _GAUSS_W) * half).sum())


def reparam_force_check(
    train: PulseTrain,
    params: ModelParams,
    t_max: float | None = None,
    n_samples: int = 10,
) -> float:
    """Max gap between the reparameterized force and the quadrature oracle.

    In the clock s(t) = int_0^t m2, the force is F(s) = int_0^s e^{u-s}
    m3(u) du with m3 = A m1/m2. We build the monotone map s(t) on a dense
    grid, invert it, evaluate the s-clock integral by composite Gauss
    quadrature and compare against :func:`oracle_force_quadrature` on a
    sample grid. The mapping s(t) is strictly increasing since m2 > 0.
    """
    t_end = float(t_max) if t_max is not None else train.horizon
    if t_end <= 0.0 or t_end > train.horizon + 1e-9:
        raise ValueError(f"t_max={t_max} outside (0, {train.horizon}]")

    # Dense physical grid, cell-wise Gauss accumulation of s(t).
    breaks = [0.0] + [t for t in train.times if 0.0 < t < t_end] + [t_end]
    cell = params.tau_c / 100.0
    x_nodes = np.concatenate(
        [
            np.linspace(a, b, max(2, int(math.ceil((b - a) / cell)) + 1))[:-1]
            for a, b in zip(breaks, breaks[1:])
        ]
        + [np.array([t_end])]
    )

    def m2_of_t(x):
        return np.asarray(eval_m2(eval_cn(train, params, x), params))

    lo, hi = x_nodes[:-1], x_nodes[1:]
    half, mid = 0.5 * (hi - lo), 0.5 * (hi + lo)
    pts = mid[:, None] + half[:, None] * _GAUSS_X[None, :]
    incr = (m2_of_t(pts.ravel()).reshape(pts.shape) @ _GAUSS_W) * half
    s_nodes = np.concatenate([[0.0], np.cumsum(incr)])
    t_of_s = PchipInterpolator(s_nodes, x_nodes)

    def m3_of_u(u):
        x = t_of_s(u)
        c = np.asarray(eval_cn(train, params, x))
        m1 = np.asarray(eval_m1(c, params))
        m2 = np.asarray(eval_m2(c, params))
        return params.a_rest_ms * m1 / m2

    # Sample times snapped onto the dense grid so s is exact there.
    targets = np.linspace(t_end / n_samples, t_end, n_samples)
    idx = sorted(set(int(np.argmin(np.abs(x_nodes - tv))) for tv in targets))
    pulse_s = {float(s_nodes[int(np.argmin(np.abs(x_nodes - tp)))]) for tp in train.times if tp < t_end}

    worst = 0.0
    for i in idx:
        t_i, s_i = float(x_nodes[i]), float(s_nodes[i])
        if s_i <= 0.0:
            f_rep = 0.0
        else:
            inner = sorted(p for p in pulse_s if 0.0 < p < s_i)
            edges_list = []
            for a, b in zip([0.0] + inner, inner + [s_i]):
                m = max(1, int(math.ceil((b - a) / 0.05)))
                edges_list.append(np.linspace(a, b, m + 1)[:-1])
            edges = np.concatenate(edges_list + [np.array([s_i])])
            f_rep = _gauss_cells(edges, lambda u: np.exp(u - s_i) * m3_of_u(u))
        f_ora = oracle_force_quadrature(train, params, t_i)
        worst = max(worst, abs(f_rep - f_ora))
    return worst
