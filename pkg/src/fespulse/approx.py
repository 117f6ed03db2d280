"""Closed-form force approximation and concentration surrogates.

The concentration admits cheap surrogates in two directions:

* truncation: on each inter-pulse interval only the last ``p`` lobes are
  kept (a lower approximation with a computable sup bound),
* averaging: interval and tail means of the concentration have exact
  closed forms through the lobe antiderivative chi.

For the force, the Hill nonlinearities m1 and m2 are replaced on a refined
partition of the pulse intervals by piecewise polynomials (m2 by piecewise
constants inside the closed-form assembly). The resulting approximate
force is a piecewise polynomial-exponential function whose per-segment
primitives and integrals are precomputed once per train; evaluating it at
any time then costs one segment lookup plus one closed-form partial
integral. A scalar deformation ``nu`` of m1 and m2 turns the same
machinery into guaranteed-side (upper or lower) force approximations, and
an L1-type bound certifies the error of the interval-averaged m2 scheme.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.integrate import quad

from .exppoly import RATE_ZERO_TOL, ExpPoly
from .model import (
    ModelParams,
    PulseTrain,
    _pulse_weights,
    eval_cn,
    eval_lobe,
    eval_m1,
)

__all__ = [
    "MApprox",
    "PersistenceProfile",
    "TruncatedConcentration",
    "ForceApprox",
    "EulerNodes",
    "ForceErrorBound",
    "UnstableStep",
    "SCHEMES",
    "persistence_order",
    "persistence_profile",
    "truncated_cn",
    "error_bound_persistent",
    "interval_average_cn",
    "tail_average_cn",
    "build_m_approx",
    "psi_primitive",
    "eval_f_tilde",
    "force_approximator",
    "euler_nodes",
    "eval_f_euler",
    "force_error_bound",
    "upper_lower_envelope",
]

SCHEMES = ("triangular", "affine-constant", "constant-average")
# One-sided variants used by the envelope construction: per-segment sup/inf
# of the (deformed) Hill functions, so domination holds by construction.
ENVELOPE_SCHEMES = ("staircase-upper", "staircase-lower")

# Fraction of an interval by which the lobe-peak split point stays clear of
# the interval ends, so no partition segment degenerates.
_SPLIT_MARGIN = 0.02


class UnstableStep(RuntimeError):
    """An explicit-Euler segment violates the stability bound |1 - h m2| <= 1."""


# ---------------------------------------------------------------------------
# persistence and truncation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PersistenceProfile:
    """Truncation geometry of a train: order p, lobe cutoff window 5 tau_c,
    and kappa, the largest number of truncated lobes that can still sit
    inside the cutoff window."""

    p: int
    window: float
    kappa: int

    def __post_init__(self) -> None:
        if self.p < 1:
            raise ValueError(f"persistence order must be >= 1, got {self.p}")
        if self.kappa > self.p:
            raise ValueError("kappa cannot exceed p")


def persistence_order(train: PulseTrain, params: ModelParams) -> int:
    """Largest number of consecutive pulses chained by gaps <= 5 tau_c."""
    window = 5.0 * params.tau_c
    best = run = 0
    for g in train.gaps:
        run = run + 1 if g <= window + 1e-9 else 0
        best = max(best, run)
    return best + 1


def _effective_i_min(train: PulseTrain) -> float:
    if train.i_min > 0.0:
        return train.i_min
    if train.n >= 1:
        return min(train.gaps)
    return math.inf


def persistence_profile(
    train: PulseTrain, params: ModelParams, p: int | None = None
) -> PersistenceProfile:
    window = 5.0 * params.tau_c
    order = persistence_order(train, params) if p is None else int(p)
    im = _effective_i_min(train)
    kappa = min(order, 1 if math.isinf(im) else math.ceil(window / im))
    return PersistenceProfile(p=order, window=window, kappa=kappa)


@dataclass(frozen=True)
class TruncatedConcentration:
    """Evaluator keeping only the last ``p`` lobes on each interval.

    Always a lower approximation of the exact concentration. The window is
    right-continuous at impulse times: at t = t_{k+1} exactly, the
    evaluation already uses interval k+1's lobe window (matching the
    Heaviside convention), so per-interval sup statements apply on the
    half-open interval [t_k, t_{k+1}).
    """

    train: PulseTrain
    params: ModelParams
    p: int

    def __call__(self, t) -> float | np.ndarray:
        tr, pr = self.train, self.params
        t_arr = np.asarray(t, dtype=float)
        k_idx = np.searchsorted(np.asarray(tr.times), t_arr, side="right") - 1
        out = np.zeros(t_arr.shape)
        for i in range(tr.n + 1):
            keep = (k_idx >= i) & (k_idx <= i + self.p - 1)
            if np.any(keep):
                out = out + np.where(keep, np.asarray(eval_lobe(tr, pr, i, t_arr)), 0.0)
        return float(out) if t_arr.ndim == 0 else out


def truncated_cn(train: PulseTrain, params: ModelParams, p: int) -> TruncatedConcentration:
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    return TruncatedConcentration(train=train, params=params, p=p)


def error_bound_persistent(
    train: PulseTrain, params: ModelParams, p: int, k: int
) -> float:
    """Sup bound for the truncation gap on interval k of a p-persistent train.

    At most kappa of the truncated lobes are younger than the 5 tau_c
    cutoff (each below the peak value r_bar/e); every older lobe is below
    5 e^-5 r_bar. For k < p nothing is truncated and the bound is zero.
    """
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    if not 0 <= k <= train.n:
        raise IndexError(f"interval index {k} out of range 0..{train.n}")
    if k < p:
        return 0.0
    kappa = persistence_profile(train, params, p=p).kappa
    r = params.r_bar
    return (r / math.e) * kappa + 5.0 * math.exp(-5.0) * r * (k - p - kappa + 1)


# ---------------------------------------------------------------------------
# interval and tail averages
# ---------------------------------------------------------------------------


def _chi(t, t_i, tau_c: float):
    u = t - t_i
    return np.exp(-u / tau_c) * (tau_c + u)


def interval_average_cn(train: PulseTrain, params: ModelParams, k: int) -> float:
    """Exact mean of the concentration over [t_k, t_{k+1}] via the lobe
    antiderivative chi_i(t) = e^{-(t-t_i)/tau_c} (tau_c + t - t_i)."""
    lo, hi = train.interval(k)
    w = _pulse_weights(train, params)[: k + 1]
    t_i = np.asarray(train.times[: k + 1])
    total = float(w @ (_chi(lo, t_i, params.tau_c) - _chi(hi, t_i, params.tau_c)))
    return total / (hi - lo)


def tail_average_cn(train: PulseTrain, params: ModelParams, q: int) -> float:
    """Exact mean of the concentration over [t_q, horizon].

    Lobes up to q contribute chi differences as in the interval average;
    each later lobe i > q starts inside the tail and contributes from its
    own impulse time, i.e. tau_c - chi_i(horizon).
    """
    if not 0 <= q <= train.n:
        raise IndexError(f"tail index {q} out of range 0..{train.n}")
    t_end = train.horizon
    tau = params.tau_c
    w = _pulse_weights(train, params)
    t_i = np.asarray(train.times)
    t_q = train.times[q]
    past = float(w[: q + 1] @ (_chi(t_q, t_i[: q + 1], tau) - _chi(t_end, t_i[: q + 1], tau)))
    future = float(w[q + 1 :] @ (tau - _chi(t_end, t_i[q + 1 :], tau))) if q < train.n else 0.0
    return (past + future) / (t_end - t_q)


# ---------------------------------------------------------------------------
# piecewise approximation of the Hill functions
# ---------------------------------------------------------------------------


def _m1_nu(c, params: ModelParams, nu: float):
    return np.asarray(c) / (nu * params.k_m + np.asarray(c))


def _m2_nu(c, params: ModelParams, nu: float):
    return nu / (params.tau_1 + params.tau_2 * np.asarray(eval_m1(c, params)))


def _interval_argmaxes(train: PulseTrain, params: ModelParams) -> list[float | None]:
    """Unclamped concentration-peak locations per interval, via the running
    pulse-weighted time averages (None where all amplitudes so far vanish)."""
    from .model import _scaling_from_times

    tau = params.tau_c
    scal = _scaling_from_times(train.times, params)
    out: list[float | None] = []
    den = 0.0
    num = 0.0
    prev_t = train.times[0]
    for k in range(train.n + 1):
        t_k = train.times[k]
        decay = math.exp(-(t_k - prev_t) / tau)
        den = den * decay + scal[k] * train.amplitudes[k]
        num = num * decay + scal[k] * train.amplitudes[k] * t_k
        prev_t = t_k
        out.append(tau + num / den if den > 0.0 else None)
    return out


def _refined_partition(
    train: PulseTrain, params: ModelParams, p: int
) -> tuple[tuple[float, ...], tuple[float, ...]]:
    """Partition with p segments per pulse interval, split at the (safely
    clamped) concentration peak; falls back to an even split when the peak
    degenerates or all amplitudes so far vanish."""
    pulse_breaks = tuple(train.times) + (train.horizon,)
    nodes: list[float] = [pulse_breaks[0]]
    peaks = _interval_argmaxes(train, params) if p > 1 else []
    for k in range(train.n + 1):
        lo, hi = pulse_breaks[k], pulse_breaks[k + 1]
        if p == 1:
            nodes.append(hi)
            continue
        t_star = peaks[k]
        if t_star is None:
            inner = np.linspace(lo, hi, p + 1)
        else:
            margin = _SPLIT_MARGIN * (hi - lo)
            split = min(max(t_star, lo + margin), hi - margin)
            left = (p + 1) // 2
            inner = np.concatenate(
                [np.linspace(lo, split, left + 1), np.linspace(split, hi, p - left + 1)[1:]]
            )
        nodes.extend(float(x) for x in inner[1:])
    return tuple(nodes), pulse_breaks


@dataclass(frozen=True)
class MApprox:
    """Piecewise-polynomial stand-ins for the Hill functions on a refined
    partition of the pulse intervals, plus the deformation parameter nu."""

    m1_tilde: ExpPoly
    m2_tilde: ExpPoly
    partition: tuple[float, ...]
    pulse_breaks: tuple[float, ...]
    scheme: str
    p: int
    nu: float

    @property
    def n_intervals(self) -> int:
        return len(self.pulse_breaks) - 1

    def segment(self, i: int, j: int) -> tuple[float, float]:
        """Bounds of segment j of pulse interval i."""
        if not 0 <= i < self.n_intervals:
            raise IndexError(f"interval index {i} out of range")
        if not 0 <= j < self.p:
            raise IndexError(f"segment index {j} out of range 0..{self.p - 1}")
        g = i * self.p + j
        return self.partition[g], self.partition[g + 1]


def _quad_mean(fn, lo: float, hi: float) -> float:
    val, _ = quad(fn, lo, hi, epsabs=1e-12, epsrel=1e-11, limit=200)
    return val / (hi - lo)


def build_m_approx(
    train: PulseTrain,
    params: ModelParams,
    scheme: str = "affine-constant",
    p: int = 2,
    nu: float = 1.0,
) -> MApprox:
    """Construct the piecewise approximations of m1 and m2.

    Schemes:

    * ``triangular``: both functions replaced by their piecewise affine
      interpolants at the partition nodes.
    * ``affine-constant``: m1 is held constant at the peak-side node value
      on rising segments and affinely interpolated on falling segments;
      m2 is the per-segment mean of its endpoint values.
    * ``constant-average``: m1 as in triangular; m2 is constant on each
      pulse interval, equal to its exact quadrature mean there (the scheme
      required by the force error bound).

    ``nu`` deforms the underlying functions to m1 with nu*k_m and nu*m2,
    which pushes the resulting force approximation to one side: nu < 1
    gives an upper force approximation, nu > 1 a lower one.

    Two extra one-sided schemes serve the envelope construction:
    ``staircase-upper`` holds m1 at its per-segment supremum and m2 at its
    per-segment infimum (and vice versa for ``staircase-lower``), which
    makes the force approximation dominate (or be dominated by) the true
    force pointwise, for any nu.
    """
    if scheme not in SCHEMES + ENVELOPE_SCHEMES:
        raise ValueError(
            f"unknown scheme {scheme!r}; expected one of {SCHEMES + ENVELOPE_SCHEMES}"
        )
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    if nu <= 0.0:
        raise ValueError(f"nu must be positive, got {nu}")

    partition, pulse_breaks = _refined_partition(train, params, p)
    cn_nodes = np.atleast_1d(eval_cn(train, params, np.asarray(partition)))
    f1_nodes = _m1_nu(cn_nodes, params, nu)
    f2_nodes = _m2_nu(cn_nodes, params, nu)

    m2_quad = None
    if scheme == "constant-average":
        from .simulate import _ScalarHill

        hill = _ScalarHill(train, params)
        m2_quad = lambda s: nu / (params.tau_1 + params.tau_2 * hill.m1(s))

    peak_vals: list[tuple[float, float, float] | None] = []
    if scheme in ENVELOPE_SCHEMES:
        # Per-interval concentration maxima at the unclamped peak, for
        # exact per-segment suprema regardless of the clamped split point.
        for i, t_star in enumerate(_interval_argmaxes(train, params)):
            lo = pulse_breaks[i]
            hi = pulse_breaks[i + 1]
            if t_star is None or not lo < t_star < hi:
                peak_vals.append(None)
            else:
                c_star = float(eval_cn(train, params, t_star))
                peak_vals.append(
                    (t_star, float(_m1_nu(c_star, params, nu)), float(_m2_nu(c_star, params, nu)))
                )

    m1_pieces: list[tuple[float, ...]] = []
    m2_pieces: list[tuple[float, ...]] = []
    n_int = len(pulse_breaks) - 1
    for i in range(n_int):
        lo, hi = pulse_breaks[i], pulse_breaks[i + 1]
        if scheme == "constant-average":
            m2_mean = _quad_mean(m2_quad, lo, hi)
        base = i * p
        peak = int(np.argmax(cn_nodes[base : base + p + 1]))
        for j in range(p):
            sa, sb = partition[base + j], partition[base + j + 1]
            w = sb - sa
            v1a, v1b = float(f1_nodes[base + j]), float(f1_nodes[base + j + 1])
            v2a, v2b = float(f2_nodes[base + j]), float(f2_nodes[base + j + 1])
            if scheme in ENVELOPE_SCHEMES:
                hi1, lo1 = max(v1a, v1b), min(v1a, v1b)
                hi2, lo2 = max(v2a, v2b), min(v2a, v2b)
                pk = peak_vals[i]
                if pk is not None and sa <= pk[0] <= sb:
                    hi1 = max(hi1, pk[1])  # m1 peaks with the concentration
                    lo2 = min(lo2, pk[2])  # m2 bottoms out there
                if scheme == "staircase-upper":
                    m1_pieces.append((hi1,))
                    m2_pieces.append((lo2,))
                else:
                    m1_pieces.append((lo1,))
                    m2_pieces.append((hi2,))
                continue
            if scheme == "affine-constant" and j < peak:
                m1_pieces.append((v1b,))
            else:
                m1_pieces.append((v1a, (v1b - v1a) / w))
            if scheme == "triangular":
                m2_pieces.append((v2a, (v2b - v2a) / w))
            elif scheme == "affine-constant":
                m2_pieces.append((0.5 * (v2a + v2b),))
            else:
                m2_pieces.append((m2_mean,))

    return MApprox(
        m1_tilde=ExpPoly.piecewise_poly(partition, m1_pieces),
        m2_tilde=ExpPoly.piecewise_poly(partition, m2_pieces),
        partition=partition,
        pulse_breaks=pulse_breaks,
        scheme=scheme,
        p=p,
        nu=nu,
    )


def psi_primitive(m_approx: MApprox, i: int, j: int) -> ExpPoly:
    """Antiderivative of the m2 stand-in on segment (i, j), zero at the
    segment start. Degree is deg(m2_tilde) + 1."""
    sa, sb = m_approx.segment(i, j)
    g = i * m_approx.p + j
    piece = m_approx.m2_tilde.pieces[g]
    return ExpPoly((sa, sb), (piece,)).antiderivative()


# ---------------------------------------------------------------------------
# closed-form force assembly
# ---------------------------------------------------------------------------


def _int_exp_poly_scalar(coeffs, mu: float, x: float) -> float:
    if abs(mu) < RATE_ZERO_TOL or abs(mu * x) < 1e-4:
        out = 0.0
        for k, c in enumerate(coeffs):
            if c == 0.0:
                continue
            term = 0.0
            fact = 1.0
            for m in range(11):
                term += (mu**m / fact) * x ** (k + m + 1) / (k + m + 1)
                fact *= m + 1
            out += c * term
        return out
    e = math.exp(mu * x)
    i_k = math.expm1(mu * x) / mu
    out = coeffs[0] * i_k
    xk = 1.0
    for k in range(1, len(coeffs)):
        xk *= x
        i_k = (xk * e - k * i_k) / mu
        out += coeffs[k] * i_k
    return out


def _int_exp_poly(coeffs, mu: float, x):
    """int_0^x P(u) e^{mu u} du for ascending coefficients P, vectorized in x.

    Uses the integration-by-parts recursion; switches to a short power
    series when |mu x| is small enough for the recursion to cancel badly.
    """
    if isinstance(x, float):
        return _int_exp_poly_scalar(coeffs, mu, x)
    x_arr = np.asarray(x, dtype=float)
    if x_arr.ndim == 0:
        return _int_exp_poly_scalar(coeffs, mu, float(x_arr))
    xmax = float(np.max(np.abs(x_arr))) if x_arr.size else 0.0
    if abs(mu) < RATE_ZERO_TOL or abs(mu) * xmax < 1e-4:
        out = np.zeros_like(x_arr)
        for k, c in enumerate(coeffs):
            if c == 0.0:
                continue
            term = np.zeros_like(x_arr)
            fact = 1.0
            for m in range(11):
                term = term + (mu**m / fact) * x_arr ** (k + m + 1) / (k + m + 1)
                fact *= m + 1
            out = out + c * term
    else:
        e = np.exp(mu * x_arr)
        i_k = np.expm1(mu * x_arr) / mu
        out = coeffs[0] * i_k
        xk = np.ones_like(x_arr)
        for k in range(1, len(coeffs)):
            xk = xk * x_arr
            i_k = (xk * e - k * i_k) / mu
            out = out + coeffs[k] * i_k
    return out


def _poly_terms_only(piece) -> tuple[float, ...]:
    coeffs: tuple[float, ...] = (0.0,)
    for c, rate in piece:
        if rate != 0.0:
            raise ValueError("force assembly expects rate-0 (polynomial) pieces")
        n = max(len(coeffs), len(c))
        coeffs = tuple(
            (coeffs[i] if i < len(coeffs) else 0.0) + (c[i] if i < len(c) else 0.0)
            for i in range(n)
        )
    return coeffs


class ForceApprox:
    """Precomputed closed-form evaluator of the approximate force.

    All decay-rate accumulation is kept in ratio form (every stored prefix
    is already discounted by the accumulated decay), so nothing in the
    table can overflow no matter how long the train is. Construction is
    single-threaded; evaluation is pure and re-entrant.
    """

    def __init__(self, m_approx: MApprox):
        self.m_approx = m_approx
        self.starts = list(m_approx.partition[:-1])
        widths = [b - a for a, b in zip(m_approx.partition, m_approx.partition[1:])]
        n_seg = len(widths)
        self.mu: list[float] = []
        self.m1_coeffs: list[tuple[float, ...]] = []
        for g in range(n_seg):
            m2_poly = _poly_terms_only(m_approx.m2_tilde.pieces[g])
            w = widths[g]
            # Within the closed-form assembly m2 must be piecewise constant;
            # higher-degree pieces are projected to their segment mean.
            self.mu.append(sum(c * w**k / (k + 1) for k, c in enumerate(m2_poly)))
            self.m1_coeffs.append(_poly_terms_only(m_approx.m1_tilde.pieces[g]))
        self.psi = [m * w for m, w in zip(self.mu, widths)]
        # sbar[g] = sum_{m<g} exp(Phi_m - Phi_g) * J_m, built by the stable
        # recurrence sbar[g+1] = exp(-psi_g) (sbar[g] + J_g).
        self.sbar = [0.0]
        for g in range(n_seg - 1):
            full = _int_exp_poly_scalar(self.m1_coeffs[g], self.mu[g], widths[g])
            self.sbar.append(math.exp(-self.psi[g]) * (self.sbar[g] + full))
        self._starts_arr = np.asarray(self.starts)
        # Gather arrays for the vectorized affine-m1 fast path.
        self._affine = all(len(c) <= 2 for c in self.m1_coeffs)
        if self._affine:
            self._c0 = np.array([c[0] for c in self.m1_coeffs])
            self._c1 = np.array([c[1] if len(c) > 1 else 0.0 for c in self.m1_coeffs])
            self._mu_arr = np.asarray(self.mu)
            self._sbar_arr = np.asarray(self.sbar)

    @property
    def horizon(self) -> float:
        return self.m_approx.partition[-1]

    def _scaled_scalar(self, t: float) -> float:
        part = self.m_approx.partition
        if t < part[0] - 1e-9 or t > part[-1] + 1e-9:
            raise ValueError(f"evaluation time outside [{part[0]}, {part[-1]}]")
        g = min(max(int(np.searchsorted(part, t, side="right")) - 1, 0), len(self.starts) - 1)
        x = t - self.starts[g]
        frac = _int_exp_poly_scalar(self.m1_coeffs[g], self.mu[g], x)
        return math.exp(-self.mu[g] * x) * (self.sbar[g] + frac)

    def scaled_values(self, t) -> np.ndarray | float:
        """F~(t)/A in ms units (multiply by A in kN/ms for force in kN)."""
        if isinstance(t, float):
            return self._scaled_scalar(t)
        t_arr = np.asarray(t, dtype=float)
        if t_arr.ndim == 0:
            return self._scaled_scalar(float(t_arr))
        lo, hi = self.m_approx.partition[0], self.m_approx.partition[-1]
        if np.any(t_arr < lo - 1e-9) or np.any(t_arr > hi + 1e-9):
            raise ValueError(f"evaluation time outside [{lo}, {hi}]")
        flat = np.atleast_1d(t_arr)
        idx = np.clip(
            np.searchsorted(self.m_approx.partition, flat, side="right") - 1,
            0,
            len(self.starts) - 1,
        )
        if self._affine:
            x = flat - self._starts_arr[idx]
            mu = self._mu_arr[idx]
            mx = mu * x
            e = np.exp(mx)
            i0 = np.expm1(mx) / mu
            i1 = (x * e - i0) / mu
            small = np.flatnonzero(np.abs(mx) < 1e-4)
            if small.size:
                xs, ms = x[small], mx[small]
                i0[small] = xs * (1.0 + ms / 2.0 + ms**2 / 6.0 + ms**3 / 24.0)
                i1[small] = xs**2 * (0.5 + ms / 3.0 + ms**2 / 8.0 + ms**3 / 30.0)
            out = (self._sbar_arr[idx] + self._c0[idx] * i0 + self._c1[idx] * i1) / e
            return out.reshape(t_arr.shape)
        out = np.empty_like(flat)
        sbar = self.sbar
        for g in np.unique(idx):
            sel = idx == g
            x = flat[sel] - self.starts[g]
            part = _int_exp_poly(self.m1_coeffs[g], self.mu[g], x)
            out[sel] = np.exp(-self.mu[g] * x) * (sbar[g] + part)
        return out.reshape(t_arr.shape)

    def values(self, t, a_value: float) -> np.ndarray | float:
        """Approximate force in kN at time(s) t, for A given in kN/s."""
        scaled = self.scaled_values(t)
        return a_value * 1e-3 * scaled


@lru_cache(maxsize=32)
def _force_table(m_approx: MApprox) -> ForceApprox:
    return ForceApprox(m_approx)


def force_approximator(m_approx: MApprox) -> ForceApprox:
    """The cached precomputed evaluator for a given approximation."""
    return _force_table(m_approx)


def eval_f_tilde(
    m_approx: MApprox, params: ModelParams, a_value: float | None, t
) -> float | np.ndarray:
    """Approximate force in kN; ``a_value`` in kN/s (defaults to a_rest)."""
    a = params.a_rest if a_value is None else float(a_value)
    return _force_table(m_approx).values(t, a)


# ---------------------------------------------------------------------------
# explicit-Euler baseline
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EulerNodes:
    """Exact Hill-function samples on a refined partition, for the
    product-form explicit-Euler force expression."""

    nodes: tuple[float, ...]
    m1: tuple[float, ...]
    m2: tuple[float, ...]


def euler_nodes(
    train: PulseTrain, params: ModelParams, p: int = 2, nu: float = 1.0
) -> EulerNodes:
    partition, _ = _refined_partition(train, params, p)
    c = np.asarray(eval_cn(train, params, np.asarray(partition)))
    return EulerNodes(
        nodes=partition,
        m1=tuple(float(v) for v in _m1_nu(c, params, nu)),
        m2=tuple(float(v) for v in _m2_nu(c, params, nu)),
    )


def eval_f_euler(
    m_values: EulerNodes, params: ModelParams, a_value: float | None, partition_point: float
) -> float:
    """Force at a partition node by the closed product-sum Euler expression.

    F(t_G)/A = sum_{g<G} h_g m1_g prod_{g'=g+1}^{G-1} (1 - h_g' m2_g'),
    evaluated literally (no running integration state). Raises
    :class:`UnstableStep` if any factor magnitude exceeds 1, i.e. some
    segment is longer than the explicit-Euler stability bound 2/m2.
    """
    nodes = m_values.nodes
    target = None
    for g, t in enumerate(nodes):
        if abs(t - partition_point) < 1e-9:
            target = g
            break
    if target is None:
        raise ValueError(f"{partition_point} is not a partition node")
    h = [nodes[g + 1] - nodes[g] for g in range(len(nodes) - 1)]
    c = [1.0 - h[g] * m_values.m2[g] for g in range(target)]
    for g, cg in enumerate(c):
        if abs(cg) > 1.0:
            raise UnstableStep(
                f"segment {g} of width {h[g]} exceeds the stability bound "
                f"2/m2 = {2.0 / m_values.m2[g]:.6g}"
            )
    a = params.a_rest if a_value is None else float(a_value)
    total = 0.0
    for g in range(target):
        total += h[g] * m_values.m1[g] * math.prod(c[g + 1 : target])
    return a * 1e-3 * total


# ---------------------------------------------------------------------------
# force error bound and nu-envelopes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ForceErrorBound:
    """L1 bound |F(t_k) - F~(t_k)| / A <= m1_term + t_k * m2_term with the
    hypothesis flags of the underlying estimate."""

    bound: float
    m1_term: float
    m2_term: float
    t_k: float
    hypotheses_ok: bool
    violated: tuple[str, ...]


def force_error_bound(
    train: PulseTrain, params: ModelParams, m_approx: MApprox, k: int
) -> ForceErrorBound:
    """Evaluate the error bound at pulse node k (k = n+1 means the horizon).

    Both L1 mismatch integrals are computed by adaptive quadrature against
    the true (undeformed) Hill functions. The certifying hypotheses,
    interval-mean m2 scheme, nu = 1, m1_tilde within [0, 1], per-interval
    concavity of m1 and convexity of m2, are verified by sampling and
    reported; a failed check flags the bound as advisory rather than
    raising.
    """
    n_breaks = len(m_approx.pulse_breaks)
    if not 0 <= k <= n_breaks - 1:
        raise IndexError(f"node index {k} out of range 0..{n_breaks - 1}")
    t_k = m_approx.pulse_breaks[k]
    if t_k <= 0.0:
        return ForceErrorBound(0.0, 0.0, 0.0, 0.0, True, ())

    def m1_true(s: float) -> float:
        return float(eval_m1(eval_cn(train, params, s), params))

    def m2_true(s: float) -> float:
        return float(_m2_nu(eval_cn(train, params, s), params, 1.0))

    m1_l1 = 0.0
    m2_l1 = 0.0
    seg_edges = [b for b in m_approx.partition if b < t_k - 1e-12] + [t_k]
    for a, b in zip(seg_edges, seg_edges[1:]):
        v1, _ = quad(
            lambda s: abs(m1_true(s) - m_approx.m1_tilde.value(s)),
            a, b, epsabs=1e-12, epsrel=1e-10, limit=200,
        )
        v2, _ = quad(
            lambda s: abs(m2_true(s) - m_approx.m2_tilde.value(s)),
            a, b, epsabs=1e-12, epsrel=1e-10, limit=200,
        )
        m1_l1 += v1
        m2_l1 += v2

    violated: list[str] = []
    if m_approx.scheme != "constant-average":
        violated.append("m2-not-interval-average")
    if abs(m_approx.nu - 1.0) > 1e-12:
        violated.append("nu-not-one")
    sample = np.linspace(0.0, t_k, 160)
    m1t = np.array([m_approx.m1_tilde.value(s) for s in sample])
    if np.any(m1t < -1e-9) or np.any(m1t > 1.0 + 1e-9):
        violated.append("m1-outside-unit-interval")
    for i in range(n_breaks - 1):
        lo, hi = m_approx.pulse_breaks[i], m_approx.pulse_breaks[i + 1]
        if lo >= t_k - 1e-12:
            break
        s = np.linspace(lo, min(hi, t_k), 25)
        y1 = np.array([m1_true(x) for x in s])
        y2 = np.array([m2_true(x) for x in s])
        tol1 = 1e-12 + 1e-7 * float(np.ptp(y1))
        tol2 = 1e-12 + 1e-7 * float(np.ptp(y2))
        if np.any(np.diff(y1, 2) > tol1):
            violated.append(f"m1-not-concave-on-interval-{i}")
        if np.any(np.diff(y2, 2) < -tol2):
            violated.append(f"m2-not-convex-on-interval-{i}")

    return ForceErrorBound(
        bound=m1_l1 + t_k * m2_l1,
        m1_term=m1_l1,
        m2_term=m2_l1,
        t_k=t_k,
        hypotheses_ok=not violated,
        violated=tuple(violated),
    )


def upper_lower_envelope(
    train: PulseTrain,
    params: ModelParams,
    nu_low: float,
    nu_high: float,
    t,
    scheme_low: str = "staircase-lower",
    scheme_high: str = "staircase-upper",
    p: int = 2,
    a_value: float | None = None,
):
    """Bracketing force approximations (F_low, F_high) at time(s) t.

    ``nu_low >= 1`` depresses m1 and inflates m2 (a lower force);
    ``nu_high <= 1`` does the reverse. The default schemes hold each
    Hill-function stand-in at its per-segment supremum or infimum, so each
    side dominates pointwise by construction (for any nu); the nu margin
    then widens the bracket further.
    """
    if not (nu_low >= 1.0 >= nu_high > 0.0):
        raise ValueError(
            f"need nu_low >= 1 >= nu_high > 0, got nu_low={nu_low}, nu_high={nu_high}"
        )
    low = build_m_approx(train, params, scheme=scheme_low, p=p, nu=nu_low)
    high = build_m_approx(train, params, scheme=scheme_high, p=p, nu=nu_high)
    return (
        eval_f_tilde(low, params, a_value, t),
        eval_f_tilde(high, params, a_value, t),
    )
