"""Constrained optimization of pulse amplitudes, impulse times and horizon.

The decision vector is sigma = (eta_0..eta_n, t_1..t_n, T). Constraints are
linear: minimal interpulse spacing, t_n <= T, and amplitude bounds. The
solver is a log-barrier interior-point loop with finite-difference cost
gradients (the cost is the only non-analytic ingredient; the barrier
gradient is exact), a damped BFGS inner update and a fraction-to-boundary
line search, driving the barrier weight from 1 down to 1e-8.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .approx import build_m_approx, eval_f_tilde, interval_average_cn
from .model import ModelParams, PulseTrain, eval_cn
from .simulate import Rest, SimOptions, simulate_force, simulate_force_fatigue

__all__ = [
    "DecisionVector",
    "ConstraintSet",
    "ObjectiveSpec",
    "OptOutcome",
    "SolveOptions",
    "KKTReport",
    "InfeasibleSigma",
    "StepCollision",
    "OBJECTIVE_KINDS",
    "eval_constraints",
    "constraint_matrix",
    "objective_value",
    "fd_gradient",
    "solve",
    "kkt_check",
]

OBJECTIVE_KINDS = (
    "max_force_terminal",
    "track_force",
    "track_force_fatigue",
    "max_cn_terminal",
    "track_cn",
)

# Stand-in amplitude backing the extra slack index in each bound block,
# which keeps the constraint count at 3n+5; it is constant, strictly
# feasible, and never enters the barrier.
PHANTOM_AMPLITUDE = 0.5

# Finite-difference probes may step a hair past an amplitude bound; the
# model is smooth there, so evaluation tolerates this much overshoot.
_AMP_EVAL_SLACK = 0.05


class InfeasibleSigma(ValueError):
    """Times out of order (or past the horizon): the objective is undefined."""


class StepCollision(RuntimeError):
    """A finite-difference probe broke the time ordering even after shrinking."""


@dataclass(frozen=True)
class _EvalTrain(PulseTrain):
    """Objective-evaluation train: ordering is enforced strictly but
    amplitudes may overshoot [0, 1] slightly (finite-difference probes)."""

    def __post_init__(self) -> None:
        object.__setattr__(self, "times", tuple(float(x) for x in self.times))
        object.__setattr__(self, "amplitudes", tuple(float(x) for x in self.amplitudes))
        object.__setattr__(self, "horizon", float(self.horizon))
        object.__setattr__(self, "i_min", float(self.i_min))
        if any(b - a <= 0.0 for a, b in zip(self.times, self.times[1:])):
            raise InfeasibleSigma("impulse times must be strictly increasing")
        if self.times[-1] >= self.horizon:
            raise InfeasibleSigma("last impulse must precede the horizon")
        lo, hi = -_AMP_EVAL_SLACK, 1.0 + _AMP_EVAL_SLACK
        if any(a < lo or a > hi for a in self.amplitudes):
            raise InfeasibleSigma(f"amplitudes {self.amplitudes} far outside [0, 1]")


@dataclass(frozen=True)
class DecisionVector:
    """sigma = (eta_0..eta_n, t_1..t_n, T), with an optional frozen-amplitude
    layout (amplitudes held at their stored values, e.g. 1 for terminal
    maximization problems)."""

    amplitudes: tuple[float, ...]
    times: tuple[float, ...]
    horizon: float
    freeze_amplitudes: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "amplitudes", tuple(float(a) for a in self.amplitudes))
        object.__setattr__(self, "times", tuple(float(t) for t in self.times))
        object.__setattr__(self, "horizon", float(self.horizon))
        if len(self.amplitudes) != len(self.times) + 1:
            raise ValueError("need one more amplitude than free times (eta_0..eta_n)")

    @property
    def n(self) -> int:
        return len(self.times)

    @property
    def dimension(self) -> int:
        return 2 * self.n + 2

    def flat(self) -> np.ndarray:
        return np.array(self.amplitudes + self.times + (self.horizon,))

    def free_mask(self) -> np.ndarray:
        mask = np.ones(self.dimension, dtype=bool)
        if self.freeze_amplitudes:
            mask[: self.n + 1] = False
        return mask

    def with_flat(self, vec: np.ndarray) -> "DecisionVector":
        n = self.n
        return replace(
            self,
            amplitudes=tuple(vec[: n + 1]),
            times=tuple(vec[n + 1 : 2 * n + 1]),
            horizon=float(vec[2 * n + 1]),
        )

    def with_free(self, free_vec: np.ndarray) -> "DecisionVector":
        full = self.flat()
        full[self.free_mask()] = free_vec
        return self.with_flat(full)

    def to_train(self, i_min: float = 0.0) -> PulseTrain:
        """Strictly validated train (public contract; raises on any
        amplitude outside [0, 1] beyond rounding)."""
        times = (0.0,) + self.times
        amps = tuple(min(max(a, 0.0), 1.0) for a in self.amplitudes)
        if any(abs(a - b) > 1e-9 for a, b in zip(amps, self.amplitudes)):
            raise InfeasibleSigma(f"amplitudes {self.amplitudes} outside [0, 1]")
        try:
            return PulseTrain(times=times, amplitudes=amps, horizon=self.horizon, i_min=i_min)
        except ValueError as exc:
            raise InfeasibleSigma(str(exc)) from exc

    def eval_train(self) -> PulseTrain:
        """Relaxed train for objective evaluation (FD-probe friendly)."""
        return _EvalTrain(
            times=(0.0,) + self.times,
            amplitudes=self.amplitudes,
            horizon=self.horizon,
            i_min=0.0,
        )

    @classmethod
    def regular(
        cls,
        n: int,
        horizon: float,
        amplitude: float = 1.0,
        freeze_amplitudes: bool = False,
    ) -> "DecisionVector":
        """Evenly spread initialization: t_i = i * horizon / (n + 1)."""
        times = tuple(i * horizon / (n + 1) for i in range(1, n + 1))
        return cls(
            amplitudes=(amplitude,) * (n + 1),
            times=times,
            horizon=horizon,
            freeze_amplitudes=freeze_amplitudes,
        )


def eval_constraints(sigma: DecisionVector, i_min: float) -> np.ndarray:
    """Constraint vector of length 3n+5, all entries <= 0 when feasible.

    Order: spacing (n entries, t_{i-1} - t_i + i_min), horizon (t_n - T),
    lower amplitude bounds (n+2 entries, the last backed by the phantom
    amplitude), upper amplitude bounds (n+2, likewise).
    """
    n = sigma.n
    t = (0.0,) + sigma.times
    spacing = [t[i - 1] - t[i] + i_min for i in range(1, n + 1)]
    horizon = [t[n] - sigma.horizon]
    lower = [-a for a in sigma.amplitudes] + [-PHANTOM_AMPLITUDE]
    upper = [a - 1.0 for a in sigma.amplitudes] + [PHANTOM_AMPLITUDE - 1.0]
    return np.array(spacing + horizon + lower + upper)


def constraint_matrix(n: int) -> np.ndarray:
    """Jacobian of the constraint vector w.r.t. the flat sigma layout."""
    dim = 2 * n + 2
    rows = []
    for i in range(1, n + 1):  # t_{i-1} - t_i + i_min
        row = np.zeros(dim)
        if i - 1 >= 1:
            row[n + 1 + (i - 2)] = 1.0
        row[n + 1 + (i - 1)] = -1.0
        rows.append(row)
    row = np.zeros(dim)  # t_n - T
    if n >= 1:
        row[2 * n] = 1.0
    row[2 * n + 1] = -1.0
    rows.append(row)
    for i in range(n + 2):  # -eta_i
        row = np.zeros(dim)
        if i <= n:
            row[i] = -1.0
        rows.append(row)
    for i in range(n + 2):  # eta_i - 1
        row = np.zeros(dim)
        if i <= n:
            row[i] = 1.0
        rows.append(row)
    return np.array(rows)


@dataclass(frozen=True)
class ConstraintSet:
    """Bound evaluator for a fixed problem size."""

    n: int
    i_min: float

    def values(self, sigma: DecisionVector) -> np.ndarray:
        if sigma.n != self.n:
            raise ValueError(f"sigma has n={sigma.n}, constraint set expects {self.n}")
        return eval_constraints(sigma, self.i_min)

    def jacobian(self) -> np.ndarray:
        return constraint_matrix(self.n)

    def __len__(self) -> int:
        return 3 * self.n + 5


@dataclass(frozen=True)
class ObjectiveSpec:
    """Which cost to minimize and through which force backend.

    ``backend`` is "approx" (closed-form force approximation), "exact"
    (closed-form concentration costs) or "oracle" (reference simulation;
    mandatory for the fatigue-penalized cost, otherwise for validation).
    ``scale`` multiplies the cost; the minimizer location is invariant.
    """

    kind: str
    f_ref: float | None = None
    c_ref: float | None = None
    w1: float = 1.0
    a_s: float | None = None
    backend: str = "approx"
    scheme: str = "affine-constant"
    p: int = 2
    nu: float = 1.0
    scale: float = 1.0
    t_f: float | None = None
    rest_duration: float | None = None
    sim_step: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in OBJECTIVE_KINDS:
            raise ValueError(f"unknown objective kind {self.kind!r}")
        if self.backend not in ("approx", "exact", "oracle"):
            raise ValueError(f"unknown backend {self.backend!r}")
        if self.kind in ("track_force", "track_force_fatigue") and self.f_ref is None:
            raise ValueError(f"{self.kind} needs f_ref")
        if self.kind == "track_cn" and self.c_ref is None:
            raise ValueError("track_cn needs c_ref")
        if self.kind == "track_force_fatigue":
            if self.backend != "oracle":
                raise ValueError("track_force_fatigue requires the oracle backend")
            if self.t_f is None or self.rest_duration is None or self.a_s is None:
                raise ValueError("track_force_fatigue needs t_f, rest_duration and a_s")
        if self.w1 < 0.0:
            raise ValueError("w1 must be >= 0")


def _force_at_nodes(spec: ObjectiveSpec, train: PulseTrain, params: ModelParams, nodes):
    if spec.backend == "approx":
        approx = build_m_approx(train, params, scheme=spec.scheme, p=spec.p, nu=spec.nu)
        return np.atleast_1d(eval_f_tilde(approx, params, params.a_rest, np.asarray(nodes)))
    traj = simulate_force(train, params, SimOptions(step=spec.sim_step))
    return np.array([traj.at("force", t) for t in nodes])


def _fatigue_cost(spec: ObjectiveSpec, train: PulseTrain, params: ModelParams) -> float:
    segments: list = []
    elapsed = 0.0
    while elapsed + train.horizon <= spec.t_f + 1e-9:
        segments.append(train)
        elapsed += train.horizon
        r = min(spec.rest_duration, spec.t_f - elapsed)
        if r > 1e-9:
            segments.append(Rest(r))
            elapsed += r
    if not segments:
        raise InfeasibleSigma(f"t_f={spec.t_f} shorter than one train ({train.horizon})")
    if elapsed < spec.t_f - 1e-9:
        segments.append(Rest(spec.t_f - elapsed))
    traj = simulate_force_fatigue(segments, params, SimOptions(step=spec.sim_step))

    # Right-endpoint rule on pulse-interval boundaries inside each train,
    # rests contributing as single intervals.
    edges = [0.0]
    cur = 0.0
    for seg in segments:
        if isinstance(seg, PulseTrain):
            edges.extend(cur + t for t in seg.times[1:])
            edges.append(cur + seg.horizon)
            cur += seg.horizon
        else:
            cur += seg.duration
            edges.append(cur)
    cost = 0.0
    grid = traj.grid
    a_ch = traj.channel("a")
    for a, b in zip(edges, edges[1:]):
        f_b = traj.at("force", b)
        sel = (grid >= a - 1e-9) & (grid <= b + 1e-9)
        a_mean = float(np.trapezoid(a_ch[sel], grid[sel])) / (b - a)
        cost += (f_b - spec.f_ref) ** 2 * (b - a)
        cost += spec.w1 * (a_mean - spec.a_s) ** 2 * (b - a)
    return cost


def objective_value(spec, sigma: DecisionVector, params: ModelParams | None = None) -> float:
    """Cost of a decision vector. ``spec`` may also be a plain callable
    DecisionVector -> float (used by tests and custom problems)."""
    if callable(spec) and not isinstance(spec, ObjectiveSpec):
        return float(spec(sigma))
    train = sigma.eval_train()
    t = (0.0,) + sigma.times + (sigma.horizon,)
    widths = np.diff(np.asarray(t))

    if spec.kind == "max_force_terminal":
        value = -float(_force_at_nodes(spec, train, params, [sigma.horizon])[0])
    elif spec.kind == "track_force":
        f_nodes = _force_at_nodes(spec, train, params, t[1:])
        value = float(((f_nodes - spec.f_ref) ** 2 @ widths))
    elif spec.kind == "max_cn_terminal":
        value = -float(eval_cn(train, params, sigma.horizon))
    elif spec.kind == "track_cn":
        means = np.array(
            [interval_average_cn(train, params, k) for k in range(train.n + 1)]
        )
        value = float(((means - spec.c_ref) ** 2 @ widths))
    else:  # track_force_fatigue
        value = _fatigue_cost(spec, train, params)
    return spec.scale * value


def fd_gradient(
    spec, sigma: DecisionVector, params: ModelParams | None = None, h_rel: float = 1e-5
) -> np.ndarray:
    """Central finite differences over the free coordinates.

    Per-coordinate step h = h_rel * max(|sigma_i|, 1); a probe that breaks
    the time ordering is retried with h/10 up to three times before
    raising :class:`StepCollision`.
    """
    free = np.flatnonzero(sigma.free_mask())
    base = sigma.flat()
    grad = np.empty(len(free))
    for out_i, i in enumerate(free):
        h = h_rel * max(abs(base[i]), 1.0)
        for attempt in range(4):
            try:
                hi = base.copy()
                hi[i] += h
                lo = base.copy()
                lo[i] -= h
                f_hi = objective_value(spec, sigma.with_flat(hi), params)
                f_lo = objective_value(spec, sigma.with_flat(lo), params)
                grad[out_i] = (f_hi - f_lo) / (2.0 * h)
                break
            except InfeasibleSigma:
                if attempt == 3:
                    raise StepCollision(
                        f"coordinate {i}: probe step {h} collides with time ordering"
                    ) from None
                h /= 10.0
    return grad


@dataclass(frozen=True)
class SolveOptions:
    i_min: float = 20.0
    t_max: float = 1500.0            # safety cap on T, inactive in practice
    mu0: float = 1.0                 # barrier weights, relative to |cost(init)|
    mu_min: float = 1e-8
    mu_shrink: float = 0.1
    inner_max_iter: int = 300
    h_rel: float = 1e-5
    kkt_tol: float = 1e-6
    feas_tol: float = 1e-8
    amplitude_nudge: float = 0.01    # pull free amplitudes off their bounds
    n_starts: int = 1
    seed: int = 0
    armijo_c1: float = 1e-4
    max_line_halvings: int = 45
    step_cap: float = 120.0          # trust cap on ||alpha * d||_inf per iterate


@dataclass(frozen=True)
class KKTReport:
    stationarity: float
    complementarity: float
    feasibility: float
    passed: bool


@dataclass(frozen=True)
class OptOutcome:
    sigma_star: DecisionVector
    objective: float
    multipliers: tuple[float, ...]
    kkt_residual: float
    stationarity: float
    complementarity: float
    feasibility: float
    iterations: int
    status: str
    i_min: float
    trace: tuple[dict, ...] = field(default_factory=tuple)


def _nudge_start(sigma: DecisionVector, opts: SolveOptions) -> DecisionVector:
    if sigma.freeze_amplitudes:
        return sigma
    eps = opts.amplitude_nudge
    amps = tuple(min(max(a, eps), 1.0 - eps) for a in sigma.amplitudes)
    return replace(sigma, amplitudes=amps)


def _solve_single(spec, start: DecisionVector, params, opts: SolveOptions) -> OptOutcome:
    n = start.n
    jac_full = constraint_matrix(n)
    free = start.free_mask()
    jac = jac_full[:, free]
    rows = np.flatnonzero(np.abs(jac).sum(axis=1) > 0.0)
    cap_grad = np.zeros(int(free.sum()))
    cap_grad[-1] = 1.0  # T is always the last free coordinate

    sigma = _nudge_start(start, opts)
    xi0 = eval_constraints(sigma, opts.i_min)
    if np.any(xi0[rows] >= 0.0) or sigma.horizon >= opts.t_max:
        raise InfeasibleSigma(
            f"initialization is not strictly feasible: max constraint {float(xi0[rows].max())}"
        )

    x = sigma.flat()[free]
    total_iters = 0
    trace: list[dict] = []
    status = "converged"

    def theta(xv: np.ndarray) -> float:
        return objective_value(spec, sigma.with_free(xv), params)

    def barrier_terms(xv: np.ndarray):
        sv = sigma.with_free(xv)
        xi = eval_constraints(sv, opts.i_min)
        cap = sv.horizon - opts.t_max
        return xi, cap

    def phi(xv: np.ndarray, mu: float) -> float:
        xi, cap = barrier_terms(xv)
        if np.any(xi[rows] >= 0.0) or cap >= 0.0:
            return math.inf
        return theta(xv) - mu * float(np.log(-xi[rows]).sum()) - mu * math.log(-cap)

    def grad_theta(xv: np.ndarray) -> np.ndarray:
        return fd_gradient(spec, sigma.with_free(xv), params, opts.h_rel)

    def barrier_grad_hess(xv: np.ndarray, mu: float):
        xi, cap = barrier_terms(xv)
        jr = jac[rows]
        slack = -xi[rows]
        g_b = mu * (jr.T @ (1.0 / slack)) + mu * cap_grad / (-cap)
        h_b = mu * (jr.T * (1.0 / slack**2)) @ jr
        h_b = h_b + mu * np.outer(cap_grad, cap_grad) / cap**2
        return g_b, h_b

    dim = len(x)
    # Quasi-Newton model of the objective curvature only; the barrier block
    # of the Hessian is analytic and recomputed exactly at every iterate.
    b_theta = 1e-8 * np.eye(dim)
    g_t = grad_theta(x)
    # The barrier weight schedule follows the cost magnitude, which makes
    # the iterate path invariant under positive rescaling of the objective;
    # the floor still honors the complementarity tolerance for large costs.
    theta_scale = max(1e-4, abs(theta(x)))
    mu = opts.mu0 * theta_scale
    mu_floor = max(min(opts.mu_min * theta_scale, 0.1 * opts.kkt_tol), 1e-18)
    while True:
        g_b, h_b = barrier_grad_hess(x, mu)
        g = g_t + g_b
        inner_tol = max(0.3 * opts.kkt_tol, 0.02 * mu)
        stalled = False
        for _ in range(opts.inner_max_iter):
            if float(np.max(np.abs(g))) <= inner_tol:
                break
            h_full = b_theta + h_b
            h_full = h_full + (1e-12 * (1.0 + float(np.trace(h_full)) / dim)) * np.eye(dim)
            d = -np.linalg.solve(h_full, g)
            if float(d @ g) >= 0.0:
                d = -g
            xi, cap = barrier_terms(x)
            deltas = jac[rows] @ d
            alpha_max = math.inf
            for xi_j, dj in zip(xi[rows], deltas):
                if dj > 1e-14:
                    alpha_max = min(alpha_max, -xi_j / dj)
            if d[-1] > 1e-14:
                alpha_max = min(alpha_max, -cap / d[-1])
            d_inf = float(np.max(np.abs(d)))
            alpha_limit = min(0.99 * alpha_max, opts.step_cap / max(d_inf, 1e-30))
            alpha = min(1.0, alpha_limit)
            phi0 = phi(x, mu)
            slope = float(g @ d)
            accepted = False
            phi_a = phi(x + alpha * d, mu)
            if phi_a <= phi0 + opts.armijo_c1 * alpha * slope:
                # Newton steps through flat valleys may still be short;
                # expand greedily while the merit keeps dropping.
                accepted = True
                while 2.0 * alpha <= alpha_limit:
                    phi_b = phi(x + 2.0 * alpha * d, mu)
                    if phi_b < phi_a:
                        alpha *= 2.0
                        phi_a = phi_b
                    else:
                        break
            else:
                for _ in range(opts.max_line_halvings):
                    alpha *= 0.5
                    if phi(x + alpha * d, mu) <= phi0 + opts.armijo_c1 * alpha * slope:
                        accepted = True
                        break
            if not accepted:
                stalled = True
                break
            x_new = x + alpha * d
            g_t_new = grad_theta(x_new)
            s = x_new - x
            y = g_t_new - g_t
            # Powell-damped BFGS keeps the objective model positive definite
            # even where the true objective curvature is indefinite.
            bs = b_theta @ s
            sbs = float(s @ bs)
            sy = float(s @ y)
            if sbs > 0.0:
                if sy < 0.2 * sbs:
                    tau_d = 0.8 * sbs / (sbs - sy)
                    y = tau_d * y + (1.0 - tau_d) * bs
                    sy = float(s @ y)
                if sy > 1e-14 * float(np.linalg.norm(s) * np.linalg.norm(y) + 1e-30):
                    b_theta = (
                        b_theta
                        - np.outer(bs, bs) / sbs
                        + np.outer(y, y) / sy
                    )
            x, g_t = x_new, g_t_new
            g_b, h_b = barrier_grad_hess(x, mu)
            g = g_t + g_b
            total_iters += 1
        trace.append(
            {
                "mu": mu,
                "phi": phi(x, mu),
                "grad_inf": float(np.max(np.abs(g))),
                "iterations": total_iters,
                "stalled": stalled,
            }
        )
        if stalled and float(np.max(np.abs(g))) > 10.0 * inner_tol:
            status = "line_search_stalled"
        if mu <= mu_floor * (1.0 + 1e-12):
            break
        mu = max(mu * opts.mu_shrink, mu_floor)

    sigma_star = sigma.with_free(x)
    xi = eval_constraints(sigma_star, opts.i_min)
    lam = np.zeros(len(xi))
    lam[rows] = mu_floor / (-xi[rows])
    g_theta = fd_gradient(spec, sigma_star, params, opts.h_rel)
    cap_term = (mu_floor / (opts.t_max - sigma_star.horizon)) * cap_grad
    stationarity = float(np.max(np.abs(g_theta + jac.T @ lam + cap_term)))
    complementarity = float(np.max(np.abs(lam * xi)))
    feasibility = float(max(0.0, xi.max()))
    kkt = max(stationarity, complementarity, feasibility)
    if status == "converged" and kkt > opts.kkt_tol:
        status = "max_iterations"
    return OptOutcome(
        sigma_star=sigma_star,
        objective=theta(x),
        multipliers=tuple(float(v) for v in lam),
        kkt_residual=kkt,
        stationarity=stationarity,
        complementarity=complementarity,
        feasibility=feasibility,
        iterations=total_iters,
        status=status,
        i_min=opts.i_min,
        trace=tuple(trace),
    )


def _jittered_starts(init: DecisionVector, opts: SolveOptions) -> list[DecisionVector]:
    starts = [init]
    if opts.n_starts <= 1:
        return starts
    rng = np.random.default_rng(opts.seed)
    n_gaps = init.n + 1
    for _ in range(opts.n_starts - 1):
        gaps = np.diff(np.asarray((0.0,) + init.times + (init.horizon,)))
        slack = np.maximum(gaps - opts.i_min, 0.05 * opts.i_min)
        new_gaps = opts.i_min + slack * rng.uniform(0.3, 1.4, size=n_gaps)
        total = float(new_gaps.sum())
        limit = 0.95 * opts.t_max
        if total > limit:
            # Shrink the slack uniformly so the horizon fits under the cap.
            beta = (limit - n_gaps * opts.i_min) / (total - n_gaps * opts.i_min)
            new_gaps = opts.i_min + (new_gaps - opts.i_min) * max(beta, 0.0)
        t_cum = np.cumsum(new_gaps)
        amps = (
            init.amplitudes
            if init.freeze_amplitudes
            else tuple(rng.uniform(0.3, 0.9, size=init.n + 1))
        )
        starts.append(
            DecisionVector(
                amplitudes=amps,
                times=tuple(float(v) for v in t_cum[:-1]),
                horizon=float(t_cum[-1]),
                freeze_amplitudes=init.freeze_amplitudes,
            )
        )
    return starts


def solve(
    spec,
    init: DecisionVector,
    params: ModelParams | None = None,
    options: SolveOptions | None = None,
) -> OptOutcome:
    """Run the barrier loop from ``init`` (and ``n_starts - 1`` jittered
    companions); the best feasible outcome by objective wins. Deterministic
    for fixed inputs, options and seed."""
    opts = options or SolveOptions()
    starts = _jittered_starts(init, opts)
    outcomes = []
    for idx, start in enumerate(starts):
        try:
            outcomes.append(_solve_single(spec, start, params, opts))
        except InfeasibleSigma:
            if idx == 0:
                raise
    best = min(outcomes, key=lambda o: o.objective)
    if len(outcomes) > 1:
        best = replace(
            best,
            trace=best.trace + ({"start_objectives": [o.objective for o in outcomes]},),
        )
    return best


def kkt_check(
    spec, outcome: OptOutcome, params: ModelParams | None = None, tol: float = 1e-6
) -> KKTReport:
    """Recompute first-order optimality residuals at an outcome."""
    sigma = outcome.sigma_star
    lam = np.asarray(outcome.multipliers)
    jac = constraint_matrix(sigma.n)[:, sigma.free_mask()]
    g = fd_gradient(spec, sigma, params)
    stationarity = float(np.max(np.abs(g + jac.T @ lam)))
    xi = eval_constraints(sigma, outcome.i_min)
    complementarity = float(np.max(np.abs(lam * xi)))
    feasibility = float(max(0.0, xi.max()))
    passed = stationarity <= tol and complementarity <= tol and feasibility <= tol
    return KKTReport(stationarity, complementarity, feasibility, passed)
