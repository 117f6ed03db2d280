"""Endurance-program assembly for a closed-loop-free smart stimulator.

A user-level force target is converted, through the steady-state root of
the Hill dynamics, into a reference concentration; an L2 concentration
tracking problem produces a template train; trains and recovery rests are
tiled over the session, and the fatigue trajectory is re-simulated to flag
any crossing of the fatigue threshold.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .model import ModelParams, PulseTrain, steady_state_root
from .optimize import DecisionVector, ObjectiveSpec, OptOutcome, SolveOptions, solve
from .simulate import Rest, SimOptions, Trajectory, simulate_force, simulate_force_fatigue

__all__ = [
    "ProgramSpec",
    "StimulationProgram",
    "ProgramSegment",
    "plan_endurance",
    "derive_f_max",
]


@dataclass(frozen=True)
class ProgramSpec:
    """User-level description of a training program.

    ``f_ref`` may be given directly, or derived as f_max / k_ratio with
    f_max obtained from a terminal-force maximization. The fatigue
    threshold is a_rest / k_fatigue; both ratios must exceed 1.
    """

    kind: str = "endurance"
    f_ref: float | None = None
    k_ratio: float | None = None
    n: int = 5
    i_min: float = 20.0
    train_horizon: float = 400.0     # ms, initialization of the template solve
    rest_duration: float | None = None
    rest_cap: float | None = None    # ms cap on the default 3*tau_fat rest
    t_f: float = 2000.0              # ms, total session span
    k_fatigue: float = 2.0
    sim_step: float | None = None
    redrift_tol: float = 0.10        # re-solve when A drifts more than this

    def __post_init__(self) -> None:
        if self.kind not in ("endurance", "punch", "train-endurance"):
            raise ValueError(f"unknown program kind {self.kind!r}")
        if self.f_ref is None and self.k_ratio is None:
            raise ValueError("give f_ref or k_ratio")
        if self.k_ratio is not None and self.k_ratio <= 1.0:
            raise ValueError(f"k_ratio must exceed 1, got {self.k_ratio}")
        if self.k_fatigue <= 1.0:
            raise ValueError(f"k_fatigue must exceed 1, got {self.k_fatigue}")
        if self.t_f < self.train_horizon:
            raise ValueError("session t_f must fit at least one train")


@dataclass(frozen=True)
class ProgramSegment:
    start: float
    train: PulseTrain | None = None
    rest: Rest | None = None

    @property
    def duration(self) -> float:
        return self.train.horizon if self.train is not None else self.rest.duration

    @property
    def is_train(self) -> bool:
        return self.train is not None


@dataclass(frozen=True, eq=False)
class StimulationProgram:
    """An assembled session: segments tiling [0, t_f], the concentration
    reference they track, and the simulated fatigue audit."""

    segments: tuple[ProgramSegment, ...]
    c_n_ref: float
    f_ref: float
    a_threshold: float
    trajectory: Trajectory
    fatigue_breach_time: float | None
    train_summaries: tuple[dict, ...]
    template_outcome: OptOutcome

    @property
    def t_f(self) -> float:
        last = self.segments[-1]
        return last.start + last.duration


def _solve_template(
    c_n_ref: float,
    spec: ProgramSpec,
    params: ModelParams,
    options: SolveOptions | None,
) -> OptOutcome:
    opts = options or SolveOptions(i_min=spec.i_min)
    if opts.i_min != spec.i_min:
        opts = replace(opts, i_min=spec.i_min)
    objective = ObjectiveSpec(kind="track_cn", c_ref=c_n_ref, backend="exact")
    init = DecisionVector.regular(spec.n, spec.train_horizon)
    return solve(objective, init, params, opts)


def _default_rest(spec: ProgramSpec, params: ModelParams) -> float:
    # 95% recovery of the fatigue state takes about three time constants.
    rest = 3.0 * params.tau_fat_ms
    if spec.rest_cap is not None:
        rest = min(rest, spec.rest_cap)
    return rest


def plan_endurance(
    spec: ProgramSpec,
    params: ModelParams,
    options: SolveOptions | None = None,
) -> StimulationProgram:
    """Build and audit an endurance program for a target force level.

    Raises :class:`fespulse.model.UnreachableForce` when the requested
    force has no steady state. Fatigue-threshold crossings do not abort
    the program; they are reported through ``fatigue_breach_time``.
    """
    f_ref = spec.f_ref
    if f_ref is None:
        f_max = derive_f_max(params, n=spec.n, i_min=spec.i_min, options=options)
        f_ref = f_max / spec.k_ratio
    _, c_n_ref = steady_state_root(params, params.a_rest, f_ref)

    outcome = _solve_template(c_n_ref, spec, params, options)
    template = outcome.sigma_star.to_train(i_min=spec.i_min)
    if template.horizon > spec.t_f + 1e-9:
        raise ValueError(
            f"optimized train span {template.horizon:.1f} ms exceeds the session "
            f"t_f={spec.t_f} ms; cap the solver horizon (SolveOptions.t_max)"
        )
    rest_len = spec.rest_duration if spec.rest_duration is not None else _default_rest(spec, params)

    # First pass: tile with the single template, then re-solve wherever the
    # simulated fatigue drift at a train start exceeds the tolerance.
    templates_by_a: list[tuple[float, PulseTrain, OptOutcome]] = [
        (params.a_rest, template, outcome)
    ]

    def pick_template(a_start: float) -> PulseTrain:
        for a_used, train, _ in templates_by_a:
            if abs(a_start - a_used) / a_used <= spec.redrift_tol:
                return train
        _, c_ref_k = steady_state_root(params, a_start, f_ref)
        out_k = _solve_template(c_ref_k, spec, params, options)
        templates_by_a.append((a_start, out_k.sigma_star.to_train(i_min=spec.i_min), out_k))
        return templates_by_a[-1][1]

    segments: list[ProgramSegment] = []
    sim_segments: list = []
    cur = 0.0
    a_start = params.a_rest
    while cur + template.horizon <= spec.t_f + 1e-9:
        train_k = pick_template(a_start)
        segments.append(ProgramSegment(start=cur, train=train_k))
        sim_segments.append(train_k)
        cur += train_k.horizon
        remaining = spec.t_f - cur
        if remaining <= 1e-9:
            break
        r = min(rest_len, remaining)
        if remaining - r < template.horizon:
            r = remaining  # absorb a tail too short for another train
        segments.append(ProgramSegment(start=cur, rest=Rest(r)))
        sim_segments.append(Rest(r))
        cur += r
        traj_so_far = simulate_force_fatigue(
            sim_segments, params, SimOptions(step=spec.sim_step)
        )
        a_start = traj_so_far.terminal("a")
    if cur < spec.t_f - 1e-9:
        tail = spec.t_f - cur
        segments.append(ProgramSegment(start=cur, rest=Rest(tail)))
        sim_segments.append(Rest(tail))
        cur += tail

    trajectory = simulate_force_fatigue(sim_segments, params, SimOptions(step=spec.sim_step))
    a_threshold = params.a_rest / spec.k_fatigue
    a_ch = trajectory.channel("a")
    below = np.flatnonzero(a_ch < a_threshold)
    breach = float(trajectory.grid[below[0]]) if len(below) else None

    summaries = []
    for seg in segments:
        if not seg.is_train:
            continue
        lo, hi = seg.start, seg.start + seg.duration
        sel = (trajectory.grid >= lo - 1e-9) & (trajectory.grid <= hi + 1e-9)
        f_seg = trajectory.channel("force")[sel]
        summaries.append(
            {
                "start_ms": lo,
                "end_ms": hi,
                "peak_force_kN": float(f_seg.max()),
                "terminal_force_kN": float(f_seg[-1]),
                "a_start": float(a_ch[sel][0]),
                "a_end": float(a_ch[sel][-1]),
            }
        )

    return StimulationProgram(
        segments=tuple(segments),
        c_n_ref=c_n_ref,
        f_ref=f_ref,
        a_threshold=a_threshold,
        trajectory=trajectory,
        fatigue_breach_time=breach,
        train_summaries=tuple(summaries),
        template_outcome=outcome,
    )


def derive_f_max(
    params: ModelParams,
    n: int = 7,
    i_min: float = 20.0,
    options: SolveOptions | None = None,
    amplitude_level: float = 1.0,
    init_horizon: float = 1000.0,
) -> float:
    """Peak attainable terminal force: solve the terminal-force program
    with amplitudes frozen at ``amplitude_level`` and report the
    simulation-evaluated force at the optimized horizon."""
    if amplitude_level == 0.0:
        return 0.0
    opts = options or SolveOptions(i_min=i_min)
    if opts.i_min != i_min:
        opts = replace(opts, i_min=i_min)
    spec = ObjectiveSpec(kind="max_force_terminal", backend="approx")
    init = DecisionVector.regular(
        n, init_horizon, amplitude=amplitude_level, freeze_amplitudes=True
    )
    outcome = solve(spec, init, params, opts)
    train = outcome.sigma_star.to_train(i_min=i_min)
    traj = simulate_force(train, params)
    return traj.terminal("force")
