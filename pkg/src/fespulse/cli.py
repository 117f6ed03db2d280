"""Scenario-driven command line front end.

Subcommands: simulate, approximate, optimize, plan, validate, bench. Each
reads an INI scenario file, writes deterministic CSV/JSON artifacts into
--out, and returns exit code 0 (ok), 2 (config error), 3 (solver failure)
or 4 (validation failure). Every output carries a provenance header with
the config hash and artifact version so plots and regressions can be
pinned to an exact scenario.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import io
import json
import math
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .approx import (
    build_m_approx,
    error_bound_persistent,
    eval_f_tilde,
    force_approximator,
    force_error_bound,
    interval_average_cn,
    persistence_order,
    truncated_cn,
)
from .model import ModelParams, PulseTrain, eval_cn
from .optimize import (
    DecisionVector,
    InfeasibleSigma,
    ObjectiveSpec,
    SolveOptions,
    StepCollision,
    solve,
)
from .planner import ProgramSpec, plan_endurance
from .simulate import (
    Rest,
    SimOptions,
    oracle_force_quadrature,
    reparam_force_check,
    simulate_force,
    simulate_force_fatigue,
)

__all__ = ["ScenarioConfig", "ConfigError", "parse_config", "main"]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_VALIDATION = 4


class ConfigError(ValueError):
    """Scenario file is malformed, has unknown keys or misses required ones."""


def _parse_bool(s: str) -> bool:
    if s.lower() in ("1", "true", "yes", "on"):
        return True
    if s.lower() in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _parse_floats(s: str) -> tuple[float, ...]:
    return tuple(float(x) for x in s.replace(",", " ").split())


_SCHEMA: dict[str, dict[str, object]] = {
    "model": {k: float for k in (
        "tau_c", "r_bar", "a_rest", "k_m", "tau_1", "tau_2", "alpha_a", "tau_fat")},
    "train": {
        "times": _parse_floats, "amplitudes": _parse_floats,
        "horizon": float, "i_min": float, "n": int, "amplitude": float,
    },
    "objective": {
        "kind": str, "f_ref": float, "c_ref": float, "w1": float, "a_s": float,
        "backend": str, "scheme": str, "p": int, "nu": float,
        "t_f": float, "rest": float, "sim_step": float,
    },
    "solver": {
        "i_min": float, "t_max": float, "n": int, "init_horizon": float,
        "freeze_amplitudes": _parse_bool, "amplitude": float,
        "n_starts": int, "seed": int, "mu_min": float, "kkt_tol": float,
        "h_rel": float, "inner_max_iter": int,
    },
    "sim": {"step": float, "method": str, "abs_tol": float, "rel_tol": float},
    "approx": {"scheme": str, "p": int, "nu": float, "trunc_p": int},
    "program": {
        "f_ref": float, "k_ratio": float, "n": int, "i_min": float,
        "train_horizon": float, "rest": float, "rest_cap": float,
        "t_f": float, "k_fatigue": float, "sim_step": float,
    },
    "validate": {"suite": str, "n_trains": int, "seed": int, "sim_step": float},
    "bench": {"n_points": int, "threshold": float, "n": int, "horizon": float, "nu": float},
}


@dataclass(frozen=True, eq=True)
class ScenarioConfig:
    """Validated scenario: raw string values keyed by section and option."""

    sections: tuple[tuple[str, tuple[tuple[str, str], ...]], ...]

    def get(self, section: str, key: str, default=None):
        for name, items in self.sections:
            if name != section:
                continue
            for k, raw in items:
                if k == key:
                    return _SCHEMA[section][key](raw)
        return default

    def has_section(self, section: str) -> bool:
        return any(name == section for name, _ in self.sections)

    def to_text(self) -> str:
        buf = io.StringIO()
        for name, items in self.sections:
            buf.write(f"[{name}]\n")
            for k, raw in items:
                buf.write(f"{k} = {raw}\n")
            buf.write("\n")
        return buf.getvalue()

    def sha256(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()

    def model_params(self) -> ModelParams:
        if self.get("model", "k_m") is None:
            raise ConfigError("[model] k_m is required (it has no canonical value)")
        kwargs = {
            key: self.get("model", key)
            for key in _SCHEMA["model"]
            if self.get("model", key) is not None
        }
        try:
            return ModelParams(**kwargs)
        except ValueError as exc:
            raise ConfigError(f"[model] invalid parameters: {exc}") from exc

    def train(self) -> PulseTrain:
        times = self.get("train", "times")
        horizon = self.get("train", "horizon")
        if horizon is None:
            raise ConfigError("[train] horizon is required")
        i_min = self.get("train", "i_min", 0.0)
        if times is None:
            n = self.get("train", "n")
            if n is None:
                raise ConfigError("[train] give either times or n")
            amp = self.get("train", "amplitude", 1.0)
            times = tuple(i * horizon / (n + 1) for i in range(n + 1))
            amps = (amp,) * (n + 1)
        else:
            amps = self.get("train", "amplitudes")
            if amps is None:
                amps = (1.0,) * len(times)
            elif len(amps) == 1:
                amps = amps * len(times)
        try:
            return PulseTrain(times=times, amplitudes=amps, horizon=horizon, i_min=i_min)
        except ValueError as exc:
            raise ConfigError(f"[train] invalid train: {exc}") from exc

    def sim_options(self) -> SimOptions:
        try:
            return SimOptions(
                step=self.get("sim", "step"),
                method=self.get("sim", "method", "rk4"),
                abs_tol=self.get("sim", "abs_tol", 1e-10),
                rel_tol=self.get("sim", "rel_tol", 1e-8),
            )
        except ValueError as exc:
            raise ConfigError(f"[sim] {exc}") from exc


def parse_config(text: str) -> ScenarioConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse scenario: {exc}") from exc
    sections = []
    for name in parser.sections():
        if name not in _SCHEMA:
            raise ConfigError(f"unknown section [{name}]")
        items = []
        for key, raw in parser.items(name):
            if key not in _SCHEMA[name]:
                raise ConfigError(f"unknown key {key!r} in section [{name}]")
            raw = raw.strip()
            if raw == "":
                continue
            try:
                _SCHEMA[name][key](raw)
            except ValueError as exc:
                raise ConfigError(f"bad value for [{name}] {key}: {raw!r} ({exc})") from exc
            items.append((key, raw))
        sections.append((name, tuple(items)))
    return ScenarioConfig(sections=tuple(sections))


def load_config(path: str | Path) -> ScenarioConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    return parse_config(p.read_text())


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------


def _fmt(x: float) -> str:
    return format(float(x), ".9g")


def _header_lines(cfg: ScenarioConfig, command: str, seed: int) -> list[str]:
    return [
        f"# artifact_version=fespulse-{__version__}",
        f"# config_sha256={cfg.sha256()}",
        f"# command={command}",
        f"# seed={seed}",
    ]


def _write_csv(path: Path, cfg, command, seed, columns, rows) -> None:
    lines = _header_lines(cfg, command, seed)
    lines.append(",".join(columns))
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n")


def _write_json(path: Path, cfg, command, seed, payload: dict) -> None:
    doc = {
        "meta": {
            "artifact_version": f"fespulse-{__version__}",
            "config_sha256": cfg.sha256(),
            "command": command,
            "seed": seed,
        },
        **payload,
    }
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def run_simulate(cfg: ScenarioConfig, out_dir: Path, seed: int) -> int:
    params = cfg.model_params()
    train = cfg.train()
    traj = simulate_force(train, params, cfg.sim_options())
    grid = traj.grid
    c_n = traj.channel("c_n")
    force = traj.channel("force")
    a_col = np.full_like(grid, params.a_rest)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_csv(
        out_dir / "trajectory.csv", cfg, "simulate", seed,
        ["t_ms", "c_n", "force_kN", "a"],
        zip(grid, c_n, force, a_col),
    )
    i_peak_f = int(np.argmax(force))
    i_peak_c = int(np.argmax(c_n))
    _write_json(
        out_dir / "summary.json", cfg, "simulate", seed,
        {
            "terminal": {
                "t_ms": float(grid[-1]),
                "c_n": float(c_n[-1]),
                "force_kN": float(force[-1]),
            },
            "peak_force_kN": float(force[i_peak_f]),
            "peak_force_time_ms": float(grid[i_peak_f]),
            "peak_c_n": float(c_n[i_peak_c]),
            "peak_c_n_time_ms": float(grid[i_peak_c]),
        },
    )
    return EXIT_OK


def run_approximate(cfg: ScenarioConfig, out_dir: Path, seed: int) -> int:
    params = cfg.model_params()
    train = cfg.train()
    scheme = cfg.get("approx", "scheme", "affine-constant")
    p = cfg.get("approx", "p", 2)
    nu = cfg.get("approx", "nu", 1.0)
    trunc_p = cfg.get("approx", "trunc_p", 2)
    try:
        approx = build_m_approx(train, params, scheme=scheme, p=p, nu=nu)
    except ValueError as exc:
        raise ConfigError(f"[approx] {exc}") from exc
    evaluator = force_approximator(approx)
    traj = simulate_force(train, params, cfg.sim_options())
    grid = traj.grid
    f_tilde = np.atleast_1d(evaluator.values(grid, params.a_rest))
    trunc = truncated_cn(train, params, trunc_p)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_csv(
        out_dir / "approximation.csv", cfg, "approximate", seed,
        ["t_ms", "c_n", "c_n_truncated", "f_tilde_kN", "f_oracle_kN"],
        zip(grid, traj.channel("c_n"), np.atleast_1d(trunc(grid)), f_tilde, traj.channel("force")),
    )
    gap = np.abs(f_tilde - traj.channel("force"))
    _write_json(
        out_dir / "approx_summary.json", cfg, "approximate", seed,
        {
            "scheme": scheme, "p": p, "nu": nu, "trunc_p": trunc_p,
            "max_abs_force_gap_kN": float(gap.max()),
            "terminal_f_tilde_kN": float(f_tilde[-1]),
            "terminal_f_oracle_kN": traj.terminal("force"),
        },
    )
    return EXIT_OK


def _objective_from_config(cfg: ScenarioConfig) -> ObjectiveSpec:
    kind = cfg.get("objective", "kind")
    if kind is None:
        raise ConfigError("[objective] kind is required")
    try:
        return ObjectiveSpec(
            kind=kind,
            f_ref=cfg.get("objective", "f_ref"),
            c_ref=cfg.get("objective", "c_ref"),
            w1=cfg.get("objective", "w1", 1.0),
            a_s=cfg.get("objective", "a_s"),
            backend=cfg.get("objective", "backend", "approx"),
            scheme=cfg.get("objective", "scheme", "affine-constant"),
            p=cfg.get("objective", "p", 2),
            nu=cfg.get("objective", "nu", 1.0),
            t_f=cfg.get("objective", "t_f"),
            rest_duration=cfg.get("objective", "rest"),
            sim_step=cfg.get("objective", "sim_step"),
        )
    except ValueError as exc:
        raise ConfigError(f"[objective] {exc}") from exc


def _solver_from_config(cfg: ScenarioConfig, seed: int) -> tuple[SolveOptions, DecisionVector]:
    n = cfg.get("solver", "n")
    if n is None:
        raise ConfigError("[solver] n is required")
    opts = SolveOptions(
        i_min=cfg.get("solver", "i_min", 20.0),
        t_max=cfg.get("solver", "t_max", 1500.0),
        mu_min=cfg.get("solver", "mu_min", 1e-8),
        kkt_tol=cfg.get("solver", "kkt_tol", 1e-6),
        h_rel=cfg.get("solver", "h_rel", 1e-5),
        inner_max_iter=cfg.get("solver", "inner_max_iter", 120),
        n_starts=cfg.get("solver", "n_starts", 1),
        seed=cfg.get("solver", "seed", seed),
    )
    horizon = cfg.get("solver", "init_horizon", 1000.0)
    if n * opts.i_min >= min(horizon, opts.t_max):
        raise ConfigError(
            f"infeasible scenario: n*i_min = {n * opts.i_min} does not fit under "
            f"the horizon {min(horizon, opts.t_max)}"
        )
    init = DecisionVector.regular(
        n,
        horizon,
        amplitude=cfg.get("solver", "amplitude", 1.0),
        freeze_amplitudes=cfg.get("solver", "freeze_amplitudes", False),
    )
    return opts, init


def run_optimize(cfg: ScenarioConfig, out_dir: Path, seed: int) -> int:
    params = cfg.model_params()
    spec = _objective_from_config(cfg)
    opts, init = _solver_from_config(cfg, seed)
    init_cost = None
    try:
        from .optimize import objective_value

        init_cost = objective_value(spec, init, params)
        outcome = solve(spec, init, params, opts)
    except (InfeasibleSigma, StepCollision) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    if outcome.status != "converged":
        print(f"solver did not converge: status={outcome.status}", file=sys.stderr)
        for entry in outcome.trace:
            print(f"  trace: {entry}", file=sys.stderr)
        return EXIT_SOLVER

    sigma = outcome.sigma_star
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_json(
        out_dir / "solution.json", cfg, "optimize", seed,
        {
            "times_ms": [0.0] + list(sigma.times),
            "amplitudes": list(sigma.amplitudes),
            "horizon_ms": sigma.horizon,
            "objective": outcome.objective,
            "objective_at_init": init_cost,
            "kkt": {
                "residual": outcome.kkt_residual,
                "stationarity": outcome.stationarity,
                "complementarity": outcome.complementarity,
                "feasibility": outcome.feasibility,
            },
            "multipliers": list(outcome.multipliers),
            "iterations": outcome.iterations,
            "status": outcome.status,
        },
    )

    train = sigma.to_train()
    traj = simulate_force(train, params, cfg.sim_options())
    grid = traj.grid
    if spec.kind in ("max_cn_terminal", "track_cn"):
        exact = traj.channel("c_n")
        steps = np.zeros_like(grid)
        for k in range(train.n + 1):
            lo, hi = train.interval(k)
            steps[(grid >= lo) & (grid <= hi)] = interval_average_cn(train, params, k)
        approx_col, oracle_col = steps, exact
    else:
        approx = build_m_approx(train, params, scheme=spec.scheme, p=spec.p, nu=spec.nu)
        approx_col = np.atleast_1d(eval_f_tilde(approx, params, params.a_rest, grid))
        oracle_col = traj.channel("force")
    _write_csv(
        out_dir / "response.csv", cfg, "optimize", seed,
        ["t_ms", "approx", "oracle"],
        zip(grid, approx_col, oracle_col),
    )
    return EXIT_OK


def run_plan(cfg: ScenarioConfig, out_dir: Path, seed: int) -> int:
    params = cfg.model_params()
    try:
        spec = ProgramSpec(
            f_ref=cfg.get("program", "f_ref"),
            k_ratio=cfg.get("program", "k_ratio"),
            n=cfg.get("program", "n", 5),
            i_min=cfg.get("program", "i_min", 20.0),
            train_horizon=cfg.get("program", "train_horizon", 400.0),
            rest_duration=cfg.get("program", "rest"),
            rest_cap=cfg.get("program", "rest_cap"),
            t_f=cfg.get("program", "t_f", 2000.0),
            k_fatigue=cfg.get("program", "k_fatigue", 2.0),
            sim_step=cfg.get("program", "sim_step"),
        )
    except ValueError as exc:
        raise ConfigError(f"[program] {exc}") from exc
    program = plan_endurance(spec, params)
    out_dir.mkdir(parents=True, exist_ok=True)
    segments = []
    for seg in program.segments:
        if seg.is_train:
            segments.append(
                {
                    "kind": "train",
                    "start_ms": seg.start,
                    "duration_ms": seg.duration,
                    "times_ms": list(seg.train.times),
                    "amplitudes": list(seg.train.amplitudes),
                }
            )
        else:
            segments.append(
                {"kind": "rest", "start_ms": seg.start, "duration_ms": seg.duration}
            )
    _write_json(
        out_dir / "program.json", cfg, "plan", seed,
        {
            "f_ref_kN": program.f_ref,
            "c_n_ref": program.c_n_ref,
            "a_threshold": program.a_threshold,
            "fatigue_breach_time_ms": program.fatigue_breach_time,
            "segments": segments,
            "train_summaries": list(program.train_summaries),
        },
    )
    traj = program.trajectory
    _write_csv(
        out_dir / "program_trajectory.csv", cfg, "plan", seed,
        ["t_ms", "c_n", "force_kN", "a"],
        zip(traj.grid, traj.channel("c_n"), traj.channel("force"), traj.channel("a")),
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# validation suite
# ---------------------------------------------------------------------------


def _random_train(rng: np.random.Generator, i_min: float = 20.0, n_max: int = 6) -> PulseTrain:
    n = int(rng.integers(1, n_max + 1))
    gaps = i_min + rng.exponential(25.0, size=n)
    times = np.concatenate([[0.0], np.cumsum(gaps)])
    horizon = float(times[-1] + rng.uniform(40.0, 140.0))
    amps = rng.uniform(0.25, 1.0, size=n + 1)
    return PulseTrain(tuple(times), tuple(amps), horizon, i_min)


def _check(name: str, passed: bool, measured: float, threshold: float, info: str = "") -> dict:
    return {
        "name": name,
        "passed": bool(passed),
        "measured": float(measured),
        "threshold": float(threshold),
        "info": info,
    }


def _suite_lobe(params: ModelParams, rng, n_trains: int, sim_step) -> list[dict]:
    from .model import eval_lobe

    worst_peak = 0.0
    worst_mass = 1.0
    inflect_ok = True
    for _ in range(n_trains):
        train = _random_train(rng)
        k = int(rng.integers(0, train.n + 1))
        scal = 1.0 if k == 0 else 1.0 + (params.r_bar - 1.0) * math.exp(
            -(train.times[k] - train.times[k - 1]) / params.tau_c
        )
        amp = train.amplitudes[k]
        if amp < 1e-12:
            continue
        t_k = train.times[k]
        peak = eval_lobe(train, params, k, t_k + params.tau_c)
        worst_peak = max(worst_peak, abs(peak - scal * amp / math.e) / (scal * amp / math.e))
        u = np.linspace(0.0, 5.0 * params.tau_c, 801)
        lobe = np.asarray(eval_lobe(train, params, k, t_k + u))
        mass_5tau = float(np.trapezoid(lobe, u))
        total = scal * amp * params.tau_c  # int_0^inf (u/tau) e^(-u/tau) du = tau
        worst_mass = min(worst_mass, mass_5tau / total)
        dd = np.diff(np.asarray(eval_lobe(train, params, k, t_k + np.linspace(
            1.6 * params.tau_c, 2.4 * params.tau_c, 41))), 2)
        inflect_ok = inflect_ok and dd[0] < 0.0 < dd[-1]
    return [
        _check("lobe-peak-value", worst_peak < 1e-10, worst_peak, 1e-10),
        _check("lobe-mass-95pct", worst_mass >= 0.95, worst_mass, 0.95, "fraction within 5 tau_c"),
        _check("lobe-inflection-2tau", inflect_ok, float(inflect_ok), 1.0),
    ]


def _suite_oracles(params: ModelParams, rng, n_trains: int, sim_step) -> list[dict]:
    worst_sq = 0.0
    worst_rep = 0.0
    opts = SimOptions(step=sim_step)
    for _ in range(n_trains):
        train = _random_train(rng, n_max=4)
        traj = simulate_force(train, params, opts)
        for frac in (0.4, 0.8, 1.0):
            target = frac * train.horizon
            t = float(traj.grid[np.argmin(np.abs(traj.grid - target))])
            f_sim = traj.at("force", t)
            f_quad = oracle_force_quadrature(train, params, t)
            worst_sq = max(worst_sq, abs(f_sim - f_quad))
        worst_rep = max(worst_rep, reparam_force_check(train, params, n_samples=4))
    return [
        _check("sim-vs-quadrature", worst_sq < 1e-6, worst_sq, 1e-6, "kN"),
        _check("reparam-vs-quadrature", worst_rep < 1e-6, worst_rep, 1e-6, "kN"),
    ]


def _suite_truncation(params: ModelParams, rng, n_trains: int, sim_step) -> list[dict]:
    worst_margin = math.inf
    violations = 0
    for _ in range(n_trains):
        train = _random_train(rng)
        p = persistence_order(train, params)
        trunc = truncated_cn(train, params, p)
        for k in range(train.n + 1):
            lo, hi = train.interval(k)
            # The truncation window switches right-continuously at t_{k+1};
            # the per-interval sup statement is over [t_k, t_{k+1}).
            ts = np.linspace(lo, hi, 121)[:-1]
            gap = float(np.max(np.asarray(eval_cn(train, params, ts)) - np.asarray(trunc(ts))))
            bound = error_bound_persistent(train, params, p, k)
            if gap > bound + 1e-12:
                violations += 1
            worst_margin = min(worst_margin, bound - gap)
    return [
        _check("truncation-bound-dominates", violations == 0, violations, 0.0,
               f"min bound-gap margin {worst_margin:.3e}")
    ]


def _suite_force_bound(params: ModelParams, rng, n_trains: int, sim_step) -> list[dict]:
    violations = 0
    refine_ok = 0
    refine_total = 0
    for _ in range(n_trains):
        n = int(rng.integers(2, 4))
        gaps = rng.uniform(20.0, 2.0 * params.tau_c, size=n)
        times = np.concatenate([[0.0], np.cumsum(gaps)])
        train = PulseTrain(
            tuple(times), tuple(rng.uniform(0.4, 1.0, size=n + 1)),
            float(times[-1] + rng.uniform(25.0, 2.0 * params.tau_c)), 20.0,
        )
        traj = simulate_force(train, params, SimOptions(step=sim_step))
        errs = {}
        for p in (2, 4):
            approx = build_m_approx(train, params, scheme="constant-average", p=p)
            nodes = approx.pulse_breaks
            f_tilde = np.atleast_1d(eval_f_tilde(approx, params, params.a_rest, np.asarray(nodes)))
            f_true = np.array([traj.at("force", t) for t in nodes])
            errs[p] = float(np.max(np.abs(f_tilde - f_true)))
            if p == 2:
                for k in range(1, len(nodes)):
                    rep = force_error_bound(train, params, approx, k)
                    if not rep.hypotheses_ok:
                        continue
                    measured = abs(f_tilde[k] - f_true[k]) / params.a_rest_ms
                    if measured > rep.bound + 1e-12:
                        violations += 1
        refine_total += 1
        if errs[4] <= errs[2] + 1e-12:
            refine_ok += 1
    frac = refine_ok / max(refine_total, 1)
    return [
        _check("force-error-bound-dominates", violations == 0, violations, 0.0),
        _check("force-refinement-monotone", frac >= 0.9, frac, 0.9,
               "fraction of cases with err(p=4) <= err(p=2)"),
    ]


def _suite_envelope(params: ModelParams, rng, n_trains: int, sim_step) -> list[dict]:
    from .approx import upper_lower_envelope

    train = PulseTrain(
        tuple(i * 360.0 / 6 for i in range(6)), (1.0,) * 6, 360.0, 20.0
    )
    traj = simulate_force(train, params, SimOptions(step=sim_step))
    f_low, f_high = upper_lower_envelope(train, params, 1.05, 0.95, traj.grid)
    worst_hi = float(np.min(np.atleast_1d(f_high) - traj.channel("force")))
    worst_lo = float(np.max(np.atleast_1d(f_low) - traj.channel("force")))
    return [
        _check("nu-upper-envelope", worst_hi >= -1e-9, worst_hi, -1e-9,
               "min(F_high(nu=0.95) - F_oracle) on the scenario grid"),
        _check("nu-lower-envelope", worst_lo <= 1e-9, worst_lo, 1e-9,
               "max(F_low(nu=1.05) - F_oracle) on the scenario grid"),
    ]


def _suite_fatigue(params: ModelParams, rng, n_trains: int, sim_step) -> list[dict]:
    train = PulseTrain(
        tuple(i * 60.0 for i in range(5)), (1.0,) * 5, 300.0, 20.0
    )
    rest = 8000.0
    traj = simulate_force_fatigue([train, Rest(rest)], params, SimOptions(step=sim_step or 1.0))
    a_ch = traj.channel("a")
    grid = traj.grid
    during = a_ch[(grid > train.times[1]) & (grid <= 300.0)]
    declined = bool(np.all(during < params.a_rest)) and float(during.min()) < params.a_rest - 1e-9
    sel = (grid >= 2000.0) & (grid <= 8000.0)
    deficit = params.a_rest - a_ch[sel]
    ok_window = np.all(deficit > 0.0)
    if ok_window:
        slope = np.polyfit(grid[sel], np.log(deficit), 1)[0]
        rate_err = abs(-slope - 1.0 / params.tau_fat_ms) * params.tau_fat_ms
    else:
        rate_err = math.inf
    return [
        _check("fatigue-declines-under-load", declined, float(declined), 1.0),
        _check("fatigue-recovery-rate", rate_err < 0.02, rate_err, 0.02,
               "relative error of fitted recovery rate vs 1/tau_fat"),
    ]


_SUITES = {
    "lobe": _suite_lobe,
    "oracles": _suite_oracles,
    "truncation": _suite_truncation,
    "force_bound": _suite_force_bound,
    "envelope": _suite_envelope,
    "fatigue": _suite_fatigue,
}


def run_validate(cfg: ScenarioConfig, out_dir: Path, seed: int, suite: str | None) -> int:
    suite = suite or cfg.get("validate", "suite", "default")
    n_trains = cfg.get("validate", "n_trains", 6)
    sim_step = cfg.get("validate", "sim_step", 0.2)
    rng = np.random.default_rng(cfg.get("validate", "seed", seed))
    checks: list[dict] = []
    try:
        params = cfg.model_params()
    except ConfigError as exc:
        checks.append(_check("model-invariants", False, math.nan, 0.0, str(exc)))
        params = None
    if params is not None:
        names = list(_SUITES) if suite == "default" else [suite]
        if any(name not in _SUITES for name in names):
            raise ConfigError(f"unknown suite {suite!r}; choices: default, {', '.join(_SUITES)}")
        for name in names:
            checks.extend(_SUITES[name](params, rng, n_trains, sim_step))
    all_passed = all(c["passed"] for c in checks)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_json(
        out_dir / "validation.json", cfg, "validate", seed,
        {"suite": suite, "all_passed": all_passed, "checks": checks},
    )
    for c in checks:
        tag = "PASS" if c["passed"] else "FAIL"
        print(f"[{tag}] {c['name']}: measured={c['measured']:.6g} threshold={c['threshold']:.6g}")
    return EXIT_OK if all_passed else EXIT_VALIDATION


def run_bench(cfg: ScenarioConfig, out_dir: Path, seed: int) -> int:
    params = cfg.model_params()
    n = cfg.get("bench", "n", 5)
    horizon = cfg.get("bench", "horizon", 360.0)
    nu = cfg.get("bench", "nu", 0.95)
    n_points = cfg.get("bench", "n_points", 10000)
    threshold = cfg.get("bench", "threshold", 5.0)
    train = PulseTrain(
        tuple(i * horizon / (n + 1) for i in range(n + 1)), (1.0,) * (n + 1), horizon, 20.0
    )
    t0 = time.perf_counter()
    approx = build_m_approx(train, params, scheme="affine-constant", p=2, nu=nu)
    evaluator = force_approximator(approx)
    build_s = time.perf_counter() - t0
    ts = np.linspace(0.0, horizon, n_points)

    def time_best(fn, repeats: int = 5) -> float:
        best = math.inf
        for _ in range(repeats):
            start = time.perf_counter()
            fn()
            best = min(best, time.perf_counter() - start)
        return best

    eval_s = time_best(lambda: evaluator.values(ts, params.a_rest))

    def oracle():
        traj = simulate_force(train, params)
        np.interp(ts, traj.grid, traj.channel("force"))

    oracle_s = time_best(oracle)
    speedup = oracle_s / eval_s if eval_s > 0 else math.inf
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_json(
        out_dir / "bench.json", cfg, "bench", seed,
        {
            "n_points": n_points,
            "build_seconds": build_s,
            "f_tilde_eval_seconds": eval_s,
            "oracle_sim_seconds": oracle_s,
            "speedup": speedup,
            "threshold": threshold,
            "passed": speedup >= threshold,
        },
    )
    print(f"F~ evaluation {eval_s * 1e3:.3f} ms vs oracle {oracle_s * 1e3:.3f} ms "
          f"(speedup {speedup:.1f}x, threshold {threshold}x)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fespulse",
        description="Pulse-train simulation, approximation and optimization scenarios.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("simulate", "approximate", "optimize", "plan", "validate", "bench"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--out", default="out")
        p.add_argument("--seed", type=int, default=0)
        if name == "validate":
            p.add_argument("--suite", default=None)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    out_dir = Path(args.out)
    try:
        cfg = load_config(args.config)
        if args.command == "simulate":
            return run_simulate(cfg, out_dir, args.seed)
        if args.command == "approximate":
            return run_approximate(cfg, out_dir, args.seed)
        if args.command == "optimize":
            return run_optimize(cfg, out_dir, args.seed)
        if args.command == "plan":
            return run_plan(cfg, out_dir, args.seed)
        if args.command == "validate":
            return run_validate(cfg, out_dir, args.seed, args.suite)
        if args.command == "bench":
            return run_bench(cfg, out_dir, args.seed)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InfeasibleSigma, StepCollision) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    raise SystemExit(main())
