"""Pulse-train simulation and optimization for isometric FES force-fatigue
dynamics: exact concentration evaluation, reference force oracles, a
closed-form polynomial-exponential force approximation with computable
error bounds, constrained impulse-timing optimization and endurance
program planning."""

__version__ = "0.1.0"

from .model import (
    HillState,
    ModelParams,
    PulseTrain,
    ScalingFactors,
    UnreachableForce,
    argmax_cn_interval,
    compute_scaling,
    eval_cn,
    eval_lobe,
    eval_m1,
    eval_m2,
    eval_signal,
    steady_state_root,
)
from .exppoly import ExpPoly
from .simulate import (
    QuadratureNoConvergence,
    Rest,
    SimOptions,
    StepTooLarge,
    Trajectory,
    oracle_force_quadrature,
    reparam_force_check,
    simulate_force,
    simulate_force_fatigue,
)
from .approx import (
    EulerNodes,
    ForceApprox,
    ForceErrorBound,
    MApprox,
    PersistenceProfile,
    TruncatedConcentration,
    UnstableStep,
    build_m_approx,
    error_bound_persistent,
    euler_nodes,
    eval_f_euler,
    eval_f_tilde,
    force_approximator,
    force_error_bound,
    interval_average_cn,
    persistence_order,
    persistence_profile,
    psi_primitive,
    tail_average_cn,
    truncated_cn,
    upper_lower_envelope,
)
from .optimize import (
    ConstraintSet,
    DecisionVector,
    InfeasibleSigma,
    KKTReport,
    ObjectiveSpec,
    OptOutcome,
    SolveOptions,
    StepCollision,
    eval_constraints,
    fd_gradient,
    kkt_check,
    objective_value,
    solve,
)
from .planner import (
    ProgramSegment,
    ProgramSpec,
    StimulationProgram,
    derive_f_max,
    plan_endurance,
)

__all__ = [name for name in dir() if not name.startswith("_")]
