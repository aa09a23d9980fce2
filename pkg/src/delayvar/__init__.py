"""delayvar: solve and verify isoperimetric variational problems with time delay.

The library computes candidate extremals of

    J[q] = int_{t1}^{t2} L(t, q(t), qdot(t), q(t - tau), qdot(t - tau)) dt
    s.t.  I[q] = int_{t1}^{t2} g[q]_tau(t) dt = l,   q = delta on [t1 - tau, t1],
          q(t2) = q_t2,

by direct transcription with a Lagrange-multiplier outer loop, and --
independently of how a trajectory was obtained -- evaluates every necessary
optimality condition (delayed Euler-Lagrange, DuBois-Reymond, Noether
constant of motion, weak Pontryagin conditions) as pointwise numerical
residuals along it.
"""

__version__ = "0.1.0"

from .conditions import (
    ConditionReport,
    NoetherProfile,
    TOL_ANALYTIC,
    abnormality_check,
    augmented_lagrangian,
    augmented_value,
    cdur_residual,
    dbr_residual,
    el_residual,
    invariance_residual,
    noether_constant,
    solver_tolerance,
)
from .expr import (
    DualValue,
    EvalPoint,
    Expression,
    ExprError,
    DomainError,
    ParseError,
    evaluate,
    parse_expression,
    partial,
)
from .model import (
    DelayedProblem,
    DerivativePair,
    History,
    MultiplierVector,
    Symmetry,
    Trajectory,
    ValidationError,
    derivative,
    functional_value,
    linear_init_trajectory,
    load_problem,
    load_trajectory_csv,
    save_trajectory_csv,
    symmetry_from_strings,
    trajectory_from_function,
)
from .ocp import (
    HamiltonianContext,
    construct_costate,
    hamiltonian_context,
    hamiltonian_dbr_residual,
    hamiltonian_value,
    lagrangian_to_ocp,
    pontryagin_residuals,
    reduce_to_ocp,
)
from .problems import (
    BUILTIN_NAMES,
    builtin_problem,
    builtin_reference,
    example33_extremal,
    parabola_extremal,
)
from .sampling import TrajectorySampler, best_derivative, cumulative_trapezoid
from .solver import (
    SolveResult,
    SolveSettings,
    discretized_constraints,
    discretized_objective,
    quadrature_value_and_gradient,
    refine,
    solve_isoperimetric,
)

__all__ = [name for name in dir() if not name.startswith("_")]
