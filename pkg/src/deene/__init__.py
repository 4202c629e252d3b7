"""Data-enabled predictive control with neighboring-extremal corrections."""

from .controller import ClosedLoopTrace, read_trace_csv, run_controller
from .deepc import (
    DeePCConfig,
    DeePCProblem,
    DeePCSolution,
    Halfspace,
    InitialWindow,
    assemble_constraints,
    assemble_cost,
    cost_gradient,
    cost_hessian,
    cost_value,
    cross_derivatives,
    reference_window,
    solve_deepc,
    unconstrained_gains,
)
from .errors import (
    ConfigurationError,
    DeeneError,
    DeePCError,
    InfeasibleError,
    InvalidArgumentError,
    NonConvergenceError,
    NotPositiveDefiniteError,
    SingularKKTError,
    StaleGainsError,
)
from .harness import BenchmarkReport, ExperimentConfig, collect_data, emit_plot_data, run_benchmark
from .neighboring import (
    CorrectionGains,
    NominalPoint,
    build_correction,
    correct_nonoptimal,
    correct_optimal,
    recover_multipliers,
)
from .plants import Box, LTIPlant, PlanarArm, make_reference, unsafe_box_constraint
from .qp_core import QPSolution, QuadraticProgram, RangeSpaceKKT, solve_equality_kkt, solve_qp
from .signal_data import (
    HankelPartition,
    IOTrajectory,
    build_hankel,
    build_mosaic_hankel,
    check_persistency,
    load_trajectories,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
