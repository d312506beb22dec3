"""delayopt: optimizing time delays and feedback weights in delayed
semilinear reaction-diffusion equations via a discrete adjoint."""

from .model import (ControlVector, HistorySpec, ProblemSpec, ReactionSpec,
                    TargetSpec, ValidationReport, project_to_admissible, validate)
from .discretization import SpaceMesh, TimeGrid, StateTrajectory, AdjointTrajectory
from .forward import NewtonSettings, SolverError, solve_state, solve_state_ode_mode
from .adjoint import solve_adjoint, solve_tangent
from .objective import (GradientVector, assemble_gradient, evaluate_objective,
                        stationarity_check)
from .optimizer import OptimizerSettings, RunRecord, multistart, optimize
from .oracle import convergence_study, fd_gradient, solve_linear_dde

__version__ = "0.1.0"
