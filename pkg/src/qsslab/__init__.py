"""Long-term, quasi steady-state and transient power-system dynamics.

The three models share one residual assembly; the diagnostics compare the
long-term and QSS runs and attribute any disagreement to the trajectory
leaving a transient stability region or the QSS state leaving the stable
component of the constraint manifold.
"""
from .dae import assemble_jacobian, assemble_residuals, finite_difference_jacobian, schur_complement
from .diagnostics import (check_condition_one, check_condition_two, check_region_membership,
                          compare_trajectories, diagnose_failure)
from .errors import (CaseError, ComparisonError, ConvergenceError, EvaluationError, InitializationError,
                     NetworkError, PowerFlowError, QssLabError, SingularityError, StructureError)
from .io import list_bundled_cases, parse_case, read_trajectory, write_trajectory
from .manifold import classify_constraint_point, classify_state, is_singular, solve_transient_sep
from .model import Scenario, fold_system, tikhonov_system
from .network import Branch, Bus, ContingencyEvent, Network, apply_contingency, build_admittance
from .power import PowerSystemModel
from .powerflow import solve_power_flow
from .simulators import IntegratorConfig, Trajectory, config_for, run_long_term, run_qss, run_transient
from .state import PartitionedState

__version__ = "0.1.0"
