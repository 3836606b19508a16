"""Distributed group-sparse peak shaving for residential battery fleets."""

from .admm import AdmmConfig, AdmmResult, solve
from .model import GridScenario, SubsystemParams, generate_scenario
from .mpc import MpcConfig, run_closed_loop, sparsity_percentage
from .problem import CouplingOperator, PeakShavingProblem
from .qpcore import BatchProjector, build_polytope_U, project_polytope, solve_qp

__all__ = [
    "AdmmConfig", "AdmmResult", "BatchProjector", "CouplingOperator", "GridScenario",
    "MpcConfig", "PeakShavingProblem", "SubsystemParams", "build_polytope_U",
    "generate_scenario", "project_polytope", "run_closed_loop", "solve", "solve_qp",
    "sparsity_percentage",
]
__version__ = "0.1.0"
