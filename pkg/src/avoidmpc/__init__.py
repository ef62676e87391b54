"""Set-point tracking MPC with artificial references and penalty-based avoidance."""

from .avoidance import (AvoidanceSpec, EllipsoidUnionComplement, HalfspaceIntersection,
                        Sphere, avoidance_cost, penalty_gradient, penalty_value)
from .model import LinearModel, SteadyStateMap, check_rank_condition
from .ocp import OcpProblem, OcpSolution, OcpTemplate, SolverOptions, solve
from .polytope import Polytope

__version__ = "0.1.0"
