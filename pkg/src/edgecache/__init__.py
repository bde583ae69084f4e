"""Exact and learned content placement for edge caching networks."""

from .cost import Routing, Solution, evaluate, penalty_score, total_cost
from .encoder import FeatureImage, encode
from .netmodel import Instance, Topology, generate_instance, generate_topology
from .solver import SolveReport, count_variables, solve_exact

__version__ = "0.1.0"

__all__ = ["FeatureImage", "Instance", "Routing", "Solution", "SolveReport", "Topology",
           "count_variables", "encode", "evaluate", "generate_instance", "generate_topology",
           "penalty_score", "solve_exact", "total_cost"]
