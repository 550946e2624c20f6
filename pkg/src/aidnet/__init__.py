"""Dispatch optimization for four-level aid delivery networks.

Suppliers (S) feed depots (D), depots feed storage facilities (F), and
facility vehicles deliver to destinations (A).  The package scores a
dispatch plan by the expected, lateness-penalized share of demand that
arrives, and searches dispatch decisions, cargo and departure times to
raise that score.
"""

__version__ = "0.1.0"

from .cases import build_case1, build_case2, load_bundled, random_toy_dict
from .errors import (
    AidNetError,
    DegenerateDemand,
    DistributionError,
    Infeasible,
    NumericalError,
    ParseError,
    SizeLimit,
    SolverError,
    ValidationError,
)
from .evaluator import check_constraints, metrics, reliability, reliability_gradient, success_probs
from .homotopy import HomotopyConfig, homotopy_solve, optimize_s
from .montecarlo import simulate
from .preprocess import preprocess
from .prob import Gamma, Normal, penalized_success_prob
from .scenario import DispatchPlan, Scenario, load_scenario, parse_scenario, plan_cost, save_scenario
from .search import SearchConfig, SolveReport, contribution_per_vehicle, search, tighten_budget
from .warmstart import warm_start

__all__ = [
    "__version__",
    "AidNetError",
    "DegenerateDemand",
    "DispatchPlan",
    "DistributionError",
    "Gamma",
    "HomotopyConfig",
    "Infeasible",
    "Normal",
    "NumericalError",
    "ParseError",
    "Scenario",
    "SearchConfig",
    "SizeLimit",
    "SolveReport",
    "SolverError",
    "ValidationError",
    "build_case1",
    "build_case2",
    "check_constraints",
    "contribution_per_vehicle",
    "homotopy_solve",
    "load_bundled",
    "load_scenario",
    "metrics",
    "optimize_s",
    "parse_scenario",
    "penalized_success_prob",
    "plan_cost",
    "preprocess",
    "random_toy_dict",
    "reliability",
    "reliability_gradient",
    "save_scenario",
    "search",
    "simulate",
    "success_probs",
    "tighten_budget",
    "warm_start",
]
