"""Group-fair online bipartite matching: LP benchmarks, policies, simulation and bounds."""

from .instance import Instance, build, central_star, pool_supply, single_agent, scale_to_target_s
from .lp_benchmark import LpSolution, opt_upper_bound, solve_benchmark, solve_grouped, solve_homogeneous
from .metrics import FairnessEstimate, estimate_fair_a, estimate_fair_b, competitive_ratio
from .policies import POLICY_NAMES, make_policy

__version__ = "0.1.0"

__all__ = [
    "Instance", "build", "central_star", "pool_supply", "single_agent", "scale_to_target_s",
    "LpSolution", "opt_upper_bound", "solve_benchmark", "solve_grouped", "solve_homogeneous",
    "FairnessEstimate", "estimate_fair_a", "estimate_fair_b", "competitive_ratio",
    "POLICY_NAMES", "make_policy",
]
