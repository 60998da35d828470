"""Joint compression and caching on tree-structured collection networks."""

from .baselines import GaSettings, ga_solve
from .cost import (
    CostBreakdown,
    check_feasibility,
    evaluate,
    first_request_energy,
    gain,
    gain_approx,
    latency,
    latency_upper_bound,
    per_bit_cost,
    repeat_request_energy,
    total_energy,
)
from .errors import *  # noqa: F401,F403
from .greedy import greedy_solve
from .model import (
    DELTA_MIN,
    CachePlan,
    CompressionPlan,
    FeasibilityReport,
    GlobalParams,
    NodeParams,
    TreeNetwork,
    build_tree,
    load_instance,
    uniform_binary_tree,
)
from .oracle import OracleResult, brute_force, enumerate_cache_plans, optimize_compression_given_cache
from .relax import (
    LogVars,
    SolverSettings,
    SolveTrace,
    solve_caching_subproblem,
    solve_compression_subproblem,
    solve_master_slave,
    transformed_cache_lhs,
    transformed_energy_lhs,
    transformed_objective,
)
from .rounding import epsilon_gain_profile, pipage_round, round_full_pipeline
from .solution import Solution

__version__ = "0.1.0"
