"""bandplan: joint channel-count and licensing optimization for tiered
spectrum-access markets under stochastic operator demand."""

from ._kernels import HAS_NUMBA, default_backend
from .allocation import (
    SlotAllocation,
    TierAssignment,
    allocate_slot,
    assign_tiers,
    modified_demand,
    opportunistic_capacity,
    residual_capacity,
    waterfill,
)
from .market import (
    IllConditioned,
    JointSamplerParams,
    LicensedMoments,
    MarketParams,
    MarketScenario,
    OperatorProfile,
    joint_sampler_params,
    licensed_served_moments,
    load_market_file,
    prob_negative_served,
    sample_joint,
)
from .montecarlo import (
    ConfigInvalid,
    McConfig,
    McEstimates,
    RunningStat,
    estimate,
    objective_and_revenues,
    should_stop,
    update_mean,
    update_variance,
)
from .stackelberg import (
    BeliefSet,
    IncompleteInfoSolution,
    McRevenueOracle,
    MissingBelief,
    Stage1Solution,
    Stage2Solution,
    check_monotonicity,
    revenue_oracle,
    solve_incomplete,
    solve_stage1,
    solve_stage2,
)
from .experiments import (
    BenchmarkRow,
    GeneratedMarket,
    ScenarioGenSpec,
    cdf_points,
    emit,
    generate_markets,
    run_benchmark,
    run_sweep,
)

__version__ = "0.1.0"
