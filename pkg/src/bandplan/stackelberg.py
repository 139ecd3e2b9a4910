"""Two-stage market game solver.

Stage 2: given a channel split (m, p), each candidate operator joins the
market only if its expected epoch revenue strictly beats its minimum revenue
requirement.  Because every operator's revenue weakly falls as either
interested set grows, iterated elimination of strictly dominated strategies
collapses to a polynomial sweep: a confused operator joins once its revenue
against the largest surviving sets clears the bar, and drops out once its
revenue against the smallest committed sets (plus itself) fails it.
Operators still undecided at convergence stay out (pessimism).

Stage 1: the regulator grid-searches channel count and licensed count,
re-solving stage 2 in every cell and keeping the strict utilization maximum.

The number of epochs in the planning horizon scales total utilization
linearly and cancels out of the argmax, so all solvers work with per-slot
utilization directly.

Revenue evaluations go through a pluggable oracle; the default is Monte
Carlo backed with per-(interested sets) derived seeds, so repeated
evaluations of one configuration are identical and comparisons between
nested configurations share random numbers.  Evaluations are memoized per
(m, p, sets) under a lock, making grid cells safe to solve concurrently.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field, replace
from concurrent.futures import ThreadPoolExecutor
from math import ceil
from typing import Callable, Iterable, Mapping, Protocol, Sequence

from .market import MarketParams, MarketScenario, OperatorProfile
from .montecarlo import (
    McConfig,
    estimate,
    objective_and_revenues,
    revenue_std_errors,
)

__all__ = [
    "MissingBelief",
    "OracleResult",
    "RevenueOracle",
    "McRevenueOracle",
    "Stage2Solution",
    "Stage1Solution",
    "GridCell",
    "BeliefSet",
    "IncompleteInfoSolution",
    "MonotonicityReport",
    "revenue_oracle",
    "solve_stage2",
    "solve_stage1",
    "solve_incomplete",
    "check_monotonicity",
    "default_m_max",
    "evaluate_cell",
    "grid_cells",
]


class MissingBelief(ValueError):
    """A required belief holder is absent from the belief collection."""


@dataclass(frozen=True)
class OracleResult:
    """One revenue-function evaluation: utilization plus per-operator revenue."""

    u: float
    revenues: Mapping[int, float]
    u_se: float = 0.0
    revenue_se: Mapping[int, float] = field(default_factory=dict)
    converged: bool = True
    samples_used: int = 0


class RevenueOracle(Protocol):
    def __call__(self, s_l: frozenset[int], s_u: frozenset[int],
                 params: MarketParams) -> OracleResult: ...


class McRevenueOracle:
    """Monte Carlo revenue oracle with memoized, seed-disciplined evaluations.

    The cache key is (m, p, interested sets); a cache hit returns exactly
    what a recomputation would, because the estimate's random streams are a
    pure function of the key's scenario and sets.
    """

    def __init__(self, scenario: MarketScenario, config: McConfig,
                 *, backend: str | None = None) -> None:
        self.scenario = scenario
        self.config = config
        self.backend = backend
        self._cache: dict[tuple, OracleResult] = {}
        self._lock = threading.Lock()

    def __call__(self, s_l: frozenset[int], s_u: frozenset[int],
                 params: MarketParams) -> OracleResult:
        key = (params.m, params.p, frozenset(s_l), frozenset(s_u))
        with self._lock:
            hit = self._cache.get(key)
        if hit is not None:
            return hit
        est = estimate(self.scenario, s_l, s_u, params, self.config,
                       backend=self.backend)
        u, revenues = objective_and_revenues(est, self.scenario, s_l, s_u, params)
        result = OracleResult(
            u=u,
            revenues=revenues,
            u_se=est.u_hat.std_error,
            revenue_se=revenue_std_errors(est, self.scenario, s_l, s_u, params),
            converged=est.converged,
            samples_used=est.samples_used,
        )
        with self._lock:
            self._cache.setdefault(key, result)
        return result


def revenue_oracle(
    scenario: MarketScenario,
    s_l: Iterable[int],
    s_u: Iterable[int],
    params: MarketParams,
    mc_config: McConfig,
    *,
    backend: str | None = None,
) -> dict[int, float]:
    """Expected epoch revenue of every interested operator (Monte Carlo)."""
    oracle = McRevenueOracle(scenario, mc_config, backend=backend)
    return dict(oracle(frozenset(s_l), frozenset(s_u), params).revenues)


@dataclass(frozen=True)
class TraceEntry:
    """Snapshot of the entry-elimination state after one sweep."""

    joined_licensed: frozenset[int]
    confused_licensed: frozenset[int]
    joined_unlicensed: frozenset[int]
    confused_unlicensed: frozenset[int]

    def to_dict(self) -> dict:
        return {
            "joined_licensed": sorted(self.joined_licensed),
            "confused_licensed": sorted(self.confused_licensed),
            "joined_unlicensed": sorted(self.joined_unlicensed),
            "confused_unlicensed": sorted(self.confused_unlicensed),
        }


@dataclass(frozen=True)
class Stage2Solution:
    """Converged interested sets plus the per-sweep elimination trace."""

    s_l: frozenset[int]
    s_u: frozenset[int]
    trace: tuple[TraceEntry, ...]
    confused_at_convergence: frozenset[int]

    def to_dict(self) -> dict:
        return {
            "s_l": sorted(self.s_l),
            "s_u": sorted(self.s_u),
            "confused_at_convergence": sorted(self.confused_at_convergence),
            "trace": [t.to_dict() for t in self.trace],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def solve_stage2(
    scenario: MarketScenario,
    params: MarketParams,
    mc_config: McConfig | None = None,
    *,
    oracle: RevenueOracle | None = None,
    backend: str | None = None,
) -> Stage2Solution:
    """Entry equilibrium for a fixed channel split via iterated dominance.

    Each sweep re-tests every still-confused operator: the join test
    evaluates its revenue against the largest sets that could remain (all
    committed plus all confused operators); the drop test evaluates it
    against the smallest sets it would face after joining (the committed
    operators plus itself, and for a licensed candidate only the committed
    unlicensed ones).  Revenue monotonicity in both sets makes these the
    worst and best cases, so a strict pass or fail is a dominant strategy.
    Terminates after at most one sweep per candidate plus a closing
    no-change sweep.
    """
    if oracle is None:
        if mc_config is None:
            raise ValueError("either an oracle or an mc_config is required")
        oracle = McRevenueOracle(scenario, mc_config, backend=backend)

    mer = {o.id: o.mer(params.t_slots) for o in scenario.all_profiles()}
    joined_l: set[int] = set()
    confused_l: set[int] = set(scenario.licensed_ids)
    joined_u: set[int] = set()
    confused_u: set[int] = set(scenario.unlicensed_ids)
    n_candidates = len(confused_l) + len(confused_u)

    trace: list[TraceEntry] = []
    converged = False
    sweeps = 0
    while not converged:
        converged = True
        sweeps += 1
        if sweeps > n_candidates + 1:
            raise RuntimeError("entry elimination failed to converge; "
                               "revenue oracle is not monotone")
        jl0 = frozenset(joined_l)
        cl0 = frozenset(confused_l)
        ju0 = frozenset(joined_u)
        cu0 = frozenset(confused_u)
        largest_l = jl0 | cl0
        largest_u = ju0 | cu0

        for k in sorted(cl0):
            if oracle(largest_l, largest_u, params).revenues[k] > mer[k]:
                joined_l.add(k)
                confused_l.discard(k)
                converged = False
            elif oracle(jl0 | {k}, ju0, params).revenues[k] <= mer[k]:
                confused_l.discard(k)
                converged = False

        for k in sorted(cu0):
            if oracle(largest_l, largest_u, params).revenues[k] > mer[k]:
                joined_u.add(k)
                confused_u.discard(k)
                converged = False
            elif oracle(jl0, ju0 | {k}, params).revenues[k] <= mer[k]:
                confused_u.discard(k)
                converged = False

        trace.append(TraceEntry(
            joined_licensed=frozenset(joined_l),
            confused_licensed=frozenset(confused_l),
            joined_unlicensed=frozenset(joined_u),
            confused_unlicensed=frozenset(confused_u),
        ))

    return Stage2Solution(
        s_l=frozenset(joined_l),
        s_u=frozenset(joined_u),
        trace=tuple(trace),
        confused_at_convergence=frozenset(confused_l) | frozenset(confused_u),
    )


@dataclass(frozen=True)
class GridCell:
    """One evaluated (m, p) configuration."""

    m: int
    p: int
    u: float
    s_l: frozenset[int]
    s_u: frozenset[int]
    u_se: float = 0.0

    def to_dict(self) -> dict:
        return {
            "m": self.m,
            "p": self.p,
            "u": self.u,
            "s_l": sorted(self.s_l),
            "s_u": sorted(self.s_u),
            "u_se": self.u_se,
        }


@dataclass(frozen=True)
class Stage1Solution:
    """Grid-search optimum plus the full diagnostic table."""

    m_star: int
    p_star: int
    s_l_star: frozenset[int]
    s_u_star: frozenset[int]
    u_star: float
    grid: tuple[GridCell, ...]

    def to_dict(self) -> dict:
        return {
            "m_star": self.m_star,
            "p_star": self.p_star,
            "s_l_star": sorted(self.s_l_star),
            "s_u_star": sorted(self.s_u_star),
            "u_star": self.u_star,
            "grid": [c.to_dict() for c in self.grid],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def default_m_max(scenario: MarketScenario, d_total: float) -> int:
    """Grid bound wide enough to bracket the per-operator-channel regime.

    Covers both twice the candidate count and twice the channel count that
    would size one channel to the average operator's mean demand.
    """
    profiles = scenario.all_profiles()
    if not profiles:
        return 1
    mean_demand = sum(o.mu_theta for o in profiles) / len(profiles)
    by_demand = ceil(2.0 * d_total / mean_demand) if mean_demand > 0 else 1
    return max(2 * len(profiles), by_demand, 1)


def evaluate_cell(
    scenario: MarketScenario,
    params: MarketParams,
    oracle: RevenueOracle,
) -> GridCell:
    s2 = solve_stage2(scenario, params, oracle=oracle)
    if s2.s_l or s2.s_u:
        res = oracle(s2.s_l, s2.s_u, params)
        u, u_se = res.u, res.u_se
    else:
        u, u_se = 0.0, 0.0
    return GridCell(m=params.m, p=params.p, u=u, s_l=s2.s_l, s_u=s2.s_u, u_se=u_se)


def _grid_search(
    scenario: MarketScenario,
    params_template: MarketParams,
    oracle: RevenueOracle,
    cells: Sequence[tuple[int, int]],
    threads: int | None = None,
) -> list[GridCell]:
    def run(mp: tuple[int, int]) -> GridCell:
        m, p = mp
        return evaluate_cell(scenario, replace(params_template, m=m, p=p), oracle)

    if threads is not None and threads > 1 and len(cells) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(run, cells))
    return [run(mp) for mp in cells]


def _select_best(grid: Sequence[GridCell]) -> GridCell:
    best = None
    for cell in grid:
        if best is None or cell.u > best.u:
            best = cell
    if best is None:
        raise ValueError("empty grid")
    return best


def grid_cells(m_max: int, n_licensed_candidates: int) -> list[tuple[int, int]]:
    """Search order: channel count ascending, licensed count descending.

    Visiting larger p first within each m makes exact utilization ties
    resolve toward licensing channels, which only matters when licensed and
    opportunistic service are equally efficient.
    """
    cells: list[tuple[int, int]] = []
    for m in range(1, m_max + 1):
        for p in range(min(n_licensed_candidates, m), -1, -1):
            cells.append((m, p))
    return cells


def solve_stage1(
    scenario: MarketScenario,
    params_template: MarketParams,
    mc_config: McConfig | None = None,
    m_max: int | None = None,
    *,
    oracle: RevenueOracle | None = None,
    threads: int | None = None,
    backend: str | None = None,
) -> Stage1Solution:
    """Grid-search the channel split maximizing expected slot utilization.

    Every cell (m in 1..m_max, p in 0..min(candidate licensed count, m))
    gets its own stage-2 solve; the strict maximum wins and earlier cells
    win exact ties.  When every cell yields an empty market the first cell
    is returned with zero utilization.
    """
    if oracle is None:
        if mc_config is None:
            raise ValueError("either an oracle or an mc_config is required")
        oracle = McRevenueOracle(scenario, mc_config, backend=backend)
    if m_max is None:
        m_max = default_m_max(scenario, params_template.d_total)
    if m_max < 1:
        raise ValueError(f"m_max must be >= 1, got {m_max}")

    cells = grid_cells(m_max, len(scenario.licensed))
    grid = _grid_search(scenario, params_template, oracle, cells, threads)
    best = _select_best(grid)
    return Stage1Solution(
        m_star=best.m,
        p_star=best.p,
        s_l_star=best.s_l,
        s_u_star=best.s_u,
        u_star=best.u,
        grid=tuple(grid),
    )


@dataclass(frozen=True)
class BeliefSet:
    """One participant's point estimates of every candidate's profile.

    ``holder`` 0 is the regulator; any other holder is a candidate operator
    and must estimate its own profile exactly (enforced where the true
    scenario is available).
    """

    holder: int
    estimates: Mapping[int, OperatorProfile]

    def __post_init__(self) -> None:
        if self.holder < 0:
            raise ValueError("holder must be 0 (regulator) or a candidate id")


@dataclass(frozen=True)
class IncompleteInfoSolution:
    """Outcome when every participant plans under its own beliefs."""

    regulator: Stage1Solution
    s_l_true: frozenset[int]
    s_u_true: frozenset[int]
    u_true: float


def solve_incomplete(
    scenario_true: MarketScenario,
    beliefs: Iterable[BeliefSet],
    params_template: MarketParams,
    mc_config: McConfig,
    m_max: int | None = None,
    *,
    threads: int | None = None,
    backend: str | None = None,
) -> IncompleteInfoSolution:
    """Solve the game when profiles are known only as point estimates.

    The regulator fixes (m*, p*) by solving the full game under its own
    estimates.  Each candidate then re-solves the entry game at (m*, p*)
    under its estimates and joins exactly when it appears in its own
    solution.  The reported utilization evaluates those realized sets under
    the true profiles.
    """
    by_holder: dict[int, BeliefSet] = {}
    for b in beliefs:
        if b.holder in by_holder:
            raise ValueError(f"duplicate belief holder {b.holder}")
        by_holder[b.holder] = b
    candidate_ids = sorted(scenario_true.licensed_ids | scenario_true.unlicensed_ids)
    missing = [h for h in (0, *candidate_ids) if h not in by_holder]
    if missing:
        raise MissingBelief(f"missing belief sets for holders {missing}")
    for op_id in candidate_ids:
        own = by_holder[op_id].estimates.get(op_id)
        if own != scenario_true.profile(op_id):
            raise ValueError(
                f"operator {op_id} must know its own profile exactly"
            )

    regulator_view = scenario_true.with_profiles(by_holder[0].estimates)
    reg_solution = solve_stage1(regulator_view, params_template, mc_config,
                                m_max, threads=threads, backend=backend)
    params_star = replace(params_template, m=reg_solution.m_star, p=reg_solution.p_star)

    s_l_true: set[int] = set()
    s_u_true: set[int] = set()
    for op_id in sorted(scenario_true.licensed_ids):
        view = scenario_true.with_profiles(by_holder[op_id].estimates)
        own = solve_stage2(view, params_star, mc_config, backend=backend)
        if op_id in own.s_l:
            s_l_true.add(op_id)
    for op_id in sorted(scenario_true.unlicensed_ids):
        view = scenario_true.with_profiles(by_holder[op_id].estimates)
        own = solve_stage2(view, params_star, mc_config, backend=backend)
        if op_id in own.s_u:
            s_u_true.add(op_id)

    if s_l_true or s_u_true:
        true_oracle = McRevenueOracle(scenario_true, mc_config, backend=backend)
        u_true = true_oracle(frozenset(s_l_true), frozenset(s_u_true), params_star).u
    else:
        u_true = 0.0
    return IncompleteInfoSolution(
        regulator=reg_solution,
        s_l_true=frozenset(s_l_true),
        s_u_true=frozenset(s_u_true),
        u_true=u_true,
    )


@dataclass(frozen=True)
class MonotonicityViolation:
    operator: int
    smaller_l: frozenset[int]
    smaller_u: frozenset[int]
    added: int
    added_to: str
    revenue_smaller: float
    revenue_larger: float
    allowance: float


@dataclass(frozen=True)
class MonotonicityReport:
    comparisons: int
    violations: tuple[MonotonicityViolation, ...]

    @property
    def ok(self) -> bool:
        return not self.violations


def check_monotonicity(
    scenario: MarketScenario,
    params: MarketParams,
    mc_config: McConfig,
    *,
    backend: str | None = None,
    max_candidates: int = 6,
) -> MonotonicityReport:
    """Numerically audit that revenue weakly falls as either set grows.

    Enumerates every pair of nested interested-set configurations differing
    by one operator and flags incumbents whose revenue rises by more than
    three combined standard errors.  A validation harness over small
    markets, not a proof.
    """
    lic = sorted(scenario.licensed_ids)
    unl = sorted(scenario.unlicensed_ids)
    n = len(lic) + len(unl)
    if n > max_candidates:
        raise ValueError(
            f"monotonicity audit enumerates all subset pairs; {n} candidates "
            f"exceeds the limit of {max_candidates}"
        )
    oracle = McRevenueOracle(scenario, mc_config, backend=backend)

    def subsets(ids: list[int]) -> list[frozenset[int]]:
        out = [frozenset()]
        for op_id in ids:
            out += [s | {op_id} for s in out]
        return out

    comparisons = 0
    violations: list[MonotonicityViolation] = []
    for s_l in subsets(lic):
        for s_u in subsets(unl):
            incumbents = sorted(s_l | s_u)
            if not incumbents:
                continue
            base = oracle(s_l, s_u, params)
            grown = [(a, s_l | {a}, s_u, "licensed") for a in lic if a not in s_l]
            grown += [(a, s_l, s_u | {a}, "unlicensed") for a in unl if a not in s_u]
            for added, big_l, big_u, where in grown:
                bigger = oracle(frozenset(big_l), frozenset(big_u), params)
                for k in incumbents:
                    comparisons += 1
                    allowance = 3.0 * (base.revenue_se.get(k, 0.0)
                                       + bigger.revenue_se.get(k, 0.0))
                    if bigger.revenues[k] > base.revenues[k] + allowance:
                        violations.append(MonotonicityViolation(
                            operator=k,
                            smaller_l=frozenset(s_l),
                            smaller_u=frozenset(s_u),
                            added=added,
                            added_to=where,
                            revenue_smaller=base.revenues[k],
                            revenue_larger=bigger.revenues[k],
                            allowance=allowance,
                        ))
    return MonotonicityReport(comparisons=comparisons, violations=tuple(violations))
