"""Experiment suites: market generation, benchmarks, sweeps, and emission.

Everything here is a pure function of (generation spec, estimator config,
seeds): market draws use per-market derived streams, solvers use the seed
discipline of the estimator, and emitted files are written with fixed column
orders and canonical float formatting, so reruns are byte-identical.
"""

from __future__ import annotations

import dataclasses
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from numpy.random import Generator, Philox, SeedSequence

from .market import MarketParams, MarketScenario, OperatorProfile
from .montecarlo import McConfig
from .stackelberg import (
    GridCell,
    McRevenueOracle,
    Stage1Solution,
    default_m_max,
    evaluate_cell,
    grid_cells,
    solve_stage1,
)

__all__ = [
    "ScenarioGenSpec",
    "GeneratedMarket",
    "BenchmarkRow",
    "DEFAULT_RANGES",
    "BENCHMARK_FIELDS",
    "generate_markets",
    "run_benchmark",
    "run_sweep",
    "cdf_points",
    "emit",
]

# Per-operator parameters drawn for every candidate, in draw order.
OPERATOR_PARAM_ORDER = (
    "mu_theta",
    "sigma_theta",
    "revenue_slope",
    "revenue_cv",
    "rho",
    "omega",
    "mer_fraction",
)
# Market-level parameters, drawn after all operators, in draw order.
MARKET_PARAM_ORDER = ("upsilon", "alpha_l", "alpha_u")

DEFAULT_RANGES: dict[str, tuple[float, float]] = {
    "mu_theta": (0.75, 1.0),
    "sigma_theta": (0.25, 0.75),
    "revenue_slope": (0.9, 1.1),
    "revenue_cv": (0.25, 0.75),
    "rho": (0.5, 0.9),
    "omega": (0.85, 0.95),
    "mer_fraction": (0.25, 1.0),
    "upsilon": (0.5, 1.0),
    "alpha_l": (0.75, 1.0),
    "alpha_u": (0.75, 1.0),
}

_DOMAIN_BOUNDS: dict[str, tuple[float, float]] = {
    "mu_theta": (-math.inf, math.inf),
    "sigma_theta": (0.0, math.inf),
    "revenue_slope": (0.0, math.inf),
    "revenue_cv": (0.0, math.inf),
    "rho": (0.0, 1.0),
    "omega": (0.0, 1.0),
    "mer_fraction": (0.0, 1.0),
    "upsilon": (0.0, math.inf),
    "alpha_l": (0.0, 1.0),
    "alpha_u": (0.0, 1.0),
}


@dataclass(frozen=True)
class ScenarioGenSpec:
    """Recipe for drawing random market settings.

    Every per-operator and market-level parameter is drawn uniformly from
    its range.  Total capacity is ``upsilon`` times the summed mean demand
    of all candidates.  With ``enforce_alpha_order`` the two interference
    discounts are swapped when needed so the licensed one never exceeds the
    unlicensed one.
    """

    n_licensed: int
    n_unlicensed: int
    n_markets: int
    seed: int
    ranges: Mapping[str, tuple[float, float]] = field(default_factory=dict)
    enforce_alpha_order: bool = True

    def __post_init__(self) -> None:
        if self.n_licensed < 0 or self.n_unlicensed < 0:
            raise ValueError("candidate counts must be >= 0")
        if self.n_licensed + self.n_unlicensed == 0:
            raise ValueError("at least one candidate operator is required")
        if self.n_markets < 1:
            raise ValueError("n_markets must be >= 1")
        merged = dict(DEFAULT_RANGES)
        for key, rng in self.ranges.items():
            if key not in DEFAULT_RANGES:
                raise ValueError(f"unknown parameter range {key!r}")
            merged[key] = (float(rng[0]), float(rng[1]))
        for key, (lo, hi) in merged.items():
            dom_lo, dom_hi = _DOMAIN_BOUNDS[key]
            if not (lo <= hi):
                raise ValueError(f"range for {key} is empty: ({lo}, {hi})")
            if lo < dom_lo or hi > dom_hi:
                raise ValueError(f"range for {key} leaves its domain: ({lo}, {hi})")
        object.__setattr__(self, "ranges", merged)

    @classmethod
    def from_dict(cls, doc: Mapping) -> "ScenarioGenSpec":
        ranges = {k: (float(v[0]), float(v[1]))
                  for k, v in doc.get("ranges", {}).items()}
        return cls(
            n_licensed=int(doc["n_licensed"]),
            n_unlicensed=int(doc["n_unlicensed"]),
            n_markets=int(doc["n_markets"]),
            seed=int(doc["seed"]),
            ranges=ranges,
            enforce_alpha_order=bool(doc.get("enforce_alpha_order", True)),
        )


@dataclass(frozen=True)
class GeneratedMarket:
    """One drawn market setting: candidates plus environment parameters.

    Channel count, licensed count, tier-1 pool participation, and the
    access strategy are left to whichever experiment consumes the market.
    """

    index: int
    scenario: MarketScenario
    d_total: float
    upsilon: float
    alpha_l: float
    alpha_u: float

    def params(self, m: int, p: int, *, t_slots: int = 52, phi: int = 1,
               osa: str = "overlay") -> MarketParams:
        return MarketParams(m=m, p=p, t_slots=t_slots, d_total=self.d_total,
                            phi=phi, alpha_l=self.alpha_l, alpha_u=self.alpha_u,
                            osa=osa)

    def to_dict(self) -> dict:
        ops = []
        for access, group in (("licensed", self.scenario.licensed),
                              ("unlicensed", self.scenario.unlicensed)):
            for o in group:
                entry = {"id": o.id, "access": access}
                entry.update({k: float(getattr(o, k)) for k in OPERATOR_PARAM_ORDER})
                ops.append(entry)
        return {
            "index": self.index,
            "operators": ops,
            "d_total": self.d_total,
            "upsilon": self.upsilon,
            "alpha_l": self.alpha_l,
            "alpha_u": self.alpha_u,
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "GeneratedMarket":
        lic, unl = [], []
        for entry in doc["operators"]:
            prof = OperatorProfile(
                id=int(entry["id"]),
                **{k: float(entry[k]) for k in OPERATOR_PARAM_ORDER},
            )
            (lic if entry["access"] == "licensed" else unl).append(prof)
        return cls(
            index=int(doc["index"]),
            scenario=MarketScenario(licensed=tuple(lic), unlicensed=tuple(unl)),
            d_total=float(doc["d_total"]),
            upsilon=float(doc["upsilon"]),
            alpha_l=float(doc["alpha_l"]),
            alpha_u=float(doc["alpha_u"]),
        )


def _draw(rng: Generator, bounds: tuple[float, float]) -> float:
    lo, hi = bounds
    if lo == hi:
        return lo
    return float(rng.uniform(lo, hi))


def generate_markets(spec: ScenarioGenSpec) -> list[GeneratedMarket]:
    """Draw ``n_markets`` independent market settings from the spec.

    Each market gets its own derived stream, so any prefix of the output is
    independent of ``n_markets`` and reruns are byte-identical.
    """
    markets: list[GeneratedMarket] = []
    for idx in range(spec.n_markets):
        rng = Generator(Philox(SeedSequence(entropy=(spec.seed, idx))))
        lic: list[OperatorProfile] = []
        unl: list[OperatorProfile] = []
        next_id = 1
        for group, count in ((lic, spec.n_licensed), (unl, spec.n_unlicensed)):
            for _ in range(count):
                values = {k: _draw(rng, spec.ranges[k]) for k in OPERATOR_PARAM_ORDER}
                group.append(OperatorProfile(id=next_id, **values))
                next_id += 1
        upsilon = _draw(rng, spec.ranges["upsilon"])
        alpha_l = _draw(rng, spec.ranges["alpha_l"])
        alpha_u = _draw(rng, spec.ranges["alpha_u"])
        if spec.enforce_alpha_order and alpha_l > alpha_u:
            alpha_l, alpha_u = alpha_u, alpha_l
        scenario = MarketScenario(licensed=tuple(lic), unlicensed=tuple(unl))
        d_total = upsilon * sum(o.mu_theta for o in scenario.all_profiles())
        markets.append(GeneratedMarket(
            index=idx, scenario=scenario, d_total=d_total,
            upsilon=upsilon, alpha_l=alpha_l, alpha_u=alpha_u,
        ))
    return markets


@dataclass(frozen=True)
class BenchmarkRow:
    """Joint-vs-restricted optimization gap for one market.

    ``delta_u_pct`` is the utilization gap as a percentage of total
    capacity.  The trailing standard errors support noise-banded checks and
    are not part of the emitted schema.
    """

    market_index: int
    u_opt: float
    u_subopt: float
    delta_u_pct: float
    osa: str
    phi: int
    u_opt_se: float = 0.0
    u_subopt_se: float = 0.0


BENCHMARK_FIELDS = ("market_index", "u_opt", "u_subopt", "delta_u_pct", "osa", "phi")

_MODES = ("fixed_p", "fixed_m", "max_entrants")


def _mean_mu_theta(scenario: MarketScenario) -> float:
    profiles = scenario.all_profiles()
    return sum(o.mu_theta for o in profiles) / len(profiles)


def _suboptimal_cells(mode: str, market: GeneratedMarket, m_max: int) -> list[tuple[int, int]]:
    n_lic = len(market.scenario.licensed)
    if mode == "fixed_p":
        p = n_lic
        first_m = max(p, 1)
        return [(m, p) for m in range(first_m, m_max + 1)]
    if mode == "fixed_m":
        m = max(1, math.floor(market.d_total / _mean_mu_theta(market.scenario)))
        return [(m, p) for p in range(min(n_lic, m), -1, -1)]
    raise ValueError(f"mode must be one of {_MODES}, got {mode!r}")


def _benchmark_one(
    market: GeneratedMarket,
    mode: str,
    mc_config: McConfig,
    m_max: int | None,
    osa: str,
    phi: int,
    t_slots: int,
    backend: str | None,
) -> BenchmarkRow:
    template = market.params(m=1, p=0, t_slots=t_slots, phi=phi, osa=osa)
    mm = m_max if m_max is not None else default_m_max(market.scenario, market.d_total)
    oracle = McRevenueOracle(market.scenario, mc_config, backend=backend)
    joint = solve_stage1(market.scenario, template, m_max=mm, oracle=oracle)

    if mode == "max_entrants":
        best: GridCell | None = None
        for cell in joint.grid:
            if best is None:
                best = cell
                continue
            entrants = len(cell.s_l) + len(cell.s_u)
            best_entrants = len(best.s_l) + len(best.s_u)
            if entrants > best_entrants or (entrants == best_entrants and cell.u > best.u):
                best = cell
        assert best is not None
        sub_u, sub_se = best.u, best.u_se
    else:
        cells = _suboptimal_cells(mode, market, mm)
        sub_best: GridCell | None = None
        for m, p in cells:
            params = dataclasses.replace(template, m=m, p=p)
            cell = evaluate_cell(market.scenario, params, oracle)
            if sub_best is None or cell.u > sub_best.u:
                sub_best = cell
        assert sub_best is not None
        sub_u, sub_se = sub_best.u, sub_best.u_se

    delta = 100.0 * (joint.u_star - sub_u) / market.d_total
    opt_se = next(c.u_se for c in joint.grid
                  if c.m == joint.m_star and c.p == joint.p_star)
    return BenchmarkRow(
        market_index=market.index,
        u_opt=joint.u_star,
        u_subopt=sub_u,
        delta_u_pct=delta,
        osa=osa,
        phi=phi,
        u_opt_se=opt_se,
        u_subopt_se=sub_se,
    )


def run_benchmark(
    markets: Sequence[GeneratedMarket],
    mode: str,
    mc_config: McConfig,
    *,
    m_max: int | None = None,
    osa: str = "overlay",
    phi: int = 1,
    t_slots: int = 52,
    threads: int | None = None,
    backend: str | None = None,
) -> list[BenchmarkRow]:
    """Compare joint channel/licensing optimization against a restricted rule.

    Modes: ``fixed_p`` pins the licensed count to the candidate licensed
    population and optimizes the channel count; ``fixed_m`` pins the channel
    count so one channel matches the average mean demand and optimizes the
    licensed count; ``max_entrants`` picks the grid cell with the most
    interested operators, breaking ties by utilization.  Rows come back
    ordered by market index regardless of threading.
    """
    if mode not in _MODES:
        raise ValueError(f"mode must be one of {_MODES}, got {mode!r}")

    def run(market: GeneratedMarket) -> BenchmarkRow:
        return _benchmark_one(market, mode, mc_config, m_max, osa, phi,
                              t_slots, backend)

    if threads is not None and threads > 1 and len(markets) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(run, markets))
    else:
        rows = [run(m) for m in markets]
    return sorted(rows, key=lambda r: r.market_index)


def run_sweep(
    base_market: GeneratedMarket,
    sweep: str,
    grid: Sequence[float],
    mc_config: McConfig,
    *,
    m_max: int | None = None,
    osa: str = "overlay",
    phi: int = 1,
    t_slots: int = 52,
    fixed_alpha_u: float = 0.9,
    threads: int | None = None,
    backend: str | None = None,
) -> list[dict]:
    """Re-solve the full game along an interference-parameter grid.

    ``alpha_joint`` moves both interference discounts together and records
    the optimal channel and licensed counts.  ``alpha_l`` pins the
    unlicensed discount and sweeps the licensed one, recording the fraction
    of channels left unlicensed.
    """
    if sweep not in ("alpha_joint", "alpha_l"):
        raise ValueError(f"sweep must be 'alpha_joint' or 'alpha_l', got {sweep!r}")
    if not grid:
        raise ValueError("sweep grid must be non-empty")
    mm = m_max if m_max is not None else default_m_max(base_market.scenario,
                                                       base_market.d_total)
    rows: list[dict] = []
    for value in grid:
        if sweep == "alpha_joint":
            alpha_l, alpha_u = float(value), float(value)
        else:
            alpha_l, alpha_u = float(value), float(fixed_alpha_u)
        template = MarketParams(m=1, p=0, t_slots=t_slots,
                                d_total=base_market.d_total, phi=phi,
                                alpha_l=alpha_l, alpha_u=alpha_u, osa=osa)
        solution = solve_stage1(base_market.scenario, template, mc_config,
                                m_max=mm, threads=threads, backend=backend)
        if sweep == "alpha_joint":
            rows.append({
                "alpha": float(value),
                "m_star": solution.m_star,
                "p_star": solution.p_star,
                "u_star": solution.u_star,
            })
        else:
            rows.append({
                "alpha_l": float(value),
                "m_star": solution.m_star,
                "p_star": solution.p_star,
                "unlicensed_ratio": (solution.m_star - solution.p_star) / solution.m_star,
                "u_star": solution.u_star,
            })
    return rows


def cdf_points(values: Iterable[float]) -> list[dict]:
    """Empirical CDF as (value, cumulative_probability) pairs."""
    ordered = sorted(float(v) for v in values)
    n = len(ordered)
    return [
        {"value": v, "cumulative_probability": (i + 1) / n}
        for i, v in enumerate(ordered)
    ]


def _format_cell(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def emit(results: Sequence, fmt: str, path, fieldnames: Sequence[str] | None = None) -> None:
    """Write rows deterministically as CSV or JSON.

    Rows may be dataclasses or mappings.  ``fieldnames`` fixes the column
    set and order; when omitted it is taken from the first row (and is then
    required for empty results).  The same results always produce the same
    bytes.
    """
    rows: list[dict] = []
    for row in results:
        if dataclasses.is_dataclass(row):
            rows.append(dataclasses.asdict(row))
        elif isinstance(row, Mapping):
            rows.append(dict(row))
        else:
            raise TypeError(f"cannot emit row of type {type(row)!r}")
    if fieldnames is None:
        if not rows:
            raise ValueError("fieldnames are required when emitting empty results")
        fieldnames = list(rows[0].keys())

    try:
        if fmt == "csv":
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write(",".join(fieldnames) + "\n")
                for row in rows:
                    fh.write(",".join(_format_cell(row[k]) for k in fieldnames) + "\n")
        elif fmt == "json":
            payload = [{k: row[k] for k in fieldnames} for row in rows]
            with open(path, "w", encoding="utf-8", newline="") as fh:
                json.dump(payload, fh, sort_keys=True, indent=2)
                fh.write("\n")
        else:
            raise ValueError(f"format must be 'csv' or 'json', got {fmt!r}")
    except OSError as exc:
        raise OSError(f"writing results to {path}: {exc}") from exc
