"""Per-slot channel allocation.

Pure functions covering one time slot of the tiered access model: residual
capacity a licensed channel leaves for opportunistic use, the demand an
operator brings to the opportunistic pool, the size of that pool, auction
winner selection, and the max-min fair waterfilling split of the pool.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping

from .market import MarketParams, OSA_INTERWEAVE, OSA_OVERLAY

__all__ = [
    "TierAssignment",
    "SlotAllocation",
    "residual_capacity",
    "modified_demand",
    "opportunistic_capacity",
    "waterfill",
    "assign_tiers",
    "allocate_slot",
]


@dataclass(frozen=True)
class TierAssignment:
    """Operators holding a licensed channel this epoch (tier1) and the rest."""

    tier1: frozenset[int]
    tier2: frozenset[int]

    def __post_init__(self) -> None:
        if self.tier1 & self.tier2:
            raise ValueError("tier1 and tier2 must be disjoint")


@dataclass(frozen=True)
class SlotAllocation:
    """Demand served in one slot, split by access type."""

    served_licensed: Mapping[int, float]
    served_opportunistic: Mapping[int, float]


def residual_capacity(d: float, params: MarketParams) -> float:
    """Capacity a licensed channel leaves for opportunistic use.

    Overlay access reuses whatever the licensee's demand ``d`` leaves of the
    channel, discounted by ``alpha_l``.  Interweave access can only use the
    channel when it is completely idle (``d == 0``).
    """
    if d < 0:
        raise ValueError(f"demand must be >= 0, got {d}")
    cap = params.channel_capacity
    if params.osa == OSA_INTERWEAVE:
        return params.alpha_l * cap if d == 0.0 else 0.0
    return params.alpha_l * max(cap - d, 0.0)


def modified_demand(x: float, is_tier1: bool, params: MarketParams) -> float:
    """Demand an operator brings to the opportunistic pool.

    A tier-1 operator first serves up to one channel of demand on its own
    licensed channel; only the excess spills into the pool, and only when
    ``phi`` permits tier-1 opportunistic participation.  Tier-2 demand
    passes through unchanged.
    """
    if x < 0:
        raise ValueError(f"demand must be >= 0, got {x}")
    if is_tier1:
        return params.phi * max(x - params.channel_capacity, 0.0)
    return x


def opportunistic_capacity(
    tier1_demands: Mapping[int, float],
    n_interested_licensed: int,
    params: MarketParams,
) -> float:
    """Total pool capacity available for opportunistic access in one slot.

    Unlicensed channels contribute ``alpha_u`` of their capacity each.  When
    fewer licensed operators are interested than there are licensed
    channels, the surplus licensed channels count as unlicensed ones, so the
    effective licensed-channel count is ``min(n_interested_licensed, p)``.
    Channels actually held by tier-1 operators contribute their residual
    capacity only.
    """
    if n_interested_licensed < len(tier1_demands):
        raise ValueError("interested licensed operators cannot be fewer than tier-1 holders")
    p_eff = min(n_interested_licensed, params.p)
    cap = params.channel_capacity
    total = params.alpha_u * (params.m - p_eff) * cap
    for op_id in sorted(tier1_demands):
        total += residual_capacity(tier1_demands[op_id], params)
    return total


def waterfill(capacity: float, demands: Mapping[int, float]) -> dict[int, float]:
    """Max-min fair split of ``capacity`` across the given demands.

    Operators are served in ascending demand order; each receives the
    smaller of its demand and an equal share of the capacity still unused.
    Equal demands are ordered by operator id, which cannot change the
    allocated amounts but keeps the execution trace deterministic.

    The result satisfies the water-level characterization: there is a level
    ``w >= 0`` with every allocation equal to ``min(demand, w)`` and the
    total equal to ``min(capacity, sum(demands))``.
    """
    if capacity < 0:
        raise ValueError(f"capacity must be >= 0, got {capacity}")
    for op_id, d in demands.items():
        if d < 0:
            raise ValueError(f"operator {op_id}: demand must be >= 0, got {d}")
    if not demands:
        return {}
    order = sorted(demands, key=lambda k: (demands[k], k))
    n = len(order)
    remaining = float(capacity)
    out: dict[int, float] = {}
    for pos, op_id in enumerate(order):
        share = remaining / (n - pos)
        grant = min(demands[op_id], share)
        out[op_id] = grant
        remaining -= grant
    return {k: out[k] for k in demands}


def assign_tiers(
    bids: Mapping[int, float],
    p: int,
    all_ids: Iterable[int] | None = None,
) -> TierAssignment:
    """Select the licensed-channel winners for one epoch.

    The ``min(p, len(bids))`` highest bidders win one channel each; equal
    bids are resolved in favor of the lower operator id, which makes runs
    reproducible and is statistically neutral for continuous bids.  Tier 2
    is the complement within ``all_ids`` (every interested operator) when
    given, otherwise within the bidders.
    """
    if p < 0:
        raise ValueError(f"p must be >= 0, got {p}")
    n_win = min(p, len(bids))
    winners = sorted(bids, key=lambda k: (-bids[k], k))[:n_win]
    tier1 = frozenset(winners)
    pool = frozenset(all_ids) if all_ids is not None else frozenset(bids)
    return TierAssignment(tier1=tier1, tier2=pool - tier1)


def allocate_slot(
    demands: Mapping[int, float],
    tiers: TierAssignment,
    n_interested_licensed: int,
    params: MarketParams,
) -> SlotAllocation:
    """Serve one slot's demand: licensed clipping, pool sizing, waterfilling.

    ``demands`` maps every interested operator (both tiers) to its realized
    demand this slot.  Tier-1 operators serve up to one channel's capacity
    on their licensed channel; everything else competes for the
    opportunistic pool.
    """
    cap = params.channel_capacity
    served_lc = {k: min(demands[k], cap) for k in sorted(tiers.tier1)}
    pool = opportunistic_capacity(
        {k: demands[k] for k in tiers.tier1}, n_interested_licensed, params
    )
    shaped = {
        k: modified_demand(demands[k], k in tiers.tier1, params)
        for k in sorted(demands)
    }
    served_op = waterfill(pool, shaped)
    return SlotAllocation(served_licensed=served_lc, served_opportunistic=served_op)
