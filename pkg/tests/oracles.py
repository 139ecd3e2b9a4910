"""Independent reference implementations used to cross-check the library.

Each oracle deliberately avoids the code path it validates: the waterfill
oracle solves for the water level by bisection instead of sequential
allocation, the entry-game oracle eliminates strategies from explicit
payoff tables, the slot-level simulator replays whole epochs instead of
sampling the trivariate shortcut, and the batch statistics recompute means
and variances from raw sample logs.
"""

from __future__ import annotations

import itertools
import math
from typing import Callable, Mapping, Sequence

import numpy as np
from numpy.random import Generator, Philox, SeedSequence

try:
    from numba import njit as _njit

    def _jit(fn):
        return _njit(cache=True, nogil=True)(fn)
except ImportError:  # pragma: no cover
    def _jit(fn):
        return fn


# ---------------------------------------------------------------------------
# Water-level oracle
# ---------------------------------------------------------------------------

def waterfill_bisection(capacity: float, demands: Mapping[int, float],
                        tol: float = 1e-13) -> dict[int, float]:
    """Max-min fair allocation via bisection on the water level w.

    Solves sum_k min(d_k, w) = min(capacity, sum_k d_k) and returns
    min(d_k, w) per operator.
    """
    if not demands:
        return {}
    total = sum(demands.values())
    target = min(capacity, total)
    lo, hi = 0.0, max(demands.values()) if demands else 0.0
    if sum(min(d, hi) for d in demands.values()) <= target:
        w = hi
    else:
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if sum(min(d, mid) for d in demands.values()) < target:
                lo = mid
            else:
                hi = mid
            if hi - lo < tol * max(1.0, hi):
                break
        w = 0.5 * (lo + hi)
    return {k: min(d, w) for k, d in demands.items()}


# ---------------------------------------------------------------------------
# Clipped-Gaussian moment oracle (brute-force sampling)
# ---------------------------------------------------------------------------

@_jit
def _clip_means(theta, cap):
    s_t = 0.0
    s_c = 0.0
    for i in range(theta.shape[0]):
        t = theta[i]
        c = t
        if c < 0.0:
            c = 0.0
        if c > cap:
            c = cap
        s_t += t
        s_c += c
    return s_t / theta.shape[0], s_c / theta.shape[0]


@_jit
def _clip_centered_sums(theta, cap, mean_t, mean_c):
    s_d2 = 0.0
    s_d4 = 0.0
    s_p = 0.0
    s_p2 = 0.0
    for i in range(theta.shape[0]):
        t = theta[i]
        c = t
        if c < 0.0:
            c = 0.0
        if c > cap:
            c = cap
        d = c - mean_c
        d2 = d * d
        s_d2 += d2
        s_d4 += d2 * d2
        p = (t - mean_t) * d
        s_p += p
        s_p2 += p * p
    return s_d2, s_d4, s_p, s_p2


def clipped_moments_bruteforce(mu, sd, cap, n, seed):
    """Sampling estimates of the clipped-demand moments plus standard errors.

    Draws n latent demands, clips them to [0, cap], and returns
    (mean, sd, cov(theta, clipped), se_mean, se_sd, se_cov).
    """
    rng = Generator(Philox(SeedSequence(entropy=seed)))
    theta = rng.standard_normal(n)
    theta *= sd
    theta += mu
    mean_t, mean_c = _clip_means(theta, cap)
    s_d2, s_d4, s_p, s_p2 = _clip_centered_sums(theta, cap, mean_t, mean_c)
    var = s_d2 / (n - 1)
    sd_hat = math.sqrt(var)
    cov = s_p / n
    se_mean = sd_hat / math.sqrt(n)
    m4 = s_d4 / n
    se_sd = math.sqrt(max(m4 - var * var, 0.0) / n) / (2 * sd_hat) if sd_hat > 0 else 0.0
    var_p = max(s_p2 / n - cov * cov, 0.0)
    se_cov = math.sqrt(var_p / n)
    return mean_c, sd_hat, cov, se_mean, se_sd, se_cov


# ---------------------------------------------------------------------------
# Entry-game oracle: iterated elimination over explicit payoff tables
# ---------------------------------------------------------------------------

def iesds_bruteforce(
    lic_ids: Sequence[int],
    unl_ids: Sequence[int],
    revenue: Callable[[int, frozenset, frozenset], float],
    mer: Mapping[int, float],
) -> tuple[frozenset[int], frozenset[int]]:
    """Entry equilibrium by explicit strategy-table elimination.

    Each candidate's strategies are {join, stay}.  ``join`` is eliminated
    once its payoff (revenue minus requirement) is <= 0 against every
    surviving opponent profile, because entry requires a strictly positive
    payoff; ``stay`` is eliminated once the payoff is > 0 against every
    surviving profile.  Candidates whose surviving set is exactly {join}
    enter; undecided candidates stay out.
    """
    players = [*lic_ids, *unl_ids]
    lic_set = frozenset(lic_ids)
    alive: dict[int, set[bool]] = {k: {True, False} for k in players}

    def payoff_join(k: int, others_join: Mapping[int, bool]) -> float:
        s_l = {j for j in lic_ids if j != k and others_join[j]}
        s_u = {j for j in unl_ids if j != k and others_join[j]}
        if k in lic_set:
            s_l.add(k)
        else:
            s_u.add(k)
        return revenue(k, frozenset(s_l), frozenset(s_u)) - mer[k]

    changed = True
    while changed:
        changed = False
        for k in players:
            if len(alive[k]) != 2:
                continue
            others = [j for j in players if j != k]
            combos = itertools.product(*(sorted(alive[j]) for j in others))
            payoffs = [
                payoff_join(k, dict(zip(others, combo)))
                for combo in combos
            ]
            if all(p <= 0.0 for p in payoffs):
                alive[k] = {False}
                changed = True
            elif all(p > 0.0 for p in payoffs):
                alive[k] = {True}
                changed = True

    joiners = {k for k in players if alive[k] == {True}}
    return frozenset(j for j in lic_ids if j in joiners), \
        frozenset(j for j in unl_ids if j in joiners)


def random_monotone_revenue(
    lic_ids: Sequence[int],
    unl_ids: Sequence[int],
    rng: np.random.Generator,
) -> Callable[[int, frozenset, frozenset], float]:
    """Random revenue function that strictly decreases as either set grows.

    R_k(sets) = base_k * prod of per-rival decay factors in (0, 1), one per
    rival present in the interested sets.  Multiplying by another factor
    strictly shrinks revenue, so monotonicity holds exactly.
    """
    players = [*lic_ids, *unl_ids]
    base = {k: float(rng.uniform(0.5, 2.0)) for k in players}
    decay = {
        (k, j): float(rng.uniform(0.55, 0.98))
        for k in players
        for j in players
        if j != k
    }

    def revenue(k: int, s_l: frozenset, s_u: frozenset) -> float:
        value = base[k]
        for j in (*sorted(s_l), *sorted(s_u)):
            if j != k:
                value *= decay[(k, j)]
        return value

    return revenue


# ---------------------------------------------------------------------------
# Slot-level market simulator
# ---------------------------------------------------------------------------

def _waterfill_columns(capacity: np.ndarray, demands: np.ndarray) -> np.ndarray:
    """Waterfill independently for every column of a (n, t) demand matrix."""
    n, t = demands.shape
    order = np.argsort(demands, axis=0, kind="stable")
    srt = np.take_along_axis(demands, order, axis=0)
    remaining = capacity.astype(float).copy()
    alloc_srt = np.empty_like(srt)
    for pos in range(n):
        grant = np.minimum(srt[pos], remaining / (n - pos))
        alloc_srt[pos] = grant
        remaining = remaining - grant
    alloc = np.empty_like(srt)
    np.put_along_axis(alloc, order, alloc_srt, axis=0)
    return alloc


def slot_simulation_u(
    scenario,
    s_l: Sequence[int],
    s_u: Sequence[int],
    params,
    n_slots: int,
    seed: int,
    presample: int = 400_000,
) -> tuple[float, float, dict[int, float], dict[int, float]]:
    """Average per-slot utilization by replaying whole epochs.

    Simulates epochs of ``t_slots`` slots: draw every slot's latent demand,
    derive each licensed operator's epoch revenue from its realized served
    total (conditionally Gaussian with the configured correlation), derive
    its bid from the revenue likewise, auction, then serve every slot.
    Returns (mean slot utilization, its standard error, per-operator mean
    epoch auction revenue, per-operator mean slot pool allocation), with the
    clipped-demand moments estimated from an independent presample.
    """
    rng = np.random.default_rng(seed)
    lic = [scenario.profile(i) for i in sorted(s_l)]
    unl = [scenario.profile(i) for i in sorted(s_u)]
    n_l, n_u = len(lic), len(unl)
    n = n_l + n_u
    t = params.t_slots
    cap = params.d_total / params.m
    p_eff = min(params.p, n_l)
    n_epochs = max(1, n_slots // t)
    interweave = params.osa == "interweave"

    mu_lc = np.zeros(n_l)
    sd_lc = np.zeros(n_l)
    for i, prof in enumerate(lic):
        th = rng.normal(prof.mu_theta, prof.sigma_theta, presample)
        clipped = np.minimum(np.maximum(th, 0.0), cap)
        mu_lc[i] = clipped.mean()
        sd_lc[i] = clipped.std(ddof=1)

    mu_x = mu_lc * t
    sd_x = sd_lc * math.sqrt(t)
    slope = np.array([prof.revenue_slope for prof in lic])
    cv = np.array([prof.revenue_cv for prof in lic])
    rho = np.array([prof.rho for prof in lic])
    omega = np.array([prof.omega for prof in lic])
    mu_r = slope * mu_x
    sd_r = cv * mu_r

    per_epoch_u = np.zeros(n_epochs)
    rev_sum = np.zeros(n_l)
    op_sum = np.zeros(n)

    batch = max(1, min(n_epochs, 2_000_000 // max(1, n * t)))
    done = 0
    while done < n_epochs:
        e = min(batch, n_epochs - done)
        theta = np.empty((n, e, t))
        for i, prof in enumerate(lic):
            theta[i] = rng.normal(prof.mu_theta, prof.sigma_theta, (e, t))
        for j, prof in enumerate(unl):
            theta[n_l + j] = rng.normal(prof.mu_theta, prof.sigma_theta, (e, t))
        x = np.maximum(theta, 0.0)

        served_lc_slots = np.minimum(x[:n_l], cap)
        x_epoch = served_lc_slots.sum(axis=2)
        eps_r = rng.standard_normal((n_l, e))
        eps_v = rng.standard_normal((n_l, e))
        with np.errstate(invalid="ignore", divide="ignore"):
            std_x = np.where(sd_x[:, None] > 0,
                             (x_epoch - mu_x[:, None]) / sd_x[:, None], 0.0)
        r_epoch = (mu_r[:, None] + rho[:, None] * sd_r[:, None] * std_x
                   + sd_r[:, None] * np.sqrt(1.0 - rho[:, None] ** 2) * eps_r)
        v_epoch = (mu_r[:, None] + omega[:, None] * (r_epoch - mu_r[:, None])
                   + sd_r[:, None] * np.sqrt(1.0 - omega[:, None] ** 2) * eps_v)

        win = np.zeros((n_l, e), dtype=bool)
        if n_l and p_eff:
            top = np.argsort(-v_epoch, axis=0, kind="stable")[:p_eff]
            win[top, np.arange(e)[None, :]] = True

        win_slots = win[:, :, None]
        u_lc = (served_lc_slots * win_slots).sum(axis=0)

        if interweave:
            resid = np.where(x[:n_l] == 0.0, params.alpha_l * cap, 0.0)
        else:
            resid = params.alpha_l * np.maximum(cap - x[:n_l], 0.0)
        pool = (params.alpha_u * (params.m - p_eff) * cap
                + (resid * win_slots).sum(axis=0))

        shaped = np.where(
            np.concatenate([win_slots, np.zeros((n_u, e, 1), dtype=bool)], axis=0),
            params.phi * np.maximum(x - cap, 0.0),
            x,
        )
        alloc = np.empty_like(shaped)
        for ei in range(e):
            alloc[:, ei, :] = _waterfill_columns(pool[ei], shaped[:, ei, :])

        per_epoch_u[done:done + e] = (u_lc + alloc.sum(axis=0)).mean(axis=1)
        rev_sum += np.where(win, r_epoch, 0.0).sum(axis=1)
        op_sum += alloc.mean(axis=2).sum(axis=1)
        done += e

    u_mean = float(per_epoch_u.mean())
    u_se = float(per_epoch_u.std(ddof=1) / math.sqrt(n_epochs))
    rev_mean = {prof.id: float(rev_sum[i] / n_epochs) for i, prof in enumerate(lic)}
    ids = [*(p.id for p in lic), *(p.id for p in unl)]
    op_mean = {op_id: float(op_sum[k] / n_epochs) for k, op_id in enumerate(ids)}
    return u_mean, u_se, rev_mean, op_mean


# ---------------------------------------------------------------------------
# Batch statistics
# ---------------------------------------------------------------------------

def batch_mean(samples: Sequence[float]) -> float:
    return float(np.mean(np.asarray(samples, dtype=float)))


def batch_var_unbiased(samples: Sequence[float]) -> float:
    arr = np.asarray(samples, dtype=float)
    if arr.size < 2:
        return 0.0
    return float(arr.var(ddof=1))


def batch_var_biased(samples: Sequence[float]) -> float:
    arr = np.asarray(samples, dtype=float)
    if arr.size < 2:
        return 0.0
    return float(arr.var(ddof=0))
