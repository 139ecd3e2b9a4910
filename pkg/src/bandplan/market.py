"""Operator, market, and demand-model primitives.

The market consists of candidate licensed and candidate unlicensed wireless
operators sharing a band that a regulator splits into ``m`` equal channels,
``p`` of which are licensed.  Each operator's per-slot latent demand is
Gaussian; realized demand is its positive part, and demand served over a
licensed channel is additionally clipped at the channel capacity ``d_total/m``.

This module holds the immutable data types plus the closed/clipped Gaussian
moment machinery:

* :func:`licensed_served_moments` computes the per-slot and per-epoch moments
  of the clipped demand via numerical quadrature with analytic Gaussian tails.
* :func:`joint_sampler_params` assembles the mean and covariance of the
  trivariate Gaussian (latent demand, licensed-epoch revenue, auction bid)
  that drives the Monte Carlo estimator, and caches a factor of the
  covariance for sampling.
* :func:`sample_joint` draws one (demand, revenue, bid) triple from an
  explicitly supplied random stream.

All types are frozen dataclasses and safe to share across threads; nothing
here touches global random state.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np
from scipy.integrate import quad
from scipy.special import erf, erfc

__all__ = [
    "IllConditioned",
    "OperatorProfile",
    "MarketParams",
    "MarketScenario",
    "LicensedMoments",
    "JointSamplerParams",
    "licensed_served_moments",
    "joint_sampler_params",
    "sample_joint",
    "prob_negative_served",
    "scenario_from_dict",
    "scenario_to_dict",
    "params_from_dict",
    "params_to_dict",
    "load_market_file",
]

OSA_OVERLAY = "overlay"
OSA_INTERWEAVE = "interweave"

_SQRT_2PI = math.sqrt(2.0 * math.pi)
# Gaussian mass beyond 40 standard deviations is ~1e-350, far below the
# 1e-10 relative accuracy target, so quadrature windows are clipped there.
_Z_CLIP = 40.0


class IllConditioned(ValueError):
    """Covariance assembled from inconsistent correlation inputs is not PSD."""


@dataclass(frozen=True)
class OperatorProfile:
    """Stochastic description of one operator.

    Parameters
    ----------
    id : int
        Unique operator index.
    mu_theta, sigma_theta : float
        Mean and standard deviation of the latent per-slot demand.  Realized
        demand is ``max(0, theta)``.
    revenue_slope : float
        Revenue earned per unit of expected demand served in an epoch.  The
        revenue map is affine through the origin; it is isolated behind
        :meth:`revenue_of_served` so an alternative monotone map can be
        swapped in without touching callers.
    revenue_cv : float
        Coefficient of variation of epoch revenue: the revenue standard
        deviation is ``revenue_cv`` times the mean epoch revenue.
    rho : float
        Correlation between demand served and revenue in an epoch, in [0, 1).
    omega : float
        Correlation between an operator's auction bid and its licensed-epoch
        revenue, in [0, 1).
    mer_fraction : float
        Minimum expected revenue requirement, expressed as a fraction of the
        revenue the operator would earn if it served its full mean demand in
        every slot of an epoch.
    """

    id: int
    mu_theta: float
    sigma_theta: float
    revenue_slope: float
    revenue_cv: float
    rho: float
    omega: float
    mer_fraction: float

    def __post_init__(self) -> None:
        if self.id < 0:
            raise ValueError(f"operator id must be >= 0, got {self.id}")
        for name in ("mu_theta", "sigma_theta", "revenue_slope", "revenue_cv",
                     "rho", "omega", "mer_fraction"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ValueError(f"operator {self.id}: {name} must be finite, got {v}")
        if self.sigma_theta <= 0:
            raise ValueError(f"operator {self.id}: sigma_theta must be > 0")
        if self.revenue_slope <= 0:
            raise ValueError(f"operator {self.id}: revenue_slope must be > 0")
        if self.revenue_cv < 0:
            raise ValueError(f"operator {self.id}: revenue_cv must be >= 0")
        if not 0.0 <= self.rho < 1.0:
            raise ValueError(f"operator {self.id}: rho must be in [0, 1)")
        if not 0.0 <= self.omega < 1.0:
            raise ValueError(f"operator {self.id}: omega must be in [0, 1)")
        if not 0.0 <= self.mer_fraction <= 1.0:
            raise ValueError(f"operator {self.id}: mer_fraction must be in [0, 1]")

    def revenue_of_served(self, mean_served_epoch: float) -> float:
        """Expected epoch revenue for a given expected demand served."""
        return self.revenue_slope * mean_served_epoch

    def mer(self, t_slots: int) -> float:
        """Minimum expected revenue per epoch required to join the market."""
        return self.mer_fraction * self.revenue_slope * self.mu_theta * t_slots


@dataclass(frozen=True)
class MarketParams:
    """Regulator-controlled and environmental market parameters.

    ``bandwidth_hz`` is descriptive metadata only; every computation is
    driven by the demand-unit capacity ``d_total``.
    """

    m: int
    p: int
    t_slots: int
    d_total: float
    phi: int
    alpha_l: float
    alpha_u: float
    osa: str
    bandwidth_hz: float | None = None

    def __post_init__(self) -> None:
        if self.m < 1:
            raise ValueError(f"m must be >= 1, got {self.m}")
        if not 0 <= self.p <= self.m:
            raise ValueError(f"p must be in [0, m], got p={self.p}, m={self.m}")
        if self.t_slots < 1:
            raise ValueError(f"t_slots must be >= 1, got {self.t_slots}")
        if not (math.isfinite(self.d_total) and self.d_total > 0):
            raise ValueError(f"d_total must be positive and finite, got {self.d_total}")
        if self.phi not in (0, 1):
            raise ValueError(f"phi must be 0 or 1, got {self.phi}")
        for name in ("alpha_l", "alpha_u"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.osa not in (OSA_OVERLAY, OSA_INTERWEAVE):
            raise ValueError(f"osa must be 'overlay' or 'interweave', got {self.osa!r}")

    @property
    def channel_capacity(self) -> float:
        """Per-slot capacity of one channel under licensed use."""
        return self.d_total / self.m


@dataclass(frozen=True)
class MarketScenario:
    """The candidate operators, split by the access type they would buy."""

    licensed: tuple[OperatorProfile, ...]
    unlicensed: tuple[OperatorProfile, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "licensed",
                           tuple(sorted(self.licensed, key=lambda o: o.id)))
        object.__setattr__(self, "unlicensed",
                           tuple(sorted(self.unlicensed, key=lambda o: o.id)))
        lic = {o.id for o in self.licensed}
        unl = {o.id for o in self.unlicensed}
        if len(lic) != len(self.licensed) or len(unl) != len(self.unlicensed):
            raise ValueError("duplicate operator ids within a candidate set")
        overlap = lic & unl
        if overlap:
            raise ValueError(f"candidate sets must be disjoint; shared ids {sorted(overlap)}")

    @property
    def licensed_ids(self) -> frozenset[int]:
        return frozenset(o.id for o in self.licensed)

    @property
    def unlicensed_ids(self) -> frozenset[int]:
        return frozenset(o.id for o in self.unlicensed)

    def all_profiles(self) -> tuple[OperatorProfile, ...]:
        return self.licensed + self.unlicensed

    def profile(self, op_id: int) -> OperatorProfile:
        for o in self.licensed + self.unlicensed:
            if o.id == op_id:
                return o
        raise KeyError(f"no candidate operator with id {op_id}")

    def with_profiles(self, estimates: Mapping[int, OperatorProfile]) -> "MarketScenario":
        """Rebuild the scenario substituting each candidate's profile.

        The licensed/unlicensed partition is kept from this scenario; only
        the stochastic parameters change.  Every candidate id must appear in
        ``estimates`` and estimated ids must match their slot.
        """
        def swap(ops: tuple[OperatorProfile, ...]) -> tuple[OperatorProfile, ...]:
            out = []
            for o in ops:
                if o.id not in estimates:
                    raise ValueError(f"no profile estimate supplied for operator {o.id}")
                est = estimates[o.id]
                if est.id != o.id:
                    raise ValueError(f"estimate keyed {o.id} carries id {est.id}")
                out.append(est)
            return tuple(out)

        return MarketScenario(licensed=swap(self.licensed), unlicensed=swap(self.unlicensed))


@dataclass(frozen=True)
class LicensedMoments:
    """Moments of demand served over an operator's own licensed channel.

    Per-slot values describe ``min(max(0, theta), cap)``; epoch values are
    the per-slot values aggregated over ``t_slots`` slots (mean scales by T,
    standard deviation by sqrt(T)).  ``phi_k`` is the covariance between the
    latent slot demand and the epoch total served, which reduces to the
    single-slot covariance because slots are independent.
    """

    mu_x_lc_slot: float
    sigma_x_lc_slot: float
    mu_x_lc_epoch: float
    sigma_x_lc_epoch: float
    phi_k: float


@dataclass(frozen=True, eq=False)
class JointSamplerParams:
    """Mean, covariance, and cached factor for the (demand, revenue, bid) draw.

    ``chol`` is a lower-triangular factor L with ``L @ L.T == sigma``; it is
    valid for singular positive-semidefinite covariances as well (zero rows
    and columns where a coordinate is deterministic).
    """

    psi: np.ndarray
    sigma: np.ndarray
    chol: np.ndarray

    def __post_init__(self) -> None:
        psi = np.asarray(self.psi, dtype=np.float64).reshape(3)
        sigma = np.asarray(self.sigma, dtype=np.float64).reshape(3, 3)
        chol = np.asarray(self.chol, dtype=np.float64).reshape(3, 3)
        if not np.array_equal(sigma, sigma.T):
            raise ValueError("sigma must be exactly symmetric")
        if sigma[1, 1] != sigma[2, 2]:
            raise ValueError("bid variance must equal licensed revenue variance")
        for a in (psi, sigma, chol):
            a.setflags(write=False)
        object.__setattr__(self, "psi", psi)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "chol", chol)


def _clipped_gaussian_integrals(mu: float, sd: float, cap: float) -> tuple[float, float]:
    """First and second moments of theta restricted to [0, cap].

    The integrals are evaluated by adaptive Gauss-Kronrod quadrature in the
    standardized variable z = (theta - mu)/sd, which stays well conditioned
    for arbitrarily small sd.  Mass beyond ``_Z_CLIP`` standard deviations
    is negligible relative to the accuracy target and is dropped.
    """
    z_lo = max((0.0 - mu) / sd, -_Z_CLIP)
    z_hi = min((cap - mu) / sd, _Z_CLIP)
    if z_lo >= z_hi:
        return 0.0, 0.0

    def _phi(z: float) -> float:
        return math.exp(-0.5 * z * z) / _SQRT_2PI

    i1 = quad(lambda z: (mu + sd * z) * _phi(z), z_lo, z_hi,
              epsabs=1e-14, epsrel=1e-12, limit=200)[0]
    i2 = quad(lambda z: (mu + sd * z) ** 2 * _phi(z), z_lo, z_hi,
              epsabs=1e-14, epsrel=1e-12, limit=200)[0]
    return i1, i2


def licensed_served_moments(profile: OperatorProfile, params: MarketParams) -> LicensedMoments:
    """Moments of per-slot demand served via an operator's licensed channel.

    The served demand is the latent Gaussian demand clipped below at 0 and
    above at the channel capacity.  The clipped-region integrals use
    adaptive quadrature; the upper Gaussian tail contributions are analytic
    (error-function and density terms), so no tail is truncated numerically.
    """
    cap = params.channel_capacity
    if not (math.isfinite(cap) and cap > 0):
        raise ValueError(f"channel capacity must be positive, got {cap}")
    mu, sd = profile.mu_theta, profile.sigma_theta

    i1, i2 = _clipped_gaussian_integrals(mu, sd, cap)

    z_cap = (cap - mu) / sd
    tail0 = 0.5 * erfc(z_cap / math.sqrt(2.0))          # P[theta > cap]
    pdf_cap = math.exp(-0.5 * z_cap * z_cap) / (sd * _SQRT_2PI)
    tail1 = mu * tail0 + sd * sd * pdf_cap              # E[theta; theta > cap]

    mu_slot = i1 + cap * tail0
    mu_slot = min(max(mu_slot, 0.0), cap)
    var_slot = i2 + cap * cap * tail0 - mu_slot * mu_slot
    var_slot = max(var_slot, 0.0)
    sigma_slot = math.sqrt(var_slot)
    # Covariance of theta with its clipped image; nonnegative because
    # clipping is nondecreasing, so floating-point residue is floored at 0.
    phi_k = max(i2 + cap * tail1 - mu * mu_slot, 0.0)

    t = params.t_slots
    return LicensedMoments(
        mu_x_lc_slot=mu_slot,
        sigma_x_lc_slot=sigma_slot,
        mu_x_lc_epoch=mu_slot * t,
        sigma_x_lc_epoch=sigma_slot * math.sqrt(t),
        phi_k=phi_k,
    )


def _factor_psd(sigma: np.ndarray) -> np.ndarray:
    """Lower-triangular factor of a (possibly singular) PSD matrix.

    Strategy: plain Cholesky; on failure add one diagonal jitter of
    1e-12 * trace / 3 and retry; on a second failure fall back to a
    zero-pivot Cholesky that tolerates exact singularity, guarded by an
    eigenvalue check so genuinely indefinite input raises
    :class:`IllConditioned`.
    """
    try:
        return np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        pass
    tr = float(np.trace(sigma))
    if tr > 0.0:
        jittered = sigma + np.eye(3) * (1e-12 * tr / 3.0)
        try:
            return np.linalg.cholesky(jittered)
        except np.linalg.LinAlgError:
            pass
    eig_min = float(np.linalg.eigvalsh(sigma)[0])
    if eig_min < -1e-9 * max(tr, 1e-300):
        raise IllConditioned(
            f"covariance is not positive semidefinite (min eigenvalue {eig_min:g}, "
            f"trace {tr:g}); demand/revenue/bid correlations are inconsistent"
        )
    n = sigma.shape[0]
    low = np.zeros_like(sigma)
    scale = float(np.max(np.abs(np.diag(sigma)))) or 1.0
    for j in range(n):
        d = sigma[j, j] - float(low[j, :j] @ low[j, :j])
        if d <= 1e-14 * scale:
            continue  # deterministic coordinate: whole column stays zero
        low[j, j] = math.sqrt(d)
        for i in range(j + 1, n):
            low[i, j] = (sigma[i, j] - float(low[i, :j] @ low[j, :j])) / low[j, j]
    return low


def joint_sampler_params(
    profile: OperatorProfile,
    params: MarketParams,
    moments: LicensedMoments,
) -> JointSamplerParams:
    """Assemble the trivariate (demand, revenue, bid) Gaussian for one operator.

    The mean vector is (mu_theta, mu_R, mu_R): bid and licensed-epoch
    revenue share the mean revenue ``h(mu_x_lc_epoch)``.  Off-diagonal
    covariance entries couple demand to revenue through the clipped-demand
    covariance ``phi_k`` rescaled by ``rho * sigma_R / sigma_X``, and the
    bid inherits that coupling attenuated by ``omega``.  When the served
    demand is deterministic (``sigma_x_lc_epoch == 0``) the rescaling is a
    0/0 limit whose value is 0, so the demand row decouples.
    """
    mu_r = profile.revenue_of_served(moments.mu_x_lc_epoch)
    sigma_r = profile.revenue_cv * mu_r
    sigma_x = moments.sigma_x_lc_epoch
    if sigma_x > 0.0:
        cov_tr = profile.rho * (sigma_r / sigma_x) * moments.phi_k
    else:
        cov_tr = 0.0
    cov_tv = profile.omega * cov_tr
    cov_rv = profile.omega * sigma_r * sigma_r
    sigma = np.array(
        [
            [profile.sigma_theta ** 2, cov_tr, cov_tv],
            [cov_tr, sigma_r ** 2, cov_rv],
            [cov_tv, cov_rv, sigma_r ** 2],
        ],
        dtype=np.float64,
    )
    chol = _factor_psd(sigma)
    psi = np.array([profile.mu_theta, mu_r, mu_r], dtype=np.float64)
    return JointSamplerParams(psi=psi, sigma=sigma, chol=chol)


def sample_joint(sampler: JointSamplerParams, rng: np.random.Generator) -> tuple[float, float, float]:
    """One (latent demand, licensed revenue, bid) draw from the given stream."""
    z = rng.standard_normal(3)
    v = sampler.psi + sampler.chol @ z
    return float(v[0]), float(v[1]), float(v[2])


def prob_negative_served(moments: LicensedMoments) -> float:
    """Probability that the Gaussian epoch-total served demand is negative.

    The epoch total is nonnegative by construction; its Gaussian
    approximation can dip below zero, and this tail probability diagnoses
    how benign that approximation is for the given lease length.
    """
    if moments.sigma_x_lc_slot <= 0.0:
        raise ValueError("sigma_x_lc_slot must be > 0 for the tail diagnostic")
    z = moments.mu_x_lc_epoch / (math.sqrt(2.0) * moments.sigma_x_lc_epoch)
    return 0.5 * (1.0 + erf(-z))


# ---------------------------------------------------------------------------
# JSON interchange
#
# A market file is a single JSON object:
#   {"operators": [{...}, ...], "market": {...}}
# Each operator carries: id, access ("licensed" | "unlicensed"), mu_theta,
# sigma_theta, revenue_slope, revenue_cv, rho, omega, mer_fraction.
# The market object carries: m, p, t_slots, d_total, phi, alpha_l, alpha_u,
# osa, and optional bandwidth_hz.  All floating values are 64-bit.
# ---------------------------------------------------------------------------

_OPERATOR_FIELDS = ("mu_theta", "sigma_theta", "revenue_slope", "revenue_cv",
                    "rho", "omega", "mer_fraction")


def _profile_from_dict(d: Mapping) -> OperatorProfile:
    missing = [k for k in ("id", *_OPERATOR_FIELDS) if k not in d]
    if missing:
        raise ValueError(f"operator entry missing fields {missing}")
    return OperatorProfile(
        id=int(d["id"]),
        **{k: float(d[k]) for k in _OPERATOR_FIELDS},
    )


def _profile_to_dict(o: OperatorProfile, access: str) -> dict:
    d: dict = {"id": o.id, "access": access}
    d.update({k: float(getattr(o, k)) for k in _OPERATOR_FIELDS})
    return d


def scenario_from_dict(doc: Mapping) -> MarketScenario:
    ops = doc.get("operators")
    if not isinstance(ops, list):
        raise ValueError("market document needs an 'operators' array")
    lic, unl = [], []
    for entry in ops:
        access = entry.get("access")
        if access == "licensed":
            lic.append(_profile_from_dict(entry))
        elif access == "unlicensed":
            unl.append(_profile_from_dict(entry))
        else:
            raise ValueError(
                f"operator {entry.get('id')}: access must be 'licensed' or "
                f"'unlicensed', got {access!r}"
            )
    return MarketScenario(licensed=tuple(lic), unlicensed=tuple(unl))


def scenario_to_dict(scenario: MarketScenario) -> dict:
    return {
        "operators": [
            *(_profile_to_dict(o, "licensed") for o in scenario.licensed),
            *(_profile_to_dict(o, "unlicensed") for o in scenario.unlicensed),
        ]
    }


def params_from_dict(d: Mapping) -> MarketParams:
    required = ("m", "p", "t_slots", "d_total", "phi", "alpha_l", "alpha_u", "osa")
    missing = [k for k in required if k not in d]
    if missing:
        raise ValueError(f"market entry missing fields {missing}")
    bw = d.get("bandwidth_hz")
    return MarketParams(
        m=int(d["m"]),
        p=int(d["p"]),
        t_slots=int(d["t_slots"]),
        d_total=float(d["d_total"]),
        phi=int(d["phi"]),
        alpha_l=float(d["alpha_l"]),
        alpha_u=float(d["alpha_u"]),
        osa=str(d["osa"]),
        bandwidth_hz=None if bw is None else float(bw),
    )


def params_to_dict(p: MarketParams) -> dict:
    return {
        "m": p.m,
        "p": p.p,
        "t_slots": p.t_slots,
        "d_total": p.d_total,
        "phi": p.phi,
        "alpha_l": p.alpha_l,
        "alpha_u": p.alpha_u,
        "osa": p.osa,
        "bandwidth_hz": p.bandwidth_hz,
    }


def load_market_file(path) -> tuple[MarketScenario, MarketParams]:
    """Read a scenario-plus-parameters JSON document from disk."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if "market" not in doc:
        raise ValueError(f"{path}: market document needs a 'market' object")
    return scenario_from_dict(doc), params_from_dict(doc["market"])
