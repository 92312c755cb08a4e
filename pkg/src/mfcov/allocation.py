"""Generalized moments, MSE formulas and optimal budget allocation.

The multi-fidelity MSE depends on the hierarchy only through the generalized
variances ``sigma_l^2 = E||y y^T - Sigma_l||_F^2`` and the generalized
correlations ``rho_l`` between level-0 and level-l outer products.
"""

import enum
import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .estimators import CoupledSampleHierarchy, MeanMode
from .exceptions import (
    BudgetError,
    DegenerateCorrelationError,
    OrderingError,
)
from .spd import as_spd

__all__ = [
    "MomentSummary",
    "CostModel",
    "Rounding",
    "AllocationPlan",
    "BenefitCheck",
    "estimate_moments",
    "closed_form_moments_gaussian",
    "optimal_coefficients",
    "predicted_mse",
    "optimal_allocation",
    "first_order_optimal_mse",
    "benefit_condition",
    "bifidelity_condition_forms",
    "predicted_speedup",
]


@dataclass(frozen=True)
class MomentSummary:
    """Generalized standard deviations ``sigma`` (length L+1) and
    correlations ``rho`` (length L+2, with ``rho[0] = 1`` and
    ``rho[L+1] = 0``)."""

    sigma: np.ndarray
    rho: np.ndarray

    def __post_init__(self):
        sigma = np.atleast_1d(np.asarray(self.sigma, dtype=float))
        rho = np.atleast_1d(np.asarray(self.rho, dtype=float))
        if sigma.ndim != 1 or sigma.size < 1:
            raise ValueError("sigma must be a nonempty 1-D sequence")
        if rho.shape != (sigma.size + 1,):
            raise ValueError(
                f"rho must have length L+2 = {sigma.size + 1}, got {rho.size}"
            )
        if rho[0] != 1.0 or rho[-1] != 0.0:
            raise ValueError("rho[0] must be exactly 1 and rho[L+1] exactly 0")
        if np.any(np.abs(rho) > 1.0):
            raise ValueError("correlations must lie in [-1, 1]")
        if np.any(~(sigma > 0)):
            raise ValueError("generalized standard deviations must be positive")
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "rho", rho)

    @classmethod
    def from_correlations(cls, sigma, correlations):
        """Build from ``sigma_0..sigma_L`` and ``rho_1..rho_L`` only."""
        return cls(sigma, np.concatenate([[1.0], np.asarray(correlations, float), [0.0]]))

    @property
    def num_levels(self):
        return self.sigma.size

    @property
    def monotone_fidelity(self):
        """Whether ``|rho_1| >= ... >= |rho_L|`` holds."""
        r = np.abs(self.rho[1:-1])
        return bool(np.all(r[:-1] >= r[1:])) if r.size > 1 else True

    def select(self, levels):
        """Moments of the sub-hierarchy with the given level indices (0 first)."""
        levels = list(levels)
        if not levels or levels[0] != 0:
            raise ValueError("level 0 must be part of every sub-hierarchy")
        return MomentSummary(self.sigma[levels], np.append(self.rho[levels], 0.0))

    def to_dict(self):
        return {
            "sigma": self.sigma.tolist(),
            "rho": self.rho.tolist(),
            "monotone_fidelity": self.monotone_fidelity,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(data["sigma"], data["rho"])


@dataclass(frozen=True)
class CostModel:
    """Per-sample costs ``c_0 >= c_1 >= ... >= c_L > 0``."""

    costs: np.ndarray

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.costs, dtype=float))
        if c.ndim != 1 or c.size < 1:
            raise ValueError("costs must be a nonempty 1-D sequence")
        if np.any(~(c > 0)):
            raise ValueError("costs must be strictly positive")
        if np.any(np.diff(c) > 0):
            warnings.warn(
                "costs are not nonincreasing across levels; surrogates cost more "
                "than the models they approximate",
                stacklevel=3,
            )
        object.__setattr__(self, "costs", c)

    def __len__(self):
        return self.costs.size

    def total(self, n):
        return float(np.dot(np.asarray(n, dtype=float), self.costs))


class Rounding(enum.Enum):
    FLOOR = "floor"
    CEIL = "ceil"
    NONE = "none"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        if value is None:
            return cls.NONE
        return cls(str(value).lower())


@dataclass(frozen=True)
class AllocationPlan:
    """Control-variate weights and per-level sample counts.

    ``n_real`` is the unrounded optimum; ``n`` the integer counts actually
    used. Levels with ``n[l] == 0`` are dropped from the estimator.
    """

    alphas: np.ndarray
    n_real: np.ndarray
    n: np.ndarray
    realized_cost: float
    predicted_mse: float
    budget: float = math.nan
    rounding: str = "floor"
    active_levels: tuple = field(default=())

    def to_dict(self):
        return {
            "alphas": np.asarray(self.alphas).tolist(),
            "n_real": np.asarray(self.n_real).tolist(),
            "n": [int(v) for v in self.n],
            "realized_cost": self.realized_cost,
            "predicted_mse": self.predicted_mse,
            "budget": self.budget,
            "rounding": self.rounding,
            "active_levels": list(self.active_levels),
        }

    @classmethod
    def from_dict(cls, data):
        n = np.asarray(data["n"], dtype=int)
        active = data.get("active_levels") or [0] + [i for i in range(1, n.size) if n[i] > 0]
        return cls(
            alphas=np.asarray(data["alphas"], dtype=float),
            n_real=np.asarray(data["n_real"], dtype=float),
            n=n,
            realized_cost=float(data["realized_cost"]),
            predicted_mse=float(data["predicted_mse"]),
            budget=float(data.get("budget", math.nan)),
            rounding=data.get("rounding", "floor"),
            active_levels=tuple(int(i) for i in active),
        )

    def active_alphas(self):
        """Weights of the retained surrogate levels, in level order."""
        return np.asarray([self.alphas[i - 1] for i in self.active_levels[1:]])

    def active_counts(self):
        return [int(self.n[i]) for i in self.active_levels]


class BenefitCheck(NamedTuple):
    holds: bool
    lhs: float


# ---------------------------------------------------------------------------
# moments


def _outer_products(Y):
    return np.einsum("ni,nj->nij", Y, Y)


def estimate_moments(h, mode=MeanMode.KNOWN_ZERO, chunk=20000):
    """Pilot estimates of the generalized variances and correlations.

    Outer products are centered by their empirical mean and the sums are
    normalized by ``m - 1``. In the centered modes the vectors are centered by
    their sample mean before forming outer products. ``rho_l`` pairs the
    first ``min(n_0, n_l)`` events and is clamped to ``[-1, 1]``.
    """
    if not isinstance(h, CoupledSampleHierarchy):
        h = CoupledSampleHierarchy(tuple(h))
    mode = MeanMode.parse(mode)
    m = min(h.counts)
    if m < 2:
        raise ValueError(f"fewer than 2 paired events (got {m}); pilot needs n >= 2")

    def centered(Y):
        return Y - Y.mean(axis=0) if mode.centered else Y

    levels = [centered(h.samples[l][: h.counts[l]]) for l in range(h.num_levels)]
    # mean outer products, per level over all of its samples and over the pairing
    means_full = [Y.T @ Y / Y.shape[0] for Y in levels]
    paired = [Y[:m] for Y in levels]
    means_paired = [Y.T @ Y / m for Y in paired]

    def var(Y, M):
        tot = 0.0
        for s in range(0, Y.shape[0], chunk):
            dev = _outer_products(Y[s : s + chunk]) - M
            tot += float(np.sum(dev * dev))
        return tot / (Y.shape[0] - 1)

    def cov(Y0, M0, Y1, M1):
        tot = 0.0
        for s in range(0, Y0.shape[0], chunk):
            d0 = _outer_products(Y0[s : s + chunk]) - M0
            d1 = _outer_products(Y1[s : s + chunk]) - M1
            tot += float(np.sum(d0 * d1))
        return tot / (Y0.shape[0] - 1)

    sigma = np.sqrt([var(Y, M) for Y, M in zip(levels, means_full)])
    if np.any(sigma <= 0):
        raise ValueError("a level has zero generalized variance")
    sigma0_paired = math.sqrt(var(paired[0], means_paired[0]))
    rho = [1.0]
    for l in range(1, h.num_levels):
        sl = math.sqrt(var(paired[l], means_paired[l]))
        c = cov(paired[0], means_paired[0], paired[l], means_paired[l])
        rho.append(float(np.clip(c / (sigma0_paired * sl), -1.0, 1.0)))
    rho.append(0.0)
    return MomentSummary(sigma, np.asarray(rho))


def closed_form_moments_gaussian(Sigma, Gammas):
    """Exact moments of the noise-corrupted Gaussian hierarchy.

    ``y_l = y + eps_l`` with ``y ~ N(0, Sigma)`` and independent
    ``eps_l ~ N(0, Gamma_l)`` gives ``sigma_l^2 = Tr(S_l^2) + Tr(S_l)^2`` with
    ``S_l = Sigma + Gamma_l``, and ``rho_l = sigma_0 / sigma_l``.
    """
    Sigma = as_spd(Sigma)
    covs = [Sigma]
    for G in Gammas:
        G = np.asarray(G, dtype=float)
        if G.shape != Sigma.shape:
            raise ValueError(f"dimension mismatch: Gamma {G.shape} vs Sigma {Sigma.shape}")
        covs.append(Sigma + G)
    sigma = np.sqrt([np.trace(S @ S) + np.trace(S) ** 2 for S in covs])
    return MomentSummary.from_correlations(sigma, sigma[0] / sigma[1:])


# ---------------------------------------------------------------------------
# MSE and allocation


def optimal_coefficients(m):
    """``alpha_l = rho_l sigma_0 / sigma_l`` for ``l = 1..L``."""
    if np.any(m.sigma[1:] == 0):
        raise ValueError("sigma_l = 0: coefficient undefined")
    return m.rho[1:-1] * m.sigma[0] / m.sigma[1:]


def predicted_mse(m, n, alphas):
    """``sigma_0^2/n_0 + sum_l (1/n_{l-1} - 1/n_l)(a_l^2 s_l^2 - 2 a_l rho_l s_l s_0)``.

    Exact Frobenius MSE of the EMF estimator (known zero mean) and the
    first-order log-Euclidean MSE of the LEMF estimator.
    """
    n = np.atleast_1d(np.asarray(n, dtype=float))
    alphas = np.atleast_1d(np.asarray(alphas, dtype=float))
    L = m.num_levels - 1
    if n.shape != (L + 1,):
        raise ValueError(f"need {L + 1} sample counts, got {n.size}")
    if alphas.size != L:
        raise ValueError(f"need {L} coefficients, got {alphas.size}")
    if np.any(~(n > 0)):
        raise ValueError("sample counts must be positive")
    if np.any(np.diff(n) < 0):
        raise ValueError("sample counts must be nondecreasing across levels")
    s, r = m.sigma, m.rho
    out = s[0] ** 2 / n[0]
    for l in range(1, L + 1):
        a = alphas[l - 1]
        out += (1.0 / n[l - 1] - 1.0 / n[l]) * (a * a * s[l] ** 2 - 2.0 * a * r[l] * s[l] * s[0])
    return float(out)


def _level_gaps(m):
    gaps = m.rho[:-1] ** 2 - m.rho[1:] ** 2
    bad = np.flatnonzero(gaps < 0)
    if bad.size:
        l = int(bad[0])
        raise OrderingError(
            f"|rho_{l + 1}| = {abs(m.rho[l + 1]):.4g} exceeds |rho_{l}| = {abs(m.rho[l]):.4g}; "
            "levels must be ordered by decreasing correlation. Re-sort the "
            "surrogates or merge/drop the offending level."
        )
    return gaps


def _check_costs(m, c):
    if not isinstance(c, CostModel):
        c = CostModel(c)
    if len(c) != m.num_levels:
        raise ValueError(f"need {m.num_levels} costs, got {len(c)}")
    return c


def _check_rho1(m):
    if m.num_levels > 1 and abs(m.rho[1]) >= 1.0:
        raise DegenerateCorrelationError(
            f"|rho_1| = {abs(m.rho[1])} >= 1; the surrogate is indistinguishable "
            "from the high-fidelity model and the allocation is undefined"
        )


def _unrounded_allocation(m, c, budget):
    gaps = _level_gaps(m)
    _check_rho1(m)
    costs = c.costs
    weights = np.sqrt(costs[0] * gaps / (costs * (1.0 - m.rho[1] ** 2)))
    return budget * weights / np.dot(costs, weights)


def _repair(n, costs, budget, rounding):
    """Drop empty surrogate levels, restore monotone counts, fit the budget."""
    n = n.astype(np.int64).copy()
    active = [0] + [l for l in range(1, n.size) if n[l] > 0]
    for prev, cur in zip(active[:-1], active[1:]):
        if n[cur] < n[prev]:
            n[cur] = n[prev]
    if rounding is Rounding.FLOOR:
        while np.dot(n, costs) > budget:
            vals = n[active]
            top = vals.max()
            group = [l for l in active if n[l] == top]
            lower = vals[vals < top]
            headroom = int(top - lower.max()) if lower.size else int(top) - 1
            # whole rounds of the one-at-a-time sweep over the tied maximum
            rounds = min(int((np.dot(n, costs) - budget) // costs[group].sum()), headroom)
            if rounds > 0:
                n[group] -= rounds
                continue
            k = group[0]  # first level holding the maximum
            n[k] -= 1
            if n[k] == 0:
                if k == 0:
                    raise BudgetError("budget cannot afford one high-fidelity sample")
                active.remove(k)
    return n, tuple(active)


def _clamp_base(n_real, costs, budget, min_hf):
    """Raise ``n_0`` to ``min_hf`` and rescale the surrogates to the leftover budget."""
    if n_real[0] >= min_hf:
        return n_real
    out = n_real.copy()
    out[0] = float(min_hf)
    rest = budget - min_hf * costs[0]
    spent = np.dot(costs[1:], n_real[1:])
    out[1:] = n_real[1:] * (rest / spent) if spent > 0 else 0.0
    return out


def optimal_allocation(m, c, budget, rounding=Rounding.FLOOR, min_hf_samples=1):
    """First-order optimal sample counts and weights for a budget.

    ``n_l* = B sqrt(c_0 (rho_l^2 - rho_{l+1}^2) / (c_l (1 - rho_1^2))) / sum_i
    c_i sqrt(...)``; weights from :func:`optimal_coefficients`.

    Rounding ``FLOOR`` keeps the realized cost within budget. After rounding,
    surrogate levels with zero samples are dropped, and a count smaller than
    its predecessor's is raised to match (then, under ``FLOOR``, the largest
    count is decremented until the plan is affordable). ``NONE`` reports the
    nearest integers but evaluates the MSE at the unrounded optimum.

    If the optimum puts fewer than ``min_hf_samples`` events on level 0
    (which happens when ``rho_1`` is very close to 1), ``n_0`` is raised to
    that minimum and the surrogate counts are scaled down to the remaining
    budget, keeping their optimal proportions. ``n_real`` then reports the
    clamped values.

    Raises
    ------
    BudgetError
        If ``budget < min_hf_samples * c_0``.
    DegenerateCorrelationError
        If ``|rho_1| >= 1``.
    OrderingError
        If ``rho_l^2 < rho_{l+1}^2`` for some level.
    """
    c = _check_costs(m, c)
    rounding = Rounding.parse(rounding)
    budget = float(budget)
    min_hf_samples = int(min_hf_samples)
    if min_hf_samples < 1:
        raise ValueError("min_hf_samples must be at least 1")
    if not budget >= c.costs[0]:
        raise BudgetError(
            f"budget cannot afford one high-fidelity sample (B = {budget:g} < c_0 = {c.costs[0]:g})"
        )
    if budget < min_hf_samples * c.costs[0]:
        raise BudgetError(
            f"budget {budget:g} cannot afford min_hf_samples = {min_hf_samples} "
            f"high-fidelity samples at c_0 = {c.costs[0]:g}"
        )
    n_real = _unrounded_allocation(m, c, budget)
    n_real = _clamp_base(n_real, c.costs, budget, min_hf_samples)
    alphas = optimal_coefficients(m)
    if rounding is Rounding.FLOOR:
        raw = np.floor(n_real)
    elif rounding is Rounding.CEIL:
        raw = np.ceil(n_real)
    else:
        raw = np.rint(n_real)
    if raw[0] < 1:
        raise BudgetError("budget cannot afford one high-fidelity sample")
    n, active = _repair(raw, c.costs, budget, rounding)
    if rounding is Rounding.NONE:
        keep = [0] + [l for l in range(1, n_real.size) if n_real[l] > 0]
        mse = predicted_mse(m.select(keep), n_real[keep], alphas[[l - 1 for l in keep[1:]]])
    else:
        mse = predicted_mse(
            m.select(active), n[list(active)], alphas[[l - 1 for l in active[1:]]]
        )
    return AllocationPlan(
        alphas=alphas,
        n_real=n_real,
        n=n,
        realized_cost=c.total(n),
        predicted_mse=mse,
        budget=budget,
        rounding=rounding.value,
        active_levels=active,
    )


def first_order_optimal_mse(m, c, budget):
    """``(sigma_0^2 / B) (sum_l sqrt(c_l (rho_l^2 - rho_{l+1}^2)))^2``."""
    c = _check_costs(m, c)
    gaps = _level_gaps(m)
    _check_rho1(m)
    return float(m.sigma[0] ** 2 / budget * np.sum(np.sqrt(c.costs * gaps)) ** 2)


def benefit_condition(m, c):
    """Whether the optimally allocated estimator beats plain Monte Carlo.

    Returns ``BenefitCheck(holds, lhs)`` with
    ``lhs = sum_{l=0}^{L} sqrt((c_l / c_0)(rho_l^2 - rho_{l+1}^2))`` and
    ``holds = lhs < 1``.
    """
    c = _check_costs(m, c)
    gaps = _level_gaps(m)
    _check_rho1(m)
    lhs = float(np.sum(np.sqrt(c.costs / c.costs[0] * gaps)))
    return BenefitCheck(lhs < 1.0, lhs)


def bifidelity_condition_forms(rho1, cost_ratio):
    """Both algebraic forms of the two-level benefit condition.

    Returns ``(sqrt(1 - rho^2) + sqrt(r rho^2) < 1,
    2 sqrt((1 - rho^2) / rho^2) < (1 - r) / sqrt(r))`` for ``r = c_1/c_0``.
    """
    rho2 = rho1 * rho1
    first = math.sqrt(1.0 - rho2) + math.sqrt(cost_ratio * rho2) < 1.0
    second = 2.0 * math.sqrt((1.0 - rho2) / rho2) < (1.0 - cost_ratio) / math.sqrt(cost_ratio)
    return first, second


def predicted_speedup(m, c):
    """Budget ratio plain-MC / multi-fidelity at equal first-order MSE."""
    return 1.0 / benefit_condition(m, c).lhs ** 2
