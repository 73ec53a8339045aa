"""Inverse-weighted intent-to-treat estimators used as comparators.

All three target the contrast in mean cumulative cost by *baseline*
treatment only: a complete-case estimator weighted by the inverse
Kaplan-Meier censoring survival, its partitioned per-interval version
that lets censored subjects contribute while observed, and the
propensity-weighted extension of the partitioned version. The estimating
equations are linear in the coefficients, so each solve is a closed-form
weighted least squares.

Weight convention: a subject observed to time t is weighted by the
left limit of the censoring survival at t, the estimate of
P(censoring time >= t). At tied times, censoring events are processed
before deaths leave the risk set.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InsufficientDataError, PositivityError, SingularDesignError
from .glm import FittedGlm, GlmSpec, fit_glm
from .panel import (
    Cohort,
    baseline_arrays,
    complete_case_flags,
    interval_cost_matrix,
)

__all__ = [
    "StepSurvival",
    "km_censoring_survival",
    "IttEstimate",
    "ipcw_complete_case",
    "partitioned_ipcw",
    "fit_propensity",
    "iptw_partitioned",
]


@dataclass(frozen=True)
class StepSurvival:
    """Right-continuous product-limit survival curve; 1 before the first
    jump and non-increasing afterwards."""

    jump_times: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)

    def at(self, t) -> np.ndarray:
        """S(t), including any jump exactly at t."""
        idx = np.searchsorted(self.jump_times, np.asarray(t, dtype=float), side="right")
        padded = np.concatenate(([1.0], self.values))
        return padded[idx]

    def left_limit(self, t) -> np.ndarray:
        """S(t-): the survival just before t, excluding a jump at t."""
        idx = np.searchsorted(self.jump_times, np.asarray(t, dtype=float), side="left")
        padded = np.concatenate(([1.0], self.values))
        return padded[idx]


def km_censoring_survival(times, censor_event) -> StepSurvival:
    """Kaplan-Meier estimate of the censoring-time survival P(T_C > t).

    ``censor_event`` marks censoring as the event of interest; observed
    deaths act as censorings of the censoring time.
    """
    x = np.asarray(times, dtype=float)
    e = np.asarray(censor_event, dtype=float)
    if len(x) < 1:
        raise ValueError("need at least one observation")
    if np.any(x < 0):
        raise ValueError("times must be non-negative")
    order = np.argsort(x, kind="stable")
    x, e = x[order], e[order]
    uniq, first = np.unique(x, return_index=True)
    n = len(x)
    jumps = []
    surv = []
    value = 1.0
    for t, start in zip(uniq, first):
        at_t = x == t
        d = float(e[at_t].sum())
        if d == 0:
            continue
        at_risk = n - start
        value *= 1.0 - d / at_risk
        jumps.append(t)
        surv.append(value)
    return StepSurvival(
        jump_times=np.asarray(jumps, dtype=float),
        values=np.asarray(surv, dtype=float),
    )


@dataclass(frozen=True)
class IttEstimate:
    """Closed-form solution of the weighted estimating equations.

    ``zeta`` is (intercept, treatment contrast, confounder coefficients);
    for partitioned methods it is the sum of the per-interval solutions
    and ``per_interval`` carries each interval's treatment contrast.
    """

    method: str
    delta_itt: float
    zeta: tuple[float, ...]
    per_interval: tuple[float, ...] | None = None

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "delta_itt": self.delta_itt,
            "zeta": list(self.zeta),
            "per_interval": None
            if self.per_interval is None
            else list(self.per_interval),
        }


def _itt_design(cohort: Cohort, confounders) -> np.ndarray:
    l1, a1 = baseline_arrays(cohort)
    if confounders is None:
        confounders = l1
    else:
        confounders = np.asarray(confounders, dtype=float)
        if confounders.ndim == 1:
            confounders = confounders[:, None]
        if len(confounders) != cohort.n_subjects:
            raise ValueError("confounder rows must match the cohort size")
    return np.column_stack([np.ones(cohort.n_subjects), a1, confounders])


def _solve_weighted(design, response, weights):
    xw = design * weights[:, None]
    gram = xw.T @ design
    if not np.all(np.isfinite(gram)) or np.linalg.cond(gram) > 1e12:
        raise SingularDesignError(
            f"weighted design with {design.shape[1]} columns is rank "
            "deficient or numerically singular"
        )
    return np.linalg.solve(gram, xw.T @ response)


def _censoring_weights(survival, times, ids, contributors):
    k = survival.left_limit(times[contributors])
    zero = k <= 0.0
    if np.any(zero):
        offenders = [ids[i] for i in np.flatnonzero(contributors)[zero][:5]]
        raise PositivityError(
            "zero censoring-survival weight for subjects " + ", ".join(offenders)
        )
    return 1.0 / k


def ipcw_complete_case(cohort: Cohort, confounders=None) -> IttEstimate:
    """Complete-case estimator: only fully observed subjects contribute,
    each weighted by the inverse censoring survival at their horizon
    time."""
    flags = complete_case_flags(cohort)
    survival = km_censoring_survival(flags.observed_time, ~flags.death_observed)
    design = _itt_design(cohort, confounders)
    totals = np.nansum(interval_cost_matrix(cohort), axis=1)
    contributors = flags.complete
    if not np.any(contributors):
        raise InsufficientDataError("no complete cases")
    w = _censoring_weights(survival, flags.horizon_time, flags.subject_ids, contributors)
    zeta = _solve_weighted(design[contributors], totals[contributors], w)
    return IttEstimate(
        method="complete_case",
        delta_itt=float(zeta[1]),
        zeta=tuple(float(v) for v in zeta),
    )


def _partitioned(cohort: Cohort, confounders, extra_weights=None) -> IttEstimate:
    flags = complete_case_flags(cohort)
    survival = km_censoring_survival(flags.observed_time, ~flags.death_observed)
    design = _itt_design(cohort, confounders)
    costs = interval_cost_matrix(cohort)
    grid = cohort.grid
    zeta_total = np.zeros(design.shape[1])
    per_interval = []
    for j in range(1, grid.n_intervals + 1):
        t_ij = np.minimum(flags.death_time, grid.boundary(j))
        contributors = flags.censor_time >= t_ij
        if not np.any(contributors):
            raise InsufficientDataError(f"interval {j}: no contributing subjects")
        w = _censoring_weights(survival, t_ij, flags.subject_ids, contributors)
        if extra_weights is not None:
            w = w * extra_weights[contributors]
        response = costs[contributors, j - 1]
        if np.any(np.isnan(response)):
            raise InsufficientDataError(
                f"interval {j}: contributing subject with unobserved cost"
            )
        try:
            zeta_j = _solve_weighted(design[contributors], response, w)
        except SingularDesignError as exc:
            raise SingularDesignError(f"interval {j}: {exc}") from exc
        zeta_total += zeta_j
        per_interval.append(float(zeta_j[1]))
    return IttEstimate(
        method="partitioned",
        delta_itt=float(zeta_total[1]),
        zeta=tuple(float(v) for v in zeta_total),
        per_interval=tuple(per_interval),
    )


def partitioned_ipcw(cohort: Cohort, confounders=None) -> IttEstimate:
    """Per-interval estimating equations summed over intervals, so a
    censored subject contributes every interval observed before
    censoring. With one interval this reduces exactly to the
    complete-case estimator."""
    return _partitioned(cohort, confounders)


def fit_propensity(cohort: Cohort) -> FittedGlm:
    """Baseline treatment propensity: logistic regression of treatment on
    baseline confounders."""
    l1, a1 = baseline_arrays(cohort)
    if a1.min() == a1.max():
        raise InsufficientDataError(
            "propensity model needs both treatment arms at baseline"
        )
    p = l1.shape[1]
    names = ("l1",) if p == 1 else tuple(f"l1_{k + 1}" for k in range(p))
    design = np.column_stack([np.ones(len(a1)), l1])
    return fit_glm(design, a1, GlmSpec("bernoulli", "logit", names))


def iptw_partitioned(
    cohort: Cohort, confounders=None, propensity: FittedGlm | None = None
) -> IttEstimate:
    """Partitioned estimator with inverse probability-of-treatment
    weights layered on the censoring weights."""
    if propensity is None:
        propensity = fit_propensity(cohort)
    l1, a1 = baseline_arrays(cohort)
    pi = propensity.predict(np.column_stack([np.ones(len(a1)), l1]))
    if np.any(pi <= 0.0) or np.any(pi >= 1.0):
        raise PositivityError("propensity estimates hit 0 or 1")
    tw = a1 / pi + (1.0 - a1) / (1.0 - pi)
    result = _partitioned(cohort, confounders, extra_weights=tw)
    return IttEstimate(
        method="iptw_partitioned",
        delta_itt=result.delta_itt,
        zeta=result.zeta,
        per_interval=result.per_interval,
    )
