"""Synthetic cohort generation and ground-truth potential-outcome means.

The default parameter values reproduce the benchmark longitudinal cost
process: a scalar normal confounder, logistic treatment and death, and an
interval cost whose family can differ by treatment arm. Censoring comes in
three mechanisms of increasing informativeness (constant-rate, baseline
driven, and concurrent-interval driven).

Within-interval ordering is (censoring, confounder, treatment, cost,
death). The concurrent-interval dropout mechanism conditions on the
interval's own confounder/treatment/cost, so generation draws those
variables first and applies censoring retroactively to the interval
start; a censored interval's draws are then discarded.

``true_values_oracle`` simulates potential worlds directly from the
generating parameters (treatment forced to a regime, censoring switched
off) and is the independent ground truth for bias and coverage studies;
it never touches the estimation engine.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import partial

import numpy as np

from ._parallel import parallel_map
from .errors import SimulationDomainError
from .gformula import FittedTriple, SequentialModelSet, default_model_spec
from .glm import FittedGlm, expit, sample_response
from .panel import Cohort, IntervalGrid, IntervalRecord, SubjectPanel
from .streams import substream

__all__ = [
    "ConfounderDynamics",
    "TreatmentAssignment",
    "CostDynamics",
    "DeathRisk",
    "CensoringMechanism",
    "no_censoring",
    "random_censoring",
    "staggered_entry_censoring",
    "nonrandom_dropout_censoring",
    "DgpConfig",
    "with_null_effect",
    "with_mixed_arm_families",
    "generate_cohort",
    "OracleResult",
    "true_values_oracle",
    "model_set_from_config",
]

_COST_FAMILIES = ("normal", "gamma", "inverse_gaussian")
_MECHANISMS = ("none", "random_p", "staggered_entry", "nonrandom_dropout")
MAX_REDRAWS = 100
MAX_ABORT_FRACTION = 1e-3


@dataclass(frozen=True)
class ConfounderDynamics:
    baseline_mean: float = 0.0
    baseline_var: float = 1.0
    intercept: float = -1.09
    on_prev_confounder: float = 0.5
    on_prev_treatment: float = 0.5
    on_prev_cost: float = 0.04
    var: float = 4.0


@dataclass(frozen=True)
class TreatmentAssignment:
    baseline_intercept: float = 0.0
    baseline_on_confounder: float = 1.0
    intercept: float = -1.34
    on_prev_confounder: float = 0.4
    on_cur_confounder: float = 0.6
    on_prev_treatment: float = 1.0
    on_prev_cost: float = 0.04


@dataclass(frozen=True)
class CostDynamics:
    """Interval cost means plus the per-arm response family.

    The family applies by the interval's own treatment value, so under a
    constant regime every draw on a path comes from that arm's family.
    """

    baseline_intercept: float = 20.0
    baseline_on_confounder: float = 1.0
    baseline_on_treatment: float = 2.0
    intercept: float = 10.65
    on_prev_confounder: float = 0.2
    on_cur_confounder: float = 0.4
    on_prev_treatment: float = 0.2
    on_cur_treatment: float = 0.4
    on_prev_cost: float = 0.05
    family_control: str = "normal"
    family_treated: str = "normal"
    normal_var: float = 2.0
    gamma_shape: float = 8.0
    inverse_gaussian_shape: float = 40.0

    def __post_init__(self):
        for family in (self.family_control, self.family_treated):
            if family not in _COST_FAMILIES:
                raise ValueError(f"unknown cost family {family!r}")

    def dispersion_for(self, family: str) -> float:
        if family == "normal":
            return self.normal_var
        if family == "gamma":
            return 1.0 / self.gamma_shape
        return 1.0 / self.inverse_gaussian_shape

    def family_for(self, arm: int) -> str:
        return self.family_treated if arm else self.family_control


@dataclass(frozen=True)
class DeathRisk:
    baseline_intercept: float = -5.0
    baseline_on_confounder: float = 0.3
    baseline_on_cost: float = 0.05
    intercept: float = -3.0
    on_prev_confounder: float = 0.1
    on_cur_confounder: float = 0.2
    on_cur_cost: float = 0.03


@dataclass(frozen=True)
class CensoringMechanism:
    mechanism: str = "none"
    rate: float = 0.05
    intercept: float = -3.5
    on_confounder: float = 0.25
    on_treatment: float = 0.5
    on_cost: float = 0.01

    def __post_init__(self):
        if self.mechanism not in _MECHANISMS:
            raise ValueError(
                f"unknown censoring mechanism {self.mechanism!r}; "
                f"expected one of {_MECHANISMS}"
            )
        if not 0.0 <= self.rate <= 1.0:
            raise ValueError("censoring rate must lie in [0, 1]")


def no_censoring() -> CensoringMechanism:
    return CensoringMechanism(mechanism="none")


def random_censoring(rate: float = 0.05) -> CensoringMechanism:
    return CensoringMechanism(mechanism="random_p", rate=rate)


def staggered_entry_censoring() -> CensoringMechanism:
    """Censoring driven by baseline covariates only."""
    return CensoringMechanism(
        mechanism="staggered_entry",
        intercept=-3.3,
        on_confounder=0.25,
        on_treatment=0.5,
        on_cost=0.0,
    )


def nonrandom_dropout_censoring() -> CensoringMechanism:
    """Censoring driven by the concurrent interval's variables."""
    return CensoringMechanism(
        mechanism="nonrandom_dropout",
        intercept=-3.5,
        on_confounder=0.25,
        on_treatment=0.5,
        on_cost=0.01,
    )


@dataclass(frozen=True)
class DgpConfig:
    n_subjects: int = 1000
    n_intervals: int = 6
    confounder: ConfounderDynamics = ConfounderDynamics()
    treatment: TreatmentAssignment = TreatmentAssignment()
    cost: CostDynamics = CostDynamics()
    death: DeathRisk = DeathRisk()
    censoring: CensoringMechanism = CensoringMechanism()
    seed: int = 0
    confounder_dim: int = 1
    horizon: float | None = None

    def __post_init__(self):
        if self.n_subjects < 1:
            raise ValueError("n_subjects must be >= 1")
        if self.n_intervals < 1:
            raise ValueError("n_intervals must be >= 1")
        if self.confounder_dim != 1:
            raise NotImplementedError(
                "only scalar-confounder generation is implemented"
            )

    @property
    def grid(self) -> IntervalGrid:
        return IntervalGrid(
            self.n_intervals,
            float(self.n_intervals) if self.horizon is None else self.horizon,
        )


def with_null_effect(cfg: DgpConfig) -> DgpConfig:
    """Remove treatment from every structural equation.

    Zeroes the baseline and follow-up cost effects (both the concurrent
    and the lagged term) and the confounder pathway; the death risk
    already excludes treatment. Treatment assignment itself still follows
    the confounded mechanism, so fitted models keep their treatment
    terms; only the true contrast becomes zero.
    """
    return replace(
        cfg,
        confounder=replace(cfg.confounder, on_prev_treatment=0.0),
        cost=replace(
            cfg.cost,
            baseline_on_treatment=0.0,
            on_prev_treatment=0.0,
            on_cur_treatment=0.0,
        ),
    )


def with_mixed_arm_families(cfg: DgpConfig) -> DgpConfig:
    """The arm-dependent cost scenario: inverse-gaussian draws in the
    control arm and normal draws in the treated arm."""
    return replace(
        cfg,
        cost=replace(
            cfg.cost,
            family_control="inverse_gaussian",
            family_treated="normal",
        ),
    )


# ---------------------------------------------------------------------------
# Structural equations (vectorized over subjects/paths)
# ---------------------------------------------------------------------------


def _baseline_cost_mean(cost: CostDynamics, l, a):
    return (
        cost.baseline_intercept
        + cost.baseline_on_confounder * l
        + cost.baseline_on_treatment * a
    )


def _followup_cost_mean(cost: CostDynamics, lp, ap, yp, lc, ac):
    return (
        cost.intercept
        + cost.on_prev_confounder * lp
        + cost.on_cur_confounder * lc
        + cost.on_prev_treatment * ap
        + cost.on_cur_treatment * ac
        + cost.on_prev_cost * yp
    )


def _draw_cost(cost: CostDynamics, mean, arm, rng):
    out = np.empty_like(mean)
    if cost.family_control == cost.family_treated:
        return sample_response(
            cost.family_control, mean, cost.dispersion_for(cost.family_control), rng
        )
    for value in (0, 1):
        family = cost.family_for(value)
        mask = arm == value
        if np.any(mask):
            out[mask] = sample_response(
                family, mean[mask], cost.dispersion_for(family), rng
            )
    return out


def _positive_required(cost: CostDynamics, arm):
    """Mask of rows whose arm's family needs a strictly positive mean."""
    control_pos = cost.family_control in ("gamma", "inverse_gaussian")
    treated_pos = cost.family_treated in ("gamma", "inverse_gaussian")
    if not control_pos and not treated_pos:
        return None
    return np.where(arm == 1, treated_pos, control_pos)


def _censoring_probability(cens: CensoringMechanism, l1, a1, l, a, y):
    if cens.mechanism == "random_p":
        return np.full(l.shape, cens.rate)
    if cens.mechanism == "staggered_entry":
        eta = (
            cens.intercept
            + cens.on_confounder * l1
            + cens.on_treatment * a1
            + cens.on_cost * 0.0
        )
        return expit(eta)
    eta = cens.intercept + cens.on_confounder * l + cens.on_treatment * a + cens.on_cost * y
    return expit(eta)


def generate_cohort(cfg: DgpConfig) -> Cohort:
    """Simulate one observed-data cohort; deterministic given cfg.seed."""
    rng = substream(cfg.seed, "cohort")
    n, j_total = cfg.n_subjects, cfg.n_intervals
    conf, trt, cost, death, cens = (
        cfg.confounder,
        cfg.treatment,
        cfg.cost,
        cfg.death,
        cfg.censoring,
    )

    l_out = np.full((n, j_total), np.nan)
    a_out = np.zeros((n, j_total), dtype=np.int64)
    y_out = np.zeros((n, j_total))
    d_out = np.zeros((n, j_total), dtype=np.int64)
    death_at = np.zeros(n, dtype=np.int64)
    censored_at = np.zeros(n, dtype=np.int64)

    # Interval 1: nobody is censored at entry.
    l = rng.normal(conf.baseline_mean, np.sqrt(conf.baseline_var), n)
    a = (
        rng.random(n)
        < expit(trt.baseline_intercept + trt.baseline_on_confounder * l)
    ).astype(np.int64)
    mean = _baseline_cost_mean(cost, l, a)
    need_pos = _positive_required(cost, a)
    if need_pos is not None:
        bad = np.flatnonzero(need_pos & (mean <= 0.0))
        for _ in range(MAX_REDRAWS):
            if not bad.size:
                break
            l[bad] = rng.normal(conf.baseline_mean, np.sqrt(conf.baseline_var), bad.size)
            a[bad] = (
                rng.random(bad.size)
                < expit(trt.baseline_intercept + trt.baseline_on_confounder * l[bad])
            ).astype(np.int64)
            mean[bad] = _baseline_cost_mean(cost, l[bad], a[bad])
            need_pos[bad] = _positive_required(cost, a[bad])
            bad = bad[need_pos[bad] & (mean[bad] <= 0.0)]
        if bad.size:
            raise SimulationDomainError(
                f"{bad.size} subjects exhausted the baseline cost-mean redraw budget"
            )
    y = _draw_cost(cost, mean, a, rng)
    d = (
        rng.random(n)
        < expit(
            death.baseline_intercept
            + death.baseline_on_confounder * l
            + death.baseline_on_cost * y
        )
    ).astype(np.int64)
    l_out[:, 0], a_out[:, 0], y_out[:, 0], d_out[:, 0] = l, a, y, d
    death_at[d == 1] = 1
    l1_all, a1_all = l.copy(), a.astype(float).copy()

    l_prev, a_prev, y_prev = l, a.astype(float), y
    for j in range(2, j_total + 1):
        active = np.flatnonzero((death_at == 0) & (censored_at == 0))
        if active.size == 0:
            break
        lp, ap, yp = l_prev[active], a_prev[active], y_prev[active]
        lc = rng.normal(
            conf.intercept
            + conf.on_prev_confounder * lp
            + conf.on_prev_treatment * ap
            + conf.on_prev_cost * yp,
            np.sqrt(conf.var),
        )
        ac = (
            rng.random(active.size)
            < expit(
                trt.intercept
                + trt.on_prev_confounder * lp
                + trt.on_cur_confounder * lc
                + trt.on_prev_treatment * ap
                + trt.on_prev_cost * yp
            )
        ).astype(np.int64)
        mean = _followup_cost_mean(cost, lp, ap, yp, lc, ac)
        need_pos = _positive_required(cost, ac)
        if need_pos is not None:
            bad = np.flatnonzero(need_pos & (mean <= 0.0))
            for _ in range(MAX_REDRAWS):
                if not bad.size:
                    break
                lc[bad] = rng.normal(
                    conf.intercept
                    + conf.on_prev_confounder * lp[bad]
                    + conf.on_prev_treatment * ap[bad]
                    + conf.on_prev_cost * yp[bad],
                    np.sqrt(conf.var),
                )
                ac[bad] = (
                    rng.random(bad.size)
                    < expit(
                        trt.intercept
                        + trt.on_prev_confounder * lp[bad]
                        + trt.on_cur_confounder * lc[bad]
                        + trt.on_prev_treatment * ap[bad]
                        + trt.on_prev_cost * yp[bad]
                    )
                ).astype(np.int64)
                mean[bad] = _followup_cost_mean(
                    cost, lp[bad], ap[bad], yp[bad], lc[bad], ac[bad]
                )
                need_pos[bad] = _positive_required(cost, ac[bad])
                bad = bad[need_pos[bad] & (mean[bad] <= 0.0)]
            if bad.size:
                raise SimulationDomainError(
                    f"interval {j}: {bad.size} subjects exhausted the "
                    "cost-mean redraw budget"
                )
        yc = _draw_cost(cost, mean, ac, rng)
        dc = (
            rng.random(active.size)
            < expit(
                death.intercept
                + death.on_prev_confounder * lp
                + death.on_cur_confounder * lc
                + death.on_cur_cost * yc
            )
        ).astype(np.int64)

        if cens.mechanism == "none":
            censor = np.zeros(active.size, dtype=bool)
        else:
            prob = _censoring_probability(
                cens, l1_all[active], a1_all[active], lc, ac.astype(float), yc
            )
            censor = rng.random(active.size) < prob

        censored_at[active[censor]] = j
        keep = active[~censor]
        kl, ka, ky, kd = lc[~censor], ac[~censor], yc[~censor], dc[~censor]
        l_out[keep, j - 1], a_out[keep, j - 1] = kl, ka
        y_out[keep, j - 1], d_out[keep, j - 1] = ky, kd
        death_at[keep[kd == 1]] = j
        l_prev[keep] = kl
        a_prev[keep] = ka.astype(float)
        y_prev[keep] = ky

    subjects = []
    for i in range(n):
        records = []
        for j in range(1, j_total + 1):
            if censored_at[i] == j:
                records.append(IntervalRecord(censored=1))
                break
            if death_at[i] and j > death_at[i]:
                records.append(IntervalRecord(censored=0, cost=0.0, dead=1))
                continue
            records.append(
                IntervalRecord(
                    censored=0,
                    confounders=(float(l_out[i, j - 1]),),
                    treated=int(a_out[i, j - 1]),
                    cost=float(y_out[i, j - 1]),
                    dead=int(d_out[i, j - 1]),
                )
            )
        subjects.append(SubjectPanel(str(i + 1), tuple(records)))
    return Cohort(subjects=tuple(subjects), grid=cfg.grid, confounder_dim=1)


# ---------------------------------------------------------------------------
# Ground-truth oracle
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OracleResult:
    mean: float
    mc_se: float
    n_paths: int
    n_aborted: int


def _oracle_block(cfg: DgpConfig, assignments, seed, block):
    index, size = block
    rng = substream(seed, "oracle", index)
    conf, cost, death = cfg.confounder, cfg.cost, cfg.death
    j_total = cfg.n_intervals

    totals = np.zeros(size)
    alive = np.ones(size, dtype=bool)
    aborted = 0

    a1 = assignments[0]
    l = rng.normal(conf.baseline_mean, np.sqrt(conf.baseline_var), size)
    mean = _baseline_cost_mean(cost, l, a1)
    if cost.family_for(a1) in ("gamma", "inverse_gaussian"):
        bad = np.flatnonzero(mean <= 0.0)
        for _ in range(MAX_REDRAWS):
            if not bad.size:
                break
            l[bad] = rng.normal(conf.baseline_mean, np.sqrt(conf.baseline_var), bad.size)
            mean[bad] = _baseline_cost_mean(cost, l[bad], a1)
            bad = bad[mean[bad] <= 0.0]
        if bad.size:
            alive[bad] = False
            aborted += bad.size
            totals[bad] = np.nan
    family = cost.family_for(a1)
    idx = np.flatnonzero(alive)
    y = sample_response(family, mean[idx], cost.dispersion_for(family), rng)
    totals[idx] += y
    d = rng.random(idx.size) < expit(
        death.baseline_intercept
        + death.baseline_on_confounder * l[idx]
        + death.baseline_on_cost * y
    )
    alive[idx[d]] = False

    l_prev = l
    y_prev = np.zeros(size)
    y_prev[idx] = y
    for j in range(2, j_total + 1):
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        ap = assignments[j - 2]
        ac = assignments[j - 1]
        lp, yp = l_prev[idx], y_prev[idx]
        lc = rng.normal(
            conf.intercept
            + conf.on_prev_confounder * lp
            + conf.on_prev_treatment * ap
            + conf.on_prev_cost * yp,
            np.sqrt(conf.var),
        )
        mean = _followup_cost_mean(cost, lp, ap, yp, lc, ac)
        if cost.family_for(ac) in ("gamma", "inverse_gaussian"):
            bad = np.flatnonzero(mean <= 0.0)
            for _ in range(MAX_REDRAWS):
                if not bad.size:
                    break
                lc[bad] = rng.normal(
                    conf.intercept
                    + conf.on_prev_confounder * lp[bad]
                    + conf.on_prev_treatment * ap
                    + conf.on_prev_cost * yp[bad],
                    np.sqrt(conf.var),
                )
                mean[bad] = _followup_cost_mean(cost, lp[bad], ap, yp[bad], lc[bad], ac)
                bad = bad[mean[bad] <= 0.0]
            if bad.size:
                alive[idx[bad]] = False
                totals[idx[bad]] = np.nan
                aborted += bad.size
                keep = np.setdiff1d(np.arange(idx.size), bad, assume_unique=True)
                idx, lc, mean = idx[keep], lc[keep], mean[keep]
                lp, yp = lp[keep], yp[keep]
        family = cost.family_for(ac)
        y = sample_response(family, mean, cost.dispersion_for(family), rng)
        totals[idx] += y
        d = rng.random(idx.size) < expit(
            death.intercept
            + death.on_prev_confounder * lp
            + death.on_cur_confounder * lc
            + death.on_cur_cost * y
        )
        alive[idx[d]] = False
        l_prev[idx] = lc
        y_prev[idx] = y

    ok = ~np.isnan(totals)
    good = totals[ok]
    return int(ok.sum()), float(good.sum()), float(np.dot(good, good)), int((~ok).sum())


ORACLE_BLOCK = 1_000_000


def true_values_oracle(
    cfg: DgpConfig,
    regime,
    n_paths: int = 10_000_000,
    seed: int | None = None,
    *,
    workers: int = 1,
) -> OracleResult:
    """Mean potential cumulative cost under ``regime``.

    Simulates ``n_paths`` uncensored potential worlds with treatment
    forced to the regime, using the generating (not fitted) parameters.
    """
    assignments = tuple(int(a) for a in getattr(regime, "assignments", regime))
    if len(assignments) != cfg.n_intervals:
        raise ValueError("regime length must match the configured intervals")
    blocks = []
    start = 0
    index = 0
    while start < n_paths:
        size = min(ORACLE_BLOCK, n_paths - start)
        blocks.append((index, size))
        start += size
        index += 1
    root = cfg.seed if seed is None else seed
    partials = parallel_map(
        partial(_oracle_block, cfg, assignments, root), blocks, workers
    )
    count = sum(q[0] for q in partials)
    aborted = sum(q[3] for q in partials)
    if aborted > MAX_ABORT_FRACTION * n_paths:
        raise SimulationDomainError(
            f"{aborted}/{n_paths} oracle paths aborted on domain violations"
        )
    total = sum(q[1] for q in partials)
    total_sq = sum(q[2] for q in partials)
    mean = total / count
    var = max(0.0, (total_sq - total * total / count) / (count - 1)) if count > 1 else 0.0
    return OracleResult(
        mean=float(mean),
        mc_se=float(np.sqrt(var / count)),
        n_paths=count,
        n_aborted=aborted,
    )


# ---------------------------------------------------------------------------
# Generating parameters as a ready-made fitted model set
# ---------------------------------------------------------------------------


def _made(family, link, predictors, coefficients, dispersion) -> FittedGlm:
    return FittedGlm(
        family=family,
        link=link,
        predictors=tuple(predictors),
        coefficients=np.asarray(coefficients, dtype=float),
        dispersion=float(dispersion),
        n_obs=0,
        converged=True,
        iterations=0,
    )


def model_set_from_config(cfg: DgpConfig) -> SequentialModelSet:
    """Wrap the generating parameters as a model set the Monte-Carlo
    engine can run directly (no fitting). Requires both arms to share one
    cost family."""
    cost = cfg.cost
    if cost.family_control != cost.family_treated:
        raise ValueError(
            "mixed-arm cost families cannot be expressed as a single cost model"
        )
    family = cost.family_control
    phi = cost.dispersion_for(family)
    conf, death = cfg.confounder, cfg.death
    theta1 = FittedTriple(
        confounder=(
            _made("normal", "identity", (), [conf.baseline_mean], conf.baseline_var),
        ),
        cost=_made(
            family,
            "identity",
            ("l1", "a1"),
            [cost.baseline_intercept, cost.baseline_on_confounder, cost.baseline_on_treatment],
            phi,
        ),
        death=_made(
            "bernoulli",
            "logit",
            ("l1", "y1"),
            [death.baseline_intercept, death.baseline_on_confounder, death.baseline_on_cost],
            1.0,
        ),
    )
    theta = None
    if cfg.n_intervals > 1:
        theta = FittedTriple(
            confounder=(
                _made(
                    "normal",
                    "identity",
                    ("lprev", "aprev", "yprev"),
                    [
                        conf.intercept,
                        conf.on_prev_confounder,
                        conf.on_prev_treatment,
                        conf.on_prev_cost,
                    ],
                    conf.var,
                ),
            ),
            cost=_made(
                family,
                "identity",
                ("lprev", "aprev", "yprev", "lcur", "acur"),
                [
                    cost.intercept,
                    cost.on_prev_confounder,
                    cost.on_prev_treatment,
                    cost.on_prev_cost,
                    cost.on_cur_confounder,
                    cost.on_cur_treatment,
                ],
                phi,
            ),
            death=_made(
                "bernoulli",
                "logit",
                ("lprev", "lcur", "ycur"),
                [
                    death.intercept,
                    death.on_prev_confounder,
                    death.on_cur_confounder,
                    death.on_cur_cost,
                ],
                1.0,
            ),
        )
    return SequentialModelSet(
        theta1=theta1,
        theta=theta,
        spec=default_model_spec(family),
        n_baseline_obs=0,
        n_followup_obs=0,
    )
