"""Shared fixtures and independent oracles used across the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from costg import (
    Cohort,
    FittedGlm,
    FittedTriple,
    IntervalGrid,
    IntervalRecord,
    SequentialModelSet,
    SubjectPanel,
    default_model_spec,
)
from costg.glm import expit


def make_fit(family, link, predictors, coefficients, dispersion=1.0) -> FittedGlm:
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


def information_se(fit: FittedGlm, design, weights=None) -> np.ndarray:
    """Model-based standard errors from the IRLS information matrix."""
    x = np.asarray(design, dtype=float)
    w = np.ones(len(x)) if weights is None else np.asarray(weights, dtype=float)
    mu = fit.predict(x)
    if fit.link == "identity":
        if fit.family == "normal":
            v = np.ones_like(mu)
        elif fit.family == "gamma":
            v = mu**2
        else:
            v = mu**3
        ww = w / v
        phi = fit.dispersion
    else:
        ww = w * mu * (1.0 - mu)
        phi = 1.0
    info = x.T @ (ww[:, None] * x)
    return np.sqrt(np.diag(phi * np.linalg.inv(info)))


def exact_discrete_mean(models: SequentialModelSet, regime) -> float:
    """Exact mean cumulative cost for a fully discrete model set.

    Enumerates every binary (confounder, cost, death) path, multiplying
    conditional probabilities interval by interval with death absorbing;
    completely independent of the Monte-Carlo engine.
    """
    assignments = tuple(regime.assignments)
    j_total = len(assignments)

    def bern(fit, ctx):
        row = [1.0] + [float(ctx[name]) for name in fit.predictors]
        return float(expit(np.dot(row, np.asarray(fit.coefficients))))

    total = 0.0

    def recurse(j, prob, lprev, yprev):
        nonlocal total
        if j == 1:
            triple = models.theta1
            base = {"a1": assignments[0]}
            l_key, y_key = "l1", "y1"
        else:
            triple = models.theta
            base = {
                "lprev": lprev,
                "aprev": assignments[j - 2],
                "yprev": yprev,
                "acur": assignments[j - 1],
            }
            l_key, y_key = "lcur", "ycur"
        conf_fit = triple.confounder[0]
        for l_val in (0.0, 1.0):
            ctx_l = dict(base)
            p_l1 = bern(conf_fit, ctx_l)
            p_l = p_l1 if l_val == 1.0 else 1.0 - p_l1
            if p_l == 0.0:
                continue
            ctx_l[l_key] = l_val
            for y_val in (0.0, 1.0):
                p_y1 = bern(triple.cost, ctx_l)
                p_y = p_y1 if y_val == 1.0 else 1.0 - p_y1
                if p_y == 0.0:
                    continue
                reach = prob * p_l * p_y
                total += reach * y_val
                if j == j_total:
                    continue
                ctx_y = dict(ctx_l)
                ctx_y[y_key] = y_val
                p_die = bern(triple.death, ctx_y)
                if p_die < 1.0:
                    recurse(j + 1, reach * (1.0 - p_die), l_val, y_val)

    recurse(1, 1.0, 0.0, 0.0)
    return total


def discrete_toy_models(j_total: int = 2) -> SequentialModelSet:
    """A fully discrete two-interval process: binary confounder, 0/1
    interval cost, logistic death."""
    theta1 = FittedTriple(
        confounder=(make_fit("bernoulli", "logit", (), [0.2]),),
        cost=make_fit("bernoulli", "logit", ("l1", "a1"), [-0.4, 0.9, 0.6]),
        death=make_fit("bernoulli", "logit", ("l1", "a1", "y1"), [-1.4, 0.5, -0.3, 0.7]),
    )
    theta = FittedTriple(
        confounder=(
            make_fit("bernoulli", "logit", ("lprev", "aprev", "yprev"), [-0.2, 0.8, 0.3, 0.5]),
        ),
        cost=make_fit(
            "bernoulli",
            "logit",
            ("lprev", "aprev", "yprev", "lcur", "acur"),
            [-0.5, 0.4, 0.2, 0.6, 0.7, 0.5],
        ),
        death=make_fit("bernoulli", "logit", ("lprev", "lcur", "ycur"), [-1.1, 0.3, 0.4, 0.6]),
    )
    return SequentialModelSet(
        theta1=theta1,
        theta=theta if j_total > 1 else None,
        spec=default_model_spec("normal"),
        n_baseline_obs=0,
        n_followup_obs=0,
    )


def naive_km(times, events, t) -> float:
    """Direct risk-set product-limit computation, O(n^2), no sorting
    tricks: the brute-force oracle for the Kaplan-Meier implementation."""
    times = list(times)
    events = list(events)
    value = 1.0
    for s in sorted(set(times)):
        if s > t:
            break
        d = sum(1 for x, e in zip(times, events) if x == s and e)
        n = sum(1 for x in times if x >= s)
        if d:
            value *= 1.0 - d / n
    return value


def obs(l, a, y, d=0) -> IntervalRecord:
    return IntervalRecord(censored=0, confounders=(float(l),), treated=int(a), cost=float(y), dead=int(d))


def dead_pad() -> IntervalRecord:
    return IntervalRecord(censored=0, cost=0.0, dead=1)


def censor_marker() -> IntervalRecord:
    return IntervalRecord(censored=1)


def build_cohort(panels, n_intervals, horizon=None) -> Cohort:
    return Cohort(
        subjects=tuple(panels),
        grid=IntervalGrid(n_intervals, float(n_intervals) if horizon is None else horizon),
        confounder_dim=1,
    )


@pytest.fixture(scope="session")
def uncensored_cohort_n4000():
    from costg import DgpConfig, generate_cohort

    return generate_cohort(DgpConfig(n_subjects=4000, seed=2024))


def subject(sid, records) -> SubjectPanel:
    return SubjectPanel(str(sid), tuple(records))
