"""Nonparametric bootstrap variance and Wald inference for the contrast.

Resampling is at the subject level: each replicate redraws N whole panels
with replacement, refits all sequential models, and reruns the
Monte-Carlo contrast. The point estimate always comes from the original
cohort; replicates contribute variance only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import partial
from statistics import NormalDist

import numpy as np

from ._parallel import parallel_map
from .errors import CostgError, DegenerateInferenceError, InferenceError
from .gformula import (
    CohortTables,
    SequentialModelSpec,
    TreatmentRegime,
    estimate_delta,
    fit_sequential_models_tables,
)
from .panel import Cohort
from .streams import derive_seed, substream

__all__ = [
    "BootstrapConfig",
    "WaldTest",
    "wald_test",
    "EffectReport",
    "bootstrap_delta",
    "replicate_variance",
]


@dataclass(frozen=True)
class BootstrapConfig:
    """Sizes and seed for the bootstrap: B replicates, R Monte-Carlo paths
    per regime per replicate, and a worker hint for parallel execution."""

    n_replicates: int
    n_paths: int
    seed: int
    parallel_width: int = 1

    def __post_init__(self):
        if self.n_replicates < 2:
            raise ValueError("bootstrap needs at least 2 replicates")
        if self.n_paths < 1:
            raise ValueError("n_paths must be >= 1")


@dataclass(frozen=True)
class WaldTest:
    z: float
    p_value: float
    ci_low: float
    ci_high: float
    level: float


def wald_test(
    delta_hat: float, se_hat: float, delta0: float = 0.0, level: float = 0.95
) -> WaldTest:
    """Two-sided Wald z test of ``delta == delta0`` with a symmetric CI."""
    if not 0.0 < level < 1.0:
        raise ValueError("level must be in (0, 1)")
    if not se_hat > 0.0:
        raise DegenerateInferenceError(
            "standard error is zero; Wald inference is undefined"
        )
    z = (delta_hat - delta0) / se_hat
    p_value = math.erfc(abs(z) / math.sqrt(2.0))
    crit = NormalDist().inv_cdf(0.5 + level / 2.0)
    return WaldTest(
        z=z,
        p_value=p_value,
        ci_low=delta_hat - crit * se_hat,
        ci_high=delta_hat + crit * se_hat,
        level=level,
    )


def replicate_variance(values) -> float:
    """The bootstrap variance: mean squared deviation from the replicate
    mean with a B-1 denominator."""
    arr = np.asarray(list(values), dtype=float)
    if len(arr) < 2:
        raise InferenceError("variance needs at least 2 replicate values")
    mean = arr.sum() / len(arr)
    return float(((arr - mean) ** 2).sum() / (len(arr) - 1))


@dataclass(frozen=True)
class EffectReport:
    """Point estimate, bootstrap SE, Wald CI and test, and the replicate
    contrasts it was built from."""

    delta_hat: float
    se_hat: float
    ci_low: float
    ci_high: float
    z: float
    p_value: float
    level: float
    mu_a: float
    mu_b: float
    replicates: tuple[float, ...]
    n_replicates_requested: int
    n_replicates_failed: int

    def to_dict(self) -> dict:
        return {
            "delta_hat": self.delta_hat,
            "se_hat": self.se_hat,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "z": self.z,
            "p_value": self.p_value,
            "level": self.level,
            "mu_a": self.mu_a,
            "mu_b": self.mu_b,
            "replicates": list(self.replicates),
            "n_replicates_requested": self.n_replicates_requested,
            "n_replicates_failed": self.n_replicates_failed,
        }

    @staticmethod
    def csv_header() -> list[str]:
        return ["delta", "se", "ci_low", "ci_high", "z", "p"]

    def csv_row(self) -> list:
        return [
            self.delta_hat,
            self.se_hat,
            self.ci_low,
            self.ci_high,
            self.z,
            self.p_value,
        ]


def _one_replicate(tables, spec, regime_a, regime_b, cfg, b):
    """Returns (replicate value, error name); a failed refit is redrawn
    once from a retry substream before giving up."""
    n = tables.n_subjects
    for attempt, label in enumerate(("boot", "boot-retry")):
        rng = substream(cfg.seed, label, b)
        indices = rng.integers(0, n, size=n)
        try:
            models = fit_sequential_models_tables(tables.resample(indices), spec)
            result = estimate_delta(
                models,
                regime_a,
                regime_b,
                cfg.n_paths,
                derive_seed(cfg.seed, label, b, "mc"),
            )
            return result.delta, ""
        except CostgError as exc:
            if attempt == 1:
                return math.nan, type(exc).__name__
    return math.nan, "unreachable"


def bootstrap_delta(
    cohort: Cohort,
    spec: SequentialModelSpec,
    regime_a: TreatmentRegime,
    regime_b: TreatmentRegime,
    cfg: BootstrapConfig,
    *,
    delta0: float = 0.0,
    level: float = 0.95,
) -> EffectReport:
    """Full inference pipeline for the regime contrast.

    Raises InferenceError when more than 5% of replicates fail even after
    one redraw each, reporting the mix of failure classes.
    """
    tables = CohortTables.from_cohort(cohort)
    models = fit_sequential_models_tables(tables, spec)
    point = estimate_delta(
        models, regime_a, regime_b, cfg.n_paths, derive_seed(cfg.seed, "point")
    )

    job = partial(_one_replicate, tables, spec, regime_a, regime_b, cfg)
    outcomes = parallel_map(job, range(cfg.n_replicates), cfg.parallel_width)

    values = [v for v, err in outcomes if not err]
    failures = [err for _, err in outcomes if err]
    if len(failures) > 0.05 * cfg.n_replicates:
        mix = ", ".join(
            f"{name} x{failures.count(name)}" for name in sorted(set(failures))
        )
        raise InferenceError(
            f"{len(failures)}/{cfg.n_replicates} bootstrap replicates failed ({mix})"
        )
    if len(values) < 2:
        raise InferenceError("fewer than 2 successful bootstrap replicates")

    se_hat = math.sqrt(replicate_variance(values))
    wald = wald_test(point.delta, se_hat, delta0, level)
    return EffectReport(
        delta_hat=point.delta,
        se_hat=se_hat,
        ci_low=wald.ci_low,
        ci_high=wald.ci_high,
        z=wald.z,
        p_value=wald.p_value,
        level=level,
        mu_a=point.mean_a.mean,
        mu_b=point.mean_b.mean,
        replicates=tuple(values),
        n_replicates_requested=cfg.n_replicates,
        n_replicates_failed=len(failures),
    )
