"""Multi-replication simulation studies: bias, coverage, and test level.

Each repetition generates a fresh cohort from a rep-specific substream,
runs the requested estimators, and records estimates against the ground
truth (either a supplied value or the potential-outcome oracle).
Repetitions are independent jobs; aggregation is order-insensitive and
results are identical for any worker count.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from functools import partial

import numpy as np

from ._parallel import parallel_map
from .comparators import iptw_partitioned, partitioned_ipcw
from .dgp import DgpConfig, generate_cohort, true_values_oracle
from .errors import CostgError, StudyError
from .gformula import (
    TreatmentRegime,
    default_model_spec,
    estimate_delta,
    fit_sequential_models,
)
from .inference import BootstrapConfig, bootstrap_delta
from .streams import derive_seed

__all__ = [
    "ESTIMATORS",
    "StudyConfig",
    "RepRecord",
    "StudyRow",
    "StudyResult",
    "run_study",
    "LevelStudyResult",
    "run_level_study",
    "write_study_summary",
    "write_study_reps",
]

ESTIMATORS = ("nested_g", "lin_partitioned", "li_iptw")


@dataclass(frozen=True)
class StudyConfig:
    """One study: a generating process, repetition count, estimator set,
    and engine sizes. ``n_replicates=0`` skips the bootstrap, leaving
    standard errors and coverage empty (point estimates only).

    ``fit_cost_family`` is the analysis model's cost family; it defaults
    to the generating control-arm family, and differs from it in
    misspecification studies.
    """

    dgp: DgpConfig
    n_reps: int = 200
    estimators: tuple[str, ...] = ("nested_g",)
    n_paths: int = 100_000
    n_replicates: int = 100
    regime_a: TreatmentRegime | None = None
    regime_b: TreatmentRegime | None = None
    true_delta: float | None = None
    oracle_paths: int = 2_000_000
    fit_cost_family: str | None = None
    level: float = 0.95
    seed: int = 0

    def __post_init__(self):
        if self.n_reps < 1:
            raise ValueError("n_reps must be >= 1")
        for name in self.estimators:
            if name not in ESTIMATORS:
                raise ValueError(f"unknown estimator {name!r}")

    def resolved_regimes(self) -> tuple[TreatmentRegime, TreatmentRegime]:
        j = self.dgp.n_intervals
        a = self.regime_a or TreatmentRegime.constant(j, 1)
        b = self.regime_b or TreatmentRegime.constant(j, 0)
        return a, b

    def resolved_fit_family(self) -> str:
        return self.fit_cost_family or self.dgp.cost.family_control


@dataclass(frozen=True)
class RepRecord:
    rep: int
    estimator: str
    delta_hat: float = math.nan
    se_hat: float = math.nan
    ci_low: float = math.nan
    ci_high: float = math.nan
    p_value: float = math.nan
    mu_a: float = math.nan
    mu_b: float = math.nan
    error: str = ""


@dataclass(frozen=True)
class StudyRow:
    """Aggregate performance of one estimator across repetitions.

    ``mcse`` is the repetition-to-repetition standard deviation of the
    estimates; ``pct_bias`` is absolute bias as a percentage of the true
    contrast.
    """

    estimator: str
    n_reps: int
    n_failures: int
    true_delta: float
    bias: float
    pct_bias: float
    mcse: float
    mean_se_hat: float
    coverage: float
    mean_mu0: float
    mean_mu1: float


@dataclass(frozen=True)
class StudyResult:
    rows: tuple[StudyRow, ...]
    reps: tuple[RepRecord, ...]
    true_delta: float


def _study_rep(cfg: StudyConfig, rep: int) -> list[RepRecord]:
    regime_a, regime_b = cfg.resolved_regimes()
    dgp_rep = replace(cfg.dgp, seed=derive_seed(cfg.seed, "rep", rep))
    records: list[RepRecord] = []
    try:
        cohort = generate_cohort(dgp_rep)
    except CostgError as exc:
        return [
            RepRecord(rep=rep, estimator=name, error=type(exc).__name__)
            for name in cfg.estimators
        ]
    for name in cfg.estimators:
        try:
            if name == "nested_g":
                spec = default_model_spec(cfg.resolved_fit_family())
                if cfg.n_replicates >= 2:
                    report = bootstrap_delta(
                        cohort,
                        spec,
                        regime_a,
                        regime_b,
                        BootstrapConfig(
                            n_replicates=cfg.n_replicates,
                            n_paths=cfg.n_paths,
                            seed=derive_seed(cfg.seed, "rep", rep, "boot"),
                        ),
                        level=cfg.level,
                    )
                    records.append(
                        RepRecord(
                            rep=rep,
                            estimator=name,
                            delta_hat=report.delta_hat,
                            se_hat=report.se_hat,
                            ci_low=report.ci_low,
                            ci_high=report.ci_high,
                            p_value=report.p_value,
                            mu_a=report.mu_a,
                            mu_b=report.mu_b,
                        )
                    )
                else:
                    models = fit_sequential_models(cohort, spec)
                    point = estimate_delta(
                        models,
                        regime_a,
                        regime_b,
                        cfg.n_paths,
                        derive_seed(cfg.seed, "rep", rep, "point"),
                    )
                    records.append(
                        RepRecord(
                            rep=rep,
                            estimator=name,
                            delta_hat=point.delta,
                            mu_a=point.mean_a.mean,
                            mu_b=point.mean_b.mean,
                        )
                    )
            elif name == "lin_partitioned":
                est = partitioned_ipcw(cohort)
                records.append(
                    RepRecord(rep=rep, estimator=name, delta_hat=est.delta_itt)
                )
            else:
                est = iptw_partitioned(cohort)
                records.append(
                    RepRecord(rep=rep, estimator=name, delta_hat=est.delta_itt)
                )
        except CostgError as exc:
            records.append(
                RepRecord(rep=rep, estimator=name, error=type(exc).__name__)
            )
    return records


def _resolve_true_delta(cfg: StudyConfig, workers: int) -> float:
    if cfg.true_delta is not None:
        return cfg.true_delta
    regime_a, regime_b = cfg.resolved_regimes()
    seed = derive_seed(cfg.seed, "truth")
    mu_a = true_values_oracle(
        cfg.dgp, regime_a, cfg.oracle_paths, seed=derive_seed(seed, 1), workers=workers
    )
    mu_b = true_values_oracle(
        cfg.dgp, regime_b, cfg.oracle_paths, seed=derive_seed(seed, 0), workers=workers
    )
    return mu_a.mean - mu_b.mean


def _aggregate(cfg: StudyConfig, reps: list[RepRecord], true_delta: float) -> tuple[StudyRow, ...]:
    rows = []
    for name in cfg.estimators:
        mine = [r for r in reps if r.estimator == name]
        good = [r for r in mine if not r.error]
        n_failures = len(mine) - len(good)
        if n_failures > 0.10 * len(mine):
            raise StudyError(
                f"estimator {name!r} failed in {n_failures}/{len(mine)} repetitions"
            )
        deltas = np.array([r.delta_hat for r in good])
        ses = np.array([r.se_hat for r in good])
        bias = float(deltas.mean() - true_delta)
        mcse = float(deltas.std(ddof=1)) if len(deltas) > 1 else math.nan
        with_se = ~np.isnan(ses)
        if np.any(with_se):
            mean_se = float(ses[with_se].mean())
            lo = np.array([r.ci_low for r in good])[with_se]
            hi = np.array([r.ci_high for r in good])[with_se]
            coverage = float(np.mean((lo <= true_delta) & (true_delta <= hi)))
        else:
            mean_se = math.nan
            coverage = math.nan
        mu_a = np.array([r.mu_a for r in good])
        mu_b = np.array([r.mu_b for r in good])
        rows.append(
            StudyRow(
                estimator=name,
                n_reps=len(mine),
                n_failures=n_failures,
                true_delta=true_delta,
                bias=bias,
                pct_bias=100.0 * abs(bias) / abs(true_delta) if true_delta else math.nan,
                mcse=mcse,
                mean_se_hat=mean_se,
                coverage=coverage,
                mean_mu0=float(np.nanmean(mu_b)) if np.any(~np.isnan(mu_b)) else math.nan,
                mean_mu1=float(np.nanmean(mu_a)) if np.any(~np.isnan(mu_a)) else math.nan,
            )
        )
    return tuple(rows)


def run_study(cfg: StudyConfig, workers: int = 1) -> StudyResult:
    """Run the study and aggregate one row per estimator.

    Repetition-level estimator failures are recorded, not fatal; an
    estimator failing in more than 10% of repetitions raises StudyError.
    """
    true_delta = _resolve_true_delta(cfg, workers)
    batches = parallel_map(partial(_study_rep, cfg), range(cfg.n_reps), workers)
    reps = [record for batch in batches for record in batch]
    rows = _aggregate(cfg, reps, true_delta)
    return StudyResult(rows=rows, reps=tuple(reps), true_delta=true_delta)


@dataclass(frozen=True)
class LevelStudyResult:
    rejection_rate: float
    n_reps: int
    n_rejected: int
    n_failed: int
    alpha: float


def run_level_study(cfg: StudyConfig, workers: int = 1, alpha: float = 0.05) -> LevelStudyResult:
    """Fraction of repetitions whose Wald test rejects at ``alpha``.

    Meant for a null generating process (no treatment effect in any
    structural equation), where the rejection rate estimates the test's
    level. Requires the bootstrap (n_replicates >= 2) for p-values.
    """
    if "nested_g" not in cfg.estimators:
        cfg = replace(cfg, estimators=("nested_g",))
    if cfg.n_replicates < 2:
        raise ValueError("level study needs bootstrap replicates for p-values")
    if cfg.true_delta is None:
        cfg = replace(cfg, true_delta=0.0)
    result = run_study(cfg, workers=workers)
    mine = [r for r in result.reps if r.estimator == "nested_g" and not r.error]
    failed = cfg.n_reps - len(mine)
    rejected = sum(1 for r in mine if r.p_value < alpha)
    return LevelStudyResult(
        rejection_rate=rejected / len(mine) if mine else math.nan,
        n_reps=cfg.n_reps,
        n_rejected=rejected,
        n_failed=failed,
        alpha=alpha,
    )


_SUMMARY_COLUMNS = [
    "estimator",
    "n_reps",
    "n_failures",
    "true_delta",
    "bias",
    "pct_bias",
    "mcse",
    "mean_se_hat",
    "coverage",
    "mean_mu0",
    "mean_mu1",
]

_REP_COLUMNS = [
    "rep",
    "estimator",
    "delta_hat",
    "se_hat",
    "ci_low",
    "ci_high",
    "p_value",
    "mu_a",
    "mu_b",
    "error",
]


def _cell(value) -> str:
    if isinstance(value, float):
        return "" if math.isnan(value) else repr(value)
    return str(value)


def write_study_summary(result: StudyResult, path) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(_SUMMARY_COLUMNS)
        for row in result.rows:
            writer.writerow([_cell(getattr(row, c)) for c in _SUMMARY_COLUMNS])


def write_study_reps(result: StudyResult, path) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(_REP_COLUMNS)
        for record in result.reps:
            writer.writerow([_cell(getattr(record, c)) for c in _REP_COLUMNS])
