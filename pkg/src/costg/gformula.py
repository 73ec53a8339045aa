"""Sequential conditional models and Monte-Carlo g-computation.

Fitting pools per-interval likelihood contributions: baseline models use
each subject's first interval, follow-up models share coefficients across
intervals 2..J over rows where the subject is still uncensored and was
alive entering the interval.

The mean-cost engine simulates complete potential histories under a fixed
treatment regime from the fitted models, with death absorbing (zero cost
afterwards) and censoring structurally absent. Paths are partitioned into
fixed-size blocks, each drawing from its own derived substream, so the
estimate is bit-identical for any worker count.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import lru_cache, partial

import numpy as np

from ._parallel import parallel_map
from .errors import InsufficientDataError, ModelError, SimulationDomainError
from .glm import FittedGlm, GlmSpec, expit, fit_glm, sample_response
from .panel import Cohort
from .streams import derive_seed, substream

__all__ = [
    "TreatmentRegime",
    "SequentialModelSpec",
    "FittedTriple",
    "SequentialModelSet",
    "default_model_spec",
    "CohortTables",
    "fit_sequential_models",
    "fit_sequential_models_tables",
    "PathSample",
    "simulate_paths",
    "GMeanResult",
    "g_compute_mean",
    "DeltaEstimate",
    "estimate_delta",
]

PATH_BLOCK = 32_768
MAX_REDRAWS = 100
MAX_ABORT_FRACTION = 1e-3

_POSITIVE = ("gamma", "inverse_gaussian")

_NAME_RE = re.compile(r"^(l1|lprev|lcur)(?:_(\d+))?$|^(a1|y1|aprev|yprev|acur|ycur)$")
_L_BASES = ("l1", "lprev", "lcur")

_ALLOWED = {
    "baseline_confounder": frozenset(),
    "baseline_cost": frozenset({"l1", "a1"}),
    "baseline_death": frozenset({"l1", "a1", "y1"}),
    "followup_confounder": frozenset({"lprev", "aprev", "yprev"}),
    "followup_cost": frozenset({"lprev", "aprev", "yprev", "lcur", "acur"}),
    "followup_death": frozenset({"lprev", "aprev", "yprev", "lcur", "acur", "ycur"}),
}


@lru_cache(maxsize=None)
def _parse_name(name: str):
    m = _NAME_RE.match(name)
    if m is None:
        raise ValueError(f"unknown predictor name {name!r}")
    if m.group(3):
        return m.group(3), None
    comp = m.group(2)
    return m.group(1), (int(comp) - 1 if comp else None)


@dataclass(frozen=True)
class TreatmentRegime:
    """A fixed 0/1 treatment assignment for every interval."""

    assignments: tuple[int, ...]

    def __post_init__(self):
        if len(self.assignments) < 1:
            raise ValueError("regime must cover at least one interval")
        if any(a not in (0, 1) for a in self.assignments):
            raise ValueError("regime assignments must be 0 or 1")
        object.__setattr__(self, "assignments", tuple(int(a) for a in self.assignments))

    @classmethod
    def constant(cls, n_intervals: int, value: int) -> "TreatmentRegime":
        return cls((int(value),) * n_intervals)

    def __len__(self) -> int:
        return len(self.assignments)


@dataclass(frozen=True)
class SequentialModelSpec:
    """Model specs for the six conditional models (three baseline, three
    follow-up). Predictors may only reference variables available at the
    model's position in the (censoring, confounder, treatment, cost,
    death) ordering."""

    baseline_confounder: GlmSpec
    baseline_cost: GlmSpec
    baseline_death: GlmSpec
    followup_confounder: GlmSpec
    followup_cost: GlmSpec
    followup_death: GlmSpec
    markov: bool = True

    def __post_init__(self):
        for position in _ALLOWED:
            spec: GlmSpec = getattr(self, position)
            for name in spec.predictors:
                base, _ = _parse_name(name)
                if base not in _ALLOWED[position]:
                    raise ValueError(
                        f"predictor {name!r} is not available to the {position} model"
                    )


def default_model_spec(cost_family: str = "normal", confounder_dim: int = 1) -> SequentialModelSpec:
    """The standard Markov specification.

    Baseline: confounder marginal, cost on (L1, A1), death on (L1, A1, Y1).
    Follow-up: confounder on the previous interval, cost on
    (Lprev, Aprev, Yprev, Lcur, Acur), death on (Lprev, Lcur, Ycur).
    """

    def lnames(base):
        if confounder_dim == 1:
            return (base,)
        return tuple(f"{base}_{k + 1}" for k in range(confounder_dim))

    return SequentialModelSpec(
        baseline_confounder=GlmSpec("normal", "identity", ()),
        baseline_cost=GlmSpec(cost_family, "identity", lnames("l1") + ("a1",)),
        baseline_death=GlmSpec("bernoulli", "logit", lnames("l1") + ("a1", "y1")),
        followup_confounder=GlmSpec(
            "normal", "identity", lnames("lprev") + ("aprev", "yprev")
        ),
        followup_cost=GlmSpec(
            cost_family,
            "identity",
            lnames("lprev") + ("aprev", "yprev") + lnames("lcur") + ("acur",),
        ),
        followup_death=GlmSpec(
            "bernoulli", "logit", lnames("lprev") + lnames("lcur") + ("ycur",)
        ),
    )


@dataclass(frozen=True)
class FittedTriple:
    """Fitted (confounder components, cost, death) models for one stage."""

    confounder: tuple[FittedGlm, ...]
    cost: FittedGlm
    death: FittedGlm


@dataclass(frozen=True)
class SequentialModelSet:
    theta1: FittedTriple
    theta: FittedTriple | None
    spec: SequentialModelSpec
    n_baseline_obs: int
    n_followup_obs: int

    @property
    def confounder_dim(self) -> int:
        return len(self.theta1.confounder)


# ---------------------------------------------------------------------------
# Pooled regression tables
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CohortTables:
    """Cohort flattened into the arrays the six models regress on.

    Building the tables once and resampling them by subject index keeps
    bootstrap refits cheap.
    """

    n_intervals: int
    confounder_dim: int
    l1: np.ndarray = field(repr=False)
    a1: np.ndarray = field(repr=False)
    y1: np.ndarray = field(repr=False)
    d1: np.ndarray = field(repr=False)
    f_subject: np.ndarray = field(repr=False)
    lprev: np.ndarray = field(repr=False)
    aprev: np.ndarray = field(repr=False)
    yprev: np.ndarray = field(repr=False)
    lcur: np.ndarray = field(repr=False)
    acur: np.ndarray = field(repr=False)
    ycur: np.ndarray = field(repr=False)
    dcur: np.ndarray = field(repr=False)
    f_start: np.ndarray = field(repr=False)
    f_stop: np.ndarray = field(repr=False)

    @property
    def n_subjects(self) -> int:
        return len(self.a1)

    @classmethod
    def from_cohort(cls, cohort: Cohort) -> "CohortTables":
        n, p = cohort.n_subjects, cohort.confounder_dim
        l1 = np.empty((n, p))
        a1 = np.empty(n)
        y1 = np.empty(n)
        d1 = np.empty(n)
        f_rows: list[tuple] = []
        f_start = np.zeros(n, dtype=np.int64)
        f_stop = np.zeros(n, dtype=np.int64)
        for i, subject in enumerate(cohort.subjects):
            observed = subject.observed
            if not observed:
                raise InsufficientDataError(
                    f"subject {subject.subject_id!r} has no observed intervals"
                )
            first = observed[0]
            l1[i], a1[i], y1[i], d1[i] = (
                first.confounders,
                first.treated,
                first.cost,
                first.dead,
            )
            f_start[i] = len(f_rows)
            for idx in range(1, len(observed)):
                prev, cur = observed[idx - 1], observed[idx]
                if prev.dead:
                    break
                f_rows.append(
                    (
                        i,
                        prev.confounders,
                        prev.treated,
                        prev.cost,
                        cur.confounders,
                        cur.treated,
                        cur.cost,
                        cur.dead,
                    )
                )
            f_stop[i] = len(f_rows)
        m = len(f_rows)
        lprev = np.empty((m, p))
        lcur = np.empty((m, p))
        f_subject = np.empty(m, dtype=np.int64)
        aprev = np.empty(m)
        yprev = np.empty(m)
        acur = np.empty(m)
        ycur = np.empty(m)
        dcur = np.empty(m)
        for r, row in enumerate(f_rows):
            f_subject[r] = row[0]
            lprev[r] = row[1]
            aprev[r] = row[2]
            yprev[r] = row[3]
            lcur[r] = row[4]
            acur[r] = row[5]
            ycur[r] = row[6]
            dcur[r] = row[7]
        return cls(
            n_intervals=cohort.grid.n_intervals,
            confounder_dim=p,
            l1=l1,
            a1=a1,
            y1=y1,
            d1=d1,
            f_subject=f_subject,
            lprev=lprev,
            aprev=aprev,
            yprev=yprev,
            lcur=lcur,
            acur=acur,
            ycur=ycur,
            dcur=dcur,
            f_start=f_start,
            f_stop=f_stop,
        )

    def resample(self, indices: np.ndarray) -> "CohortTables":
        """Tables for the cohort made of ``subjects[indices]`` (with
        repetition), as produced by a with-replacement bootstrap draw."""
        idx = np.asarray(indices, dtype=np.int64)
        lengths = self.f_stop[idx] - self.f_start[idx]
        f_stop = np.cumsum(lengths)
        f_start = f_stop - lengths
        total = int(f_stop[-1]) if len(f_stop) else 0
        # source row ids: a ramp within each subject's contiguous block
        rows = (
            np.arange(total, dtype=np.int64)
            - np.repeat(f_start, lengths)
            + np.repeat(self.f_start[idx], lengths)
        )
        return CohortTables(
            n_intervals=self.n_intervals,
            confounder_dim=self.confounder_dim,
            l1=self.l1[idx],
            a1=self.a1[idx],
            y1=self.y1[idx],
            d1=self.d1[idx],
            f_subject=np.repeat(np.arange(len(idx)), lengths),
            lprev=self.lprev[rows],
            aprev=self.aprev[rows],
            yprev=self.yprev[rows],
            lcur=self.lcur[rows],
            acur=self.acur[rows],
            ycur=self.ycur[rows],
            dcur=self.dcur[rows],
            f_start=f_start,
            f_stop=f_stop,
        )


def _design_matrix(ctx: dict, predictors: tuple[str, ...], n: int) -> np.ndarray:
    cols = [np.ones(n)]
    for name in predictors:
        base, comp = _parse_name(name)
        value = ctx[base]
        if base in ("l1", "lprev", "lcur"):
            arr = np.asarray(value)
            if comp is None:
                if arr.shape[1] != 1:
                    raise ValueError(
                        f"predictor {name!r} needs a component suffix for "
                        f"{arr.shape[1]}-dimensional confounders"
                    )
                comp = 0
            cols.append(arr[:, comp])
        elif np.isscalar(value):
            cols.append(np.full(n, float(value)))
        else:
            cols.append(np.asarray(value, dtype=float))
    return np.column_stack(cols)


def _fit_one(spec: GlmSpec, ctx: dict, response: np.ndarray, name: str) -> FittedGlm:
    n = len(response)
    design = _design_matrix(ctx, spec.predictors, n)
    if n <= design.shape[1]:
        raise InsufficientDataError(
            f"{name} model: {n} rows cannot identify {design.shape[1]} coefficients"
        )
    try:
        return fit_glm(design, response, spec)
    except ModelError as exc:
        raise type(exc)(f"{name} model: {exc}") from exc


def fit_sequential_models_tables(
    tables: CohortTables, spec: SequentialModelSpec
) -> SequentialModelSet:
    if not spec.markov:
        raise NotImplementedError(
            "unimplemented: only Markov (one-interval memory) fitting is supported"
        )
    p = tables.confounder_dim
    if tables.n_intervals > 1 and len(tables.dcur) == 0:
        raise InsufficientDataError(
            "follow-up models: no pooled rows (no subject observed alive "
            "past the first interval)"
        )
    base_ctx = {"l1": tables.l1, "a1": tables.a1, "y1": tables.y1}
    theta1 = FittedTriple(
        confounder=tuple(
            _fit_one(
                spec.baseline_confounder,
                base_ctx,
                tables.l1[:, k],
                "baseline confounder",
            )
            for k in range(p)
        ),
        cost=_fit_one(spec.baseline_cost, base_ctx, tables.y1, "baseline cost"),
        death=_fit_one(spec.baseline_death, base_ctx, tables.d1, "baseline death"),
    )
    theta = None
    if tables.n_intervals > 1:
        f_ctx = {
            "lprev": tables.lprev,
            "aprev": tables.aprev,
            "yprev": tables.yprev,
            "lcur": tables.lcur,
            "acur": tables.acur,
            "ycur": tables.ycur,
        }
        theta = FittedTriple(
            confounder=tuple(
                _fit_one(
                    spec.followup_confounder,
                    f_ctx,
                    tables.lcur[:, k],
                    "follow-up confounder",
                )
                for k in range(p)
            ),
            cost=_fit_one(spec.followup_cost, f_ctx, tables.ycur, "follow-up cost"),
            death=_fit_one(spec.followup_death, f_ctx, tables.dcur, "follow-up death"),
        )
    return SequentialModelSet(
        theta1=theta1,
        theta=theta,
        spec=spec,
        n_baseline_obs=tables.n_subjects,
        n_followup_obs=len(tables.dcur),
    )


def fit_sequential_models(cohort: Cohort, spec: SequentialModelSpec) -> SequentialModelSet:
    """Fit the six pooled partial-likelihood models on a validated cohort."""
    return fit_sequential_models_tables(CohortTables.from_cohort(cohort), spec)


# ---------------------------------------------------------------------------
# Monte-Carlo engine
# ---------------------------------------------------------------------------


def _draw(fit: FittedGlm, mean: np.ndarray, rng) -> np.ndarray:
    if fit.family == "bernoulli":
        return (rng.random(mean.shape) < mean).astype(float)
    return sample_response(fit.family, mean, fit.dispersion, rng)


def _subset_ctx(ctx: dict, idx: np.ndarray) -> dict:
    return {k: v if np.isscalar(v) else v[idx] for k, v in ctx.items()}


def _mean_from_ctx(fit: FittedGlm, ctx: dict, n: int) -> np.ndarray:
    """Predicted means without materializing a design matrix; scalar
    context entries (regime treatments) fold into the intercept."""
    coefs = fit.coefficients
    offset = float(coefs[0])
    eta = None
    for k, name in enumerate(fit.predictors, start=1):
        base, comp = _parse_name(name)
        value = ctx[base]
        if base in _L_BASES:
            arr = value[:, 0 if comp is None else comp]
            if comp is None and value.shape[1] != 1:
                raise ValueError(
                    f"predictor {name!r} needs a component suffix for "
                    f"{value.shape[1]}-dimensional confounders"
                )
        elif np.isscalar(value):
            offset += float(coefs[k]) * float(value)
            continue
        else:
            arr = value
        term = coefs[k] * arr
        eta = term if eta is None else eta + term
    if eta is None:
        eta = np.full(n, offset)
    else:
        eta += offset
    if fit.link == "identity":
        return eta
    return expit(eta)


def _sample_confounders(fits, ctx: dict, n: int, rng) -> np.ndarray:
    out = np.empty((n, len(fits)))
    for k, fit in enumerate(fits):
        out[:, k] = _draw(fit, _mean_from_ctx(fit, ctx, n), rng)
    return out


def _confounders_and_cost_mean(conf_fits, cost_fit, ctx, l_key, n, rng):
    """Draw confounders, redrawing rows whose implied cost mean leaves the
    family's domain; returns surviving confounders, cost means, and the
    local indices of paths aborted after the redraw budget."""
    l = _sample_confounders(conf_fits, ctx, n, rng)
    mean = _mean_from_ctx(cost_fit, {**ctx, l_key: l}, n)
    if cost_fit.family not in _POSITIVE:
        return l, mean, np.empty(0, dtype=np.int64)
    bad = np.flatnonzero(mean <= 0.0)
    attempts = 0
    while bad.size and attempts < MAX_REDRAWS:
        sub = _subset_ctx(ctx, bad)
        l[bad] = _sample_confounders(conf_fits, sub, bad.size, rng)
        sub[l_key] = l[bad]
        mean[bad] = _mean_from_ctx(cost_fit, sub, bad.size)
        bad = bad[mean[bad] <= 0.0]
        attempts += 1
    return l, mean, bad


@dataclass(frozen=True)
class PathSample:
    """Simulated potential histories: per-path interval costs, death
    interval (0 when the path survives the horizon), confounder draws
    (when recorded), and the aborted-path mask."""

    costs: np.ndarray
    dead_after: np.ndarray
    aborted: np.ndarray
    confounders: np.ndarray | None = None

    @property
    def totals(self) -> np.ndarray:
        if not self.aborted.any():
            return self.costs.sum(axis=1)
        return self.costs[~self.aborted].sum(axis=1)


def simulate_paths(
    models: SequentialModelSet,
    regime: TreatmentRegime,
    n_paths: int,
    rng,
    record_confounders: bool = True,
) -> PathSample:
    """Run the potential-history sampler for ``n_paths`` paths.

    Treatment is set to the regime, censoring never occurs, and death
    absorbs: once drawn dead, a path accrues zero cost in every later
    interval.
    """
    j_total = len(regime)
    if j_total > 1 and models.theta is None:
        raise ModelError(
            f"regime covers {j_total} intervals but only baseline models are fitted"
        )
    p = models.confounder_dim
    costs = np.zeros((n_paths, j_total))
    confs = np.zeros((n_paths, j_total, p)) if record_confounders else None
    dead_after = np.zeros(n_paths, dtype=np.int64)
    aborted = np.zeros(n_paths, dtype=bool)

    a1 = float(regime.assignments[0])
    ctx = {"a1": a1}
    l, mean, bad = _confounders_and_cost_mean(
        models.theta1.confounder, models.theta1.cost, ctx, "l1", n_paths, rng
    )
    if bad.size:
        aborted[bad] = True
        alive = np.flatnonzero(~aborted)
        l_alive, mean_alive = l[alive], mean[alive]
    else:
        alive = None  # everybody
        l_alive, mean_alive = l, mean
    n_alive = len(mean_alive)
    y = _draw(models.theta1.cost, mean_alive, rng)
    ctx = {"l1": l_alive, "a1": a1, "y1": y}
    death_p = _mean_from_ctx(models.theta1.death, ctx, n_alive)
    died = rng.random(n_alive) < death_p
    if alive is None:
        costs[:, 0] = y
        if confs is not None:
            confs[:, 0, :] = l
        dead_after[died] = 1
    else:
        costs[alive, 0] = y
        if confs is not None:
            confs[alive, 0, :] = l_alive
        dead_after[alive[died]] = 1

    l_prev = l
    y_prev = costs[:, 0].copy()
    for j in range(2, j_total + 1):
        active = np.flatnonzero(~aborted & (dead_after == 0))
        if active.size == 0:
            break
        a_prev = float(regime.assignments[j - 2])
        a_cur = float(regime.assignments[j - 1])
        ctx = {"lprev": l_prev[active], "aprev": a_prev, "yprev": y_prev[active]}
        l_cur, mean, bad = _confounders_and_cost_mean(
            models.theta.confounder,
            models.theta.cost,
            {**ctx, "acur": a_cur},
            "lcur",
            active.size,
            rng,
        )
        if bad.size:
            aborted[active[bad]] = True
            keep = np.setdiff1d(np.arange(active.size), bad, assume_unique=True)
            active = active[keep]
            l_cur, mean = l_cur[keep], mean[keep]
            ctx = _subset_ctx(ctx, keep)
        y = _draw(models.theta.cost, mean, rng)
        full_ctx = {**ctx, "lcur": l_cur, "acur": a_cur, "ycur": y}
        death_p = _mean_from_ctx(models.theta.death, full_ctx, active.size)
        died = rng.random(active.size) < death_p
        costs[active, j - 1] = y
        if confs is not None:
            confs[active, j - 1, :] = l_cur
        dead_after[active[died]] = j
        l_prev[active] = l_cur
        y_prev[active] = y

    if aborted.any():
        costs[aborted] = np.nan
    return PathSample(costs=costs, dead_after=dead_after, aborted=aborted, confounders=confs)


@dataclass(frozen=True)
class GMeanResult:
    """Monte-Carlo estimate of a regime's mean cumulative cost."""

    mean: float
    mc_se: float
    n_paths: int
    n_aborted: int
    interval_means: tuple[float, ...]

    def to_dict(self) -> dict:
        return {
            "mean": self.mean,
            "mc_se": self.mc_se,
            "n_paths": self.n_paths,
            "n_aborted": self.n_aborted,
            "interval_means": list(self.interval_means),
        }


def _block_partial(models, regime, seed, block):
    index, size = block
    rng = substream(seed, "gpath", index)
    sample = simulate_paths(models, regime, size, rng, record_confounders=False)
    if sample.aborted.any():
        kept = sample.costs[~sample.aborted]
        n_aborted = int(sample.aborted.sum())
    else:
        kept = sample.costs
        n_aborted = 0
    totals = kept.sum(axis=1)
    return (
        len(totals),
        float(totals.sum()),
        float(np.dot(totals, totals)),
        kept.sum(axis=0),
        n_aborted,
    )


def g_compute_mean(
    models: SequentialModelSet,
    regime: TreatmentRegime,
    n_paths: int,
    seed: int,
    *,
    workers: int = 1,
) -> GMeanResult:
    """Estimate the mean cumulative cost under ``regime``.

    Simulates ``n_paths`` complete histories from the fitted models and
    averages total cost, reporting the Monte-Carlo standard error of that
    average. One simulated set of paths serves every interval mean.

    Paths whose confounder draws push a gamma/inverse-gaussian cost mean
    out of domain are redrawn up to 100 times and then aborted; more than
    0.1% aborted paths raises SimulationDomainError.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    blocks = []
    start = 0
    index = 0
    while start < n_paths:
        size = min(PATH_BLOCK, n_paths - start)
        blocks.append((index, size))
        start += size
        index += 1
    partials = parallel_map(
        partial(_block_partial, models, regime, seed), blocks, workers
    )
    count = sum(q[0] for q in partials)
    aborted = sum(q[4] for q in partials)
    if aborted > MAX_ABORT_FRACTION * n_paths:
        raise SimulationDomainError(
            f"{aborted}/{n_paths} paths aborted on cost-mean domain violations"
        )
    if count == 0:
        raise SimulationDomainError("all simulated paths aborted")
    total = sum(q[1] for q in partials)
    total_sq = sum(q[2] for q in partials)
    interval_sums = sum(q[3] for q in partials)
    mean = total / count
    if count > 1:
        var = max(0.0, (total_sq - total * total / count) / (count - 1))
        mc_se = float(np.sqrt(var / count))
    else:
        mc_se = 0.0
    return GMeanResult(
        mean=float(mean),
        mc_se=mc_se,
        n_paths=count,
        n_aborted=aborted,
        interval_means=tuple(float(v) for v in interval_sums / count),
    )


@dataclass(frozen=True)
class DeltaEstimate:
    """Difference of two regime means with its Monte-Carlo error."""

    delta: float
    mean_a: GMeanResult
    mean_b: GMeanResult
    mc_se: float

    def to_dict(self) -> dict:
        return {
            "delta": self.delta,
            "mc_se": self.mc_se,
            "mean_a": self.mean_a.to_dict(),
            "mean_b": self.mean_b.to_dict(),
        }


def estimate_delta(
    models: SequentialModelSet,
    regime_a: TreatmentRegime,
    regime_b: TreatmentRegime,
    n_paths: int,
    seed: int,
    *,
    workers: int = 1,
    common_random_numbers: bool = False,
) -> DeltaEstimate:
    """Contrast the mean cumulative cost of two regimes.

    Each regime runs on its own substream by default; with
    ``common_random_numbers`` both reuse one substream, which cancels
    shared Monte-Carlo noise (and makes equal regimes contrast to exactly
    zero). The reported ``mc_se`` combines the two independent errors and
    is conservative under common random numbers.
    """
    seed_a = derive_seed(seed, "regime", 0)
    seed_b = seed_a if common_random_numbers else derive_seed(seed, "regime", 1)
    mean_a = g_compute_mean(models, regime_a, n_paths, seed_a, workers=workers)
    mean_b = g_compute_mean(models, regime_b, n_paths, seed_b, workers=workers)
    return DeltaEstimate(
        delta=mean_a.mean - mean_b.mean,
        mean_a=mean_a,
        mean_b=mean_b,
        mc_se=float(np.hypot(mean_a.mc_se, mean_b.mc_se)),
    )
