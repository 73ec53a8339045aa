"""Longitudinal panel data model for censored interval costs.

A subject's history is a sequence of interval records with within-interval
ordering (censoring, confounders, treatment, cost, death). Conventions:

* ``censored`` marks censoring at the *start* of an interval; every field
  after the first censored record is absent.
* ``dead`` marks death at the *end* of an interval ("following" it), so a
  death falling exactly on a boundary belongs to the earlier interval.
* A subject who dies before being censored has complete cost data and is
  padded with zero-cost post-death records through the full horizon.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import CensoredSubjectError, InputError

__all__ = [
    "IntervalGrid",
    "IntervalRecord",
    "SubjectPanel",
    "Cohort",
    "Violation",
    "ValidationReport",
    "validate_cohort",
    "cumulative_cost",
    "CompleteCaseFlags",
    "complete_case_flags",
    "interval_cost_matrix",
    "baseline_arrays",
    "write_cohort_csv",
    "read_cohort_csv",
]


@dataclass(frozen=True)
class IntervalGrid:
    """Equal partition of [0, horizon] into ``n_intervals`` intervals."""

    n_intervals: int
    horizon: float

    def __post_init__(self):
        if self.n_intervals < 1:
            raise ValueError("grid needs at least one interval")
        if not self.horizon > 0.0:
            raise ValueError("horizon must be positive")

    @property
    def width(self) -> float:
        return self.horizon / self.n_intervals

    def boundary(self, j: int) -> float:
        """The time point closing interval ``j`` (``boundary(0) == 0``)."""
        return self.horizon * j / self.n_intervals

    @property
    def boundaries(self) -> tuple[float, ...]:
        return tuple(self.boundary(j) for j in range(self.n_intervals + 1))


@dataclass(frozen=True)
class IntervalRecord:
    """One interval of one subject's history.

    ``confounders``/``treated``/``cost``/``dead`` are ``None`` when
    unobserved (after censoring) or structurally absent (after death,
    where only ``cost=0`` and ``dead=1`` are kept).
    """

    censored: int
    confounders: tuple[float, ...] | None = None
    treated: int | None = None
    cost: float | None = None
    dead: int | None = None


@dataclass(frozen=True)
class SubjectPanel:
    subject_id: str
    records: tuple[IntervalRecord, ...]

    @property
    def n_observed(self) -> int:
        """Number of fully observed intervals (before any censoring)."""
        for idx, rec in enumerate(self.records):
            if rec.censored:
                return idx
        return len(self.records)

    @property
    def observed(self) -> tuple[IntervalRecord, ...]:
        return self.records[: self.n_observed]

    @property
    def is_censored(self) -> bool:
        return any(rec.censored for rec in self.records)

    @property
    def death_interval(self) -> int | None:
        """1-based interval after which death occurred, if observed."""
        for idx, rec in enumerate(self.observed):
            if rec.dead:
                return idx + 1
        return None


@dataclass(frozen=True)
class Cohort:
    subjects: tuple[SubjectPanel, ...]
    grid: IntervalGrid
    confounder_dim: int = 1

    def __post_init__(self):
        if len(self.subjects) < 1:
            raise InputError("cohort has no subjects")
        if self.confounder_dim < 1:
            raise ValueError("confounder_dim must be positive")

    @property
    def n_subjects(self) -> int:
        return len(self.subjects)


@dataclass(frozen=True)
class Violation:
    subject_id: str
    interval: int
    rule: str
    detail: str = ""


@dataclass(frozen=True)
class ValidationReport:
    passed: bool
    violations: tuple[Violation, ...] = ()
    warnings: tuple[Violation, ...] = ()


def _validate_subject(subject: SubjectPanel, grid: IntervalGrid, dim: int):
    violations: list[Violation] = []
    warnings: list[Violation] = []
    sid = subject.subject_id
    records = subject.records

    if len(records) == 0:
        violations.append(Violation(sid, 0, "empty panel"))
        return violations, warnings
    if records[0].censored:
        violations.append(Violation(sid, 1, "censored at entry"))
        return violations, warnings
    if len(records) > grid.n_intervals:
        violations.append(
            Violation(
                sid,
                len(records),
                "panel longer than horizon",
                f"{len(records)} records > {grid.n_intervals} intervals",
            )
        )

    death_at: int | None = None
    for idx, rec in enumerate(subject.observed):
        j = idx + 1
        if death_at is None:
            missing = [
                name
                for name, value in (
                    ("l", rec.confounders),
                    ("a", rec.treated),
                    ("y", rec.cost),
                    ("d", rec.dead),
                )
                if value is None
            ]
            if missing:
                violations.append(
                    Violation(sid, j, "missing value", ",".join(missing))
                )
                continue
            if len(rec.confounders) != dim:
                violations.append(
                    Violation(
                        sid,
                        j,
                        "ragged confounder dimension",
                        f"got {len(rec.confounders)}, expected {dim}",
                    )
                )
            if rec.cost < 0.0:
                warnings.append(
                    Violation(sid, j, "negative cost", f"y={rec.cost}")
                )
            if rec.dead:
                death_at = j
        else:
            if rec.dead is not None and not rec.dead:
                violations.append(
                    Violation(sid, j, "non-monotone death flag")
                )
            if rec.cost is not None and rec.cost != 0.0:
                violations.append(
                    Violation(sid, j, "cost after death", f"y={rec.cost}")
                )

    if death_at is not None and subject.is_censored:
        violations.append(
            Violation(sid, subject.n_observed + 1, "censoring after death")
        )
    if (
        death_at is not None
        and not subject.is_censored
        and len(records) < grid.n_intervals
    ):
        violations.append(
            Violation(
                sid,
                len(records),
                "incomplete post-death padding",
                f"dead after interval {death_at} but only "
                f"{len(records)}/{grid.n_intervals} records",
            )
        )
    return violations, warnings


def validate_cohort(cohort: Cohort) -> ValidationReport:
    """Check the structural rules each subject panel must obey.

    Violations are data, not exceptions: the report lists each offending
    (subject, interval, rule). Negative costs are reported as warnings
    only, since Normal cost models legitimately produce them.
    """
    violations: list[Violation] = []
    warnings: list[Violation] = []
    for subject in cohort.subjects:
        v, w = _validate_subject(subject, cohort.grid, cohort.confounder_dim)
        violations.extend(v)
        warnings.extend(w)
    return ValidationReport(
        passed=not violations,
        violations=tuple(violations),
        warnings=tuple(warnings),
    )


def cumulative_cost(subject: SubjectPanel, n_intervals: int | None = None) -> float:
    """Total cost over the horizon for a complete case.

    Defined only for subjects observed through every interval or dead
    before censoring; raises CensoredSubjectError otherwise. Pass
    ``n_intervals`` to also reject subjects whose panel ends early
    without an explicit censoring marker.
    """
    if subject.is_censored:
        raise CensoredSubjectError(
            f"cumulative cost undefined for censored subject {subject.subject_id!r}"
        )
    observed = subject.observed
    if n_intervals is not None and len(observed) < n_intervals:
        if subject.death_interval is None:
            raise CensoredSubjectError(
                f"cumulative cost undefined for censored subject "
                f"{subject.subject_id!r} (panel ends at interval {len(observed)})"
            )
    total = 0.0
    for idx, rec in enumerate(observed):
        if rec.cost is None:
            raise InputError(
                f"subject {subject.subject_id!r} has no cost in interval {idx + 1}"
            )
        total += rec.cost
    return total


@dataclass(frozen=True)
class CompleteCaseFlags:
    """Time-scale view of the cohort for the inverse-weighted estimators.

    Per subject: ``death_time`` is the boundary closing the death interval
    (+inf if death is unobserved), ``censor_time`` is the boundary at
    which censoring happened (the horizon for administratively complete
    subjects), ``horizon_time`` is min(death_time, horizon),
    ``observed_time`` is min(death_time, censor_time), ``complete``
    indicates fully observed cost data, and ``death_observed`` indicates
    an observed death.
    """

    subject_ids: tuple[str, ...]
    death_time: np.ndarray = field(repr=False)
    censor_time: np.ndarray = field(repr=False)
    horizon_time: np.ndarray = field(repr=False)
    observed_time: np.ndarray = field(repr=False)
    complete: np.ndarray = field(repr=False)
    death_observed: np.ndarray = field(repr=False)


def complete_case_flags(cohort: Cohort) -> CompleteCaseFlags:
    grid = cohort.grid
    n = cohort.n_subjects
    death_time = np.full(n, np.inf)
    censor_time = np.full(n, grid.horizon)
    for i, subject in enumerate(cohort.subjects):
        k = subject.death_interval
        if k is not None:
            death_time[i] = grid.boundary(k)
        if subject.is_censored:
            censor_time[i] = grid.boundary(subject.n_observed)
    horizon_time = np.minimum(death_time, grid.horizon)
    observed_time = np.minimum(death_time, censor_time)
    complete = censor_time >= horizon_time
    death_observed = censor_time >= death_time
    return CompleteCaseFlags(
        subject_ids=tuple(s.subject_id for s in cohort.subjects),
        death_time=death_time,
        censor_time=censor_time,
        horizon_time=horizon_time,
        observed_time=observed_time,
        complete=complete,
        death_observed=death_observed,
    )


def interval_cost_matrix(cohort: Cohort) -> np.ndarray:
    """(n_subjects, n_intervals) costs; NaN where unobserved, 0 after death."""
    n, j_max = cohort.n_subjects, cohort.grid.n_intervals
    out = np.full((n, j_max), np.nan)
    for i, subject in enumerate(cohort.subjects):
        dead = False
        for idx, rec in enumerate(subject.observed):
            if idx >= j_max:
                break
            out[i, idx] = 0.0 if dead and rec.cost is None else (rec.cost or 0.0)
            if rec.dead:
                dead = True
        if dead and not subject.is_censored:
            first_missing = len(subject.observed)
            out[i, first_missing:] = 0.0
    return out


def baseline_arrays(cohort: Cohort):
    """Baseline confounders (n, p) and treatment (n,) arrays."""
    n, p = cohort.n_subjects, cohort.confounder_dim
    l1 = np.empty((n, p))
    a1 = np.empty(n)
    for i, subject in enumerate(cohort.subjects):
        rec = subject.records[0]
        if rec.censored or rec.confounders is None or rec.treated is None:
            raise InputError(
                f"subject {subject.subject_id!r} has no baseline observation"
            )
        l1[i] = rec.confounders
        a1[i] = rec.treated
    return l1, a1


# ---------------------------------------------------------------------------
# CSV round trip: one row per (subject, interval), columns
# id, j, c, l_1..l_p, a, y, d; empty cells for absent fields.
# ---------------------------------------------------------------------------


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def write_cohort_csv(cohort: Cohort, path) -> None:
    p = cohort.confounder_dim
    header = ["id", "j", "c"] + [f"l_{k + 1}" for k in range(p)] + ["a", "y", "d"]
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        for subject in cohort.subjects:
            for idx, rec in enumerate(subject.records):
                if rec.confounders is None:
                    l_cells = [""] * p
                else:
                    l_cells = [_fmt(v) for v in rec.confounders]
                writer.writerow(
                    [subject.subject_id, idx + 1, int(rec.censored)]
                    + l_cells
                    + [_fmt(rec.treated), _fmt(rec.cost), _fmt(rec.dead)]
                )


def _parse_int(cell: str, what: str, row_num: int) -> int | None:
    if cell == "":
        return None
    try:
        return int(cell)
    except ValueError as exc:
        raise InputError(f"row {row_num}: bad {what} value {cell!r}") from exc


def _parse_float(cell: str, what: str, row_num: int) -> float | None:
    if cell == "":
        return None
    try:
        return float(cell)
    except ValueError as exc:
        raise InputError(f"row {row_num}: bad {what} value {cell!r}") from exc


def read_cohort_csv(path, n_intervals: int | None = None, horizon: float | None = None) -> Cohort:
    """Read a long-format panel CSV back into a Cohort.

    The grid is inferred from the largest interval index present unless
    ``n_intervals`` is given; ``horizon`` defaults to one time unit per
    interval.
    """
    with open(path, newline="") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise InputError("no subjects: empty panel CSV") from None
        header = [h.strip() for h in header]
        if header[:3] != ["id", "j", "c"] or header[-3:] != ["a", "y", "d"]:
            raise InputError(
                "panel CSV header must be id, j, c, l_1..l_p, a, y, d"
            )
        l_cols = header[3:-3]
        if not l_cols or any(
            name != f"l_{k + 1}" for k, name in enumerate(l_cols)
        ):
            raise InputError("confounder columns must be named l_1..l_p")
        p = len(l_cols)

        order: list[str] = []
        rows: dict[str, dict[int, IntervalRecord]] = {}
        for row_num, row in enumerate(reader, start=2):
            if not row or all(cell == "" for cell in row):
                continue
            if len(row) != len(header):
                raise InputError(f"row {row_num}: expected {len(header)} cells")
            sid = row[0]
            j = _parse_int(row[1], "interval", row_num)
            if j is None or j < 1:
                raise InputError(f"row {row_num}: interval index must be >= 1")
            c = _parse_int(row[2], "censoring flag", row_num) or 0
            l_cells = row[3 : 3 + p]
            if all(cell == "" for cell in l_cells):
                confounders = None
            else:
                confounders = tuple(
                    _parse_float(cell, f"l_{k + 1}", row_num) or 0.0
                    for k, cell in enumerate(l_cells)
                )
            record = IntervalRecord(
                censored=c,
                confounders=confounders,
                treated=_parse_int(row[3 + p], "treatment", row_num),
                cost=_parse_float(row[4 + p], "cost", row_num),
                dead=_parse_int(row[5 + p], "death flag", row_num),
            )
            if sid not in rows:
                order.append(sid)
                rows[sid] = {}
            if j in rows[sid]:
                raise InputError(f"row {row_num}: duplicate interval {j} for id {sid!r}")
            rows[sid][j] = record

    if not order:
        raise InputError("no subjects: panel CSV has a header but no rows")

    subjects = []
    for sid in order:
        by_j = rows[sid]
        top = max(by_j)
        missing = [j for j in range(1, top + 1) if j not in by_j]
        if missing:
            raise InputError(
                f"subject {sid!r} is missing interval rows {missing}"
            )
        subjects.append(
            SubjectPanel(sid, tuple(by_j[j] for j in range(1, top + 1)))
        )

    inferred = max(len(s.records) for s in subjects)
    j_total = n_intervals if n_intervals is not None else inferred
    grid = IntervalGrid(j_total, horizon if horizon is not None else float(j_total))
    return Cohort(subjects=tuple(subjects), grid=grid, confounder_dim=p)
