"""Panel data model: validation rules, cost aggregation, time-scale flags,
and the CSV round trip."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from costg import (
    CensoredSubjectError,
    InputError,
    IntervalGrid,
    complete_case_flags,
    cumulative_cost,
    interval_cost_matrix,
    read_cohort_csv,
    validate_cohort,
    write_cohort_csv,
)

from conftest import build_cohort, censor_marker, dead_pad, obs, subject


class TestValidation:
    def test_cost_after_death_flagged(self):
        s = subject(
            "1",
            [obs(0.1, 1, 2.0), obs(0.2, 0, 3.0, d=1), obs(0, 0, 5.0, 1), dead_pad(), dead_pad(), dead_pad()],
        )
        report = validate_cohort(build_cohort([s], 6))
        rules = {v.rule for v in report.violations}
        assert "cost after death" in rules
        assert not report.passed

    def test_censored_at_entry_flagged(self):
        s = subject("7", [censor_marker()])
        report = validate_cohort(build_cohort([s], 6))
        assert any(v.rule == "censored at entry" and v.subject_id == "7" for v in report.violations)

    def test_well_formed_cohort_passes(self):
        s1 = subject("1", [obs(0.0, 1, 2.0), obs(0.5, 0, 1.0)])
        s2 = subject("2", [obs(1.0, 0, 4.0, d=1), dead_pad()])
        report = validate_cohort(build_cohort([s1, s2], 2))
        assert report.passed
        assert report.violations == ()

    def test_ragged_confounder_dimension(self):
        from costg import IntervalRecord

        # a record carrying a 2-vector inside a dim-1 cohort
        rec = IntervalRecord(censored=0, confounders=(0.0, 1.0), treated=1, cost=2.0, dead=0)
        bad = subject("3", [rec, obs(0.0, 1, 1.0)])
        report = validate_cohort(build_cohort([bad], 2))
        assert any(v.rule == "ragged confounder dimension" for v in report.violations)

    def test_non_monotone_death_flag(self):
        from costg import IntervalRecord

        s = subject(
            "4",
            [
                obs(0.0, 1, 2.0, d=1),
                IntervalRecord(censored=0, cost=0.0, dead=0),
            ],
        )
        report = validate_cohort(build_cohort([s], 2))
        assert any(v.rule == "non-monotone death flag" for v in report.violations)

    def test_incomplete_post_death_padding(self):
        s = subject("5", [obs(0.0, 1, 2.0, d=1)])
        report = validate_cohort(build_cohort([s], 3))
        assert any(v.rule == "incomplete post-death padding" for v in report.violations)

    def test_negative_cost_warns_but_passes(self):
        s = subject("6", [obs(0.0, 1, -2.5), obs(0.1, 0, 1.0)])
        report = validate_cohort(build_cohort([s], 2))
        assert report.passed
        assert any(w.rule == "negative cost" for w in report.warnings)

    def test_missing_value_in_observed_interval(self):
        from costg import IntervalRecord

        s = subject("8", [IntervalRecord(censored=0, confounders=(0.0,), treated=None, cost=1.0, dead=0)])
        report = validate_cohort(build_cohort([s], 1))
        assert any(v.rule == "missing value" for v in report.violations)

    def test_panel_longer_than_horizon(self):
        s = subject("9", [obs(0, 1, 1.0), obs(0, 1, 1.0), obs(0, 1, 1.0)])
        report = validate_cohort(build_cohort([s], 2))
        assert any(v.rule == "panel longer than horizon" for v in report.violations)


class TestCumulativeCost:
    def test_all_zero_costs(self):
        s = subject("1", [obs(0, 0, 0.0) for _ in range(6)])
        assert cumulative_cost(s, 6) == 0.0

    def test_death_with_padding_sums_observed(self):
        s = subject(
            "1",
            [obs(0, 0, 1.0), obs(0, 0, 2.0), obs(0, 0, 3.0, d=1), dead_pad(), dead_pad(), dead_pad()],
        )
        assert cumulative_cost(s, 6) == pytest.approx(6.0)

    def test_censored_subject_rejected(self):
        s = subject("1", [obs(0, 0, 1.0), obs(0, 0, 2.0), obs(0, 0, 3.0), censor_marker()])
        with pytest.raises(CensoredSubjectError):
            cumulative_cost(s, 6)

    def test_short_panel_without_marker_rejected_when_j_known(self):
        s = subject("1", [obs(0, 0, 1.0), obs(0, 0, 2.0)])
        with pytest.raises(CensoredSubjectError):
            cumulative_cost(s, 6)

    def test_padding_invariance(self):
        core = [obs(0, 1, 4.0), obs(0, 1, 1.5, d=1)]
        bare = subject("1", core)
        padded = subject("1", core + [dead_pad(), dead_pad()])
        assert cumulative_cost(bare) == cumulative_cost(padded, 4)


class TestCompleteCaseFlags:
    def _cohort(self):
        dead2 = subject(
            "dead2", [obs(0, 1, 2.0), obs(0, 1, 1.0, d=1), dead_pad(), dead_pad(), dead_pad(), dead_pad()]
        )
        survivor = subject("surv", [obs(0, 0, 1.0) for _ in range(6)])
        cens4 = subject("cens4", [obs(0, 1, 1.0), obs(0, 1, 1.0), obs(0, 1, 1.0), censor_marker()])
        return build_cohort([dead2, survivor, cens4], 6)

    def test_hand_traced_values(self):
        flags = complete_case_flags(self._cohort())
        by_id = dict(zip(flags.subject_ids, range(3)))

        i = by_id["dead2"]  # dead after interval 2, never censored
        assert flags.horizon_time[i] == 2.0
        assert flags.complete[i]
        assert flags.death_observed[i]
        assert flags.observed_time[i] == 2.0

        i = by_id["surv"]  # survives all intervals uncensored
        assert flags.horizon_time[i] == 6.0
        assert flags.complete[i]
        assert not flags.death_observed[i]

        i = by_id["cens4"]  # censored at the start of interval 4
        assert not flags.complete[i]
        assert flags.observed_time[i] == 3.0
        assert flags.censor_time[i] == 3.0

    def test_complete_iff_cumulative_cost_defined(self):
        cohort = self._cohort()
        flags = complete_case_flags(cohort)
        for i, s in enumerate(cohort.subjects):
            if flags.complete[i]:
                cumulative_cost(s, 6)
            else:
                with pytest.raises(CensoredSubjectError):
                    cumulative_cost(s, 6)


class TestIntervalCostMatrix:
    def test_death_padding_and_censoring(self):
        dead = subject("d", [obs(0, 1, 2.0, d=1), dead_pad(), dead_pad()])
        cens = subject("c", [obs(0, 1, 3.0), censor_marker()])
        mat = interval_cost_matrix(build_cohort([dead, cens], 3))
        assert mat[0].tolist() == [2.0, 0.0, 0.0]
        assert mat[1, 0] == 3.0
        assert np.isnan(mat[1, 1]) and np.isnan(mat[1, 2])


class TestCsvRoundTrip:
    def _cohort(self):
        full = subject("a", [obs(0.25, 1, 2.5), obs(-0.5, 0, -1.25)])
        dead = subject("b", [obs(1.0, 0, 4.0, d=1), dead_pad()])
        cens = subject("c", [obs(0.125, 1, 3.0), censor_marker()])
        return build_cohort([full, dead, cens], 2)

    def test_round_trip_identity(self, tmp_path):
        cohort = self._cohort()
        path = tmp_path / "panel.csv"
        write_cohort_csv(cohort, path)
        back = read_cohort_csv(path, n_intervals=2)
        assert back == cohort

    def test_grid_inferred_from_rows(self, tmp_path):
        cohort = self._cohort()
        path = tmp_path / "panel.csv"
        write_cohort_csv(cohort, path)
        back = read_cohort_csv(path)
        assert back.grid == IntervalGrid(2, 2.0)

    def test_empty_file_rejected(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("")
        with pytest.raises(InputError, match="no subjects"):
            read_cohort_csv(path)

    def test_header_only_rejected(self, tmp_path):
        path = tmp_path / "header.csv"
        path.write_text("id,j,c,l_1,a,y,d\n")
        with pytest.raises(InputError, match="no subjects"):
            read_cohort_csv(path)

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("id,j,c,x_1,a,y,d\n1,1,0,0.0,1,2.0,0\n")
        with pytest.raises(InputError):
            read_cohort_csv(path)

    def test_duplicate_interval_rejected(self, tmp_path):
        path = tmp_path / "dup.csv"
        path.write_text("id,j,c,l_1,a,y,d\n1,1,0,0.0,1,2.0,0\n1,1,0,0.0,1,2.0,0\n")
        with pytest.raises(InputError, match="duplicate"):
            read_cohort_csv(path)

    def test_gap_in_intervals_rejected(self, tmp_path):
        path = tmp_path / "gap.csv"
        path.write_text("id,j,c,l_1,a,y,d\n1,1,0,0.0,1,2.0,0\n1,3,0,0.0,1,2.0,0\n")
        with pytest.raises(InputError, match="missing interval"):
            read_cohort_csv(path)


@settings(max_examples=30, deadline=None)
@given(
    costs=st.lists(
        st.floats(min_value=-10, max_value=50, allow_nan=False), min_size=1, max_size=6
    ),
    death_last=st.booleans(),
)
def test_round_trip_arbitrary_complete_subject(tmp_path_factory, costs, death_last):
    j_total = 6
    records = [obs(i * 0.5, i % 2, c) for i, c in enumerate(costs)]
    if death_last and len(records) <= j_total:
        records[-1] = obs((len(records) - 1) * 0.5, (len(records) - 1) % 2, costs[-1], d=1)
        records += [dead_pad()] * (j_total - len(records))
    elif len(records) < j_total:
        records.append(censor_marker())
    cohort = build_cohort([subject("s", records)], j_total)
    path = tmp_path_factory.mktemp("rt") / "p.csv"
    write_cohort_csv(cohort, path)
    assert read_cohort_csv(path, n_intervals=j_total) == cohort
