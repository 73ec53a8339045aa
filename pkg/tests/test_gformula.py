"""Sequential fitting and the Monte-Carlo g-computation engine."""

import dataclasses

import numpy as np
import pytest

from costg import (
    CohortTables,
    DgpConfig,
    GlmSpec,
    InsufficientDataError,
    SequentialModelSpec,
    SimulationDomainError,
    TreatmentRegime,
    default_model_spec,
    estimate_delta,
    fit_sequential_models,
    g_compute_mean,
    model_set_from_config,
    simulate_paths,
    substream,
    with_null_effect,
)
from costg.gformula import fit_sequential_models_tables

from conftest import (
    build_cohort,
    censor_marker,
    dead_pad,
    discrete_toy_models,
    exact_discrete_mean,
    information_se,
    make_fit,
    obs,
    subject,
)


class TestCohortTables:
    def test_pooled_rows_respect_death_and_censoring(self):
        # s1: observed 3 intervals then censored -> follow-up rows (1,2), (2,3)
        s1 = subject("1", [obs(0.1, 1, 2.0), obs(0.2, 0, 3.0), obs(0.3, 1, 4.0), censor_marker()])
        # s2: dies after interval 2 -> rows (1,2) only; padding rows excluded
        s2 = subject("2", [obs(0.5, 0, 1.0), obs(0.6, 1, 2.0, d=1), dead_pad(), dead_pad()])
        # s3: dies after interval 1 -> no follow-up rows
        s3 = subject("3", [obs(0.9, 1, 5.0, d=1), dead_pad(), dead_pad(), dead_pad()])
        tables = CohortTables.from_cohort(build_cohort([s1, s2, s3], 4))
        assert tables.n_subjects == 3
        assert len(tables.dcur) == 3
        assert tables.f_subject.tolist() == [0, 0, 1]
        assert tables.yprev.tolist() == [2.0, 3.0, 1.0]
        assert tables.ycur.tolist() == [3.0, 4.0, 2.0]
        assert tables.dcur.tolist() == [0.0, 0.0, 1.0]
        assert tables.lcur[:, 0].tolist() == [0.2, 0.3, 0.6]

    def test_resample_concatenates_subject_blocks(self):
        s1 = subject("1", [obs(0.1, 1, 2.0), obs(0.2, 0, 3.0), obs(0.3, 1, 4.0), censor_marker()])
        s2 = subject("2", [obs(0.5, 0, 1.0), obs(0.6, 1, 2.0, d=1), dead_pad(), dead_pad()])
        tables = CohortTables.from_cohort(build_cohort([s1, s2], 4))
        resampled = tables.resample(np.array([1, 1, 0]))
        assert resampled.n_subjects == 3
        assert resampled.ycur.tolist() == [2.0, 2.0, 3.0, 4.0]
        assert resampled.f_subject.tolist() == [0, 1, 2, 2]
        assert resampled.a1.tolist() == [0.0, 0.0, 1.0]


class TestSequentialFit:
    def test_recovers_generating_coefficients(self, uncensored_cohort_n4000):
        cohort = uncensored_cohort_n4000
        spec = default_model_spec("normal")
        models = fit_sequential_models(cohort, spec)
        tables = CohortTables.from_cohort(cohort)
        cfg = DgpConfig()

        # follow-up cost model against the generating coefficients
        truth = {
            "_intercept": cfg.cost.intercept,
            "lprev": cfg.cost.on_prev_confounder,
            "aprev": cfg.cost.on_prev_treatment,
            "yprev": cfg.cost.on_prev_cost,
            "lcur": cfg.cost.on_cur_confounder,
            "acur": cfg.cost.on_cur_treatment,
        }
        fit = models.theta.cost
        design = np.column_stack(
            [
                np.ones(len(tables.ycur)),
                tables.lprev[:, 0],
                tables.aprev,
                tables.yprev,
                tables.lcur[:, 0],
                tables.acur,
            ]
        )
        se = information_se(fit, design)
        names = ("_intercept",) + fit.predictors
        for k, name in enumerate(names):
            assert abs(fit.coefficients[k] - truth[name]) < 4.5 * se[k], name

        # baseline cost model
        fit1 = models.theta1.cost
        design1 = np.column_stack([np.ones(len(tables.y1)), tables.l1[:, 0], tables.a1])
        se1 = information_se(fit1, design1)
        truth1 = [cfg.cost.baseline_intercept, cfg.cost.baseline_on_confounder, cfg.cost.baseline_on_treatment]
        for k in range(3):
            assert abs(fit1.coefficients[k] - truth1[k]) < 4.5 * se1[k]

        # baseline confounder marginal
        conf = models.theta1.confounder[0]
        assert abs(conf.coefficients[0] - cfg.confounder.baseline_mean) < 4.5 / np.sqrt(4000)
        assert abs(conf.dispersion - cfg.confounder.baseline_var) < 0.1

        # follow-up death model (logit, includes the generating zero for no-treatment terms)
        fitd = models.theta.death
        designd = np.column_stack(
            [np.ones(len(tables.dcur)), tables.lprev[:, 0], tables.lcur[:, 0], tables.ycur]
        )
        sed = information_se(fitd, designd)
        truthd = [cfg.death.intercept, cfg.death.on_prev_confounder, cfg.death.on_cur_confounder, cfg.death.on_cur_cost]
        for k in range(4):
            assert abs(fitd.coefficients[k] - truthd[k]) < 4.5 * sed[k]

        # dispersions: cost sigma^2=2 at baseline and follow-up, confounder sigma_L^2=4
        assert abs(fit1.dispersion - cfg.cost.normal_var) < 0.2
        assert abs(fit.dispersion - cfg.cost.normal_var) < 0.2
        assert abs(models.theta.confounder[0].dispersion - cfg.confounder.var) < 0.3

    def test_everyone_dead_after_first_interval(self):
        panels = [
            subject(str(i), [obs(0.1 * i, i % 2, 2.0, d=1)] + [dead_pad()] * 2)
            for i in range(30)
        ]
        with pytest.raises(InsufficientDataError, match="follow-up"):
            fit_sequential_models(build_cohort(panels, 3), default_model_spec("normal"))

    def test_single_interval_cohort_has_no_followup_triple(self):
        rng = np.random.default_rng(3)
        panels = [
            subject(
                str(i),
                [obs(rng.normal(), i % 2, float(rng.normal(10, 1)), d=int(rng.random() < 0.3))],
            )
            for i in range(60)
        ]
        models = fit_sequential_models(build_cohort(panels, 1), default_model_spec("normal"))
        assert models.theta is None
        assert models.n_followup_obs == 0
        result = g_compute_mean(models, TreatmentRegime.constant(1, 1), 5000, seed=4)
        assert np.isfinite(result.mean)

    def test_non_markov_unimplemented(self):
        spec = dataclasses.replace(default_model_spec("normal"), markov=False)
        panels = [subject(str(i), [obs(0.0, i % 2, 1.0 + i)]) for i in range(10)]
        with pytest.raises(NotImplementedError, match="unimplemented"):
            fit_sequential_models(build_cohort(panels, 1), spec)

    def test_predictor_position_validation(self):
        with pytest.raises(ValueError, match="ycur"):
            SequentialModelSpec(
                baseline_confounder=GlmSpec("normal", "identity", ()),
                baseline_cost=GlmSpec("normal", "identity", ("l1", "a1")),
                baseline_death=GlmSpec("bernoulli", "logit", ("l1", "y1")),
                followup_confounder=GlmSpec("normal", "identity", ("lprev",)),
                followup_cost=GlmSpec("normal", "identity", ("lprev", "ycur")),
                followup_death=GlmSpec("bernoulli", "logit", ("ycur",)),
            )
        with pytest.raises(ValueError, match="y1"):
            SequentialModelSpec(
                baseline_confounder=GlmSpec("normal", "identity", ("y1",)),
                baseline_cost=GlmSpec("normal", "identity", ()),
                baseline_death=GlmSpec("bernoulli", "logit", ()),
                followup_confounder=GlmSpec("normal", "identity", ()),
                followup_cost=GlmSpec("normal", "identity", ()),
                followup_death=GlmSpec("bernoulli", "logit", ()),
            )


class TestEngineAgainstExactEnumeration:
    def test_discrete_toy_matches_exact_sum(self):
        models = discrete_toy_models()
        for regime in (TreatmentRegime((1, 1)), TreatmentRegime((0, 0)), TreatmentRegime((1, 0))):
            exact = exact_discrete_mean(models, regime)
            result = g_compute_mean(models, regime, 300_000, seed=17)
            assert abs(result.mean - exact) <= 4 * result.mc_se, (regime, exact, result.mean)

    def test_three_interval_toy(self):
        base = discrete_toy_models()
        models = dataclasses.replace(base)
        regime = TreatmentRegime((1, 0, 1))
        exact = exact_discrete_mean(models, regime)
        result = g_compute_mean(models, regime, 300_000, seed=23)
        assert abs(result.mean - exact) <= 4 * result.mc_se


class TestEngineProperties:
    def test_interval_means_sum_to_total(self):
        models = model_set_from_config(DgpConfig())
        result = g_compute_mean(models, TreatmentRegime.constant(6, 1), 30_000, seed=5)
        assert sum(result.interval_means) == pytest.approx(result.mean, rel=1e-9)

    def test_absorbing_death(self):
        models = model_set_from_config(DgpConfig())
        sample = simulate_paths(models, TreatmentRegime.constant(6, 0), 10_000, substream(9, "t"))
        dead = sample.dead_after > 0
        for i in np.flatnonzero(dead):
            j = sample.dead_after[i]
            assert np.all(sample.costs[i, j:] == 0.0)
        assert not np.any(sample.aborted)

    def test_null_treatment_coefficients_give_zero_delta(self):
        models = model_set_from_config(with_null_effect(DgpConfig()))
        result = estimate_delta(
            models,
            TreatmentRegime.constant(6, 1),
            TreatmentRegime.constant(6, 0),
            200_000,
            seed=31,
        )
        assert abs(result.delta) <= 4 * result.mc_se

    def test_seed_determinism_and_worker_independence(self):
        models = model_set_from_config(DgpConfig())
        regime = TreatmentRegime.constant(6, 1)
        r1 = g_compute_mean(models, regime, 70_000, seed=13, workers=1)
        r2 = g_compute_mean(models, regime, 70_000, seed=13, workers=1)
        r3 = g_compute_mean(models, regime, 70_000, seed=13, workers=2)
        assert r1 == r2
        assert r1 == r3

    def test_common_random_numbers_identical_regimes_exact_zero(self):
        models = model_set_from_config(DgpConfig())
        regime = TreatmentRegime.constant(6, 1)
        result = estimate_delta(models, regime, regime, 20_000, seed=7, common_random_numbers=True)
        assert result.delta == 0.0

    def test_independent_streams_differ(self):
        models = model_set_from_config(DgpConfig())
        regime = TreatmentRegime.constant(6, 1)
        result = estimate_delta(models, regime, regime, 20_000, seed=7)
        assert result.delta != 0.0
        assert abs(result.delta) <= 5 * result.mc_se

    def test_fitted_models_reproduce_known_means(self, uncensored_cohort_n4000):
        models = fit_sequential_models(uncensored_cohort_n4000, default_model_spec("normal"))
        mu1 = g_compute_mean(models, TreatmentRegime.constant(6, 1), 60_000, seed=41)
        mu0 = g_compute_mean(models, TreatmentRegime.constant(6, 0), 60_000, seed=42)
        assert abs(mu0.mean - 66.6) < 1.0
        assert abs(mu1.mean - 72.0) < 1.0

    def test_domain_violation_abort_budget(self):
        # Follow-up gamma cost mean forced negative through the previous
        # cost, which redraws cannot change: every surviving path aborts.
        theta1 = dataclasses.replace(
            model_set_from_config(DgpConfig()).theta1,
            cost=make_fit("gamma", "identity", ("l1", "a1"), [10.0, 0.0, 0.0], 0.01),
            death=make_fit("bernoulli", "logit", ("l1",), [-30.0, 0.0], 1.0),
        )
        theta = dataclasses.replace(
            model_set_from_config(DgpConfig()).theta,
            cost=make_fit("gamma", "identity", ("yprev",), [5.0, -1.0], 0.01),
        )
        models = dataclasses.replace(
            model_set_from_config(DgpConfig()), theta1=theta1, theta=theta
        )
        with pytest.raises(SimulationDomainError):
            g_compute_mean(models, TreatmentRegime.constant(2, 0), 2000, seed=3)

    def test_regime_validation(self):
        with pytest.raises(ValueError):
            TreatmentRegime((0, 2))
        with pytest.raises(ValueError):
            TreatmentRegime(())


class TestVectorConfounder:
    def _cohort(self, n=500, seed=13):
        # hand-generated two-component confounder process with known
        # structure; death kept rare so follow-up rows are plentiful
        from costg import Cohort, IntervalGrid, IntervalRecord

        rng = np.random.default_rng(seed)
        panels = []
        for i in range(n):
            records = []
            l = rng.normal(size=2)
            y_prev = 0.0
            for j in range(3):
                if j > 0:
                    l = np.array([0.5 * l[0] + 0.1 * y_prev, -0.3 * l[1]]) + rng.normal(size=2)
                a = int(rng.random() < 0.5)
                y = 10.0 + 0.8 * l[0] - 0.5 * l[1] + 1.5 * a + rng.normal()
                d = int(rng.random() < 0.02)
                records.append(
                    IntervalRecord(
                        censored=0,
                        confounders=(float(l[0]), float(l[1])),
                        treated=a,
                        cost=float(y),
                        dead=d,
                    )
                )
                y_prev = y
                if d:
                    records.extend(
                        IntervalRecord(censored=0, cost=0.0, dead=1)
                        for _ in range(3 - j - 1)
                    )
                    break
            panels.append(subject(str(i), records))
        return Cohort(subjects=tuple(panels), grid=IntervalGrid(3, 3.0), confounder_dim=2)

    def test_fit_and_simulate_with_two_components(self):
        cohort = self._cohort()
        spec = default_model_spec("normal", confounder_dim=2)
        models = fit_sequential_models(cohort, spec)
        assert len(models.theta1.confounder) == 2
        assert models.theta.cost.predictors == (
            "lprev_1",
            "lprev_2",
            "aprev",
            "yprev",
            "lcur_1",
            "lcur_2",
            "acur",
        )
        # treatment effect on cost ~ 1.5 in both stages
        k = models.theta1.cost.predictors.index("a1") + 1
        assert abs(models.theta1.cost.coefficients[k] - 1.5) < 0.5
        result = g_compute_mean(models, TreatmentRegime.constant(3, 1), 20_000, seed=6)
        assert np.isfinite(result.mean)
        sample = simulate_paths(models, TreatmentRegime.constant(3, 1), 500, substream(8, "v"))
        assert sample.confounders.shape == (500, 3, 2)


class TestFitFromTables:
    def test_matches_cohort_fit(self, uncensored_cohort_n4000):
        spec = default_model_spec("normal")
        via_cohort = fit_sequential_models(uncensored_cohort_n4000, spec)
        tables = CohortTables.from_cohort(uncensored_cohort_n4000)
        via_tables = fit_sequential_models_tables(tables, spec)
        assert np.array_equal(
            via_cohort.theta.cost.coefficients, via_tables.theta.cost.coefficients
        )
