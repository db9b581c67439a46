import dataclasses

import numpy as np
import pytest

from glucodyn import reference as ref
from glucodyn.cgm import SubjectRecord
from glucodyn.distributions import quantile_profile
from glucodyn.errors import ConfigurationError, DiagnosticsError, FitError
from glucodyn.pipeline import SmoothingOptions, build_cohort
from glucodyn.regression import (
    ModelSpec,
    _PenalizedSystem,
    build_design,
    diagnostics,
    difference_matrix,
    fit,
    fitted_values,
    ladder_spec,
    model_from_dict,
    model_to_dict,
    penalty_matrix,
    predict,
    riemann_tensor_entries,
    run_model_ladder,
)
from glucodyn.simulate import CohortScenario, OutcomeLink, generate_cohort


def small_cohort(seed=1, n=60, link=None, **scenario_kwargs):
    links = (link,) if link else (
        OutcomeLink(name="y", intercept=2.0, age=0.05, glucose_mean=0.05, noise_sd=0.1),
    )
    scenario = CohortScenario(
        n_subjects=n, days=2, seed=seed, outcome_links=links, **scenario_kwargs
    )
    synth = generate_cohort(scenario)
    cohort = build_cohort(
        synth.series,
        synth.records,
        smoothing=SmoothingOptions(lambda_smooth=5.0),
        threads=1,
    )
    return synth, cohort


class TestPenaltyMatrix:
    def test_second_difference_rows(self):
        d = difference_matrix(4, 2)
        assert np.array_equal(d, [[1.0, -2.0, 1.0, 0.0], [0.0, 1.0, -2.0, 1.0]])

    def test_zero_weights_give_zero_matrix(self):
        assert np.all(penalty_matrix(5, 4, 0.0, 0.0) == 0.0)

    def test_positive_semidefinite_for_random_weights(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            lam_u, lam_p = rng.uniform(0, 100, 2)
            pen = penalty_matrix(6, 5, lam_u, lam_p)
            assert np.all(np.linalg.eigvalsh(pen) >= -1e-10)
            assert np.allclose(pen, pen.T)

    def test_kronecker_structure(self):
        k0, l0 = 5, 4
        du = difference_matrix(k0, 2)
        dp = difference_matrix(l0, 2)
        expected = 2.0 * np.kron(du.T @ du, np.eye(l0)) + 3.0 * np.kron(
            np.eye(k0), dp.T @ dp
        )
        assert np.allclose(penalty_matrix(k0, l0, 2.0, 3.0), expected)


class TestDesign:
    def test_constant_basis_hook(self):
        # with every basis function replaced by 1, each entry is sum_g dp = G/(G+1)
        grid_size = 100
        dp = 1.0 / (grid_size + 1)
        ones_u = np.ones((grid_size, 4))
        ones_p = np.ones((grid_size, 4))
        w = riemann_tensor_entries(ones_u, ones_p, dp)
        assert np.allclose(w, grid_size / (grid_size + 1), atol=1e-15)

    def test_matches_naive_summation(self):
        rng = np.random.default_rng(2)
        bu = rng.uniform(0, 1, size=(100, 4))
        bp = rng.uniform(0, 1, size=(100, 4))
        dp = 1.0 / 101.0
        fast = riemann_tensor_entries(bu, bp, dp)
        slow = ref.oracle_tensor_design_row(bu, bp, dp)
        assert np.max(np.abs(fast - slow)) < 1e-12

    def test_identical_profiles_identical_rows(self):
        values = np.sort(np.random.default_rng(3).normal(100, 10, 50))
        profiles = {
            "a": {"glucose": quantile_profile(values)},
            "b": {"glucose": quantile_profile(values)},
        }
        records = [
            SubjectRecord("a", 40, 95, 5.5, {"y": 1.0}),
            SubjectRecord("b", 50, 100, 5.7, {"y": 2.0}),
        ]
        spec = ModelSpec(channels=("glucose",), k0=4, l0=4)
        design = build_design(profiles, records, spec, "y")
        block = design.blocks[0]
        row_a = design.x[0, block.columns]
        row_b = design.x[1, block.columns]
        assert np.array_equal(row_a, row_b)

    def test_missing_outcomes_dropped(self):
        synth, cohort = small_cohort(
            link=OutcomeLink(name="y", intercept=1.0, noise_sd=0.1, missing_rate=0.3)
        )
        spec = ladder_spec(1)
        design = build_design(cohort.profiles, cohort.records, spec, "y")
        present = [r for r in cohort.records if r.outcomes["y"] is not None]
        assert design.n == len(present) < len(cohort.records)

    def test_mismatched_grid_sizes_rejected(self):
        values = np.random.default_rng(4).normal(0, 1, 30)
        profiles = {
            "a": {"glucose": quantile_profile(values, 100)},
            "b": {"glucose": quantile_profile(values, 50)},
        }
        records = [
            SubjectRecord("a", 40, 95, 5.5, {"y": 1.0}),
            SubjectRecord("b", 50, 100, 5.7, {"y": 2.0}),
        ]
        with pytest.raises(ConfigurationError):
            build_design(profiles, records, ModelSpec(channels=("glucose",)), "y")


class TestFit:
    def test_covariates_only_matches_ols(self):
        synth, cohort = small_cohort()
        spec = ladder_spec(1)
        design = build_design(cohort.profiles, cohort.records, spec, "y")
        model = fit(design, spec)
        beta, *_ = np.linalg.lstsq(design.x, design.y, rcond=None)
        assert abs(model.intercept - beta[0]) < 1e-8
        assert np.max(np.abs(model.linear_coefs - beta[1:])) < 1e-8

    def test_zero_lambda_matches_ols_on_full_basis(self):
        synth, cohort = small_cohort()
        spec = ModelSpec(channels=("glucose",), k0=4, l0=4)
        design = build_design(cohort.profiles, cohort.records, spec, "y")
        system = _PenalizedSystem(design, spec)
        psi, rss, edf, _ = system.solve(np.zeros(2))
        beta, *_ = np.linalg.lstsq(system.x, system.y, rcond=None)
        assert np.max(np.abs(psi - beta)) < 1e-8
        assert edf == pytest.approx(system.p, abs=1e-6)

    def test_signal_recovery_small(self):
        link = OutcomeLink(
            name="y", intercept=2.0, age=1.5, glucose_mean=1.0, noise_sd=0.01
        )
        synth, cohort = small_cohort(seed=9, n=120, link=link)
        spec = ladder_spec(3)
        design = build_design(cohort.profiles, cohort.records, spec, "y", panels=cohort.panels)
        model = fit(design, spec)
        truth = np.array([synth.signals[sid]["truth_y"] for sid in design.subject_ids])
        fv = fitted_values(model, design)
        r2 = 1 - np.var(fv - truth) / np.var(truth)
        assert r2 > 0.99

    def test_duplicated_rows_leave_estimates_unchanged(self):
        synth, cohort = small_cohort(seed=5)
        spec = ModelSpec(channels=("glucose",), k0=4, l0=4)
        design = build_design(cohort.profiles, cohort.records, spec, "y")
        doubled = dataclasses.replace(
            design,
            x=np.vstack([design.x, design.x]),
            y=np.concatenate([design.y, design.y]),
            subject_ids=design.subject_ids * 2,
        )
        # duplication adds no information: at matched smoothing (lambda doubles
        # with the data) the solution is identical
        system = _PenalizedSystem(design, spec)
        system2 = _PenalizedSystem(doubled, spec)
        lams = np.array([3.0, 11.0])
        psi1 = system.solve(lams)[0]
        psi2 = system2.solve(2.0 * lams)[0]
        assert np.max(np.abs(psi1 - psi2)) < 1e-8
        # with the smoothing weight re-selected by GCV the fit stays close,
        # though not bit-identical (the criterion's n-weighting changes)
        fv1 = fitted_values(fit(design, spec), design)
        fv2 = fitted_values(fit(doubled, spec), design)
        assert np.max(np.abs(fv1 - fv2)) < 0.1 * np.std(design.y)

    def test_permutation_invariance(self):
        synth, cohort = small_cohort(seed=8)
        spec = ModelSpec(channels=("glucose",), k0=4, l0=4)
        design = build_design(cohort.profiles, cohort.records, spec, "y")
        rng = np.random.default_rng(0)
        perm = rng.permutation(design.n)
        shuffled = dataclasses.replace(
            design,
            x=design.x[perm],
            y=design.y[perm],
            subject_ids=[design.subject_ids[i] for i in perm],
        )
        m1 = fit(design, spec)
        m2 = fit(shuffled, spec)
        assert abs(m1.intercept - m2.intercept) < 1e-10
        assert np.max(np.abs(m1.linear_coefs - m2.linear_coefs)) < 1e-10
        theta1 = m1.channel_terms["glucose"].theta
        theta2 = m2.channel_terms["glucose"].theta
        assert np.max(np.abs(theta1 - theta2)) < 1e-10

    def test_objective_decrease(self):
        synth, cohort = small_cohort(seed=12)
        spec = ModelSpec(channels=("glucose",), k0=4, l0=4)
        design = build_design(cohort.profiles, cohort.records, spec, "y")
        system = _PenalizedSystem(design, spec)
        lams = np.array([3.0, 7.0])
        psi, rss, _, _ = system.solve(lams)

        def objective(vec):
            resid = system.y - system.x @ vec
            penalty = 0.0
            for j, sl in enumerate(system.block_slices):
                beta = vec[sl]
                pen = lams[2 * j] * system.penalty_u[j] + lams[2 * j + 1] * system.penalty_p[j]
                penalty += beta @ pen @ beta
            return float(resid @ resid + penalty)

        at_solution = objective(psi)
        assert at_solution <= objective(np.zeros_like(psi)) + 1e-9
        # linear-only restricted solution (tensor effects zeroed)
        restricted = np.zeros_like(psi)
        lin = np.linalg.lstsq(system.x[:, : system.n_linear], system.y, rcond=None)[0]
        restricted[: system.n_linear] = lin
        assert at_solution <= objective(restricted) + 1e-9

    def test_edf_monotone_in_lambda(self):
        synth, cohort = small_cohort(seed=3)
        spec = ModelSpec(channels=("glucose",), k0=5, l0=5)
        design = build_design(cohort.profiles, cohort.records, spec, "y")
        system = _PenalizedSystem(design, spec)
        for index in (0, 1):
            last = np.inf
            for lam in np.logspace(-4, 6, 8):
                lams = np.ones(2)
                lams[index] = lam
                edf = system.solve(lams)[2]
                assert edf <= last + 1e-8
                last = edf

    def test_nested_unpenalized_r2_monotone(self):
        synth, cohort = small_cohort(seed=21, n=80)
        rss = {}
        for mid in (3, 4, 5):
            spec = ladder_spec(mid, k0=4, l0=4)
            design = build_design(
                cohort.profiles, cohort.records, spec, "y", panels=cohort.panels
            )
            system = _PenalizedSystem(design, spec)
            n_lams = 2 * len(design.blocks)
            rss[mid] = system.solve(np.zeros(n_lams))[1]
        assert rss[4] <= rss[3] + 1e-9
        assert rss[5] <= rss[4] + 1e-9


class TestPredictAndDiagnostics:
    def test_training_subject_prediction_matches_fitted(self):
        synth, cohort = small_cohort(seed=14)
        spec = ladder_spec(4, k0=5, l0=5)
        design = build_design(cohort.profiles, cohort.records, spec, "y", panels=cohort.panels)
        model = fit(design, spec)
        fv = fitted_values(model, design)
        kept = [r for r in cohort.records if r.subject_id in set(design.subject_ids)]
        result = predict(model, cohort.profiles, kept, panels=cohort.panels)
        assert np.max(np.abs(result.values - fv)) < 1e-10

    def test_intercept_only_predicts_mean(self):
        synth, cohort = small_cohort(seed=15)
        spec = ModelSpec(covariates=(), channels=(), metrics=())
        design = build_design(cohort.profiles, cohort.records, spec, "y")
        model = fit(design, spec)
        assert model.intercept == pytest.approx(float(np.mean(design.y)), abs=1e-10)
        result = predict(model, cohort.profiles, cohort.records[:5])
        assert np.allclose(result.values, np.mean(design.y))

    def test_zeroed_coefficients_predict_intercept(self):
        synth, cohort = small_cohort(seed=16)
        spec = ladder_spec(3, k0=4, l0=4)
        design = build_design(cohort.profiles, cohort.records, spec, "y", panels=cohort.panels)
        model = fit(design, spec)
        zeroed = dataclasses.replace(
            model,
            linear_coefs=np.zeros_like(model.linear_coefs),
            channel_terms={
                ch: dataclasses.replace(term, theta=np.zeros_like(term.theta))
                for ch, term in model.channel_terms.items()
            },
        )
        result = predict(zeroed, cohort.profiles, cohort.records[:7])
        assert np.allclose(result.values, model.intercept)

    def test_prediction_additive_in_channels(self):
        synth, cohort = small_cohort(seed=17)
        spec = ladder_spec(4, k0=4, l0=4)
        design = build_design(cohort.profiles, cohort.records, spec, "y", panels=cohort.panels)
        model = fit(design, spec)
        records = cohort.records[:6]
        full = predict(model, cohort.profiles, records, panels=cohort.panels).values
        no_speed = dataclasses.replace(
            model,
            channel_terms={
                ch: (
                    dataclasses.replace(term, theta=np.zeros_like(term.theta))
                    if ch == "speed"
                    else term
                )
                for ch, term in model.channel_terms.items()
            },
        )
        base = predict(no_speed, cohort.profiles, records, panels=cohort.panels).values
        # recompute the speed contribution directly
        term = model.channel_terms["speed"]
        from glucodyn.distributions import probability_grid

        grid = probability_grid(model.grid_size)
        p_values = term.basis.p_basis_values(grid)
        dp = 1.0 / (model.grid_size + 1)
        contribution = np.array(
            [
                (term.basis.design_rows(
                    cohort.profiles[r.subject_id]["speed"].values, p_values, dp
                )[0] - term.col_means) @ term.theta
                for r in records
            ]
        )
        assert np.max(np.abs(full - base - contribution)) < 1e-10

    def test_missing_channel_rejected_at_predict(self):
        synth, cohort = small_cohort(seed=26)
        spec = ladder_spec(4, k0=4, l0=4)
        design = build_design(cohort.profiles, cohort.records, spec, "y", panels=cohort.panels)
        model = fit(design, spec)
        sid = design.subject_ids[0]
        record = next(r for r in cohort.records if r.subject_id == sid)
        only_glucose = {sid: {"glucose": cohort.profiles[sid]["glucose"]}}
        with pytest.raises(ConfigurationError):
            predict(model, only_glucose, [record])

    def test_out_of_range_values_clamped_and_counted(self):
        synth, cohort = small_cohort(seed=18)
        spec = ladder_spec(3, k0=4, l0=4)
        design = build_design(cohort.profiles, cohort.records, spec, "y", panels=cohort.panels)
        model = fit(design, spec)
        sid = design.subject_ids[0]
        shifted = {
            sid: {
                "glucose": quantile_profile(
                    cohort.profiles[sid]["glucose"].values + 500.0 - 40.0
                )
            }
        }
        record = next(r for r in cohort.records if r.subject_id == sid)
        result = predict(model, shifted, [record])
        assert result.clamped > 0
        assert np.all(np.isfinite(result.values))

    def test_perfect_fit_r2_is_one(self):
        records = [
            SubjectRecord(f"s{i}", 30 + i, 90 + i, 5 + 0.1 * i, {"y": 2.0 + 3.0 * (30 + i)})
            for i in range(12)
        ]
        spec = ModelSpec(covariates=("age",), channels=(), metrics=())
        design = build_design({}, records, spec, "y")
        model = fit(design, spec)
        assert model.diagnostics.r2_adj == pytest.approx(1.0, abs=1e-9)

    def test_intercept_only_r2_is_zero(self):
        synth, cohort = small_cohort(seed=19)
        spec = ModelSpec(covariates=(), channels=(), metrics=())
        design = build_design(cohort.profiles, cohort.records, spec, "y")
        model = fit(design, spec)
        assert model.diagnostics.edf == pytest.approx(1.0, abs=1e-9)
        assert model.diagnostics.r2_adj == pytest.approx(0.0, abs=1e-12)

    def test_diagnostics_recompute_matches_fit(self):
        synth, cohort = small_cohort(seed=20)
        spec = ladder_spec(3, k0=4, l0=4)
        design = build_design(cohort.profiles, cohort.records, spec, "y", panels=cohort.panels)
        model = fit(design, spec)
        recomputed = diagnostics(model, design)
        assert recomputed.rss == pytest.approx(model.diagnostics.rss, rel=1e-9)
        assert recomputed.edf == pytest.approx(model.diagnostics.edf, rel=1e-9)
        assert recomputed.r2_adj == pytest.approx(model.diagnostics.r2_adj, rel=1e-9)

    def test_diagnostics_error_when_n_too_small(self):
        records = [
            SubjectRecord("a", 40, 95, 5.5, {"y": 1.0}),
            SubjectRecord("b", 50, 100, 5.7, {"y": 2.0}),
        ]
        spec = ModelSpec(covariates=("age",), channels=(), metrics=())
        with pytest.raises((DiagnosticsError, FitError)):
            design = build_design({}, records, spec, "y")
            fit(design, spec)

    def test_model_json_roundtrip(self):
        synth, cohort = small_cohort(seed=22)
        spec = ladder_spec(4, k0=4, l0=4)
        design = build_design(cohort.profiles, cohort.records, spec, "y", panels=cohort.panels)
        model = fit(design, spec)
        raw = model_to_dict(model)
        assert raw["schema_version"] == 1
        import json

        clone = model_from_dict(json.loads(json.dumps(raw)))
        records = cohort.records[:6]
        original = predict(model, cohort.profiles, records, panels=cohort.panels).values
        restored = predict(clone, cohort.profiles, records, panels=cohort.panels).values
        assert np.max(np.abs(original - restored)) < 1e-12


class TestModelLadder:
    def test_ladder_shapes_and_metric_terms(self):
        synth, cohort = small_cohort(seed=23, n=70)
        result = run_model_ladder(
            cohort.profiles, cohort.records, cohort.panels, outcomes=["y"], k0=4, l0=4
        )
        assert result.outcomes == ["y"]
        assert sorted(result.entries["y"]) == [1, 2, 3, 4, 5]
        assert result.entries["y"][2].linear_names == [
            "age", "fpg_baseline", "hba1c_baseline", "auc", "mage", "conga1", "tar",
        ]
        assert result.entries["y"][5].linear_names == [
            "age", "fpg_baseline", "hba1c_baseline",
        ]

    def test_include_metrics_flag(self):
        synth, cohort = small_cohort(seed=24, n=70)
        result = run_model_ladder(
            cohort.profiles, cohort.records, cohort.panels,
            outcomes=["y"], model_ids=(3,), k0=4, l0=4, include_metrics=True,
        )
        assert "conga1" in result.entries["y"][3].linear_names

    def test_richer_model_not_worse_with_signal(self):
        link = OutcomeLink(
            name="y", intercept=1.0, glucose_mean=0.1, speed_mean_abs=30.0, noise_sd=0.2
        )
        scenario = CohortScenario(
            n_subjects=110, days=2, seed=31, noise_sd=1.0,
            meal_width_range=(50.0, 130.0), outcome_links=(link,),
        )
        synth = generate_cohort(scenario)
        cohort = build_cohort(
            synth.series, synth.records,
            smoothing=SmoothingOptions(knots_per_day=48, lambda_smooth=1.0),
            threads=None,
        )
        result = run_model_ladder(
            cohort.profiles, cohort.records, cohort.panels,
            outcomes=["y"], model_ids=(3, 4), k0=5, l0=5,
        )
        r2 = {m: e.diagnostics.r2_adj for m, e in result.entries["y"].items()}
        assert r2[4] >= r2[3] - 1e-9
