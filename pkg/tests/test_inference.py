"""Post-estimation: marginal effects, probability curves, scenario forecasts."""

import dataclasses

import numpy as np
import pandas as pd
import pytest
from numpy.testing import assert_allclose

import volatix as vx
from volatix.errors import InvalidScenario, NotFitted


def fitted_toy(seed=0, n=600, model_class="mnl", n_draws=1):
    layout = vx.CoefficientLayout(crash=("const", "v1", "flag"), near_crash=("const", "v1"))
    spec = vx.ModelSpec(model_class=model_class, layout=layout, n_draws=n_draws, seed=seed)
    params = vx.ParameterSet(beta_crash=[-1.0, 0.8, 0.5], beta_near_crash=[-0.3, 0.4])
    cfg = vx.GeneratorConfig(spec=spec, params=params, n_events=n, seed=seed,
                             covariates={"v1": ("normal", 1.0, 0.5), "flag": ("bernoulli", 0.4)})
    ds = vx.generate(cfg)
    return vx.fit(spec, ds), ds


class TestMarginalEffects:
    def test_simplex_closure(self):
        fit, ds = fitted_toy()
        table = vx.marginal_effects(fit, ds)
        assert len(table.rows) == 3  # (v1, flag) x crash + (v1,) x near_crash; const skipped
        for row in table.rows:
            assert abs(row.effects.sum()) < 1e-10

    def test_absent_covariate_is_exactly_zero(self):
        fit, ds = fitted_toy()
        eff = vx.marginal_effect(fit, ds, "not_present", "crash")
        assert_allclose(eff.effects, np.zeros(3))
        eff2 = vx.marginal_effect(fit, ds, "flag", "near_crash")  # flag only enters crash
        assert_allclose(eff2.effects, np.zeros(3))

    def test_continuous_effect_matches_analytic_logit_derivative(self):
        # Fixed-parameter model: dP_j/dx_k = P_j (delta_jk - P_k) * beta for a
        # covariate entering utility k only.
        layout = vx.CoefficientLayout(crash=("const", "v1"), near_crash=("const",))
        spec = vx.ModelSpec(model_class="mnl", layout=layout, n_draws=1)
        frame = pd.DataFrame({"event_id": [0, 1, 2], "outcome": ["baseline", "crash", "near_crash"],
                              "v1": [0.4, 1.3, 0.8]})
        ds = vx.ChoiceDataset.from_frame(frame, spec)
        fit = vx.fit(spec, ds, compute_se=False)
        beta = fit.estimates.beta_crash[1]
        probs = vx.simulated_probabilities(spec, fit.estimates, ds)
        expected = np.zeros(3)
        for i in range(len(ds)):
            p = probs[i]
            for j in range(3):
                expected[j] += p[j] * ((1.0 if j == 2 else 0.0) - p[2]) * beta / len(ds)
        eff = vx.marginal_effect(fit, ds, "v1", "crash", force=True)
        assert eff.kind == "continuous"
        assert_allclose(eff.effects, expected, atol=1e-6)

    def test_binary_effect_is_discrete_change(self):
        fit, ds = fitted_toy(seed=3)
        eff = vx.marginal_effect(fit, ds, "flag", "crash")
        assert eff.kind == "discrete"
        p1 = vx.mean_probabilities(fit, ds.replace_designs(
            x_crash=np.column_stack([ds.x_crash[:, :2], np.ones(len(ds))])))
        p0 = vx.mean_probabilities(fit, ds.replace_designs(
            x_crash=np.column_stack([ds.x_crash[:, :2], np.zeros(len(ds))])))
        assert_allclose(eff.effects, np.mean(p1 - p0, axis=0), rtol=1e-12)

    def test_requires_converged_fit(self):
        fit, ds = fitted_toy()
        broken = dataclasses.replace(fit, converged=False)
        with pytest.raises(NotFitted):
            vx.marginal_effects(broken, ds)
        vx.marginal_effects(broken, ds, force=True)

    def test_records_layout(self):
        fit, ds = fitted_toy()
        recs = vx.marginal_effects(fit, ds).to_records()
        assert {"covariate", "utility", "kind", "effect_baseline",
                "effect_near_crash", "effect_crash"} <= set(recs[0])

    def test_random_model_effects_reuse_fit_draws(self):
        layout = vx.CoefficientLayout(crash=("const", ("v1", True)), near_crash=("const",))
        spec = vx.ModelSpec(model_class="rp_mnl", layout=layout, n_draws=30, seed=5)
        params = vx.ParameterSet(beta_crash=[-0.8, 0.7], beta_near_crash=[-0.2], omega_sd=[0.8])
        ds = vx.generate(vx.GeneratorConfig(spec=spec, params=params, n_events=300, seed=5,
                                            covariates={"v1": ("normal", 0.0, 1.0)}))
        fit = vx.fit(spec, ds, compute_se=False)
        a = vx.marginal_effects(fit, ds).rows[0].effects
        b = vx.marginal_effects(fit, ds).rows[0].effects
        assert np.array_equal(a, b)


class TestProbabilityCurve:
    def test_flat_grid_constant_curve(self):
        fit, ds = fitted_toy()
        curve = vx.probability_curve(fit, ds, "v1", [0.7, 0.7, 0.7])
        assert_allclose(curve.probabilities[0], curve.probabilities[1])
        assert_allclose(curve.probabilities[1], curve.probabilities[2])

    def test_monotone_for_positive_crash_coefficient(self):
        layout = vx.CoefficientLayout(crash=("const", "v1"), near_crash=("const",))
        spec = vx.ModelSpec(model_class="mnl", layout=layout, n_draws=1)
        frame = pd.DataFrame({"event_id": range(3), "outcome": ["baseline", "near_crash", "crash"],
                              "v1": [0.2, 0.9, 1.7]})
        ds = vx.ChoiceDataset.from_frame(frame, spec)
        params = vx.ParameterSet(beta_crash=[-0.5, 0.9], beta_near_crash=[-0.2])
        fit = vx.fit(spec, ds, compute_se=False)
        fit = dataclasses.replace(fit, estimates=params, converged=True)
        grid = np.linspace(0, 2, 9)
        curve = vx.probability_curve(fit, ds, "v1", grid, target="crash")
        crash_curve = curve.probabilities[:, 2]
        assert np.all(np.diff(crash_curve) >= -1e-15)

    def test_reversed_grid_reverses_curve(self):
        fit, ds = fitted_toy()
        grid = np.linspace(0.2, 1.8, 7)
        fwd = vx.probability_curve(fit, ds, "v1", grid)
        rev = vx.probability_curve(fit, ds, "v1", grid[::-1])
        assert_allclose(rev.probabilities, fwd.probabilities[::-1])

    def test_out_of_support_warning(self):
        fit, ds = fitted_toy()
        curve = vx.probability_curve(fit, ds, "v1", [0.5, 99.0])
        assert curve.warnings and "outside" in curve.warnings[0]

    def test_tidy_records_shape(self):
        fit, ds = fitted_toy()
        recs = vx.probability_curve(fit, ds, "v1", np.linspace(0, 2, 50)).to_records()
        assert len(recs) == 150
        assert {"grid_value", "outcome", "mean_probability"} == set(recs[0])

    def test_slope_matches_marginal_effect_at_point(self):
        fit, ds = fitted_toy()
        g = 0.9
        h = 1e-4 * g
        curve = vx.probability_curve(fit, ds, "v1", [g - h, g + h], target="crash")
        slope = (curve.probabilities[1] - curve.probabilities[0]) / (2 * h)
        pinned = ds.replace_designs(x_crash=np.column_stack([
            ds.x_crash[:, 0], np.full(len(ds), g), ds.x_crash[:, 2]]))
        eff = vx.marginal_effect(fit, pinned, "v1", "crash")
        assert_allclose(slope, eff.effects, atol=1e-6)


class TestScenarios:
    def test_zero_perturbation_zero_deltas(self):
        fit, ds = fitted_toy()
        result = vx.scenario_simulate(fit, ds, vx.Perturbation("v1", "percent", 0.0, "crash"))
        assert_allclose(result.delta_shares, np.zeros(3), atol=0.0)
        assert np.array_equal(result.delta_counts, np.zeros(3, dtype=int))

    def test_hand_computed_percent_decrease(self):
        layout = vx.CoefficientLayout(crash=("const", "v1"), near_crash=("const",))
        spec = vx.ModelSpec(model_class="mnl", layout=layout, n_draws=1)
        frame = pd.DataFrame({"event_id": range(3), "outcome": ["baseline", "near_crash", "crash"],
                              "v1": [0.5, 1.0, 2.0]})
        ds = vx.ChoiceDataset.from_frame(frame, spec)
        fit = vx.fit(spec, ds, compute_se=False)
        fit = dataclasses.replace(fit, estimates=vx.ParameterSet(
            beta_crash=[-0.4, 0.7], beta_near_crash=[-0.1]), converged=True)
        result = vx.scenario_simulate(fit, ds, vx.Perturbation("v1", "percent", 0.10, "crash"))
        bc, bnc = np.array([-0.4, 0.7]), np.array([-0.1])

        def shares(scale):
            rows = []
            for x in (0.5, 1.0, 2.0):
                vc = bc[0] + bc[1] * x * scale
                vnc = bnc[0]
                e = np.exp([0.0, vnc, vc])
                rows.append(e / e.sum())
            return np.mean(rows, axis=0) * 100

        assert_allclose(result.shares, shares(0.9), atol=1e-8)
        assert_allclose(result.delta_shares, shares(0.9) - shares(1.0), atol=1e-8)

    def test_sd_mode_uses_sample_sd(self):
        fit, ds = fitted_toy()
        pert = vx.Perturbation("v1", "sd", 1.0, "crash")
        shifted = vx.apply_perturbation(ds, pert)
        col = ds.crash_names.index("v1")
        sd = np.std(ds.x_crash[:, col], ddof=1)
        assert_allclose(shifted.x_crash[:, col], ds.x_crash[:, col] - sd, rtol=1e-12)

    def test_composition_of_percent_perturbations(self):
        fit, ds = fitted_toy()
        a = vx.apply_perturbation(ds, vx.Perturbation("v1", "percent", 0.2, "crash"))
        ab = vx.apply_perturbation(a, vx.Perturbation("v1", "percent", 0.25, "crash"))
        combined = 1.0 - (1.0 - 0.2) * (1.0 - 0.25)
        single = vx.apply_perturbation(ds, vx.Perturbation("v1", "percent", combined, "crash"))
        assert_allclose(ab.x_crash, single.x_crash, rtol=1e-12)

    def test_wrong_utility_rejected(self):
        fit, ds = fitted_toy()
        with pytest.raises(InvalidScenario):
            vx.scenario_simulate(fit, ds, vx.Perturbation("flag", "percent", 0.1, "near_crash"))

    def test_reduction_scheme_has_seven_scenarios(self):
        scheme = vx.reduction_scheme("v1")
        assert len(scheme) == 7
        labels = [p.label for p in scheme]
        assert labels[:5] == ["10% decrease", "20% decrease", "30% decrease",
                              "40% decrease", "50% decrease"]
        assert labels[5:] == ["1 SD decrease", "2 SD decrease"]

    def test_run_scenarios_includes_baseline(self):
        fit, ds = fitted_toy()
        results = vx.run_scenarios(fit, ds, vx.reduction_scheme("v1"))
        assert len(results) == 8
        base = results[0]
        assert base.label == "no change (baseline)"
        assert_allclose(base.delta_shares, np.zeros(3))
        assert base.shares.sum() == pytest.approx(100.0, abs=1e-8)
        for r in results:
            assert r.shares.sum() == pytest.approx(100.0, abs=1e-8)

    def test_counts_round_half_even_with_denominator(self):
        fit, ds = fitted_toy()
        result = vx.scenario_simulate(fit, ds, vx.Perturbation("v1", "percent", 0.0),
                                      denominator=2319)
        expected = np.asarray([round(s / 100 * 2319) for s in result.shares])
        assert np.array_equal(result.counts, expected)
        assert result.denominator == 2319

    def test_deterministic_across_threads(self):
        layout = vx.CoefficientLayout(crash=("const", ("v1", True)), near_crash=("const",))
        spec = vx.ModelSpec(model_class="rp_mnl", layout=layout, n_draws=25, seed=6)
        params = vx.ParameterSet(beta_crash=[-0.8, 0.7], beta_near_crash=[-0.2], omega_sd=[0.8])
        ds = vx.generate(vx.GeneratorConfig(spec=spec, params=params, n_events=5000, seed=6,
                                            covariates={"v1": ("normal", 0.0, 1.0)}))
        fit = vx.fit(spec, ds, compute_se=False)
        one = vx.run_scenarios(fit, ds, vx.reduction_scheme("v1"), n_threads=1)
        many = vx.run_scenarios(fit, ds, vx.reduction_scheme("v1"), n_threads=8)
        for a, b in zip(one, many):
            assert np.array_equal(a.shares, b.shares)
            assert np.array_equal(a.counts, b.counts)
