"""Tests for scenario mixtures, conditioning and CIR transforms"""

import numpy as np
import pytest

from config import Config, ConfigError
from model_graph import TimeGrid
from rate_scenarios import (
    AffineSpec,
    CIRFactor,
    IntensityPath,
    ModelStructureError,
    ScenarioSet,
    posterior,
    survival_transform,
    weighted_terminal_transform,
)


def cir_closed_form(kappa, theta, sigma, z0, tau):
    gamma = np.sqrt(kappa ** 2 + 2 * sigma ** 2)
    growth = np.exp(gamma * tau) - 1
    denominator = (gamma + kappa) * growth + 2 * gamma
    B = 2 * growth / denominator
    A = (2 * gamma * np.exp((kappa + gamma) * tau / 2) / denominator) ** (2 * kappa * theta / sigma ** 2)
    return A * np.exp(-B * z0)


def single_factor(sigma=0.05, offset=0.0):
    factor = CIRFactor(0.5, 0.01, sigma, 0.01, "mortality")
    return AffineSpec([factor], {(0, 1): offset}, {(0, 1): [1.0]})


@pytest.fixture
def three_scenarios():
    paths = [
        IntensityPath({(0, 1): 0.1}),
        IntensityPath({(0, 1): {"type": "piecewise_linear", "knots": [0, 1, 2], "values": [0.1, 0.1, 0.3]}}),
        IntensityPath({(0, 1): 0.3}),
    ]
    return ScenarioSet(paths, [0.2, 0.3, 0.5])


class TestScenarioSet:
    def test_default_weights_are_uniform(self, survival_mixture):
        assert survival_mixture.weights.tolist() == [0.5, 0.5]

    def test_weights_must_sum_to_one(self):
        with pytest.raises(ConfigError):
            ScenarioSet([IntensityPath({(0, 1): 0.1})], [0.9])

    def test_weights_must_be_nonnegative(self):
        paths = [IntensityPath({(0, 1): 0.1}), IntensityPath({(0, 1): 0.2})]
        with pytest.raises(ConfigError):
            ScenarioSet(paths, [1.5, -0.5])

    def test_scenarios_cover_same_transitions(self):
        with pytest.raises(ConfigError):
            ScenarioSet([IntensityPath({(0, 1): 0.1}), IntensityPath({(0, 2): 0.1})])

    def test_product_weights(self, product_asd):
        assert len(product_asd) == 4
        assert product_asd.weights.sum() == pytest.approx(1.0)
        assert np.allclose(product_asd.weights, 0.25)

    def test_comonotone_needs_equal_lengths(self):
        with pytest.raises(ConfigError):
            ScenarioSet.comonotone({(0, 1): [0.1, 0.2], (0, 2): [0.1]})

    def test_from_config_list(self):
        spec = [{"weight": 0.25, "rates": {"0-1": 0.1}}, {"weight": 0.75, "rates": {"0-1": 0.3}}]
        scenarios = ScenarioSet.from_config(spec)
        assert scenarios.weights.tolist() == [0.25, 0.75]
        assert scenarios.scenarios[1].rate((0, 1))(0.0) == pytest.approx(0.3)

    def test_from_config_product(self):
        spec = {"product": {"0-1": [{"rate": 0.1}, {"rate": 0.2}], "0-2": [{"rate": 0.3, "weight": 1.0}]}}
        assert len(ScenarioSet.from_config(spec)) == 2

    def test_from_config_rejects_other_shapes(self):
        with pytest.raises(ConfigError):
            ScenarioSet.from_config({"0-1": 0.1})

    def test_marginal_for_keeps_one_transition(self, dependent_disability):
        single = dependent_disability.marginal_for((1, 2))
        assert single.transitions == frozenset({(1, 2)})
        assert np.array_equal(single.weights, dependent_disability.weights)

    def test_marginal_for_relabels(self, dependent_disability):
        single = dependent_disability.marginal_for((1, 2), as_pair=(0, 1))
        assert single.transitions == frozenset({(0, 1)})
        assert single.scenarios[1].rate((0, 1))(0.0) == pytest.approx(1.0)

    def test_remap(self, survival_mixture):
        moved = survival_mixture.remap({(2, 3): (0, 1), (0, 1): None})
        assert moved.scenarios[1].rate((2, 3))(0.0) == pytest.approx(0.3)
        assert moved.scenarios[1].rate((0, 1))(0.0) == 0.0

    def test_validate_on_rejects_foreign_transition(self, survival_graph, grid_1y):
        with pytest.raises(ConfigError):
            ScenarioSet.deterministic({(1, 0): 0.1}).validate_on(grid_1y, survival_graph)

    def test_validate_on_rejects_negative(self, survival_graph, grid_1y):
        with pytest.raises(ConfigError):
            ScenarioSet.deterministic({(0, 1): -0.1}).validate_on(grid_1y, survival_graph)


class TestPosterior:
    def test_scenarios_agreeing_so_far_share_the_weight(self, three_scenarios):
        weights = posterior(three_scenarios, 0, 1.0)
        assert weights.weights == pytest.approx([0.4, 0.6, 0.0], abs=1e-12)

    def test_distinct_scenario(self, three_scenarios):
        assert posterior(three_scenarios, 2, 1.0).weights == pytest.approx([0.0, 0.0, 1.0])

    def test_diverged_scenarios_drop_out(self, three_scenarios):
        assert posterior(three_scenarios, 1, 1.5).weights == pytest.approx([0.0, 1.0, 0.0])

    def test_zero_prior_observation(self):
        paths = [IntensityPath({(0, 1): 0.1}), IntensityPath({(0, 1): 0.2}), IntensityPath({(0, 1): 0.3})]
        scenarios = ScenarioSet(paths, [0.5, 0.0, 0.5])
        assert posterior(scenarios, 1, 1.0).weights == pytest.approx([0.0, 1.0, 0.0])

    def test_step_sets_comparison_nodes(self):
        bump = {"type": "piecewise_linear", "knots": [0, 0.25, 0.5, 2], "values": [0.1, 0.2, 0.1, 0.1]}
        scenarios = ScenarioSet([IntensityPath({(0, 1): 0.1}), IntensityPath({(0, 1): bump})])
        assert posterior(scenarios, 0, 1.0, step=0.5).weights == pytest.approx([0.5, 0.5])
        assert posterior(scenarios, 0, 1.0, step=0.25).weights == pytest.approx([1.0, 0.0])

    def test_out_of_range(self, three_scenarios):
        with pytest.raises(IndexError):
            posterior(three_scenarios, 3, 1.0)

    def test_conditioned_set(self, three_scenarios):
        conditioned = three_scenarios.conditioned(posterior(three_scenarios, 0, 1.0))
        value = survival_transform(conditioned, [(0, 1)], 1.0, 2.0)
        expected = 0.4 * np.exp(-0.1) + 0.6 * np.exp(-0.2)
        assert value == pytest.approx(expected, rel=1e-12)


class TestScenarioTransforms:
    def test_survival_mixture(self, survival_mixture):
        value = survival_transform(survival_mixture, [(0, 1)], 0.0, 1.0)
        assert value == pytest.approx(0.5 * (np.exp(-0.1) + np.exp(-0.3)), abs=1e-9)

    def test_weighted_terminal(self, survival_mixture):
        value = weighted_terminal_transform(survival_mixture, [(0, 1)], (0, 1), 0.0, 1.0)
        assert value == pytest.approx(0.5 * (0.1 * np.exp(-0.1) + 0.3 * np.exp(-0.3)), abs=1e-9)

    def test_single_scenario(self):
        value = survival_transform(ScenarioSet.deterministic({(0, 1): 0.1}), [(0, 1)], 0.0, 1.0)
        assert value == pytest.approx(0.9048374, abs=1e-7)

    def test_end_before_start(self, survival_mixture):
        with pytest.raises(ValueError):
            survival_transform(survival_mixture, [(0, 1)], 1.0, 0.5)

    def test_weighted_terminal_is_minus_derivative(self, survival_mixture):
        h = 1e-4
        values = survival_transform(survival_mixture, [(0, 1)], 0.0, np.array([1.0 - h, 1.0 + h]))
        derivative = (values[0] - values[1]) / (2 * h)
        weighted = weighted_terminal_transform(survival_mixture, [(0, 1)], (0, 1), 0.0, 1.0)
        assert derivative == pytest.approx(weighted, rel=1e-5)


class TestCIR:
    def test_closed_form(self):
        value = survival_transform(single_factor(), [(0, 1)], 0.0, 5.0)
        assert value == pytest.approx(cir_closed_form(0.5, 0.01, 0.05, 0.01, 5.0), rel=1e-8)

    def test_closed_form_on_array(self):
        T = np.array([0.5, 1.0, 2.5])
        values = survival_transform(single_factor(), [(0, 1)], 0.0, T)
        assert values == pytest.approx(cir_closed_form(0.5, 0.01, 0.05, 0.01, T), rel=1e-8)

    def test_offset_multiplies(self):
        plain = survival_transform(single_factor(), [(0, 1)], 0.0, 2.0)
        shifted = survival_transform(single_factor(offset=0.03), [(0, 1)], 0.0, 2.0)
        assert shifted == pytest.approx(plain * np.exp(-0.06), rel=1e-12)

    def test_vanishing_volatility(self):
        deterministic = survival_transform(single_factor(sigma=0.0), [(0, 1)], 0.0, 3.0)
        nearly = survival_transform(single_factor(sigma=1e-4), [(0, 1)], 0.0, 3.0)
        assert nearly == pytest.approx(deterministic, rel=1e-3)

        factor = CIRFactor(0.5, 0.01, 0.0, 0.01)
        elapsed = np.linspace(0.0, 3.0, 301)
        mean_integral = 0.01 * 3.0
        assert deterministic == pytest.approx(np.exp(-mean_integral), rel=1e-8)
        assert factor.mean_path(elapsed)[-1] == pytest.approx(0.01)

    def test_riccati_step(self):
        exact = cir_closed_form(0.5, 0.01, 0.05, 0.01, 5.0)
        coarse = survival_transform(single_factor(), [(0, 1)], 0.0, 5.0, step=1.0)
        fine = survival_transform(single_factor(), [(0, 1)], 0.0, 5.0, step=0.001)
        assert abs(fine - exact) < abs(coarse - exact)
        assert survival_transform(single_factor(), [(0, 1)], 0.0, 5.0) == survival_transform(
            single_factor(), [(0, 1)], 0.0, 5.0, step=Config.DEFAULT_STEP
        )

    def test_weighted_terminal_is_minus_derivative(self):
        spec = single_factor()
        h = 1e-4
        values = survival_transform(spec, [(0, 1)], 0.0, np.array([2.0 - h, 2.0 + h]))
        derivative = (values[0] - values[1]) / (2 * h)
        weighted = weighted_terminal_transform(spec, [(0, 1)], (0, 1), 0.0, 2.0)
        assert derivative == pytest.approx(weighted, rel=1e-5)

    def test_factor_validation(self):
        with pytest.raises(ConfigError):
            CIRFactor(0.5, 0.0, 0.05, 0.01)
        with pytest.raises(ConfigError):
            CIRFactor(0.5, 0.01, 0.05, -0.01)

    def test_exact_sampling_mean(self):
        factor = CIRFactor(1.0, 0.05, 0.1, 0.02)
        elapsed = np.linspace(0.0, 2.0, 21)
        paths = factor.sample(elapsed, 20000, np.random.default_rng(5))
        assert np.all(paths >= 0)
        se = paths[:, -1].std() / np.sqrt(20000)
        assert abs(paths[:, -1].mean() - factor.mean_path(elapsed)[-1]) < 4 * se

    def test_from_config_unknown_factor(self):
        spec = {"factors": [{"name": "m", "kappa": 1, "theta": 0.1, "sigma": 0.1, "z0": 0.1}],
                "transitions": {"0-1": {"loadings": {"x": 1.0}}}}
        with pytest.raises(ConfigError):
            AffineSpec.from_config(spec)

    def test_marginal_for_relabels(self, free_policy_spec):
        single = free_policy_spec.marginal_for((1, 3), as_pair=(0, 1))
        assert set(single.transitions) == {(0, 1)}
        assert single.offset((0, 1))(0.0) == pytest.approx(0.02)
        assert single.loading((0, 1)).tolist() == [0.0, 1.0]


class TestCommonExit:
    def test_free_policy_structure(self, free_policy_spec, free_policy_graph):
        loading = free_policy_spec.common_exit_loading(free_policy_graph, 0)
        assert loading.tolist() == [1.0, 1.0]

    def test_effective_rates(self, free_policy_spec, free_policy_graph, grid_1y):
        nu = free_policy_spec.effective_rates(free_policy_graph, 0.0, grid_1y.nodes, start=0)
        assert np.allclose(nu[0, 1], 0.03)
        assert np.allclose(nu[1, 3] - nu[0, 3], 0.02)
        assert np.allclose(nu[1, 4], nu[0, 2])
        assert nu[0, 2, 0] == pytest.approx(0.01)

    def test_different_exits(self, disability_graph):
        factor = CIRFactor(0.5, 0.01, 0.05, 0.01, "m")
        spec = AffineSpec([factor], {(0, 1): 0.05}, {(0, 2): [1.0], (1, 2): [2.0]})
        with pytest.raises(ModelStructureError):
            spec.common_exit_loading(disability_graph, 0)

    def test_stochastic_transition_between_transient_states(self, disability_graph):
        factor = CIRFactor(0.5, 0.01, 0.05, 0.01, "m")
        spec = AffineSpec([factor], {}, {(0, 1): [1.0], (1, 2): [1.0]})
        with pytest.raises(ModelStructureError):
            spec.common_exit_loading(disability_graph, 0)

    def test_absorbing_start_needs_no_structure(self, disability_graph):
        factor = CIRFactor(0.5, 0.01, 0.05, 0.01, "m")
        spec = AffineSpec([factor], {}, {(0, 1): [1.0], (1, 2): [2.0]})
        assert spec.common_exit_loading(disability_graph, 2).tolist() == [0.0]

    def test_validate_on(self, survival_graph):
        grid = TimeGrid(0.0, 1.0, 0.1)
        spec = AffineSpec([CIRFactor(0.5, 0.01, 0.05, 0.01)], {(1, 0): 0.1}, {})
        with pytest.raises(ConfigError):
            spec.validate_on(grid, survival_graph)
