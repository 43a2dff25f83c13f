"""Tests for the three forward rate definitions, replacement checks and repair"""

import dataclasses

import numpy as np
import pytest

from config import Config
from forward_rates import (
    ForwardRateCurve,
    RepairError,
    SingularSystemError,
    calibration_quantities,
    equations_rates,
    marginal_rates,
    rates_for,
    repair_model,
    single_state_rank_diagnostic,
    statewise_rates,
    verify_replacement,
)
from kolmogorov import (
    TransitionCurve,
    expected_cash_flow,
    mixture_curve,
    oracle_cash_flow,
    read_curve_csv,
    solve_forward,
    write_curve_csv,
)
from model_graph import GraphError, ModelGraph, PaymentSpec, TimeGrid, reachability
from rate_scenarios import AffineSpec, ScenarioSet, posterior, survival_transform
from run_config import RunConfig
from time_functions import SumFunction


def finite_gap(a, b):
    both = np.isfinite(a) & np.isfinite(b)
    return float(np.max(np.abs(a[both] - b[both]))) if both.any() else 0.0


@pytest.fixture
def disability_without_direct_death():
    """No direct death from active; disability and death of the disabled move together"""
    return ScenarioSet.comonotone({
        (0, 1): [0.05, 0.5],
        (0, 2): [0.0, 0.0],
        (1, 2): [0.05, 1.0],
    })


class TestMarginal:
    def test_survival_mixture(self, survival_mixture, survival_graph, grid_1y):
        curve = marginal_rates(survival_mixture, survival_graph, grid_1y)
        assert curve.rate((0, 1))[-1] == pytest.approx(0.1900333, abs=1e-6)

    def test_limit_at_base_time_is_mean_intensity(self, survival_mixture, survival_graph, grid_1y):
        curve = marginal_rates(survival_mixture, survival_graph, grid_1y)
        assert curve.rate((0, 1))[0] == pytest.approx(0.2, abs=1e-12)

    def test_deterministic_intensities(self, disability_graph, grid_1y):
        source = ScenarioSet.deterministic({(0, 1): 0.1, (0, 2): 0.02, (1, 2): 0.3})
        curve = marginal_rates(source, disability_graph, grid_1y)
        assert np.allclose(curve.rate((1, 2)), 0.3, atol=1e-12)
        assert curve.state is None

    def test_nonnegative(self, dependent_disability, disability_graph, grid_2y):
        curve = marginal_rates(dependent_disability, disability_graph, grid_2y)
        assert np.all(curve.values >= -1e-9)

    def test_posterior_weights(self, survival_mixture, survival_graph):
        grid = TimeGrid(0.5, 1.5, 0.01)
        weights = posterior(survival_mixture, 1, 0.5)
        curve = marginal_rates(survival_mixture, survival_graph, grid, posterior=weights)
        assert np.allclose(curve.rate((0, 1)), 0.3, atol=1e-12)

    def test_affine_offset_only_transition(self, free_policy_spec, free_policy_graph, grid_1y):
        curve = marginal_rates(free_policy_spec, free_policy_graph, grid_1y)
        assert np.allclose(curve.rate((0, 1)), 0.03, atol=1e-12)


class TestEquations:
    def test_survival_mixture(self, survival_mixture, survival_graph, grid_1y):
        mixture = mixture_curve(survival_mixture, survival_graph, grid_1y)
        curve = equations_rates(mixture, survival_graph)
        assert curve.rate((0, 1))[-1] == pytest.approx(0.1900333, abs=1e-6)

    def test_deterministic_intensities(self, disability_graph, grid_1y):
        source = ScenarioSet.deterministic({(0, 1): 0.1, (0, 2): 0.02, (1, 2): 0.3})
        mixture = mixture_curve(source, disability_graph, grid_1y)
        curve = equations_rates(mixture, disability_graph)
        for pair, value in [((0, 1), 0.1), ((0, 2), 0.02), ((1, 2), 0.3)]:
            assert np.allclose(curve.rate(pair), value, atol=1e-7)

    def test_residual_is_tiny(self, dependent_disability, disability_graph, grid_2y):
        mixture = mixture_curve(dependent_disability, disability_graph, grid_2y)
        curve = equations_rates(mixture, disability_graph)
        assert curve.residual.shape == (len(grid_2y),)
        assert np.max(curve.residual) <= 1e-10

    def test_triangular_and_least_squares_agree(self, dependent_disability, disability_graph, grid_1y):
        mixture = mixture_curve(dependent_disability, disability_graph, grid_1y)
        triangular = equations_rates(mixture, disability_graph, method="triangular")
        general = equations_rates(mixture, disability_graph, method="lstsq")
        for pair in disability_graph.sorted_transitions():
            assert np.max(np.abs(triangular.rate(pair) - general.rate(pair))) < 1e-8

    def test_reproduces_every_row(self, dependent_disability, disability_graph, grid_2y):
        mixture = mixture_curve(dependent_disability, disability_graph, grid_2y)
        curve = equations_rates(mixture, disability_graph)
        rebuilt = solve_forward(curve, grid_2y)
        assert np.max(np.abs(rebuilt.matrices - mixture.matrices)) < 1e-6

    def test_zero_intensity_gets_nonzero_rate(self, disability_without_direct_death, disability_graph, grid_2y):
        mixture = mixture_curve(disability_without_direct_death, disability_graph, grid_2y)
        curve = equations_rates(mixture, disability_graph)
        assert np.max(np.abs(curve.rate((0, 2)))) > 1e-4

    def test_non_decrement_uses_least_squares(self, grid_1y):
        graph = ModelGraph(2, frozenset({(0, 1), (1, 0)}))
        source = ScenarioSet.comonotone({(0, 1): [0.2, 0.4], (1, 0): [0.3, 0.1]})
        mixture = mixture_curve(source, graph, grid_1y)
        curve = equations_rates(mixture, graph)
        assert curve.residual is not None
        rebuilt = solve_forward(curve, grid_1y)
        assert np.max(np.abs(rebuilt.matrices - mixture.matrices)) < 1e-6

    def test_triangular_needs_decrement(self, grid_1y):
        graph = ModelGraph(2, frozenset({(0, 1), (1, 0)}))
        source = ScenarioSet.deterministic({(0, 1): 0.2, (1, 0): 0.3})
        mixture = mixture_curve(source, graph, grid_1y)
        with pytest.raises(GraphError):
            equations_rates(mixture, graph, method="triangular")

    def test_vanishing_diagonal(self, survival_graph):
        grid = TimeGrid(0.0, 1.0, 0.5)
        matrices = np.array([np.eye(2), [[0.5, 0.5], [0.0, 1.0]], [[0.0, 1.0], [0.0, 1.0]]])
        curve = TransitionCurve(grid, matrices, "mixture", derivative=np.zeros_like(matrices))
        with pytest.raises(SingularSystemError):
            equations_rates(curve, survival_graph)

    def test_needs_derivative(self, survival_graph, grid_1y):
        curve = solve_forward(lambda s: np.array([[0.0, 0.1], [0.0, 0.0]]), grid_1y)
        with pytest.raises(ValueError):
            equations_rates(curve, survival_graph)


class TestStatewise:
    def test_survival_mixture(self, survival_mixture, survival_graph, grid_1y):
        curve = statewise_rates(survival_mixture, survival_graph, 0, grid_1y)
        assert curve.rate((0, 1))[-1] == pytest.approx(0.1900333, abs=1e-6)
        assert curve.label() == "statewise-state0"

    def test_deterministic_intensities(self, disability_graph, grid_1y):
        source = ScenarioSet.deterministic({(0, 1): 0.1, (0, 2): 0.02, (1, 2): 0.3})
        curve = statewise_rates(source, disability_graph, 0, grid_1y)
        assert np.allclose(curve.rate((0, 1)), 0.1, atol=1e-12)
        assert np.allclose(curve.rate((1, 2))[1:], 0.3, atol=1e-12)

    def test_zero_intensity_gives_zero_rate(self, disability_without_direct_death, disability_graph, grid_2y):
        curve = statewise_rates(disability_without_direct_death, disability_graph, 0, grid_2y)
        assert np.all(curve.rate((0, 2)) == 0.0)

    def test_undefined_nodes_are_gaps(self, dependent_disability, disability_graph, grid_1y):
        from_active = statewise_rates(dependent_disability, disability_graph, 0, grid_1y)
        assert list(from_active.undefined_nodes()) == [(1, 2)]
        assert from_active.undefined_nodes()[(1, 2)].tolist() == [0]

        from_disabled = statewise_rates(dependent_disability, disability_graph, 1, grid_1y)
        gaps = from_disabled.undefined_nodes()
        assert len(gaps[(0, 1)]) == len(grid_1y)
        assert not np.isnan(from_disabled.rate((1, 2))).any()

    def test_disabled_state_rate_equals_equations_rate(self, dependent_disability, disability_graph, grid_2y):
        mixture = mixture_curve(dependent_disability, disability_graph, grid_2y)
        equations = equations_rates(mixture, disability_graph)
        statewise = statewise_rates(dependent_disability, disability_graph, 1, grid_2y, mixture=mixture)
        assert np.max(np.abs(equations.rate((1, 2)) - statewise.rate((1, 2)))) < 1e-8

    def test_competing_risks_coincide_with_equations(self, competing_mixture, competing_graph, grid_2y):
        mixture = mixture_curve(competing_mixture, competing_graph, grid_2y)
        equations = equations_rates(mixture, competing_graph)
        statewise = statewise_rates(competing_mixture, competing_graph, 0, grid_2y, mixture=mixture)
        for pair in competing_graph.sorted_transitions():
            assert np.max(np.abs(equations.rate(pair) - statewise.rate(pair))) < 1e-8


class TestIndependence:
    def test_independent_transitions(self, product_asd, asd_graph, grid_2y):
        marginal = marginal_rates(product_asd, asd_graph, grid_2y)
        equations = equations_rates(mixture_curve(product_asd, asd_graph, grid_2y), asd_graph)
        for pair in asd_graph.sorted_transitions():
            assert np.max(np.abs(marginal.rate(pair) - equations.rate(pair))) < 1e-7

    def test_dependent_transitions(self, comonotone_asd, asd_graph, grid_2y):
        marginal = marginal_rates(comonotone_asd, asd_graph, grid_2y)
        equations = equations_rates(mixture_curve(comonotone_asd, asd_graph, grid_2y), asd_graph)
        assert np.max(np.abs(marginal.rate((0, 1)) - equations.rate((0, 1)))) > 1e-3


class TestFreePolicy:
    def test_deterministic_conversion_rate(self, free_policy_spec, free_policy_graph, grid_2y):
        mixture = mixture_curve(free_policy_spec, free_policy_graph, grid_2y)
        equations = equations_rates(mixture, free_policy_graph)
        statewise = statewise_rates(free_policy_spec, free_policy_graph, 0, grid_2y)
        assert np.allclose(equations.rate((0, 1)), 0.03, atol=1e-8)
        assert np.allclose(statewise.rate((0, 1)), 0.03, atol=1e-12)

    def test_surrender_spread(self, free_policy_spec, free_policy_graph, grid_2y):
        mixture = mixture_curve(free_policy_spec, free_policy_graph, grid_2y)
        equations = equations_rates(mixture, free_policy_graph)
        assert np.max(np.abs(equations.rate((1, 3)) - equations.rate((0, 3)) - 0.02)) < 1e-8

        statewise = statewise_rates(free_policy_spec, free_policy_graph, 0, grid_2y)
        spread = statewise.rate((1, 3)) - statewise.rate((0, 3))
        assert np.nanmax(np.abs(spread - 0.02)) < 1e-8

    def test_transforms_follow_grid_step(self, free_policy_spec, free_policy_graph):
        grid = TimeGrid(0.0, 2.0, 0.5)
        table = calibration_quantities("marginal", free_policy_spec, free_policy_graph, 0, grid)
        column = table["survival_0_2"].to_numpy()
        assert np.array_equal(column, survival_transform(free_policy_spec, [(0, 2)], 0.0, grid.nodes, 0.5))
        assert not np.array_equal(column, survival_transform(free_policy_spec, [(0, 2)], 0.0, grid.nodes))

    def test_statewise_rates_do_not_depend_on_state(self, free_policy_spec, free_policy_graph, grid_2y):
        from_active = statewise_rates(free_policy_spec, free_policy_graph, 0, grid_2y)
        from_free = statewise_rates(free_policy_spec, free_policy_graph, 1, grid_2y)
        for pair in [(1, 3), (1, 4)]:
            assert finite_gap(from_active.rate(pair), from_free.rate(pair)) < 1e-8


class TestReplacement:
    def test_equations_reproduce_occupancy_not_densities(self, dependent_disability, disability_graph, grid_2y):
        mixture = mixture_curve(dependent_disability, disability_graph, grid_2y)
        report = verify_replacement(equations_rates(mixture, disability_graph), mixture, 0)
        assert report.occupancy_pass
        assert report.occupancy_error <= 1e-6
        assert report.density_error > 1e-3
        assert not report.density_pass

    def test_statewise_pass_both(self, dependent_disability, disability_graph, grid_2y):
        mixture = mixture_curve(dependent_disability, disability_graph, grid_2y)
        rates = statewise_rates(dependent_disability, disability_graph, 0, grid_2y, mixture=mixture)
        report = verify_replacement(rates, mixture, 0)
        assert report.occupancy_pass and report.density_pass and report.net_flux_pass

    def test_marginal_fails_occupancy(self, dependent_disability, disability_graph, grid_2y):
        mixture = mixture_curve(dependent_disability, disability_graph, grid_2y)
        report = verify_replacement(marginal_rates(dependent_disability, disability_graph, grid_2y), mixture, 0)
        assert report.occupancy_error > 1e-3

    def test_report_describe(self, survival_mixture, survival_graph, grid_1y):
        mixture = mixture_curve(survival_mixture, survival_graph, grid_1y)
        report = verify_replacement(marginal_rates(survival_mixture, survival_graph, grid_1y), mixture, 0)
        described = report.describe()
        assert described["definition"] == "marginal"
        assert described["occupancy_pass"] is True


class TestDiagnostics:
    def test_single_state_system_is_underdetermined(self, dependent_disability, disability_graph, grid_1y):
        mixture = mixture_curve(dependent_disability, disability_graph, grid_1y)
        diagnostic = single_state_rank_diagnostic(mixture, 0)
        assert diagnostic.equations == 2
        assert diagnostic.unknowns == 6
        assert diagnostic.deficiency >= 4

    def test_calibration_quantities(self, dependent_disability, disability_graph, grid_1y):
        marginal = calibration_quantities("marginal", dependent_disability, disability_graph, 0, grid_1y)
        assert list(marginal.columns) == ["T", "survival_0_1", "survival_0_2", "survival_1_2"]

        equations = calibration_quantities("equations", dependent_disability, disability_graph, 0, grid_1y)
        assert "P_1_2" in equations.columns and len(equations) == len(grid_1y)

        statewise = calibration_quantities("statewise", dependent_disability, disability_graph, 0, grid_1y)
        assert {"occupancy_0", "density_1_2"} <= set(statewise.columns)

        with pytest.raises(ValueError):
            calibration_quantities("forward", dependent_disability, disability_graph, 0, grid_1y)

    def test_rates_for_dispatch(self, survival_mixture, survival_graph, grid_1y):
        assert rates_for("equations", survival_mixture, survival_graph, grid_1y).definition == "equations"
        with pytest.raises(ValueError):
            rates_for("forward", survival_mixture, survival_graph, grid_1y)


def test_curve_csv_round_trip(tmp_path, dependent_disability, disability_graph, grid_1y):
    curve = statewise_rates(dependent_disability, disability_graph, 0, grid_1y)
    path = write_curve_csv(curve, tmp_path / "rates.csv")
    back = read_curve_csv(path)
    assert isinstance(back, ForwardRateCurve)
    assert back.transitions == curve.transitions
    assert np.isnan(back.rate((1, 2))[0])
    assert finite_gap(back.rate((1, 2)), curve.rate((1, 2))) < 1e-14


class TestRepair:
    def test_disability_graph(self, disability_graph, disability_payments):
        repaired = repair_model(disability_graph, disability_payments)
        assert repaired.augmented.num_states == 4
        assert repaired.augmented.transitions == frozenset({(0, 1), (1, 2), (0, 3)})
        assert repaired.state_map == (0, 1, 2, 2)
        assert repaired.edge_map[(0, 3)] == (0, 2)
        assert repaired.induced == [(0, 2)]
        assert repaired.augmented.labels[3] == "dead via active"

    def test_payments_follow_routes(self, disability_graph, disability_payments):
        payments = repair_model(disability_graph, disability_payments).payments
        assert payments.transition[(0, 1)](0.0) == pytest.approx(0.5)
        assert payments.transition[(1, 2)](0.0) == pytest.approx(2.0)
        assert payments.transition[(0, 3)](0.0) == pytest.approx(1.0)
        assert isinstance(payments.transition[(0, 2)], SumFunction)
        assert payments.transition[(0, 2)](0.0) == pytest.approx(2.5)
        assert set(payments.sojourn) == {1}

    def test_remapped_intensities(self, disability_graph, disability_payments, dependent_disability):
        repaired = repair_model(disability_graph, disability_payments)
        source = repaired.remap_source(dependent_disability)
        assert source.transitions == frozenset({(0, 1), (1, 2), (0, 3)})
        assert source.scenarios[1].rate((0, 3))(0.0) == pytest.approx(0.02)

    def test_cash_flow_matches_original_oracle(
        self, disability_graph, disability_payments, dependent_disability, grid_2y
    ):
        repaired = repair_model(disability_graph, disability_payments)
        source = repaired.remap_source(dependent_disability)
        mixture = mixture_curve(source, repaired.augmented, grid_2y)
        rates = equations_rates(mixture, repaired.augmented)
        assert np.max(np.abs(rates.rate((0, 2)))) > 1e-4

        repaired_value = expected_cash_flow(solve_forward(rates, grid_2y), rates, repaired.payments, 0).total
        oracle = oracle_cash_flow(dependent_disability, disability_graph, disability_payments, 0, grid_2y).total
        assert repaired_value == pytest.approx(oracle, abs=1e-6)

    def test_single_predecessor_is_unchanged(self, survival_graph):
        payments = PaymentSpec.from_config({"transition": {"0-1": 1.0}})
        repaired = repair_model(survival_graph, payments, split=[1])
        assert repaired.augmented.transitions == survival_graph.transitions
        assert repaired.induced == []
        assert repaired.payments.describe() == payments.describe()

    def test_free_policy(self, free_policy_graph, free_policy_payments):
        repaired = repair_model(free_policy_graph, free_policy_payments)
        assert repaired.augmented.num_states == 6
        assert repaired.edge_map[(0, 5)] == (0, 3)
        assert (0, 3) in repaired.induced
        assert repaired.payments.transition[(0, 3)](0.0) == pytest.approx(0.4)
        assert repaired.payments.transition[(0, 5)](0.0) == pytest.approx(0.8)

    def test_split_target_must_be_absorbing(self, disability_graph, disability_payments):
        with pytest.raises(RepairError):
            repair_model(disability_graph, disability_payments, split=[0])

    def test_routes_must_be_unique(self):
        graph = ModelGraph(4, frozenset({(0, 1), (0, 2), (1, 2), (2, 3)}))
        with pytest.raises(RepairError):
            repair_model(graph, PaymentSpec())

    def test_describe(self, disability_graph, disability_payments):
        described = repair_model(disability_graph, disability_payments).describe()
        assert described["edge_map"]["0-3"] == "0-2"
        assert described["induced_transitions"] == ["0-2"]


def collapsed(source, grid, num_states):
    """Deterministic version of a preset source and the intensities it fixes"""
    if isinstance(source, ScenarioSet):
        path = source.scenarios[0]
        return ScenarioSet([path], [1.0]), path.tensor(grid, num_states)

    factors = [dataclasses.replace(f, sigma=0.0) for f in source.factors]
    spec = AffineSpec(factors, source.offsets, source.loadings)
    means = np.stack([f.mean_path(grid.elapsed) for f in factors])
    expected = np.zeros((num_states, num_states, len(grid)))
    for pair in spec.transitions:
        expected[pair] = spec.offset(pair)(grid.nodes) + spec.loading(pair) @ means
    return spec, expected


@pytest.mark.parametrize("preset", Config.preset_names())
def test_deterministic_intensities_collapse_every_definition(preset):
    run = RunConfig.load(preset=preset, overrides={"horizon": 2.0, "step": 0.05})
    graph, grid = run.graph, run.grid
    source, expected = collapsed(run.source, grid, graph.num_states)
    reach = reachability(graph)

    for state in range(graph.num_states):
        for definition in Config.DEFINITIONS:
            rates = rates_for(definition, source, graph, grid, state=state)
            for pair in graph.sorted_transitions():
                values = rates.rate(pair)
                defined = np.isfinite(values)
                if definition != "statewise" or reach[state, pair[0]]:
                    assert defined[1:].all(), (preset, definition, state, pair)
                gap = np.max(np.abs(values[defined] - expected[pair][defined]), initial=0.0)
                assert gap < 1e-7, (preset, definition, state, pair)
