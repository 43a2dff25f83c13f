"""Shared fixtures: preset graphs, scenario sets and grids"""

import pytest

from model_graph import ModelGraph, PaymentSpec, TimeGrid
from rate_scenarios import AffineSpec, ScenarioSet


@pytest.fixture
def grid_1y():
    return TimeGrid(0.0, 1.0, 0.01)


@pytest.fixture
def grid_2y():
    return TimeGrid(0.0, 2.0, 0.01)


@pytest.fixture
def survival_graph():
    return ModelGraph(2, frozenset({(0, 1)}), ("alive", "dead"))


@pytest.fixture
def survival_mixture():
    return ScenarioSet.comonotone({(0, 1): [0.1, 0.3]})


@pytest.fixture
def disability_graph():
    return ModelGraph(3, frozenset({(0, 1), (0, 2), (1, 2)}), ("active", "disabled", "dead"))


@pytest.fixture
def dependent_disability():
    """Disability and death of the disabled move together"""
    return ScenarioSet.comonotone({
        (0, 1): [0.05, 0.5],
        (0, 2): [0.02, 0.02],
        (1, 2): [0.05, 1.0],
    })


@pytest.fixture
def disability_payments():
    return PaymentSpec.from_config({
        "sojourn": {"1": 1.0},
        "transition": {"0-1": 0.5, "0-2": 1.0, "1-2": 2.0},
    })


@pytest.fixture
def asd_graph():
    return ModelGraph(3, frozenset({(0, 1), (0, 2)}), ("active", "surrender", "dead"))


@pytest.fixture
def comonotone_asd():
    return ScenarioSet.comonotone({(0, 1): [0.05, 0.5], (0, 2): [0.01, 0.2]})


@pytest.fixture
def product_asd():
    return ScenarioSet.product({
        (0, 1): [(0.05, 0.5), (0.5, 0.5)],
        (0, 2): [(0.01, 0.5), (0.2, 0.5)],
    })


@pytest.fixture
def competing_graph():
    return ModelGraph(4, frozenset({(0, 1), (0, 2), (0, 3)}))


@pytest.fixture
def competing_mixture():
    return ScenarioSet.comonotone({
        (0, 1): [0.01, 0.05],
        (0, 2): [0.1, 0.02],
        (0, 3): [0.03, 0.03],
    })


@pytest.fixture
def free_policy_graph():
    return ModelGraph(5, frozenset({(0, 1), (0, 2), (0, 3), (1, 3), (1, 4)}))


@pytest.fixture
def free_policy_spec():
    return AffineSpec.from_config({
        "factors": [
            {"name": "mortality", "kappa": 0.5, "theta": 0.01, "sigma": 0.05, "z0": 0.01},
            {"name": "surrender", "kappa": 1.0, "theta": 0.05, "sigma": 0.1, "z0": 0.05},
        ],
        "transitions": {
            "0-1": {"offset": 0.03},
            "0-2": {"loadings": {"mortality": 1.0}},
            "0-3": {"loadings": {"surrender": 1.0}},
            "1-3": {"offset": 0.02, "loadings": {"surrender": 1.0}},
            "1-4": {"loadings": {"mortality": 1.0}},
        },
    })


@pytest.fixture
def free_policy_payments():
    return PaymentSpec.from_config({
        "sojourn": {"0": -0.1},
        "transition": {"0-2": 1.0, "0-3": 0.8, "1-3": 0.4, "1-4": 0.5},
    })
