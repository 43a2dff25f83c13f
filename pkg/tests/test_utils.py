"""Tests for the shared numerical helpers"""

import numpy as np
import pytest

from utils import (
    SolverError,
    canonical_json,
    cumulative_integral,
    format_transition,
    hash_string,
    max_abs,
    parse_transition,
    rk4_solve,
)


class TestRK4:
    def test_exponential_decay(self):
        nodes = np.linspace(0.0, 1.0, 101)
        out = rk4_solve(lambda s, y: -0.5 * y, np.array([1.0]), nodes)
        assert out.shape == (101, 1)
        assert out[-1, 0] == pytest.approx(np.exp(-0.5), abs=1e-10)

    def test_fourth_order_convergence(self):
        # y' = (0.1 + 0.5 s) y has y(T) = exp(0.1 T + 0.25 T^2)
        exact = np.exp(0.1 * 2 + 0.25 * 4)
        coarse = rk4_solve(lambda s, y: (0.1 + 0.5 * s) * y, np.array([1.0]), np.linspace(0, 2, 11))
        fine = rk4_solve(lambda s, y: (0.1 + 0.5 * s) * y, np.array([1.0]), np.linspace(0, 2, 21))
        ratio = abs(coarse[-1, 0] - exact) / abs(fine[-1, 0] - exact)
        assert 12 < ratio < 20

    def test_non_finite_raises(self):
        with pytest.raises(SolverError):
            rk4_solve(lambda s, y: np.array([np.inf]), np.array([1.0]), np.linspace(0, 1, 3))


class TestQuadrature:
    def test_simpson_is_exact_for_cubics(self):
        nodes = np.linspace(0.0, 2.0, 21)
        values = nodes ** 3
        assert cumulative_integral(values, nodes)[-1] == pytest.approx(4.0, abs=1e-10)

    def test_starts_at_zero(self):
        nodes = np.linspace(0.0, 1.0, 5)
        assert cumulative_integral(np.ones(5), nodes)[0] == 0.0
        assert cumulative_integral(np.ones(5), nodes)[-1] == pytest.approx(1.0)

    def test_two_nodes_fall_back_to_trapezoid(self):
        out = cumulative_integral(np.array([1.0, 3.0]), np.array([0.0, 1.0]))
        assert out.tolist() == [0.0, 2.0]

    def test_integrates_along_last_axis(self):
        nodes = np.linspace(0.0, 1.0, 11)
        values = np.stack([np.ones(11), 2 * np.ones(11)])
        assert cumulative_integral(values, nodes)[:, -1] == pytest.approx([1.0, 2.0])


class TestTransitionKeys:
    @pytest.mark.parametrize("key", ["0-1", "0->1", " 0 - 1 ", [0, 1], (0, 1)])
    def test_parse_variants(self, key):
        assert parse_transition(key) == (0, 1)

    @pytest.mark.parametrize("key", ["0", "a-b", "0-1-2", ""])
    def test_parse_rejects(self, key):
        with pytest.raises(ValueError):
            parse_transition(key)

    def test_format(self):
        assert format_transition((2, 3)) == "2-3"


class TestHelpers:
    def test_canonical_json_ignores_key_order(self):
        assert canonical_json({"b": 1, "a": [1, 2]}) == canonical_json({"a": [1, 2], "b": 1})

    def test_canonical_json_handles_numpy(self):
        assert canonical_json({"x": np.array([1.0, 2.0]), "n": np.int64(3)}) == '{"n":3,"x":[1.0,2.0]}'

    def test_hash_string_is_stable(self):
        assert hash_string("abc") == hash_string("abc")
        assert len(hash_string("abc", 16)) == 16

    def test_max_abs_skips_nan(self):
        assert max_abs([1.0, np.nan, -3.0]) == 3.0
        assert max_abs([]) == 0.0
        assert max_abs(np.array([np.nan])) == 0.0
