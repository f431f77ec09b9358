import numpy as np
import pytest

from src.optim import AdamW


class TestAdamW:
    def test_first_step_moves_by_learning_rate(self):
        param = np.array([1.0, -2.0])
        AdamW(learning_rate=0.01).step("p", param, np.array([3.0, -0.5]))
        np.testing.assert_allclose(param, [0.99, -1.99], atol=1e-8)

    def test_masked_rows_keep_value_and_moments(self):
        optimizer = AdamW(learning_rate=0.1)
        param = np.zeros((3, 2))
        optimizer.step("rows", param, np.ones((3, 2)), rows=np.array([True, False, True]))
        np.testing.assert_array_equal(param[1], [0.0, 0.0])
        moments = optimizer.state["rows"]
        np.testing.assert_array_equal(moments.steps, [1, 0, 1])
        np.testing.assert_array_equal(moments.m[1], [0.0, 0.0])

    def test_weight_decay_only_when_requested(self):
        optimizer = AdamW(learning_rate=0.1, weight_decay=0.5)
        decayed, plain = np.array([2.0]), np.array([2.0])
        optimizer.step("decayed", decayed, np.zeros(1), decay=True)
        optimizer.step("plain", plain, np.zeros(1))
        assert decayed[0] == pytest.approx(2.0 * (1 - 0.05))
        assert plain[0] == 2.0

    def test_scalar_parameter_updated_in_place(self):
        param = np.array(0.5)
        AdamW(learning_rate=0.01).step("scalar", param, np.array(1.0))
        assert float(param) == pytest.approx(0.49, abs=1e-8)

    def test_minimizes_quadratic(self):
        optimizer = AdamW(learning_rate=0.05)
        param = np.array([3.0, -4.0])
        for _ in range(2000):
            optimizer.step("q", param, 2.0 * param)
        np.testing.assert_allclose(param, [0.0, 0.0], atol=0.1)
