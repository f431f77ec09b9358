from dataclasses import replace

import numpy as np
import pytest

from src.embedding_store import VectorStats
from src.exceptions import DomainError, MissingSideInfoError
from src.transforms import (
    TransformKind,
    TransformParams,
    forward,
    grad_params,
    inverse,
    ks_cdf,
    ks_quantile,
    nuq_loss,
    scaled_logistic,
    scaled_logit,
)


def _params(kind, a=1.0, b=1.0, alpha=1.0, x0=0.5):
    return TransformParams(
        kind=kind, log_a=np.log(a), log_b=np.log(b), log_alpha=np.log(alpha), x0=x0
    )


class TestKumaraswamy:
    def test_unit_parameters_are_identity(self):
        assert ks_cdf(0.7, 1.0, 1.0) == pytest.approx(0.7, abs=1e-15)

    def test_boundaries(self):
        assert ks_cdf(0.0, 2.0, 3.0) == 0.0
        assert ks_cdf(1.0, 2.0, 3.0) == 1.0
        assert ks_quantile(1.0, 0.4, 4.0) == 1.0

    def test_closed_form_value(self):
        assert ks_cdf(0.5, 2.0, 2.0) == pytest.approx(0.4375, abs=1e-15)
        assert ks_quantile(0.4375, 2.0, 2.0) == pytest.approx(0.5, abs=1e-15)

    def test_domain_violation(self):
        with pytest.raises(DomainError):
            ks_cdf(1.5, 1.0, 1.0)
        with pytest.raises(DomainError):
            ks_quantile(-0.1, 1.0, 1.0)

    def test_identity_degeneration(self):
        x = np.random.default_rng(0).uniform(0.0, 1.0, size=10_000)
        np.testing.assert_allclose(ks_cdf(x, 1.0, 1.0), x, rtol=0, atol=1e-15)
        np.testing.assert_allclose(ks_quantile(x, 1.0, 1.0), x, rtol=0, atol=1e-15)

    def test_invertibility(self):
        rng = np.random.default_rng(1)
        n = 100_000
        x = rng.uniform(0.1, 0.9, size=n)
        a = rng.uniform(0.3, 5.0, size=n)
        b = rng.uniform(0.3, 5.0, size=n)
        assert np.max(np.abs(ks_quantile(ks_cdf(x, a, b), a, b) - x)) < 1e-9


class TestScaledLogistic:
    def test_endpoints_pinned(self):
        stats = VectorStats(-2.0, 3.0)
        y = scaled_logistic(np.array([-2.0, 3.0]), 3.0, 0.2, stats)
        np.testing.assert_allclose(y, [0.0, 1.0], atol=1e-15)

    def test_symmetric_midpoint(self):
        assert scaled_logistic(np.array([0.5]), 1.0, 0.5, VectorStats(0.0, 1.0))[0] == pytest.approx(0.5)
        assert scaled_logit(np.array([0.5]), 1.0, 0.5, VectorStats(0.0, 1.0))[0] == pytest.approx(0.5)

    def test_steeper_slope_pulls_toward_midpoint(self):
        stats = VectorStats(0.0, 1.0)
        steep = scaled_logistic(np.array([0.25]), 4.0, 0.5, stats)[0]
        flat = scaled_logistic(np.array([0.25]), 1.0, 0.5, stats)[0]
        assert 0.0 < steep < 0.5
        assert steep < flat

    def test_outside_range_rejected(self):
        with pytest.raises(DomainError):
            scaled_logistic(np.array([2.0]), 1.0, 0.5, VectorStats(0.0, 1.0))

    def test_logit_at_zero_stays_finite(self):
        stats = VectorStats(-1.0, 1.0)
        x = scaled_logit(np.array([0.0, 1.0]), 2.0, 0.5, stats)
        assert np.all(np.isfinite(x))
        assert -1.0 <= x[0] < -1.0 + 1e-3
        assert 1.0 - 1e-3 < x[1] <= 1.0

    def test_invertibility(self):
        rng = np.random.default_rng(2)
        n = 100_000
        lo, delta = -1.7, 4.2
        stats = VectorStats(lo, lo + delta)
        u = rng.uniform(0.1, 0.9, size=n)
        alpha = rng.uniform(0.3, 5.0, size=n)
        x0 = rng.uniform(0.0, 1.0, size=n)
        x = lo + delta * u
        y = scaled_logistic(x, alpha, x0, stats)
        assert np.max(np.abs(scaled_logit(y, alpha, x0, stats) - x)) < 1e-8

    def test_degenerate_vector_passes_through(self):
        y = scaled_logistic(np.array([3.0, 3.0]), 2.0, 0.5, VectorStats(3.0, 3.0))
        np.testing.assert_array_equal(y, [0.5, 0.5])


class TestTransformPair:
    def test_identity_reduces_to_normalization(self):
        d, side = forward(np.array([-1.0, 0.0, 3.0]), _params(TransformKind.IDENTITY))
        np.testing.assert_allclose(d, [0.0, 0.25, 1.0])
        assert not side.degenerate

    def test_unit_kumaraswamy_matches_identity(self):
        h = np.random.default_rng(3).normal(size=(10, 5))
        d_ks, _ = forward(h, _params(TransformKind.KUMARASWAMY))
        d_id, _ = forward(h, _params(TransformKind.IDENTITY))
        np.testing.assert_allclose(d_ks, d_id, atol=1e-15)

    def test_kumaraswamy_value(self):
        d, _ = forward(np.array([-1.0, 1.0, 3.0]), _params(TransformKind.KUMARASWAMY, a=2.0, b=2.0))
        np.testing.assert_allclose(d, [0.0, 0.4375, 1.0], atol=1e-15)

    @pytest.mark.parametrize(
        "params",
        [
            _params(TransformKind.KUMARASWAMY, a=0.4, b=2.5),
            _params(TransformKind.KUMARASWAMY, a=3.0, b=0.7),
            _params(TransformKind.SCALED_LOGISTIC, alpha=6.0, x0=0.2),
            _params(TransformKind.SCALED_LOGISTIC, alpha=0.3, x0=0.9),
        ],
    )
    def test_forward_preserves_order(self, params):
        h = np.random.default_rng(9).normal(size=(20, 16))
        d, _ = forward(h, params)
        for row in range(h.shape[0]):
            order = np.argsort(h[row], kind="stable")
            assert np.all(np.diff(d[row, order]) >= 0.0)
        grid = np.linspace(-1.0, 1.0, 201)
        assert np.all(np.diff(forward(grid, params)[0]) > 0.0)

    def test_round_trip(self):
        rng = np.random.default_rng(4)
        h = rng.normal(size=(50, 6))
        params = _params(TransformKind.KUMARASWAMY, a=0.7, b=1.5)
        d, side = forward(h, params)
        np.testing.assert_allclose(inverse(d, side, params), h, atol=1e-9)

    def test_identity_inverse_is_denormalization(self):
        h = np.array([2.0, 4.0, 6.0])
        params = _params(TransformKind.IDENTITY)
        _, side = forward(h, params)
        np.testing.assert_allclose(inverse(np.array([0.5, 0.0, 1.0]), side, params), [4.0, 2.0, 6.0])

    def test_off_grid_inverse_stays_in_range(self):
        h = np.array([1.2, 0.0, 0.7])
        params = _params(TransformKind.SCALED_LOGISTIC, alpha=3.0, x0=0.4)
        _, side = forward(h, params)
        h_hat = inverse(np.array([1.25, -0.05, 0.5]), side, params)
        assert np.all(np.isfinite(h_hat))
        assert np.all((h_hat >= 0.0) & (h_hat <= 1.2))

    def test_inverse_needs_side_info(self):
        with pytest.raises(MissingSideInfoError):
            inverse(np.array([0.5]), None, _params(TransformKind.KUMARASWAMY))

    def test_per_dimension_parameters(self):
        params = TransformParams.identity_start("ks", dim=3, per_dimension=True)
        params.log_a[:] = [0.0, np.log(2.0), 0.0]
        params.log_b[:] = [0.0, np.log(2.0), 0.0]
        d, _ = forward(np.array([0.0, 1.0, 2.0]), params)
        assert d[1] == pytest.approx(0.4375)

    def test_params_serialize(self):
        params = _params(TransformKind.SCALED_LOGISTIC, alpha=2.0, x0=0.3)
        restored = TransformParams.from_dict(params.to_dict())
        assert restored.kind is TransformKind.SCALED_LOGISTIC
        assert restored.alpha == pytest.approx(2.0)
        assert restored.x0 == pytest.approx(0.3)

    def test_clamp_eps_range(self):
        with pytest.raises(DomainError):
            TransformParams.identity_start("ks", clamp_eps=0.5)


class TestNuqLoss:
    def test_identity_is_zero(self):
        assert nuq_loss(np.array([1.0, -2.0, 0.5]), _params(TransformKind.IDENTITY)) == 0.0

    def test_kumaraswamy_exact_inverse(self):
        h = np.array([0.1, 0.35, 0.5, 0.8, 0.9])
        assert nuq_loss(h, _params(TransformKind.KUMARASWAMY, a=1.7, b=0.8)) <= 1e-18

    def test_clamp_makes_logistic_lossy(self):
        h = np.array([0.0, 0.05, 1.0])
        assert nuq_loss(h, _params(TransformKind.SCALED_LOGISTIC, alpha=60.0, x0=0.5)) > 0.0


class TestGradParams:
    EPS = 1e-5

    def _finite_difference(self, h, upstream, params, name):
        plus = replace(params, **{name: getattr(params, name) + self.EPS})
        minus = replace(params, **{name: getattr(params, name) - self.EPS})
        f_plus = np.sum(upstream * forward(h, plus)[0])
        f_minus = np.sum(upstream * forward(h, minus)[0])
        return (f_plus - f_minus) / (2 * self.EPS)

    def test_zero_upstream(self):
        h = np.array([-1.0, 0.2, 0.6, 1.0])
        grads = grad_params(h, np.zeros(4), _params(TransformKind.KUMARASWAMY, a=2.0))
        assert all(np.all(value == 0.0) for value in grads.values())

    def test_identity_has_no_parameters(self):
        assert grad_params(np.array([0.0, 1.0]), np.ones(2), _params(TransformKind.IDENTITY)) == {}

    @pytest.mark.parametrize(
        "params",
        [
            _params(TransformKind.KUMARASWAMY),
            _params(TransformKind.KUMARASWAMY, a=0.6, b=3.0),
            _params(TransformKind.SCALED_LOGISTIC, alpha=2.5, x0=0.3),
        ],
    )
    def test_matches_finite_differences(self, params):
        rng = np.random.default_rng(5)
        h = np.concatenate([[-1.0, 1.0], rng.uniform(-0.9, 0.9, size=30)])
        upstream = rng.normal(size=h.shape)
        grads = grad_params(h, upstream, params)
        for name in params.learnable:
            numeric = self._finite_difference(h, upstream, params, name)
            np.testing.assert_allclose(grads[name], numeric, rtol=1e-4, atol=1e-9)

    def test_per_dimension_matches_finite_differences(self):
        rng = np.random.default_rng(6)
        params = TransformParams.identity_start("logistic", dim=4, per_dimension=True)
        params.log_alpha[:] = rng.uniform(-0.5, 1.0, size=4)
        params.x0[:] = rng.uniform(0.2, 0.8, size=4)
        h = rng.normal(size=(25, 4))
        upstream = rng.normal(size=h.shape)
        grads = grad_params(h, upstream, params)
        for name in params.learnable:
            for dim in range(4):
                shifted = getattr(params, name).copy()
                shifted[dim] += self.EPS
                plus = replace(params, **{name: shifted})
                shifted = getattr(params, name).copy()
                shifted[dim] -= self.EPS
                minus = replace(params, **{name: shifted})
                numeric = (
                    np.sum(upstream * forward(h, plus)[0]) - np.sum(upstream * forward(h, minus)[0])
                ) / (2 * self.EPS)
                np.testing.assert_allclose(grads[name][dim], numeric, rtol=1e-4, atol=1e-9)
