import numpy as np
import pytest

from src.codebook import SemanticID
from src.diagnostics import (
    codes_matrix,
    collision_stats,
    compare_bias,
    density_table,
    pca2d,
    summarize_usage,
    usage_from_counts,
    usage_stats,
    usage_table,
    utilization_report,
)
from src.exceptions import DataError, DimensionMismatchError


def _sids(*codes):
    return [SemanticID(codes=tuple(row)) for row in codes]


class TestUsageStats:
    def test_single_code(self):
        stats = usage_stats(_sids((3,), (3,), (3,)), level=0, n_codes=8)
        assert stats.perplexity == pytest.approx(1.0)
        assert stats.entropy == 0.0
        assert stats.utilization == pytest.approx(1 / 8)

    def test_uniform_usage(self):
        stats = usage_stats(_sids(*[(code,) for code in range(16)]), level=0, n_codes=16)
        assert stats.entropy == pytest.approx(np.log(16))
        assert stats.perplexity == pytest.approx(16)
        assert stats.utilization == 1.0

    def test_half_used(self):
        stats = usage_stats(_sids((0,), (0,), (1,), (1,)), level=0, n_codes=4)
        np.testing.assert_array_equal(stats.counts, [2, 2, 0, 0])
        assert stats.entropy == pytest.approx(np.log(2))
        assert stats.perplexity == pytest.approx(2.0)
        assert stats.utilization == 0.5

    def test_effective_utilization_threshold(self):
        stats = usage_from_counts(np.array([5, 4, 0, 11]), level=0)
        assert stats.utilization == 0.75
        assert stats.effective_utilization == 0.5

    def test_empty_input(self):
        with pytest.raises(DataError):
            usage_stats([], level=0, n_codes=4)

    def test_level_out_of_range(self):
        with pytest.raises(DimensionMismatchError):
            usage_stats(_sids((0, 1)), level=2, n_codes=4)

    def test_perplexity_bounds(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            codes = rng.integers(0, 10, size=int(rng.integers(1, 50)))
            stats = usage_stats(_sids(*[(int(code),) for code in codes]), 0, 10)
            assert 1.0 - 1e-12 <= stats.perplexity <= 10 + 1e-9
            assert stats.perplexity == pytest.approx(np.exp(stats.entropy))
            assert 0.0 < stats.utilization <= 1.0

    def test_summaries(self):
        codes = codes_matrix(_sids((0, 1), (1, 1), (2, 0)))
        usage = summarize_usage(codes, [4, 2])
        assert [item.level for item in usage] == [0, 1]
        table = usage_table(usage)
        assert list(table.columns) == ["level", "code", "count"]
        assert len(table) == 6
        report = utilization_report(usage, collision_stats(_sids((0, 1), (1, 1), (2, 0))))
        assert report["collisions"]["n_distinct"] == 3
        assert report["levels"][1]["counts"] == [1, 2]


class TestCompareBias:
    def test_identical_multisets(self):
        sids = _sids((0, 1), (1, 1), (2, 0))
        report = compare_bias(sids, list(reversed(sids)), n_codes=4)
        assert all(level.total_variation == 0.0 for level in report.levels)
        assert all(level.kl_divergence < 0.5 for level in report.levels)

    def test_disjoint_usage(self):
        report = compare_bias(_sids((0,), (0,)), _sids((1,), (1,)), n_codes=2)
        assert report.levels[0].total_variation == 1.0
        assert report.levels[0].kl_divergence > 0.0

    def test_hand_built_distributions(self):
        target = _sids((0,), (1,))
        generated = _sids((0,), (0,), (0,), (1,))
        report = compare_bias(target, generated, n_codes=2)
        assert report.levels[0].total_variation == 0.25

    def test_total_variation_symmetric(self):
        a = _sids((0,), (1,), (1,), (2,))
        b = _sids((2,), (2,), (0,))
        assert compare_bias(a, b, 3).levels[0].total_variation == pytest.approx(
            compare_bias(b, a, 3).levels[0].total_variation
        )

    def test_level_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            compare_bias(_sids((0, 1)), _sids((0,)), n_codes=2)

    def test_summary(self):
        report = compare_bias(_sids((0, 0)), _sids((1, 0)), n_codes=2)
        summary = report.to_dict()["summary"]
        assert summary["max_total_variation"] == 1.0
        assert summary["mean_total_variation"] == 0.5


class TestPca:
    def test_axis_aligned_gaussian(self):
        rng = np.random.default_rng(1)
        data = rng.normal(size=(20_000, 2)) * np.array([2.0, 1.0])
        result = pca2d(data, seed=0)
        cosine = abs(result.components[0] @ np.array([1.0, 0.0]))
        assert np.degrees(np.arccos(min(cosine, 1.0))) < 1.0
        assert result.explained[0] == pytest.approx(0.8, abs=0.05)

    def test_collinear_points(self):
        t = np.linspace(-1.0, 1.0, 50)
        result = pca2d(np.stack([t, 2 * t, -t], axis=1))
        assert result.explained[0] == pytest.approx(1.0)
        assert result.explained[1] == pytest.approx(0.0, abs=1e-9)

    def test_zero_variance(self):
        result = pca2d(np.ones((10, 3)))
        np.testing.assert_array_equal(result.explained, [0.0, 0.0])
        np.testing.assert_array_equal(result.coords, np.zeros((10, 2)))

    def test_matches_eigendecomposition(self):
        rng = np.random.default_rng(2)
        for dim in range(2, 7):
            mixing = rng.normal(size=(dim, dim)) * np.linspace(3.0, 0.5, dim)
            data = rng.normal(size=(500, dim)) @ mixing
            result = pca2d(data, seed=3)
            centered = data - data.mean(axis=0)
            eigenvalues = np.sort(np.linalg.eigvalsh(centered.T @ centered / len(data)))[::-1]
            expected = eigenvalues[:2] / eigenvalues.sum()
            assert result.explained.sum() <= 1.0 + 1e-12
            np.testing.assert_allclose(result.explained, expected, rtol=1e-4)
            assert result.explained[0] >= result.explained[1]

    def test_density_table(self):
        coords = np.vstack([np.zeros((10, 2)), [[5.0, 5.0]], [[-5.0, 5.0]]])
        table = density_table(coords, bins=4)
        assert list(table.columns) == ["x", "y", "density_rank"]
        assert (table["density_rank"].iloc[:10] == 1).all()
        assert (table["density_rank"].iloc[10:] == 2).all()


class TestCollisions:
    def test_all_distinct(self):
        stats = collision_stats(_sids((0,), (1,), (2,)))
        assert (stats.n_distinct, stats.n_colliding_items, stats.max_bucket) == (3, 0, 1)

    def test_counts(self):
        stats = collision_stats(_sids((0, 0), (0, 0), (1, 0)))
        assert (stats.n_distinct, stats.n_colliding_items, stats.max_bucket) == (2, 2, 2)

    def test_all_identical(self):
        stats = collision_stats(_sids((4,), (4,), (4,), (4,)))
        assert (stats.n_distinct, stats.n_colliding_items, stats.max_bucket) == (1, 4, 4)

    def test_suffix_ignored(self):
        sids = [SemanticID(codes=(1,), dedup_suffix=0), SemanticID(codes=(1,), dedup_suffix=1)]
        assert collision_stats(sids).n_distinct == 1
