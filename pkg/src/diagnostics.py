"""
Diagnostics module for codebook utilization and SID distribution bias.
Produces usage statistics, bias reports, PCA projections and plot-ready tables.
"""

import logging
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from src.codebook import SemanticID
from src.config import Config
from src.embedding_store import EmbeddingSet
from src.exceptions import DataError, DimensionMismatchError

logger = logging.getLogger(__name__)


@dataclass
class UsageStats:
    """Codeword histogram of one level with its balance measures."""

    level: int
    counts: np.ndarray
    entropy: float
    perplexity: float
    utilization: float
    effective_utilization: float

    def to_dict(self) -> Dict[str, object]:
        payload = asdict(self)
        payload["counts"] = [int(count) for count in self.counts]
        return payload


@dataclass
class LevelBias:
    level: int
    total_variation: float
    kl_divergence: float


@dataclass
class BiasReport:
    """Per-level divergence between target and generated codeword usage."""

    levels: List[LevelBias] = field(default_factory=list)

    @property
    def mean_total_variation(self) -> float:
        return float(np.mean([item.total_variation for item in self.levels]))

    @property
    def mean_kl_divergence(self) -> float:
        return float(np.mean([item.kl_divergence for item in self.levels]))

    @property
    def max_total_variation(self) -> float:
        return float(np.max([item.total_variation for item in self.levels]))

    def to_dict(self) -> Dict[str, object]:
        return {
            "levels": [asdict(item) for item in self.levels],
            "summary": {
                "mean_total_variation": self.mean_total_variation,
                "mean_kl_divergence": self.mean_kl_divergence,
                "max_total_variation": self.max_total_variation,
            },
        }


@dataclass
class PcaResult:
    coords: np.ndarray
    explained: np.ndarray
    components: np.ndarray


@dataclass
class CollisionStats:
    n_distinct: int
    n_colliding_items: int
    max_bucket: int


def _entropy(counts: np.ndarray) -> float:
    total = counts.sum()
    p = counts[counts > 0] / total
    return float(-np.sum(p * np.log(p)))


def usage_from_codes(codes: np.ndarray, level: int, n_codes: int, min_count: int = Config.MIN_EFFECTIVE_COUNT) -> UsageStats:
    """
    Usage statistics from a code column.

    Args:
        codes: Code indices observed at one level
        level: Level index (0-based)
        n_codes: Codebook size N
        min_count: Threshold of the "effectively utilized" variant

    Returns:
        UsageStats
    """
    codes = np.asarray(codes, dtype=np.int64)
    if codes.size == 0:
        raise DataError("usage statistics need at least one code")
    if codes.min() < 0 or codes.max() >= n_codes:
        raise DimensionMismatchError(f"codes at level {level} fall outside [0, {n_codes})")
    counts = np.bincount(codes, minlength=n_codes)
    entropy = _entropy(counts)
    return UsageStats(
        level=level,
        counts=counts,
        entropy=entropy,
        perplexity=float(np.exp(entropy)),
        utilization=float(np.count_nonzero(counts) / n_codes),
        effective_utilization=float(np.count_nonzero(counts >= min_count) / n_codes),
    )


def codes_matrix(sids: Sequence[SemanticID]) -> np.ndarray:
    """Stack SID code tuples into an (items, K) matrix; all SIDs must share K."""
    if not sids:
        raise DataError("no semantic IDs given")
    levels = {sid.levels for sid in sids}
    if len(levels) != 1:
        raise DimensionMismatchError(f"semantic IDs disagree on the number of levels: {sorted(levels)}")
    return np.array([sid.codes for sid in sids], dtype=np.int64)


def usage_stats(sids: Sequence[SemanticID], level: int, n_codes: int) -> UsageStats:
    """
    Histogram of the codes used at one level, with entropy (nats), perplexity and utilization.

    Raises:
        DataError: on empty input
    """
    matrix = codes_matrix(sids)
    if not 0 <= level < matrix.shape[1]:
        raise DimensionMismatchError(f"level {level} outside the {matrix.shape[1]} SID levels")
    return usage_from_codes(matrix[:, level], level, n_codes)


def compare_bias(target: Sequence[SemanticID], generated: Sequence[SemanticID], n_codes: int) -> BiasReport:
    """
    Per-level total variation and KL(target || generated).

    The generated distribution is add-one smoothed for the KL term only.
    """
    target_codes = codes_matrix(target)
    generated_codes = codes_matrix(generated)
    if target_codes.shape[1] != generated_codes.shape[1]:
        raise DimensionMismatchError(
            f"target SIDs have {target_codes.shape[1]} levels, generated have {generated_codes.shape[1]}"
        )
    report = BiasReport()
    for level in range(target_codes.shape[1]):
        p_counts = usage_from_codes(target_codes[:, level], level, n_codes).counts.astype(np.float64)
        q_counts = usage_from_codes(generated_codes[:, level], level, n_codes).counts.astype(np.float64)
        p = p_counts / p_counts.sum()
        q = q_counts / q_counts.sum()
        q_smooth = (q_counts + 1.0) / (q_counts.sum() + n_codes)
        support = p > 0
        kl = float(np.sum(p[support] * np.log(p[support] / q_smooth[support])))
        report.levels.append(
            LevelBias(level=level, total_variation=float(0.5 * np.sum(np.abs(p - q))), kl_divergence=max(kl, 0.0))
        )
    return report


def _power_iteration(cov: np.ndarray, rng: np.random.Generator, tol: float, max_iter: int):
    vector = rng.normal(size=cov.shape[0])
    vector /= np.linalg.norm(vector)
    scale = max(np.trace(cov), np.finfo(float).tiny)
    for _ in range(max_iter):
        product = cov @ vector
        norm = np.linalg.norm(product)
        if norm <= 1e-14 * scale:
            return 0.0, vector
        updated = product / norm
        converged = np.linalg.norm(updated - vector) < tol
        vector = updated
        if converged:
            break
    # fix the sign so the largest component is positive
    if vector[np.argmax(np.abs(vector))] < 0:
        vector = -vector
    return float(vector @ cov @ vector), vector


def pca2d(
    data: Union[EmbeddingSet, np.ndarray],
    seed: int = 0,
    tol: float = Config.PCA_TOL,
    max_iter: int = Config.PCA_MAX_ITER,
) -> PcaResult:
    """
    Project onto the top two principal directions.

    Directions come from power iteration with deflation on the covariance
    matrix; the start vector is drawn from ``seed``.

    Returns:
        PcaResult with (N, 2) coordinates and explained-variance fractions
    """
    matrix = data.as_float64() if isinstance(data, EmbeddingSet) else np.asarray(data, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] < 2:
        raise DataError("PCA needs at least two vectors")
    centered = matrix - matrix.mean(axis=0)
    cov = centered.T @ centered / matrix.shape[0]
    total = float(np.trace(cov))
    if total <= 0.0:
        return PcaResult(
            coords=np.zeros((matrix.shape[0], 2)), explained=np.zeros(2), components=np.zeros((2, matrix.shape[1]))
        )

    rng = np.random.default_rng(seed)
    components, variances = [], []
    deflated = cov.copy()
    for _ in range(2):
        variance, vector = _power_iteration(deflated, rng, tol, max_iter)
        if variance <= 1e-12 * total:
            variance, vector = 0.0, np.zeros_like(vector)
        components.append(vector)
        variances.append(variance)
        deflated = deflated - variance * np.outer(vector, vector)

    components = np.array(components)
    return PcaResult(
        coords=centered @ components.T,
        explained=np.array(variances) / total,
        components=components,
    )


def collision_stats(sids: Sequence[SemanticID]) -> CollisionStats:
    """Counts over identical code tuples, ignoring dedup suffixes."""
    if not sids:
        raise DataError("collision statistics need at least one SID")
    buckets = Counter(sid.codes for sid in sids)
    return CollisionStats(
        n_distinct=len(buckets),
        n_colliding_items=sum(size for size in buckets.values() if size > 1),
        max_bucket=max(buckets.values()),
    )


def usage_table(stats: Sequence[UsageStats]) -> pd.DataFrame:
    """Plot-ready ``level,code,count`` rows for every level."""
    frames = [
        pd.DataFrame({"level": item.level, "code": np.arange(len(item.counts)), "count": item.counts})
        for item in stats
    ]
    return pd.concat(frames, ignore_index=True)


def density_table(coords: np.ndarray, bins: int = Config.DENSITY_BINS) -> pd.DataFrame:
    """
    Plot-ready ``x,y,density_rank`` rows.

    Density is the population of each point's cell on a bins x bins grid; rank 1
    marks the densest cell.
    """
    coords = np.asarray(coords, dtype=np.float64)
    x, y = coords[:, 0], coords[:, 1]
    _, x_edges, y_edges = np.histogram2d(x, y, bins=bins)
    x_cell = np.clip(np.searchsorted(x_edges, x, side="right") - 1, 0, bins - 1)
    y_cell = np.clip(np.searchsorted(y_edges, y, side="right") - 1, 0, bins - 1)
    cell = x_cell * bins + y_cell
    density = np.bincount(cell, minlength=bins * bins)[cell]
    frame = pd.DataFrame({"x": x, "y": y})
    frame["density_rank"] = pd.Series(density).rank(method="dense", ascending=False).astype(int).to_numpy()
    return frame


def summarize_usage(codes: np.ndarray, n_codes: Sequence[int]) -> List[UsageStats]:
    """Usage statistics of every level of an (items, K) code matrix."""
    return [usage_from_codes(codes[:, level], level, n_codes[level]) for level in range(codes.shape[1])]


def level_perplexities(stats: Sequence[UsageStats]) -> List[float]:
    return [item.perplexity for item in stats]


def utilization_report(stats: Sequence[UsageStats], collisions: Optional[CollisionStats] = None) -> Dict[str, object]:
    """JSON-ready report of a usage analysis."""
    report: Dict[str, object] = {"levels": [item.to_dict() for item in stats]}
    if collisions is not None:
        report["collisions"] = asdict(collisions)
    return report


def usage_from_counts(counts: np.ndarray, level: int, min_count: int = Config.MIN_EFFECTIVE_COUNT) -> UsageStats:
    """Usage statistics from an already accumulated histogram."""
    counts = np.asarray(counts, dtype=np.int64)
    if counts.sum() == 0:
        raise DataError(f"no codes were recorded at level {level}")
    entropy = _entropy(counts)
    return UsageStats(
        level=level,
        counts=counts,
        entropy=entropy,
        perplexity=float(np.exp(entropy)),
        utilization=float(np.count_nonzero(counts) / len(counts)),
        effective_utilization=float(np.count_nonzero(counts >= min_count) / len(counts)),
    )
