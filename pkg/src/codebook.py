"""
Codebook module for multi-level residual vector quantization.
Handles codebook initialization, residual assignment, the quantization loss and codebook updates.
"""

import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Dict, List, Optional, Tuple

import numpy as np

from src.exceptions import DimensionMismatchError, DomainError
from utils.helpers import chunk_ranges

if TYPE_CHECKING:
    from src.diagnostics import UsageStats
    from src.optim import AdamW

logger = logging.getLogger(__name__)

# rows per block when materializing (rows, codes, dim) difference tensors
ASSIGN_CHUNK = 256


@dataclass(frozen=True)
class SemanticID:
    """Ordered code indices of one item, one per level, plus an optional dedup suffix."""

    codes: Tuple[int, ...]
    dedup_suffix: Optional[int] = None

    @property
    def levels(self) -> int:
        return len(self.codes)

    def tokens(self) -> Tuple[int, ...]:
        if self.dedup_suffix is None:
            return self.codes
        return self.codes + (self.dedup_suffix,)


@dataclass
class Codebook:
    """
    Codewords of one quantization level.

    ``ema_counts`` is the decayed usage of every codeword; together with
    ``ema_sums`` it drives the EMA update rule.
    """

    level: int
    vectors: np.ndarray
    ema_counts: np.ndarray = None
    ema_sums: np.ndarray = None

    def __post_init__(self):
        self.vectors = np.array(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2 or self.vectors.shape[0] < 2:
            raise DomainError("a codebook needs at least 2 codewords in a 2-D matrix")
        if not np.all(np.isfinite(self.vectors)):
            raise DomainError(f"codebook {self.level} holds non-finite codewords")
        if self.ema_counts is None:
            self.ema_counts = np.ones(self.size)
        if self.ema_sums is None:
            self.ema_sums = self.vectors.copy()
        self.ema_counts = np.array(self.ema_counts, dtype=np.float64)
        self.ema_sums = np.array(self.ema_sums, dtype=np.float64)

    @property
    def size(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def to_dict(self) -> Dict[str, object]:
        return {
            "level": self.level,
            "vectors": self.vectors.tolist(),
            "ema_counts": self.ema_counts.tolist(),
            "ema_sums": self.ema_sums.tolist(),
        }

    @classmethod
    def from_dict(cls, payload: Dict[str, object]) -> "Codebook":
        return cls(
            level=int(payload["level"]),
            vectors=payload["vectors"],
            ema_counts=payload.get("ema_counts"),
            ema_sums=payload.get("ema_sums"),
        )


@dataclass
class CodebookStack:
    """K ordered codebooks sharing one dimension."""

    books: List[Codebook]

    def __post_init__(self):
        if not self.books:
            raise DomainError("a codebook stack needs at least one level")
        dims = {book.dim for book in self.books}
        if len(dims) != 1:
            raise DimensionMismatchError(f"codebooks disagree on dimension: {sorted(dims)}")

    @property
    def levels(self) -> int:
        return len(self.books)

    @property
    def dim(self) -> int:
        return self.books[0].dim

    @property
    def sizes(self) -> List[int]:
        return [book.size for book in self.books]

    def to_dict(self) -> Dict[str, object]:
        return {"books": [book.to_dict() for book in self.books]}

    @classmethod
    def from_dict(cls, payload: Dict[str, object]) -> "CodebookStack":
        return cls(books=[Codebook.from_dict(item) for item in payload["books"]])


@dataclass
class RQAssignment:
    """
    Result of assigning a batch through every level.

    ``inputs[k]`` is the residual entering level k (``inputs[0]`` is the batch
    itself) and ``selected[k]`` the codeword chosen there.
    """

    codes: np.ndarray
    inputs: List[np.ndarray]
    selected: List[np.ndarray]
    quantized: np.ndarray
    residual: np.ndarray

    @property
    def residuals(self) -> List[np.ndarray]:
        """Residuals left after each level, r_1 ... r_K."""
        return self.inputs[1:] + [self.residual]


@dataclass
class RQGradients:
    """Gradient contributions of the quantization loss (already divided by the batch size)."""

    codewords: List[np.ndarray] = field(default_factory=list)
    inputs: np.ndarray = None


def squared_distances(points: np.ndarray, vectors: np.ndarray) -> np.ndarray:
    """
    Exact squared Euclidean distances, computed from explicit differences.

    Args:
        points: (M, d) rows
        vectors: (N, d) codewords

    Returns:
        (M, N) distance matrix
    """
    out = np.empty((points.shape[0], vectors.shape[0]))
    for rows in chunk_ranges(points.shape[0], ASSIGN_CHUNK):
        diff = points[rows.start:rows.stop, None, :] - vectors[None, :, :]
        out[rows.start:rows.stop] = np.sum(diff * diff, axis=-1)
    return out


def _fast_distances(points: np.ndarray, vectors: np.ndarray) -> np.ndarray:
    cross = points @ vectors.T
    dist = np.sum(points * points, axis=1)[:, None] - 2.0 * cross + np.sum(vectors * vectors, axis=1)[None, :]
    return np.maximum(dist, 0.0)


def _kmeans_plus_plus(data: np.ndarray, n_codes: int, rng: np.random.Generator) -> np.ndarray:
    n_points = data.shape[0]
    centers = np.empty((n_codes, data.shape[1]))
    centers[0] = data[rng.integers(0, n_points)]
    closest = _fast_distances(data, centers[:1])[:, 0]
    for index in range(1, n_codes):
        total = closest.sum()
        if total <= 0.0:
            pick = int(rng.integers(0, n_points))
        else:
            cumulative = np.cumsum(closest)
            pick = int(np.searchsorted(cumulative, rng.random() * total, side="right"))
            pick = min(pick, n_points - 1)
        centers[index] = data[pick]
        closest = np.minimum(closest, _fast_distances(data, centers[index:index + 1])[:, 0])
    return centers


def kmeans_init(data: np.ndarray, n_codes: int, iters: int, seed: int, level: int = 0) -> Codebook:
    """
    Fit a codebook with k-means++ seeding followed by Lloyd iterations.

    Empty clusters are re-seeded to the points farthest from their centroids.

    Args:
        data: (M, d) training rows, M >= n_codes
        n_codes: Number of codewords N
        iters: Maximum Lloyd iterations
        seed: Seed of the k-means++ sampler
        level: Level index stored on the codebook

    Returns:
        Fitted Codebook
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2:
        raise DimensionMismatchError(f"kmeans_init expects a 2-D matrix, got shape {data.shape}")
    if data.shape[0] < n_codes:
        raise DomainError(f"kmeans_init needs at least {n_codes} points, got {data.shape[0]}")

    rng = np.random.default_rng(seed)
    centers = _kmeans_plus_plus(data, n_codes, rng)
    labels = None
    for iteration in range(iters):
        dist = _fast_distances(data, centers)
        new_labels = np.argmin(dist, axis=1)
        counts = np.bincount(new_labels, minlength=n_codes)
        sums = np.zeros_like(centers)
        np.add.at(sums, new_labels, data)
        filled = counts > 0
        centers[filled] = sums[filled] / counts[filled, None]

        empty = np.flatnonzero(~filled)
        if empty.size:
            spread = dist[np.arange(data.shape[0]), new_labels]
            farthest = np.argsort(-spread, kind="stable")[: empty.size]
            centers[empty] = data[farthest]
            logger.debug("level %d iteration %d: re-seeded %d empty clusters", level, iteration, empty.size)

        if labels is not None and empty.size == 0 and np.array_equal(labels, new_labels):
            break
        labels = new_labels

    return Codebook(level=level, vectors=centers)


def rq_assign_batch(batch: np.ndarray, stack: CodebookStack) -> RQAssignment:
    """
    Residual assignment of a batch: at each level pick the nearest codeword to the
    incoming residual (lowest index on ties) and pass on what is left.
    """
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[1] != stack.dim:
        raise DimensionMismatchError(
            f"inputs of shape {batch.shape} do not match codebook dimension {stack.dim}"
        )
    residual = batch
    quantized = np.zeros_like(batch)
    codes = np.empty((batch.shape[0], stack.levels), dtype=np.int64)
    inputs, selected = [], []
    for level, book in enumerate(stack.books):
        index = np.argmin(squared_distances(residual, book.vectors), axis=1)
        chosen = book.vectors[index]
        codes[:, level] = index
        inputs.append(residual)
        selected.append(chosen)
        quantized = quantized + chosen
        residual = residual - chosen
    return RQAssignment(codes=codes, inputs=inputs, selected=selected, quantized=quantized, residual=residual)


def rq_assign(d: np.ndarray, stack: CodebookStack) -> Tuple[SemanticID, List[np.ndarray], np.ndarray]:
    """
    Residual assignment of a single vector.

    Args:
        d: Vector of the stack dimension
        stack: Codebooks

    Returns:
        (SemanticID, residuals r_1..r_K, reconstruction d_hat)
    """
    d = np.asarray(d, dtype=np.float64)
    if d.ndim != 1:
        raise DimensionMismatchError(f"rq_assign expects a vector, got shape {d.shape}")
    result = rq_assign_batch(d[None, :], stack)
    sid = SemanticID(codes=tuple(int(code) for code in result.codes[0]))
    return sid, [residual[0] for residual in result.residuals], result.quantized[0]


def rq_loss(inputs: List[np.ndarray], selected: List[np.ndarray], mu: float) -> Tuple[float, RQGradients]:
    """
    Residual quantization loss with stop-gradient splitting.

    ``sum_k ||sg[r_{k-1}] - e_k||^2 + mu * ||r_{k-1} - sg[e_k]||^2``, averaged over
    rows. The first term only feeds codeword gradients, the second only the
    input path; earlier codewords inside r_{k-1} are treated as constants.

    Args:
        inputs: Residual entering each level (vector or batch per level)
        selected: Codeword chosen at each level
        mu: Commitment weight

    Returns:
        (loss, gradient contributions)
    """
    if len(inputs) != len(selected):
        raise DimensionMismatchError("inputs and selected codewords must cover the same levels")
    inputs = [np.atleast_2d(np.asarray(item, dtype=np.float64)) for item in inputs]
    selected = [np.atleast_2d(np.asarray(item, dtype=np.float64)) for item in selected]
    rows = inputs[0].shape[0]

    total = 0.0
    grads = RQGradients(inputs=np.zeros_like(inputs[0]))
    for residual, codeword in zip(inputs, selected):
        diff = residual - codeword
        sq = float(np.sum(diff * diff))
        total += (1.0 + mu) * sq
        grads.codewords.append(-2.0 * diff / rows)
        grads.inputs += 2.0 * mu * diff / rows
    return total / rows, grads


def update_codebooks(
    stack: CodebookStack,
    assignment: RQAssignment,
    rule: str = "gradient",
    learning_rate: float = 1e-3,
    ema_decay: float = 0.99,
    optimizer: Optional["AdamW"] = None,
) -> None:
    """
    Move codewords toward the residuals assigned to them.

    The gradient rule steps on ``d/de ||sg[r] - e||^2`` averaged over the batch
    (plain SGD, or lazy AdamW when an optimizer is given). The EMA rule keeps
    decayed counts and sums and sets each codeword to their ratio. Codewords
    without assignments in the batch never move.
    """
    rows = assignment.codes.shape[0]
    for level, book in enumerate(stack.books):
        codes = assignment.codes[:, level]
        counts = np.bincount(codes, minlength=book.size).astype(np.float64)
        sums = np.zeros_like(book.vectors)
        np.add.at(sums, codes, assignment.inputs[level])
        used = counts > 0

        book.ema_counts = ema_decay * book.ema_counts + (1.0 - ema_decay) * counts
        if rule == "ema":
            book.ema_sums = ema_decay * book.ema_sums + (1.0 - ema_decay) * sums
            book.vectors[used] = book.ema_sums[used] / book.ema_counts[used, None]
        elif rule == "gradient":
            grad = 2.0 * (counts[:, None] * book.vectors - sums) / rows
            if optimizer is not None:
                optimizer.step(f"codebook.{level}", book.vectors, grad, rows=used)
            else:
                book.vectors[used] -= learning_rate * grad[used]
        else:
            raise DomainError(f"unknown codebook update rule {rule!r}")


def restart_dead_codes(
    book: Codebook, usage: "UsageStats", sample: np.ndarray, rng: np.random.Generator
) -> int:
    """
    Reset codewords unused over the last window to random sample rows.

    Args:
        book: Codebook of one level
        usage: Usage counts of that level over the window
        sample: Residuals entering that level, one per row
        rng: Seeded generator

    Returns:
        Number of codewords reset
    """
    dead = np.flatnonzero(np.asarray(usage.counts) == 0)
    if dead.size == 0 or len(sample) == 0:
        return 0
    picks = rng.choice(len(sample), size=dead.size, replace=len(sample) < dead.size)
    book.vectors[dead] = np.asarray(sample, dtype=np.float64)[picks]
    book.ema_counts[dead] = 1.0
    book.ema_sums[dead] = book.vectors[dead]
    logger.debug("level %d: restarted %d dead codewords", book.level, dead.size)
    return int(dead.size)
