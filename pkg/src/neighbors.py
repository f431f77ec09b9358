"""
Neighbor module for collaborative neighbor selection.
Scores item pairs by the inner product of their collaborative embeddings and
keeps the top-k per item.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from src.config import Config
from src.embedding_store import EmbeddingSet
from src.exceptions import ConfigError, DataError, DomainError
from utils.helpers import chunk_ranges

logger = logging.getLogger(__name__)

Neighbor = Tuple[str, float]

# query rows scored per block when building a full table
SCORE_CHUNK = 1024


@dataclass
class NeighborTable:
    """Ordered (id, score) neighbor lists keyed by item id, in input order."""

    k: int
    rows: Dict[str, List[Neighbor]] = field(default_factory=dict)

    def to_records(self) -> List[Dict[str, object]]:
        return [
            {"item": item, "neighbors": [{"id": other, "score": score} for other, score in neighbors]}
            for item, neighbors in self.rows.items()
        ]

    def write_jsonl(self, path: Union[str, Path]) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as handle:
            for record in self.to_records():
                handle.write(json.dumps(record) + "\n")
        logger.info("Wrote neighbor lists of %d items to %s", len(self.rows), path)


class NeighborIndex:
    """
    Exact inner-product neighbor search over an embedding set.

    Scores are computed in float64. Ties are broken by ascending item id, and
    the item itself is never returned.
    """

    BACKENDS = ("numpy", "faiss")

    def __init__(self, embeddings: EmbeddingSet, backend: str = "numpy"):
        if backend not in self.BACKENDS:
            raise ConfigError(f"unknown neighbor backend {backend!r}; choose from {self.BACKENDS}")
        if embeddings.count < 2:
            raise DataError("neighbor selection needs at least 2 items")
        self.embeddings = embeddings
        self.backend = backend
        self.vectors = embeddings.as_float64()
        self.ids = np.array(embeddings.ids, dtype=object)
        # position of every item in ascending id order
        order = sorted(range(embeddings.count), key=lambda index: embeddings.ids[index])
        self.id_rank = np.empty(embeddings.count, dtype=np.int64)
        self.id_rank[order] = np.arange(embeddings.count)
        self._norms = np.linalg.norm(self.vectors, axis=1)
        self._faiss_index = self._build_faiss() if backend == "faiss" else None

    def _build_faiss(self):
        try:
            import faiss
        except ImportError as e:
            raise ConfigError("the faiss backend needs the faiss-cpu package") from e
        index = faiss.IndexFlatIP(self.embeddings.dim)
        index.add(np.ascontiguousarray(self.embeddings.data, dtype=np.float32))
        return index

    def _check_k(self, k: int) -> None:
        if not 1 <= k < self.embeddings.count:
            raise DomainError(f"k must lie in [1, {self.embeddings.count - 1}], got {k}")

    def _rank(self, query: int, candidates: np.ndarray, scores: np.ndarray, k: int) -> List[Neighbor]:
        keep = candidates != query
        candidates, scores = candidates[keep], scores[keep]
        # primary key last: score descending, then ascending id
        order = np.lexsort((self.id_rank[candidates], -scores))[:k]
        return [(str(self.ids[candidates[pos]]), float(scores[pos])) for pos in order]

    def _top_k_scored(self, query: int, scores: np.ndarray, k: int) -> List[Neighbor]:
        scores = scores.copy()
        scores[query] = -np.inf
        kth = np.partition(-scores, k - 1)[k - 1]
        candidates = np.flatnonzero(-scores <= kth)
        return self._rank(query, candidates, scores[candidates], k)

    def _top_k_faiss(self, query: int, k: int) -> List[Neighbor]:
        width = min(self.embeddings.count, 2 * (k + 1))
        _, found = self._faiss_index.search(self.embeddings.data[query:query + 1], width)
        candidates = found[0][found[0] >= 0]
        scores = self.vectors[candidates] @ self.vectors[query]
        if width < self.embeddings.count and not self._window_is_exact(query, candidates, scores, k):
            return self._top_k_scored(query, self.vectors @ self.vectors[query], k)
        return self._rank(query, candidates, scores, k)

    def _window_is_exact(self, query: int, candidates: np.ndarray, scores: np.ndarray, k: int) -> bool:
        """
        True when no item outside the FAISS window can reach the k-th score.

        Items outside the window score at most the window minimum in float32;
        ``slack`` covers float32 rounding on both sides of that comparison.
        """
        others = scores[candidates != query]
        if len(others) <= k:
            return False
        kth = np.sort(others)[::-1][k - 1]
        slack = 2 * np.finfo(np.float32).eps * self.embeddings.dim * self._norms[query] * self._norms.max()
        return bool(others.min() + slack < kth)

    def top_k(self, query: int, k: int) -> List[Neighbor]:
        """
        Top-k neighbors of one item.

        Args:
            query: Row index of the item
            k: Number of neighbors, 1 <= k < count

        Returns:
            (id, score) pairs, scores descending
        """
        if not 0 <= query < self.embeddings.count:
            raise DomainError(f"item index {query} outside [0, {self.embeddings.count})")
        self._check_k(k)
        if self._faiss_index is not None:
            return self._top_k_faiss(query, k)
        return self._top_k_scored(query, self.vectors @ self.vectors[query], k)

    def build_table(self, k: Optional[int] = None) -> NeighborTable:
        """Neighbor lists of every item; ``k`` is capped at count - 1."""
        k = Config.NEIGHBORS_K if k is None else k
        if k < 1:
            raise DomainError(f"k must be positive, got {k}")
        k = min(k, self.embeddings.count - 1)
        table = NeighborTable(k=k)
        for rows in chunk_ranges(self.embeddings.count, SCORE_CHUNK):
            if self._faiss_index is not None:
                for query in rows:
                    table.rows[self.embeddings.ids[query]] = self._top_k_faiss(query, k)
                continue
            block = self.vectors[rows.start:rows.stop] @ self.vectors.T
            for offset, query in enumerate(rows):
                table.rows[self.embeddings.ids[query]] = self._top_k_scored(query, block[offset], k)
        logger.info("Built %d-neighbor table over %d items with the %s backend", k, self.embeddings.count, self.backend)
        return table


def top_k_neighbors(i: int, emb: EmbeddingSet, k: int, backend: str = "numpy") -> List[Neighbor]:
    """Ordered (id, score) neighbors of item ``i`` by dot-product similarity."""
    return NeighborIndex(emb, backend).top_k(i, k)


def build_neighbor_table(emb: EmbeddingSet, k: int = Config.NEIGHBORS_K, backend: str = "numpy") -> NeighborTable:
    """Neighbor table of every item."""
    return NeighborIndex(emb, backend).build_table(k)
