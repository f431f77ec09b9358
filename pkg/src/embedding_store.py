"""
Embedding store module for loading, saving and synthesizing embedding sets.
Handles the NUQ1 binary format and the per-vector statistics used by the transforms.
"""

import json
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import List, Tuple, Union

import numpy as np

from src.config import Config, SyntheticSpec
from src.exceptions import (
    BadMagicError,
    DataError,
    DomainError,
    IdCountMismatchError,
    TruncatedPayloadError,
    VersionMismatchError,
)
from utils.helpers import sibling_path

logger = logging.getLogger(__name__)

# magic, u32 version, u64 count, u32 dim
HEADER = struct.Struct("<4sIQI")

ArrayLike = Union[np.ndarray, List[float]]


@dataclass
class EmbeddingSet:
    """
    N x D matrix of item embeddings with their item identifiers.

    Values are stored as float32 (the on-disk precision) so that a save/load
    round trip is bit-exact; callers cast to float64 before doing arithmetic.
    """

    ids: List[str]
    data: np.ndarray

    def __post_init__(self):
        self.ids = [str(item_id) for item_id in self.ids]
        self.data = np.ascontiguousarray(np.asarray(self.data, dtype=np.float32))
        if self.data.ndim != 2:
            raise DataError(f"Embedding matrix must be 2-D, got shape {self.data.shape}")
        if len(self.ids) == 0 or self.data.shape[0] == 0:
            raise DataError("Embedding set must contain at least one item")
        if self.data.shape[1] == 0:
            raise DataError("Embedding dimension must be positive")
        if len(self.ids) != self.data.shape[0]:
            raise IdCountMismatchError(
                f"{len(self.ids)} ids for {self.data.shape[0]} embedding rows"
            )
        if len(set(self.ids)) != len(self.ids):
            raise DataError("Item ids must be unique within an embedding set")
        if not np.all(np.isfinite(self.data)):
            raise DataError("Embedding matrix contains NaN or Inf values")

    @property
    def count(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    def as_float64(self) -> np.ndarray:
        """Return the matrix in the 64-bit working precision."""
        return self.data.astype(np.float64)


@dataclass
class VectorStats:
    """
    Min/max statistics of one vector, or of a batch of vectors.

    For a batch, ``x_min`` and ``x_max`` are arrays with one entry per row.
    """

    x_min: Union[float, np.ndarray]
    x_max: Union[float, np.ndarray]

    @property
    def delta(self) -> Union[float, np.ndarray]:
        return self.x_max - self.x_min

    @property
    def degenerate(self) -> Union[bool, np.ndarray]:
        return self.delta <= 0.0


class EmbeddingStore:
    """Reads and writes embedding sets in the NUQ1 format."""

    @staticmethod
    def ids_path(path: Union[str, Path]) -> Path:
        """Path of the companion id file: ``<name>.ids.jsonl``."""
        return sibling_path(path, Config.IDS_SUFFIX)

    @staticmethod
    def save_embeddings(embeddings: EmbeddingSet, path: Union[str, Path]) -> None:
        """
        Write an embedding set as a NUQ1 file plus its id file.

        Args:
            embeddings: Set to write
            path: Destination of the binary matrix file
        """
        path = Path(path)
        header = HEADER.pack(Config.MAGIC, Config.FORMAT_VERSION, embeddings.count, embeddings.dim)
        payload = embeddings.data.astype("<f4", copy=False).tobytes(order="C")
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_bytes(header + payload)
            with open(EmbeddingStore.ids_path(path), "w", encoding="utf-8") as handle:
                for item_id in embeddings.ids:
                    handle.write(json.dumps(item_id) + "\n")
        except OSError as e:
            raise DataError(f"Error writing embeddings to {path}: {e}") from e
        logger.debug("wrote %d x %d embeddings to %s", embeddings.count, embeddings.dim, path)

    @staticmethod
    def load_embeddings(path: Union[str, Path]) -> EmbeddingSet:
        """
        Read a NUQ1 file and its companion id file.

        Args:
            path: Binary matrix file

        Returns:
            EmbeddingSet with count and dim taken from the header

        Raises:
            BadMagicError, VersionMismatchError, TruncatedPayloadError,
            IdCountMismatchError, DataError
        """
        path = Path(path)
        try:
            raw = path.read_bytes()
        except OSError as e:
            raise DataError(f"Error reading embeddings file {path}: {e}") from e

        if len(raw) < 4 or raw[:4] != Config.MAGIC:
            raise BadMagicError(f"{path} does not start with magic {Config.MAGIC!r}")
        if len(raw) < HEADER.size:
            raise TruncatedPayloadError(f"{path} ends inside the header")
        _, version, count, dim = HEADER.unpack_from(raw)
        if version != Config.FORMAT_VERSION:
            raise VersionMismatchError(
                f"{path} has format version {version}, expected {Config.FORMAT_VERSION}"
            )
        expected = HEADER.size + count * dim * 4
        if len(raw) < expected:
            raise TruncatedPayloadError(
                f"{path} holds {len(raw) - HEADER.size} payload bytes, header declares {count * dim * 4}"
            )
        if len(raw) > expected:
            raise DataError(f"{path} has {len(raw) - expected} trailing bytes after the payload")

        data = np.frombuffer(raw, dtype="<f4", count=count * dim, offset=HEADER.size)
        data = data.reshape(count, dim).astype(np.float32)
        ids = EmbeddingStore._read_ids(EmbeddingStore.ids_path(path))
        if len(ids) != count:
            raise IdCountMismatchError(f"{len(ids)} ids for {count} rows in {path}")
        return EmbeddingSet(ids=ids, data=data)

    @staticmethod
    def _read_ids(path: Path) -> List[str]:
        try:
            with open(path, "r", encoding="utf-8") as handle:
                return [json.loads(line) for line in handle if line.strip()]
        except OSError as e:
            raise DataError(f"Error reading id file {path}: {e}") from e
        except json.JSONDecodeError as e:
            raise DataError(f"Malformed id file {path}: {e}") from e


class SyntheticFactory:
    """Factory for skewed synthetic embedding sets: dense clusters plus a broad tail."""

    @staticmethod
    def generate_with_centers(spec: SyntheticSpec) -> Tuple[EmbeddingSet, np.ndarray]:
        """
        Generate a synthetic set and return the dense cluster centers used.

        The first floor(dense_mass * n_items) rows are the dense items, in order.
        """
        rng = np.random.default_rng(spec.seed)
        n_dense = int(np.floor(spec.dense_mass * spec.n_items))
        n_tail = spec.n_items - n_dense

        centers = rng.normal(0.0, spec.tail_spread, size=(spec.n_dense_clusters, spec.dim))
        membership = rng.integers(0, spec.n_dense_clusters, size=n_dense)
        dense = centers[membership] + rng.normal(0.0, spec.cluster_spread, size=(n_dense, spec.dim))
        tail = rng.normal(0.0, spec.tail_spread, size=(n_tail, spec.dim))

        width = len(str(max(spec.n_items - 1, 0)))
        ids = [f"item-{index:0{width}d}" for index in range(spec.n_items)]
        data = np.vstack([dense, tail])
        return EmbeddingSet(ids=ids, data=data), centers

    @staticmethod
    def gen_synthetic(spec: SyntheticSpec) -> EmbeddingSet:
        """
        Generate a skewed synthetic embedding set.

        Args:
            spec: Generator parameters; the output is a pure function of them

        Returns:
            EmbeddingSet with spec.n_items rows of dimension spec.dim
        """
        embeddings, _ = SyntheticFactory.generate_with_centers(spec)
        return embeddings


def vector_stats(v: ArrayLike) -> VectorStats:
    """
    Exact component-wise min and max along the last axis.

    Args:
        v: Vector, or batch of vectors as rows

    Returns:
        VectorStats (scalars for a vector, arrays for a batch)
    """
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0 or v.shape[-1] == 0:
        raise DomainError("vector_stats needs a non-empty vector")
    if np.isnan(v).any():
        raise DomainError("vector_stats got a NaN component")
    if not np.isfinite(v).all():
        raise DomainError("vector_stats got an infinite component")
    x_min = np.min(v, axis=-1)
    x_max = np.max(v, axis=-1)
    if v.ndim == 1:
        return VectorStats(x_min=float(x_min), x_max=float(x_max))
    return VectorStats(x_min=x_min, x_max=x_max)


def corpus_stats(matrix: ArrayLike) -> VectorStats:
    """Global min/max over every entry of a corpus (the non-default normalization mode)."""
    flat = np.asarray(matrix, dtype=np.float64).reshape(-1)
    return vector_stats(flat)


def normalize_unit(v: ArrayLike, stats: VectorStats) -> Tuple[np.ndarray, Union[bool, np.ndarray]]:
    """
    Affine map of each vector onto [0, 1] using its min/max.

    Degenerate vectors (delta == 0) map to the constant 0.5 and are flagged.

    Returns:
        (normalized values, degenerate flag per vector)
    """
    v = np.asarray(v, dtype=np.float64)
    x_min = np.asarray(stats.x_min, dtype=np.float64)
    delta = np.asarray(stats.delta, dtype=np.float64)
    degenerate = delta <= 0.0
    safe_delta = np.where(degenerate, 1.0, delta)
    out = (v - x_min[..., None]) / safe_delta[..., None]
    out = np.clip(out, 0.0, 1.0)
    out = np.where(degenerate[..., None], 0.5, out)
    if out.ndim == 1 and np.ndim(degenerate) == 0:
        return out, bool(degenerate)
    return out, degenerate


def denormalize_unit(u: ArrayLike, stats: VectorStats) -> np.ndarray:
    """Inverse of normalize_unit; degenerate vectors return their constant value."""
    u = np.asarray(u, dtype=np.float64)
    x_min = np.asarray(stats.x_min, dtype=np.float64)
    delta = np.maximum(np.asarray(stats.delta, dtype=np.float64), 0.0)
    return x_min[..., None] + delta[..., None] * u
