"""
SID table module for reading and writing Semantic ID assignments.
Supports the CSV layout ``item_id,c1,...,cK[,suffix]`` and a JSON-lines alternative.
"""

import json
import logging
from pathlib import Path
from typing import List, Sequence, Tuple, Union

import pandas as pd

from src.codebook import SemanticID
from src.exceptions import DataError, DimensionMismatchError

logger = logging.getLogger(__name__)

SidRow = Tuple[str, SemanticID]
JSONL_SUFFIXES = (".jsonl", ".ndjson")


class SidTable:
    """Handles SID table serialization."""

    @staticmethod
    def is_jsonl(path: Union[str, Path]) -> bool:
        return Path(path).suffix.lower() in JSONL_SUFFIXES

    @staticmethod
    def to_frame(rows: Sequence[SidRow]) -> pd.DataFrame:
        """
        Tabulate SID rows.

        Args:
            rows: (item id, SemanticID) pairs

        Returns:
            DataFrame with item_id, c1..cK and, when any row carries one, suffix
        """
        if not rows:
            raise DataError("no semantic IDs to write")
        levels = {sid.levels for _, sid in rows}
        if len(levels) != 1:
            raise DimensionMismatchError(f"semantic IDs disagree on the number of levels: {sorted(levels)}")
        n_levels = levels.pop()
        frame = pd.DataFrame(
            [sid.codes for _, sid in rows], columns=[f"c{level + 1}" for level in range(n_levels)]
        )
        frame.insert(0, "item_id", [item_id for item_id, _ in rows])
        if any(sid.dedup_suffix is not None for _, sid in rows):
            frame["suffix"] = [sid.dedup_suffix if sid.dedup_suffix is not None else 0 for _, sid in rows]
        return frame

    @classmethod
    def write_sids(cls, rows: Sequence[SidRow], path: Union[str, Path]) -> None:
        """Write SID rows as CSV, or JSON lines for a ``.jsonl`` path."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        if cls.is_jsonl(path):
            with open(path, "w", encoding="utf-8") as handle:
                for item_id, sid in rows:
                    record = {"item_id": item_id, "codes": list(sid.codes)}
                    if sid.dedup_suffix is not None:
                        record["suffix"] = sid.dedup_suffix
                    handle.write(json.dumps(record, sort_keys=True) + "\n")
        else:
            cls.to_frame(rows).to_csv(path, index=False, lineterminator="\n")
        logger.info("Wrote %d semantic IDs to %s", len(rows), path)

    @classmethod
    def read_sids(cls, path: Union[str, Path]) -> List[SidRow]:
        """
        Read a SID table written by ``write_sids``.

        Raises:
            DataError: when the file is missing or malformed
        """
        path = Path(path)
        if not path.is_file():
            raise DataError(f"SID file not found: {path}")
        if cls.is_jsonl(path):
            return cls._read_jsonl(path)
        return cls._read_csv(path)

    @staticmethod
    def _read_jsonl(path: Path) -> List[SidRow]:
        rows = []
        with open(path, "r", encoding="utf-8") as handle:
            for line_no, line in enumerate(handle, 1):
                if not line.strip():
                    continue
                try:
                    record = json.loads(line)
                    sid = SemanticID(
                        codes=tuple(int(code) for code in record["codes"]),
                        dedup_suffix=int(record["suffix"]) if "suffix" in record else None,
                    )
                    rows.append((str(record["item_id"]), sid))
                except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                    raise DataError(f"{path}:{line_no}: malformed SID record ({e})") from e
        if not rows:
            raise DataError(f"SID file {path} is empty")
        return rows

    @staticmethod
    def _read_csv(path: Path) -> List[SidRow]:
        try:
            frame = pd.read_csv(path, dtype={"item_id": str})
        except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
            raise DataError(f"cannot parse SID file {path}: {e}") from e
        code_columns = [column for column in frame.columns if column.startswith("c") and column[1:].isdigit()]
        code_columns.sort(key=lambda column: int(column[1:]))
        if "item_id" not in frame.columns or not code_columns:
            raise DataError(f"SID file {path} needs item_id and c1..cK columns")
        if frame.empty:
            raise DataError(f"SID file {path} is empty")
        codes = frame[code_columns]
        if codes.isna().any().any():
            raise DataError(f"SID file {path} has missing codes")
        has_suffix = "suffix" in frame.columns
        rows = []
        for index, item_id in enumerate(frame["item_id"]):
            suffix = int(frame["suffix"].iloc[index]) if has_suffix else None
            sid = SemanticID(codes=tuple(int(code) for code in codes.iloc[index]), dedup_suffix=suffix)
            rows.append((str(item_id), sid))
        return rows


def write_sids(rows: Sequence[SidRow], path: Union[str, Path]) -> None:
    SidTable.write_sids(rows, path)


def read_sids(path: Union[str, Path]) -> List[SidRow]:
    return SidTable.read_sids(path)
