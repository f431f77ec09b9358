"""
Helper functions for the nuquant toolkit.
Contains small utilities for paths, seeds and JSON output.
"""

import json
from pathlib import Path
from typing import Any, Iterable, List, Optional, Union


def sibling_path(path: Union[str, Path], suffix: str) -> Path:
    """
    Build a companion file path next to ``path``.

    The last extension of ``path`` is replaced by ``suffix``; a path without an
    extension gets the suffix appended.

    Args:
        path: Primary file path
        suffix: Suffix including its leading dot, e.g. ".ids.jsonl"

    Returns:
        Companion path
    """
    path = Path(path)
    if path.suffix:
        return path.with_suffix(suffix)
    return path.with_name(path.name + suffix)


def resolve_seed(*candidates: Optional[int], default: int = 0) -> int:
    """
    Return the first candidate that is not None.

    Args:
        *candidates: Seeds in precedence order (flag, config file, environment)
        default: Seed used when every candidate is None

    Returns:
        Resolved seed
    """
    for candidate in candidates:
        if candidate is not None:
            return int(candidate)
    return default


def write_json(payload: Any, path: Union[str, Path], indent: Optional[int] = 2) -> None:
    """Write ``payload`` as UTF-8 JSON with sorted keys and a trailing newline."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(payload, handle, indent=indent, sort_keys=True)
        handle.write("\n")


def read_json(path: Union[str, Path]) -> Any:
    with open(path, "r", encoding="utf-8") as handle:
        return json.load(handle)


def chunk_ranges(total: int, size: int) -> List[range]:
    """Split ``range(total)`` into consecutive ranges of at most ``size`` items."""
    size = max(int(size), 1)
    return [range(start, min(start + size, total)) for start in range(0, total, size)]


def format_level_list(values: Iterable[float], precision: int = 3) -> str:
    """
    Format per-level values for log lines.

    Args:
        values: One value per quantization level
        precision: Decimal places

    Returns:
        String such as "[12.500, 3.100]"
    """
    return "[" + ", ".join(f"{value:.{precision}f}" for value in values) + "]"

