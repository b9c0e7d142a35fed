"""Deterministic text serialization helpers.

Floats are written in the shortest decimal form that round-trips to the
same IEEE double, so identical runs produce byte-identical files and no
precision is lost on re-parse.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, Sequence


def fmt_float(value: float) -> str:
    """Shortest round-trip decimal representation of a double."""
    return repr(float(value))


def write_csv(path, header: Sequence[str], columns: Sequence[Iterable[float]]) -> None:
    """Write equal-length numeric columns under the given header."""
    rows = list(zip(*columns))
    lines = [",".join(header)]
    lines.extend(",".join(fmt_float(v) for v in row) for row in rows)
    Path(path).write_text("\n".join(lines) + "\n")


def write_json(path, payload: dict) -> None:
    """Stable JSON dump: sorted keys, trailing newline."""
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
