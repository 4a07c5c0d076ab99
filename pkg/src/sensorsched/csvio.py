"""CSV emission with exact float round-trips.

Floats are written with %.17g, which is enough digits to reconstruct any
IEEE double bit-for-bit, so re-reading an emitted file reproduces the
in-memory arrays exactly.
"""

from __future__ import annotations

import csv
import os
from typing import Dict, List, Sequence

import numpy as np

from .errors import ConfigError


def _format(value) -> str:
    if isinstance(value, (str, np.str_)):
        return str(value)
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return "%.17g" % float(value)


def write_csv(path: str, header: Sequence[str], columns: Sequence) -> None:
    """Write named columns of equal length; numbers get full precision."""
    if len(header) != len(columns):
        raise ConfigError(
            f"header has {len(header)} names but {len(columns)} columns were given"
        )
    cols = [np.asarray(c) for c in columns]
    if cols and any(c.shape != cols[0].shape or c.ndim != 1 for c in cols):
        raise ConfigError("all columns must be one-dimensional and equally long")
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(header))
        for row in zip(*cols):
            writer.writerow([_format(v) for v in row])


def read_csv(path: str) -> Dict[str, np.ndarray]:
    """Read a file written by :func:`write_csv` back into named arrays.

    Columns that parse as floats become float64 arrays; anything else is
    kept as a string array.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ConfigError(f"{path} is empty") from None
        rows = list(reader)
    out: Dict[str, np.ndarray] = {}
    for j, name in enumerate(header):
        raw: List[str] = [row[j] for row in rows]
        try:
            out[name] = np.array([float(v) for v in raw], dtype=np.float64)
        except ValueError:
            out[name] = np.array(raw)
    return out
