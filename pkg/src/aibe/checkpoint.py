"""Checkpoint directories: one CSV per array plus ``manifest.csv``.

``manifest.csv`` rows are ``name,rows,cols,role``; array ``name`` lives in
``<name>.csv`` using the round-trip float text of :mod:`aibe.numkit`.
"""

from __future__ import annotations

import csv
import io
from pathlib import Path

import numpy as np

from .numkit import as_matrix, format_matrix, parse_matrix


class CheckpointError(ValueError):
    pass


def save_arrays(directory: str | Path, entries: list[tuple[str, np.ndarray, str]]) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    for name, arr, role in entries:
        arr = as_matrix(arr)
        writer.writerow([name, arr.shape[0], arr.shape[1], role])
        (d / f"{name}.csv").write_text(format_matrix(arr), encoding="utf-8")
    (d / "manifest.csv").write_text(buf.getvalue(), encoding="utf-8")


def load_arrays(directory: str | Path) -> dict[str, tuple[np.ndarray, str]]:
    """Return ``{name: (array, role)}`` in manifest order."""
    d = Path(directory)
    manifest = d / "manifest.csv"
    if not manifest.exists():
        raise CheckpointError(f"no checkpoint manifest at {manifest}")
    out: dict[str, tuple[np.ndarray, str]] = {}
    with manifest.open(newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            if len(row) != 4:
                raise CheckpointError(f"{manifest}:{lineno}: expected name,rows,cols,role")
            name, rows, cols, role = row[0], int(row[1]), int(row[2]), row[3]
            path = d / f"{name}.csv"
            if not path.exists():
                raise CheckpointError(f"{manifest}:{lineno}: missing array file {path.name}")
            arr = parse_matrix(path.read_text(encoding="utf-8"), source=str(path))
            if arr.size == 0:
                arr = np.zeros((rows, cols))
            if arr.shape != (rows, cols):
                raise CheckpointError(f"{path}: shape {arr.shape} disagrees with manifest ({rows}, {cols})")
            out[name] = (arr, role)
    return out
