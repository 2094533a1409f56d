"""Dense float64 matrix helpers, seeded RNG and a finite-difference oracle.

A "matrix" throughout the package is a 2-D ``numpy.ndarray`` of dtype float64.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Callable

import numpy as np


class ShapeError(ValueError):
    pass


class NumericError(ArithmeticError):
    pass


def as_matrix(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 1:
        a = a.reshape(1, -1)
    if a.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got ndim={a.ndim}")
    return a


def make_rng(seed: int) -> np.random.Generator:
    """Return a PCG64 generator; the stream depends only on ``seed``."""
    return np.random.Generator(np.random.PCG64(int(seed)))


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape[0]}x{a.shape[1]} by {b.shape[0]}x{b.shape[1]}")
    return a @ b


def hadamard(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape != b.shape:
        raise ShapeError(f"hadamard: shape mismatch {a.shape} vs {b.shape}")
    return a * b


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def _unit_rows(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(unit rows, norms)``.

    Rows are divided by their largest entry first, so subnormal or huge rows
    neither underflow nor overflow.  Zero rows give zero and norm 0.
    """
    peak = np.max(np.abs(x), axis=1, keepdims=True) if x.shape[1] else np.zeros((x.shape[0], 1))
    scaled = x / np.where(peak > 0.0, peak, 1.0)
    scaled_norm = np.sqrt(np.sum(scaled * scaled, axis=1, keepdims=True))
    unit = scaled / np.where(scaled_norm > 0.0, scaled_norm, 1.0)
    return unit, peak * scaled_norm


def row_l2_normalize(x: np.ndarray) -> np.ndarray:
    """Scale each row to unit Euclidean norm; all-zero rows stay zero."""
    return _unit_rows(x)[0]


def row_l2_normalize_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """Vector-Jacobian product of :func:`row_l2_normalize` at ``x``.

    Zero rows are treated as the identity map, matching the forward rule.
    """
    y, norms = _unit_rows(x)
    safe = np.where(norms > 0.0, norms, 1.0)
    proj = np.sum(grad_out * y, axis=1, keepdims=True)
    return np.where(norms > 0.0, (grad_out - y * proj) / safe, grad_out)


def finite_difference_gradient(
    f: Callable[[np.ndarray], float], x: np.ndarray, step: float = 1e-5
) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``x``, one entry at a time."""
    if not step > 0:
        raise ValueError("step must be positive")
    x = np.array(x, dtype=np.float64, copy=True)
    grad = np.zeros_like(x)
    for idx in np.ndindex(*x.shape):
        orig = x[idx]
        x[idx] = orig + step
        fp = float(f(x))
        x[idx] = orig - step
        fm = float(f(x))
        x[idx] = orig
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise NumericError(f"non-finite function value at entry {idx}")
        grad[idx] = (fp - fm) / (2.0 * step)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """||a - n|| / max(||a||, ||n||), with a floor so all-zero gradients compare as 0."""
    diff = float(np.linalg.norm(analytic - numeric))
    scale = max(float(np.linalg.norm(analytic)), float(np.linalg.norm(numeric)), 1e-8)
    return diff / scale


# -- text serialization ------------------------------------------------------

def format_matrix(x: np.ndarray) -> str:
    """One row per line, comma separated, shortest round-trip float text."""
    x = as_matrix(x)
    return "".join(",".join(repr(v) for v in row) + "\n" for row in x.tolist())


def parse_matrix(text: str, source: str = "<string>") -> np.ndarray:
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rows.append([float(cell) for cell in line.split(",")])
        except ValueError:
            raise ValueError(f"{source}:{lineno}: non-numeric cell in {line!r}") from None
        if len(rows[-1]) != len(rows[0]):
            raise ValueError(f"{source}:{lineno}: expected {len(rows[0])} columns, got {len(rows[-1])}")
    if not rows:
        return np.zeros((0, 0))
    return np.array(rows, dtype=np.float64)


def save_matrix(x: np.ndarray, path: str | Path) -> None:
    Path(path).write_text(format_matrix(x), encoding="utf-8")


def load_matrix(path: str | Path) -> np.ndarray:
    return parse_matrix(Path(path).read_text(encoding="utf-8"), source=str(path))


def spawn_rngs(seed: int, n: int) -> list[np.random.Generator]:
    """``n`` independent PCG64 streams derived from one seed."""
    return [np.random.Generator(np.random.PCG64(s)) for s in np.random.SeedSequence(int(seed)).spawn(n)]
