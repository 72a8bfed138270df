"""Detect the degenerate 'two affine pieces' predictor on a 1-D grid."""

from __future__ import annotations

import numpy as np

MIN_GRID = 16
REL_TOL = 1e-3


def _lstsq_mse(A: np.ndarray, y: np.ndarray) -> float:
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    r = y - A @ coef
    return float(np.mean(r * r))


def two_piece_fit(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """Best continuous one-knot piecewise-affine fit by exhaustive knot search.

    Candidate knots are the interior grid points. Returns ``(mse, knot)``.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    order = np.argsort(x, kind="stable")
    x, y = x[order], y[order]
    base = np.column_stack([np.ones_like(x), x])
    best = (np.inf, float("nan"))
    for k in x[1:-1]:
        A = np.column_stack([base, np.maximum(x - k, 0.0)])
        mse = _lstsq_mse(A, y)
        if mse < best[0]:
            best = (mse, float(k))
    return best


def detect_kink(grid: np.ndarray, predictions: np.ndarray) -> tuple[bool, float | None]:
    """Is the predictor piecewise affine with at most one knot?

    The fit counts when its mean squared residual is at most 1e-3 times the
    prediction variance. A predictor that is already affine returns
    ``(True, None)``.
    """
    x = np.asarray(grid, dtype=np.float64).ravel()
    y = np.asarray(predictions, dtype=np.float64).ravel()
    if x.size != y.size:
        raise ValueError("grid and predictions differ in length")
    if x.size < MIN_GRID:
        raise ValueError(f"grid needs at least {MIN_GRID} points, got {x.size}")
    if np.ptp(y) == 0:
        return True, None
    tol = REL_TOL * float(np.var(y))
    if _lstsq_mse(np.column_stack([np.ones_like(x), x]), y) <= tol:
        return True, None
    mse, knot = two_piece_fit(x, y)
    if mse <= tol:
        return True, knot
    return False, None


def kink_ratio(grid: np.ndarray, predictions: np.ndarray) -> float:
    """Two-piece residual divided by prediction variance (inf for constants)."""
    y = np.asarray(predictions, dtype=np.float64).ravel()
    var = float(np.var(y))
    mse, _ = two_piece_fit(grid, y)
    return mse / var if var > 0 else (0.0 if mse == 0 else np.inf)
