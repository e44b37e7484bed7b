"""Numpy fallback for semi-global path aggregation.

Processes one front (row or column) at a time, vectorized over the
perpendicular axis and disparity. Integer arithmetic throughout, so results
are bit-identical to the compiled kernel.
"""

from __future__ import annotations

import numpy as np

SATURATE = 65535

BACKEND = "numpy"


def _step(prev: np.ndarray, c: np.ndarray, p1: int, p2: int) -> np.ndarray:
    """One recurrence step: prev, c are (M, D) int64; returns (M, D) int64."""
    min_prev = prev.min(axis=1, keepdims=True)
    cand = prev.copy()
    cand[:, 1:] = np.minimum(cand[:, 1:], prev[:, :-1] + p1)
    cand[:, :-1] = np.minimum(cand[:, :-1], prev[:, 1:] + p1)
    np.minimum(cand, min_prev + p2, out=cand)
    return np.minimum(c + cand - min_prev, SATURATE)


def _aggregate_direction(cost: np.ndarray, p1: int, p2: int, dx: int, dy: int) -> np.ndarray:
    h, w, d = cost.shape
    c = cost.astype(np.int64)
    L = np.empty_like(c)
    if dy == 0:
        xs = range(w) if dx > 0 else range(w - 1, -1, -1)
        first = True
        for x in xs:
            if first:
                L[:, x] = c[:, x]
                first = False
            else:
                L[:, x] = _step(L[:, x - dx], c[:, x], p1, p2)
        return L
    ys = range(h) if dy > 0 else range(h - 1, -1, -1)
    first = True
    for y in ys:
        if first:
            L[y] = c[y]
            first = False
            continue
        prev = L[y - dy]
        if dx == 0:
            L[y] = _step(prev, c[y], p1, p2)
        elif dx > 0:
            L[y, dx:] = _step(prev[:-dx], c[y, dx:], p1, p2)
            L[y, :dx] = c[y, :dx]
        else:
            L[y, :dx] = _step(prev[-dx:], c[y, :dx], p1, p2)
            L[y, dx:] = c[y, dx:]
    return L


def aggregate_paths_impl(cost: np.ndarray, p1: int, p2: int, directions) -> np.ndarray:
    total = np.zeros(cost.shape, dtype=np.int64)
    for dx, dy in directions:
        total += _aggregate_direction(cost, p1, p2, dx, dy)
    return np.minimum(total, SATURATE).astype(np.uint16)
