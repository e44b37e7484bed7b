"""The disparity engine: census cost, block aggregation, multi-path
semi-global optimization, winner-take-all with subpixel fit, left-right
consistency and speckle filtering.

The path-aggregation inner loop is the hot spot; a compiled kernel is used
when the extension built, otherwise a vectorized numpy fallback. Both give
bit-identical results.
"""

from __future__ import annotations

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .params import SgmParams, SgmParamError
from . import _aggregate_np

try:
    from . import _aggregate_cy as _aggregate_fast
except ImportError:  # extension not built; numpy fallback
    _aggregate_fast = None

AGGREGATE_BACKEND = "cython" if _aggregate_fast is not None else "numpy"

_DIRECTIONS_8 = ((1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (-1, 1), (1, -1), (-1, -1))
_DIRECTIONS_4 = ((1, 0), (-1, 0), (0, 1), (0, -1))

__all__ = [
    "census_transform",
    "matching_cost",
    "aggregate_paths",
    "select_disparity",
    "lr_check",
    "speckle_filter",
    "compute_disparity",
    "AGGREGATE_BACKEND",
]


def census_transform(gray: np.ndarray, window: int = 5) -> np.ndarray:
    """Census codes per pixel: bit set iff neighbor < center.

    Bits are MSB-first in row-major order over the window's non-center
    pixels (24 bits for the default 5x5). Borders use edge-clamped windows.
    """
    if gray.ndim != 2:
        raise ValueError("census_transform requires a single-channel image")
    if window % 2 == 0 or window < 3:
        raise ValueError("window must be odd and >= 3")
    half = window // 2
    h, w = gray.shape
    padded = np.pad(gray, half, mode="edge")
    center = gray
    codes = np.zeros((h, w), dtype=np.uint32)
    bit = window * window - 2  # MSB position
    for dy in range(-half, half + 1):
        for dx in range(-half, half + 1):
            if dy == 0 and dx == 0:
                continue
            neighbor = padded[half + dy : half + dy + h, half + dx : half + dx + w]
            codes |= (neighbor < center).astype(np.uint32) << bit
            bit -= 1
    return codes


def _box_sum(a: np.ndarray, size: int) -> np.ndarray:
    """Edge-clamped box-filter sum with an integral image."""
    if size == 1:
        return a.astype(np.int64)
    half = size // 2
    p = np.pad(a, half, mode="edge").astype(np.int64)
    c = np.zeros((p.shape[0] + 1, p.shape[1] + 1), dtype=np.int64)
    np.cumsum(np.cumsum(p, axis=0), axis=1, out=c[1:, 1:])
    h, w = a.shape
    return c[size:, size:] - c[:-size, size:] - c[size:, :-size] + c[:-size, :-size]


def matching_cost(
    census_left: np.ndarray,
    census_right: np.ndarray,
    params: SgmParams,
    *,
    census_bits: int = 24,
) -> np.ndarray:
    """Block-summed Hamming cost volume, shape (H, W, D) uint16.

    C(x,y,d) sums Hamming(censusL(x,y), censusR(x-(min_disparity+d), y))
    over a block_size box; out-of-range right coordinates cost the full
    census bit count per pixel.
    """
    if census_left.shape != census_right.shape:
        raise ValueError("left/right size mismatch")
    h, w = census_left.shape
    D = params.num_disparities
    block = params.block_size
    max_cost = census_bits * block * block
    if max_cost > 65535:
        raise ValueError(f"block_size {block} overflows the 16-bit cost budget")
    volume = np.empty((h, w, D), dtype=np.uint16)
    per_pixel = np.full((h, w), census_bits, dtype=np.uint16)
    for idx in range(D):
        disp = params.min_disparity + idx
        per_pixel[:] = census_bits
        if disp >= 0:
            if disp < w:
                diff = census_left[:, disp:] ^ census_right[:, : w - disp]
                per_pixel[:, disp:] = np.bitwise_count(diff)
        else:
            if -disp < w:
                diff = census_left[:, :disp] ^ census_right[:, -disp:]
                per_pixel[:, :disp] = np.bitwise_count(diff)
        volume[:, :, idx] = _box_sum(per_pixel, block)
    return volume


def aggregate_paths(
    cost: np.ndarray, p1: int, p2: int, num_paths: int = 8, *, backend: str | None = None
) -> np.ndarray:
    """Sum of the 1-D smoothness-penalized path costs over 4 or 8 directions."""
    if num_paths == 8:
        directions = _DIRECTIONS_8
    elif num_paths == 4:
        directions = _DIRECTIONS_4
    else:
        raise SgmParamError("num_paths must be 4 or 8")
    if not (0 < p1 < p2):
        raise SgmParamError("p2 must be greater than p1")
    if backend is None:
        backend = AGGREGATE_BACKEND
    if backend == "cython":
        if _aggregate_fast is None:
            raise RuntimeError("compiled aggregation kernel is not available")
        return _aggregate_fast.aggregate_paths_impl(cost, p1, p2, directions)
    if backend == "numpy":
        return _aggregate_np.aggregate_paths_impl(cost, p1, p2, directions)
    raise ValueError(f"unknown backend {backend!r}")


def select_disparity(aggregated: np.ndarray, params: SgmParams) -> np.ndarray:
    """Winner-take-all with uniqueness test and parabolic subpixel fit."""
    h, w, D = aggregated.shape
    costs = aggregated.astype(np.int64)
    d_star = np.argmin(costs, axis=2)  # ties: smallest index
    c0 = np.take_along_axis(costs, d_star[:, :, None], axis=2)[:, :, 0]

    invalid = np.zeros((h, w), dtype=bool)
    if params.uniqueness_ratio > 0 and D > 1:
        masked = costs.copy()
        ys, xs = np.indices((h, w))
        for off in (-1, 0, 1):
            idx = np.clip(d_star + off, 0, D - 1)
            masked[ys, xs, idx] = np.iinfo(np.int64).max
        min_other = masked.min(axis=2)
        has_other = min_other < np.iinfo(np.int64).max
        invalid = has_other & (min_other * 100 < c0 * (100 + params.uniqueness_ratio))

    disp = d_star.astype(np.float64)
    interior = (d_star > 0) & (d_star < D - 1)
    if interior.any():
        ys, xs = np.nonzero(interior)
        dm = costs[ys, xs, d_star[ys, xs] - 1]
        dp = costs[ys, xs, d_star[ys, xs] + 1]
        dc = c0[ys, xs]
        denom = dm - 2 * dc + dp
        ok = denom > 0
        offset = np.zeros(len(ys))
        offset[ok] = (dm[ok] - dp[ok]) / (2.0 * denom[ok])
        disp[ys, xs] += offset
    disp += params.min_disparity
    disp[invalid] = np.nan
    return disp.astype(np.float32)


def lr_check(disp_left: np.ndarray, disp_right: np.ndarray, max_diff: int) -> np.ndarray:
    """Invalidate pixels whose left/right disparities disagree beyond max_diff.

    disp_right is indexed at x - round(disp_left); negative max_diff
    disables the check.
    """
    if max_diff < 0:
        return disp_left.copy()
    if disp_left.shape != disp_right.shape:
        raise ValueError("left/right size mismatch")
    h, w = disp_left.shape
    out = disp_left.copy()
    finite = np.isfinite(disp_left)
    ys, xs = np.nonzero(finite)
    d = disp_left[ys, xs]
    xr = xs - np.floor(d + 0.5).astype(np.int64)
    in_range = (xr >= 0) & (xr < w)
    bad = ~in_range
    yi, xi = ys[in_range], xr[in_range]
    dr = disp_right[yi, xi]
    mismatch = ~(np.isfinite(dr) & (np.abs(d[in_range] - dr) <= max_diff))
    out[ys[bad], xs[bad]] = np.nan
    keep_idx = np.nonzero(in_range)[0][mismatch]
    out[ys[keep_idx], xs[keep_idx]] = np.nan
    return out


def speckle_filter(disp: np.ndarray, window_size: int, speckle_range: float) -> np.ndarray:
    """Invalidate small connected components of similar disparity.

    4-connected pixels belong together when they differ by <= speckle_range;
    components smaller than window_size pixels become NaN. window_size 0
    disables the filter.
    """
    if window_size == 0:
        return disp.copy()
    h, w = disp.shape
    finite = np.isfinite(disp)
    n = h * w
    idx = np.arange(n).reshape(h, w)
    rows, cols = [], []
    # horizontal edges
    ok = finite[:, :-1] & finite[:, 1:] & (np.abs(disp[:, :-1] - disp[:, 1:]) <= speckle_range)
    rows.append(idx[:, :-1][ok])
    cols.append(idx[:, 1:][ok])
    # vertical edges
    ok = finite[:-1] & finite[1:] & (np.abs(disp[:-1] - disp[1:]) <= speckle_range)
    rows.append(idx[:-1][ok])
    cols.append(idx[1:][ok])
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    graph = coo_matrix((np.ones(len(rows), dtype=np.int8), (rows, cols)), shape=(n, n))
    _, labels = connected_components(graph, directed=False)
    sizes = np.bincount(labels)
    small = sizes[labels].reshape(h, w) < window_size
    out = disp.copy()
    out[small & finite] = np.nan
    return out


def _wta_disparity(left, right, params, backend):
    census_l = census_transform(left, 5)
    census_r = census_transform(right, 5)
    cost = matching_cost(census_l, census_r, params)
    aggregated = aggregate_paths(cost, params.p1, params.p2, params.num_paths, backend=backend)
    return select_disparity(aggregated, params)


def compute_disparity(
    left: np.ndarray,
    right: np.ndarray,
    params: SgmParams,
    *,
    backend: str | None = None,
) -> np.ndarray:
    """Full matcher: census -> cost -> path aggregation -> WTA -> left-right
    check -> speckle filter. Deterministic; NaN marks invalid pixels.

    The right-image disparity for the consistency check reuses the same code
    path on horizontally mirrored, swapped inputs.
    """
    params = params.validated()
    if left.shape != right.shape:
        raise ValueError(f"left/right size mismatch: {left.shape} vs {right.shape}")
    if left.ndim != 2:
        raise ValueError("compute_disparity requires single-channel rectified images")
    disp_left = _wta_disparity(left, right, params, backend)
    if params.disp12_max_diff >= 0:
        mirrored = _wta_disparity(right[:, ::-1], left[:, ::-1], params, backend)
        disp_right = mirrored[:, ::-1]
        disp_left = lr_check(disp_left, disp_right, params.disp12_max_diff)
    disp_left = speckle_filter(disp_left, params.speckle_window_size, params.speckle_range)
    return disp_left
