"""Synthetic chessboard rendering and inner-corner detection.

The renderer draws a checkerboard through the full camera model
(pose + distortion + projection) by intersecting per-pixel view rays with
the board plane, supersampled for clean anti-aliased edges.

The detector finds saddle-point candidates with a min-eigenvalue corner
response, refines them to subpixel accuracy, and assembles the inner-corner
lattice by an adaptive nearest-neighbor walk followed by homography-guided
completion. Board-boundary corners are rejected by a ring-sampling saddle
score (an interior corner has a pure two-cycle intensity pattern around it,
a boundary corner against the flat background does not).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import calib
from .calib import CameraIntrinsics, DistortionCoeffs, ViewPose

__all__ = [
    "BoardSpec",
    "CornerGrid",
    "DetectionError",
    "render_chessboard",
    "detect_corners",
    "refine_subpixel",
]

BACKGROUND_GRAY = 128


class DetectionError(RuntimeError):
    """Raised when no complete, consistent corner grid can be assembled."""


@dataclass(frozen=True)
class BoardSpec:
    cols: int = 9
    rows: int = 6
    square_size: float = 0.025

    def __post_init__(self):
        if self.cols < 3 or self.rows < 3:
            raise ValueError("board needs at least 3x3 inner corners")
        if self.cols == self.rows:
            raise ValueError("cols must differ from rows (orientation disambiguation)")
        if self.square_size <= 0:
            raise ValueError("square_size must be positive")

    def object_points(self) -> np.ndarray:
        """Planar lattice (i*s, j*s, 0), row-major over j (rows) then i (cols)."""
        i, j = np.meshgrid(np.arange(self.cols), np.arange(self.rows))
        pts = np.zeros((self.rows * self.cols, 3))
        pts[:, 0] = i.ravel() * self.square_size
        pts[:, 1] = j.ravel() * self.square_size
        return pts


@dataclass(frozen=True)
class CornerGrid:
    board: BoardSpec
    points: np.ndarray  # (rows*cols, 2) subpixel image points, row-major

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.shape != (self.board.rows * self.board.cols, 2):
            raise ValueError(
                f"expected {self.board.rows * self.board.cols} points, got {pts.shape}"
            )
        if not np.all(np.isfinite(pts)):
            raise ValueError("corner points must be finite")
        object.__setattr__(self, "points", pts)

    @property
    def object_points(self) -> np.ndarray:
        return self.board.object_points()

    def to_text(self) -> str:
        lines = [f"{self.board.cols} {self.board.rows} {self.board.square_size:.9g}"]
        lines.extend(f"{u:.6f} {v:.6f}" for u, v in self.points)
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "CornerGrid":
        rows = text.strip().splitlines()
        cols_n, rows_n, sq = rows[0].split()
        board = BoardSpec(cols=int(cols_n), rows=int(rows_n), square_size=float(sq))
        pts = np.array([[float(a) for a in line.split()] for line in rows[1:]])
        return cls(board=board, points=pts)


# ---------------------------------------------------------------------------
# rendering


def render_chessboard(
    board: BoardSpec,
    K: CameraIntrinsics,
    dist: DistortionCoeffs,
    pose: ViewPose,
    image_size: tuple[int, int],
    supersample: int = 2,
) -> np.ndarray:
    """Render the checkerboard through the full camera model.

    The board's squares cover [-s, cols*s] x [-s, rows*s] on the z=0 board
    plane (inner corners at the lattice); everything else is mid-gray.
    """
    if supersample < 1:
        raise ValueError("supersample must be >= 1")
    w, h = image_size
    s = board.square_size
    # the board must land inside the frame
    extent = [(-s, -s), (board.cols * s, -s), (-s, board.rows * s), (board.cols * s, board.rows * s)]
    for bx, by in extent:
        u, v = calib.project_point(K, dist, pose, (bx, by, 0.0))
        if not (0 <= u < w and 0 <= v < h):
            raise ValueError("board projects outside the image")

    R_t = pose.rotation.T
    cam_origin = R_t @ pose.translation  # board-frame position scale factor source
    offsets = (np.arange(supersample) + 0.5) / supersample - 0.5
    acc = np.zeros((h, w), dtype=np.float64)
    base_u, base_v = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    Kinv = np.linalg.inv(K.matrix())
    for oy in offsets:
        for ox in offsets:
            px = np.stack([base_u + ox, base_v + oy, np.ones_like(base_u)], axis=-1)
            norm_d = (px @ Kinv.T)[..., :2]
            norm = calib.undistort_normalized(dist, norm_d.reshape(-1, 2)).reshape(h, w, 2)
            rays = np.concatenate([norm, np.ones((h, w, 1))], axis=-1)
            rays_board = rays @ R_t.T  # R^T * ray
            denom = rays_board[..., 2]
            with np.errstate(divide="ignore", invalid="ignore"):
                scale = cam_origin[2] / denom
            bx = scale * rays_board[..., 0] - cam_origin[0]
            by = scale * rays_board[..., 1] - cam_origin[1]
            on_board = (
                (scale > 0)
                & np.isfinite(bx)
                & (bx >= -s)
                & (bx <= board.cols * s)
                & (by >= -s)
                & (by <= board.rows * s)
            )
            parity = (np.floor(bx / s).astype(np.int64) + np.floor(by / s).astype(np.int64)) & 1
            shade = np.where(parity == 0, 0.0, 255.0)
            acc += np.where(on_board, shade, float(BACKGROUND_GRAY))
    acc /= supersample * supersample
    return np.clip(np.floor(acc + 0.5), 0, 255).astype(np.uint8)


# ---------------------------------------------------------------------------
# subpixel refinement


def _gradients(img_f: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    gy, gx = np.gradient(img_f)
    return gx, gy


def refine_subpixel(
    gray: np.ndarray,
    point: tuple[float, float],
    window_half: int = 4,
    *,
    max_iter: int = 30,
    tol: float = 1e-3,
) -> tuple[np.ndarray, bool]:
    """Gradient-orthogonality corner refinement.

    Solves sum(grad grad^T) q = sum(grad grad^T p) over the window around the
    current estimate until the step drops below tol. Returns (point, ok);
    a singular normal matrix returns the input flagged ok=False.
    """
    h, w = gray.shape
    img_f = gray.astype(np.float64)
    gx, gy = _gradients(img_f)
    q = np.array(point, dtype=np.float64)
    offs = np.arange(-window_half, window_half + 1, dtype=np.float64)
    ox, oy = np.meshgrid(offs, offs)
    ox, oy = ox.ravel(), oy.ravel()
    if not (
        window_half <= point[0] <= w - 1 - window_half
        and window_half <= point[1] <= h - 1 - window_half
    ):
        raise ValueError(f"window around {point} falls outside the image")
    start = q.copy()
    for _ in range(max_iter):
        xs = q[0] + ox
        ys = q[1] + oy
        if xs.min() < 0 or ys.min() < 0 or xs.max() > w - 1 or ys.max() > h - 1:
            return start, False
        gxs = _bilinear_many(gx, xs, ys)
        gys = _bilinear_many(gy, xs, ys)
        a = np.sum(gxs * gxs)
        b = np.sum(gxs * gys)
        c = np.sum(gys * gys)
        det = a * c - b * b
        if det < 1e-12 * max(a + c, 1e-30) ** 2 or (a + c) < 1e-12:
            return start, False
        bx = np.sum(gxs * (gxs * xs + gys * ys))
        by = np.sum(gys * (gxs * xs + gys * ys))
        q_new = np.array([(c * bx - b * by) / det, (a * by - b * bx) / det])
        step = np.linalg.norm(q_new - q)
        q = q_new
        if step < tol:
            break
    if np.linalg.norm(q - start) > 2.0 * window_half:
        return start, False
    return q, True


def _bilinear_many(img: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    h, w = img.shape
    x0 = np.clip(np.floor(xs).astype(np.int64), 0, w - 2)
    y0 = np.clip(np.floor(ys).astype(np.int64), 0, h - 2)
    fx = xs - x0
    fy = ys - y0
    return (
        img[y0, x0] * (1 - fx) * (1 - fy)
        + img[y0, x0 + 1] * fx * (1 - fy)
        + img[y0 + 1, x0] * (1 - fx) * fy
        + img[y0 + 1, x0 + 1] * fx * fy
    )


# ---------------------------------------------------------------------------
# corner detection


def _binomial_smooth(gray: np.ndarray) -> np.ndarray:
    k = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0
    out = ndimage.correlate1d(gray.astype(np.float64), k, axis=0, mode="nearest")
    return ndimage.correlate1d(out, k, axis=1, mode="nearest")


def _min_eig_response(img_f: np.ndarray, window: int = 7) -> np.ndarray:
    gx, gy = _gradients(img_f)
    sxx = ndimage.uniform_filter(gx * gx, size=window, mode="nearest")
    syy = ndimage.uniform_filter(gy * gy, size=window, mode="nearest")
    sxy = ndimage.uniform_filter(gx * gy, size=window, mode="nearest")
    half_tr = (sxx + syy) / 2.0
    return half_tr - np.sqrt(((sxx - syy) / 2.0) ** 2 + sxy * sxy)


def _candidate_corners(gray: np.ndarray, max_count: int, nms_radius: int = 5):
    smoothed = _binomial_smooth(gray)
    resp = _min_eig_response(smoothed)
    local_max = ndimage.maximum_filter(resp, size=2 * nms_radius + 1, mode="nearest")
    peak = resp.max()
    if peak <= 1e-9:
        return np.empty((0, 2)), smoothed
    mask = (resp == local_max) & (resp > 0.02 * peak)
    ys, xs = np.nonzero(mask)
    order = np.argsort(resp[ys, xs])[::-1][:max_count]
    return np.stack([xs[order], ys[order]], axis=1).astype(np.float64), smoothed


def _ring_saddle_score(img_f: np.ndarray, pt: np.ndarray, radius: float) -> float:
    """Two-cycle minus one-cycle ring response; high only for X-junctions."""
    h, w = img_f.shape
    angles = np.arange(16) * (2.0 * np.pi / 16.0)
    xs = pt[0] + radius * np.cos(angles)
    ys = pt[1] + radius * np.sin(angles)
    if xs.min() < 0 or ys.min() < 0 or xs.max() > w - 1 or ys.max() > h - 1:
        return 0.0
    vals = _bilinear_many(img_f, xs, ys)
    vals = vals - vals.mean()
    c1 = abs(np.sum(vals * np.exp(1j * angles)))
    c2 = abs(np.sum(vals * np.exp(2j * angles)))
    return float(c2 - c1)


def _dominant_steps(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Two lattice step vectors from nearest-neighbor deltas of the cloud."""
    n = len(points)
    deltas = []
    for i in range(n):
        d = points - points[i]
        dist = np.hypot(d[:, 0], d[:, 1])
        dist[i] = np.inf
        for j in np.argsort(dist)[:4]:
            deltas.append(d[j])
    deltas = np.array(deltas)
    angles = np.mod(np.arctan2(deltas[:, 1], deltas[:, 0]), np.pi)
    hist, edges = np.histogram(angles, bins=36, range=(0, np.pi))
    # wrap-aware smoothing so a peak split across 0/pi still wins
    hist_s = hist + np.roll(hist, 1) + np.roll(hist, -1)
    peak1 = np.argmax(hist_s)
    ang1 = (edges[peak1] + edges[peak1 + 1]) / 2.0

    def circ_dist(a, b):
        d = np.abs(a - b) % np.pi
        return np.minimum(d, np.pi - d)

    far = circ_dist((edges[:-1] + edges[1:]) / 2.0, ang1) > np.pi / 5
    if not far.any():
        raise DetectionError("no second lattice direction")
    peak2 = np.argmax(np.where(far, hist_s, -1))
    ang2 = (edges[peak2] + edges[peak2 + 1]) / 2.0

    def step_for(ang):
        sel = circ_dist(angles, ang) < np.pi / 9
        if not sel.any():
            raise DetectionError("no lattice direction support")
        vecs = deltas[sel]
        # fold onto a half-plane so opposite steps reinforce
        flip = vecs @ np.array([np.cos(ang), np.sin(ang)]) < 0
        vecs = np.where(flip[:, None], -vecs, vecs)
        return np.median(vecs, axis=0)

    return step_for(ang1), step_for(ang2)


def _walk_lattice(points: np.ndarray, step_a: np.ndarray, step_b: np.ndarray, seed: int):
    """BFS over candidates, assigning integer lattice coordinates.

    Step vectors adapt locally (each link inherits the parent's measured
    steps), which tolerates perspective foreshortening.
    """
    n = len(points)
    assigned: dict[int, tuple[int, int]] = {seed: (0, 0)}
    taken: dict[tuple[int, int], int] = {(0, 0): seed}
    local = {seed: (step_a.copy(), step_b.copy())}
    queue = [seed]
    while queue:
        i = queue.pop(0)
        ci, cj = assigned[i]
        a, b = local[i]
        for d_coord, step in (((1, 0), a), ((-1, 0), -a), ((0, 1), b), ((0, -1), -b)):
            coord = (ci + d_coord[0], cj + d_coord[1])
            if coord in taken:
                continue
            target = points[i] + step
            d = points - target
            dist = np.hypot(d[:, 0], d[:, 1])
            j = int(np.argmin(dist))
            if dist[j] > 0.35 * np.linalg.norm(step) or j in assigned:
                continue
            assigned[j] = coord
            taken[coord] = j
            actual = points[j] - points[i]
            if d_coord[0] != 0:
                local[j] = (actual * d_coord[0], b.copy())
            else:
                local[j] = (a.copy(), actual * d_coord[1])
            queue.append(j)
    return assigned


def _fit_lattice_homography(points: np.ndarray, assigned: dict[int, tuple[int, int]]):
    idx = list(assigned.keys())
    src = np.array([assigned[i] for i in idx], dtype=np.float64)
    dst = points[idx]
    H = calib.estimate_homography(src, dst)
    return H


def _apply_h(H: np.ndarray, pts: np.ndarray) -> np.ndarray:
    ph = np.column_stack([pts, np.ones(len(pts))]) @ H.T
    return ph[:, :2] / ph[:, 2:3]


def detect_corners(gray: np.ndarray, board: BoardSpec) -> CornerGrid:
    """Find the board's inner corners in canonical order.

    Raises DetectionError when a complete rows x cols grid cannot be
    assembled; never returns a partial grid.
    """
    if gray.ndim != 2:
        raise ValueError("detect_corners requires a single-channel image")
    n_corners = board.rows * board.cols
    cand, smoothed = _candidate_corners(gray, 3 * n_corners)
    if len(cand) < n_corners:
        raise DetectionError(f"only {len(cand)} corner candidates for {n_corners} corners")

    h, w = gray.shape
    refined = []
    for p in cand:
        if 5 <= p[0] <= w - 6 and 5 <= p[1] <= h - 6:
            q, ok = refine_subpixel(smoothed, (p[0], p[1]), window_half=4)
            refined.append(q if ok else p)
        else:
            refined.append(p)
    points = np.array(refined)

    # estimate the lattice basis from raw NMS peaks (refined points may
    # coincide) and only the strongest n_corners of them: weak spurious
    # responses (aliased edge staircases) would corrupt the step estimate
    step_a, step_b = _dominant_steps(np.asarray(cand[:n_corners], dtype=np.float64))
    best = None
    for seed in range(min(len(points), 8)):
        assigned = _walk_lattice(points, step_a, step_b, seed)
        if best is None or len(assigned) > len(best):
            best = assigned
        if len(assigned) >= n_corners:
            break
    assigned = best
    if len(assigned) < 4:
        raise DetectionError("lattice walk found too few connected corners")

    # homography-guided completion: iterate fit -> outlier rejection -> snap
    pitch = min(np.linalg.norm(step_a), np.linalg.norm(step_b))
    for _ in range(3):
        H = _fit_lattice_homography(points, assigned)
        # reject members with residual > 2 px
        kept = {}
        for i, coord in assigned.items():
            pred = _apply_h(H, np.array([coord], dtype=np.float64))[0]
            if np.linalg.norm(pred - points[i]) <= 2.0:
                kept[i] = coord
        if len(kept) < 4:
            raise DetectionError("lattice fit collapsed (homography residuals too large)")
        assigned = kept
        coords = np.array(list(assigned.values()))
        lo = coords.min(axis=0) - 2
        hi = coords.max(axis=0) + 2
        taken_coords = set(assigned.values())
        taken_idx = set(assigned.keys())
        grid_i, grid_j = np.meshgrid(
            np.arange(lo[0], hi[0] + 1), np.arange(lo[1], hi[1] + 1)
        )
        all_coords = np.stack([grid_i.ravel(), grid_j.ravel()], axis=1).astype(np.float64)
        preds = _apply_h(H, all_coords)
        for coord, pred in zip(all_coords.astype(int), preds):
            key = (int(coord[0]), int(coord[1]))
            if key in taken_coords:
                continue
            d = np.hypot(points[:, 0] - pred[0], points[:, 1] - pred[1])
            j = int(np.argmin(d))
            if d[j] <= max(2.0, 0.15 * pitch) and j not in taken_idx:
                assigned[j] = key
                taken_coords.add(key)
                taken_idx.add(j)

    # saddle scores distinguish inner corners from board-boundary corners
    scores = {}
    radius = float(np.clip(0.3 * pitch, 2.0, 12.0))
    for i in assigned:
        scores[i] = _ring_saddle_score(smoothed, points[i], radius)

    grid = _best_full_window(points, assigned, scores, board)
    if grid is None:
        raise DetectionError(
            f"could not assemble a complete {board.cols}x{board.rows} inner-corner grid"
        )
    ordered = _canonical_order(grid, board)
    flat = _final_refine(gray, ordered.reshape(-1, 2))
    if (
        flat[:, 0].min() < 0
        or flat[:, 1].min() < 0
        or flat[:, 0].max() > w - 1
        or flat[:, 1].max() > h - 1
    ):
        raise DetectionError("grid extends outside the image")
    return CornerGrid(board=board, points=flat)


def _final_refine(gray: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Polish ordered grid corners on a twice-smoothed image.

    Averaging over several pitch-scaled windows suppresses the staircase bias
    of hard-edged (non-antialiased) renders, where a single window size can
    resonate with the aliasing period.
    """
    h, w = gray.shape
    nn = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    pitch = float(np.median(nn[nn > 1.0])) if np.any(nn > 1.0) else 10.0
    halves = sorted({int(np.clip(round(f * pitch), 4, 12)) for f in (0.18, 0.22, 0.26)})
    sm = _binomial_smooth(_binomial_smooth(gray))
    out = []
    for p in pts:
        qs = []
        for wh in halves:
            if not (wh + 1 <= p[0] <= w - 2 - wh and wh + 1 <= p[1] <= h - 2 - wh):
                continue
            q, ok = refine_subpixel(sm, (p[0], p[1]), window_half=wh)
            if ok and np.linalg.norm(q - p) < 0.3 * pitch:
                qs.append(q)
        out.append(np.mean(qs, axis=0) if qs else p)
    return np.array(out)


def _best_full_window(points, assigned, scores, board: BoardSpec):
    """Pick the fully-occupied (cols x rows) lattice window with the highest
    total saddle score; returns an array (nr, nc, 2) of corner positions."""
    coords = np.array(list(assigned.values()))
    by_coord = {c: i for i, c in assigned.items()}
    lo = coords.min(axis=0)
    hi = coords.max(axis=0)
    best_score = -np.inf
    best = None
    for nc, nr in ((board.cols, board.rows), (board.rows, board.cols)):
        for i0 in range(lo[0], hi[0] - nc + 2):
            for j0 in range(lo[1], hi[1] - nr + 2):
                total = 0.0
                ok = True
                for dj in range(nr):
                    for di in range(nc):
                        idx = by_coord.get((i0 + di, j0 + dj))
                        if idx is None:
                            ok = False
                            break
                        total += scores[idx]
                    if not ok:
                        break
                if ok and total > best_score:
                    best_score = total
                    grid = np.empty((nr, nc, 2))
                    for dj in range(nr):
                        for di in range(nc):
                            grid[dj, di] = points[by_coord[(i0 + di, j0 + dj)]]
                    best = grid
    return best


def _canonical_order(grid: np.ndarray, board: BoardSpec) -> np.ndarray:
    """Orient the grid: rows of length board.cols, anchored at the grid
    corner nearest the image origin; axis direction ties broken toward
    larger projected x-extent."""
    nr, nc = grid.shape[:2]
    if (nr, nc) == (board.cols, board.rows):
        grid = np.transpose(grid, (1, 0, 2))
        nr, nc = nc, nr
    assert (nr, nc) == (board.rows, board.cols)
    variants = [grid, grid[::-1], grid[:, ::-1], grid[::-1, ::-1]]
    # a board seen from the front projects with positive col-step x row-step
    # orientation; mirrored variants would pair corners with a reflected
    # object lattice and break calibration
    proper = []
    for v in variants:
        a = v[0, 1] - v[0, 0]
        b = v[1, 0] - v[0, 0]
        if a[0] * b[1] - a[1] * b[0] > 0:
            proper.append(v)
    if not proper:
        proper = variants
    dists = [np.linalg.norm(v[0, 0]) for v in proper]
    return proper[int(np.argmin(dists))].copy()
