"""Camera calibration and stereo geometry.

Monocular calibration follows the classic recipe: per-view homographies,
closed-form intrinsics from the absolute-conic constraints, pose
decomposition, then a joint Levenberg-Marquardt refinement of intrinsics,
5-term Brown-Conrady distortion (k1, k2, p1, p2, k3) and per-view poses.
Stereo extrinsics are averaged from per-view relative poses and refined the
same way. Rectification uses the Bouguet half-rotation construction.

All rotations are 3x3 orthonormal matrices; Rodrigues vectors are the
exchange format. Translations are meters. Pixels are (u, v) with u along
image columns.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .image import bilinear_sample

__all__ = [
    "CameraIntrinsics",
    "DistortionCoeffs",
    "ViewPose",
    "StereoRig",
    "CalibrationError",
    "rodrigues",
    "rodrigues_inv",
    "project_point",
    "project_points",
    "distort_normalized",
    "undistort_normalized",
    "estimate_homography",
    "zhang_init",
    "pose_from_homography",
    "calibrate_camera",
    "optimal_new_intrinsics",
    "stereo_calibrate",
    "stereo_rectify",
    "build_rectify_map",
    "remap",
    "vertical_misalignment",
]


class CalibrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    skew: float = 0.0

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx} fy={self.fy}")

    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, self.skew, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )


@dataclass(frozen=True)
class DistortionCoeffs:
    k1: float = 0.0
    k2: float = 0.0
    p1: float = 0.0
    p2: float = 0.0
    k3: float = 0.0

    def __post_init__(self):
        vals = (self.k1, self.k2, self.p1, self.p2, self.k3)
        if not all(np.isfinite(v) for v in vals):
            raise ValueError(f"distortion coefficients must be finite, got {vals}")

    def as_array(self) -> np.ndarray:
        return np.array([self.k1, self.k2, self.p1, self.p2, self.k3])


def _check_rotation(R: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    R = np.asarray(R, dtype=np.float64)
    if R.shape != (3, 3):
        raise ValueError(f"rotation must be 3x3, got {R.shape}")
    if np.max(np.abs(R.T @ R - np.eye(3))) > tol or abs(np.linalg.det(R) - 1.0) > tol:
        raise ValueError("matrix is not a proper rotation")
    return R


@dataclass(frozen=True)
class ViewPose:
    """Rigid transform taking world/board points into camera coordinates."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", _check_rotation(self.rotation))
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        object.__setattr__(self, "translation", t)

    @property
    def rvec(self) -> np.ndarray:
        return rodrigues_inv(self.rotation)

    @classmethod
    def from_rvec(cls, rvec: np.ndarray, tvec: np.ndarray) -> "ViewPose":
        return cls(rodrigues(rvec), tvec)


def _skew_matrix(v: np.ndarray) -> np.ndarray:
    return np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]], dtype=np.float64)


def rodrigues(vec: np.ndarray) -> np.ndarray:
    """Axis-angle vector to rotation matrix (exponential map)."""
    v = np.asarray(vec, dtype=np.float64).reshape(3)
    theta = np.linalg.norm(v)
    if theta < 1e-12:
        # second-order expansion keeps the map smooth near zero
        K = _skew_matrix(v)
        return np.eye(3) + K + 0.5 * (K @ K)
    axis = v / theta
    K = _skew_matrix(axis)
    return np.eye(3) + np.sin(theta) * K + (1.0 - np.cos(theta)) * (K @ K)


def rodrigues_inv(R: np.ndarray) -> np.ndarray:
    """Rotation matrix to axis-angle vector, angle in [0, pi]."""
    R = _check_rotation(R)
    cos_theta = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(cos_theta)
    if theta < 1e-12:
        return np.zeros(3)
    if np.pi - theta < 1e-6:
        # near half-turn: axis from the symmetric part R = 2aa^T - I
        A = (R + np.eye(3)) / 2.0
        axis = np.sqrt(np.clip(np.diag(A), 0.0, None))
        # fix signs from off-diagonals relative to the largest component
        k = int(np.argmax(axis))
        signs = np.sign(A[k])
        signs[signs == 0] = 1.0
        axis = axis * signs * np.sign(axis[k] if axis[k] != 0 else 1.0)
        axis /= np.linalg.norm(axis)
        return axis * theta
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    return w * (theta / (2.0 * np.sin(theta)))


# ---------------------------------------------------------------------------
# projection model


def distort_normalized(dist: DistortionCoeffs, pts: np.ndarray) -> np.ndarray:
    """Apply radial + tangential distortion to ideal normalized points (N,2)."""
    pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
    x, y = pts[:, 0], pts[:, 1]
    r2 = x * x + y * y
    radial = 1.0 + dist.k1 * r2 + dist.k2 * r2 * r2 + dist.k3 * r2 * r2 * r2
    xd = x * radial + 2.0 * dist.p1 * x * y + dist.p2 * (r2 + 2.0 * x * x)
    yd = y * radial + dist.p1 * (r2 + 2.0 * y * y) + 2.0 * dist.p2 * x * y
    return np.stack([xd, yd], axis=1)


def undistort_normalized(
    dist: DistortionCoeffs,
    pts: np.ndarray,
    *,
    max_iter: int = 25,
    tol: float = 1e-10,
    return_converged: bool = False,
):
    """Invert the distortion model by fixed-point iteration.

    Starts at the distorted coordinates; flags points whose step grows for
    5 consecutive iterations (divergence outside the invertible region).
    """
    pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
    xd, yd = pts[:, 0], pts[:, 1]
    x, y = xd.copy(), yd.copy()
    prev_step = np.full(len(pts), np.inf)
    grow_count = np.zeros(len(pts), dtype=np.int64)
    active = np.ones(len(pts), dtype=bool)
    for _ in range(max_iter):
        with np.errstate(divide="ignore", invalid="ignore"):
            r2 = x * x + y * y
            radial = 1.0 + dist.k1 * r2 + dist.k2 * r2 * r2 + dist.k3 * r2 * r2 * r2
            tang_x = 2.0 * dist.p1 * x * y + dist.p2 * (r2 + 2.0 * x * x)
            tang_y = dist.p1 * (r2 + 2.0 * y * y) + 2.0 * dist.p2 * x * y
            x_new = (xd - tang_x) / radial
            y_new = (yd - tang_y) / radial
        step = np.hypot(x_new - x, y_new - y)
        grow_count = np.where(step > prev_step, grow_count + 1, 0)
        prev_step = step
        upd = active
        x = np.where(upd, x_new, x)
        y = np.where(upd, y_new, y)
        active = active & (step >= tol) & (grow_count < 5)
        if not active.any():
            break
    out = np.stack([x, y], axis=1)
    converged = (grow_count < 5) & np.isfinite(out).all(axis=1)
    if return_converged:
        return out, converged
    return out


def project_points(
    K: CameraIntrinsics,
    dist: DistortionCoeffs,
    pose: ViewPose,
    pts: np.ndarray,
) -> np.ndarray:
    """Project 3D points (N,3) to pixels (N,2) through the full camera model."""
    pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
    cam = pts @ pose.rotation.T + pose.translation
    z = cam[:, 2]
    if np.any(z <= 0):
        raise ValueError("point behind camera (z <= 0 after pose transform)")
    norm = cam[:, :2] / z[:, None]
    d = distort_normalized(dist, norm)
    u = K.fx * d[:, 0] + K.skew * d[:, 1] + K.cx
    v = K.fy * d[:, 1] + K.cy
    return np.stack([u, v], axis=1)


def project_point(
    K: CameraIntrinsics, dist: DistortionCoeffs, pose: ViewPose, X: np.ndarray
) -> tuple[float, float]:
    uv = project_points(K, dist, pose, np.asarray(X, dtype=np.float64).reshape(1, 3))
    return float(uv[0, 0]), float(uv[0, 1])


def _rotated_point_jacobian(rvec: np.ndarray, R: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """d(R(v) X)/dv for each point, shape (N, 3, 3).

    Gallego & Yezzi closed form; falls back to the v->0 limit -[X]x.
    """
    n = len(pts)
    theta2 = float(rvec @ rvec)
    skews = np.zeros((n, 3, 3))
    skews[:, 0, 1] = -pts[:, 2]
    skews[:, 0, 2] = pts[:, 1]
    skews[:, 1, 0] = pts[:, 2]
    skews[:, 1, 2] = -pts[:, 0]
    skews[:, 2, 0] = -pts[:, 1]
    skews[:, 2, 1] = pts[:, 0]
    if theta2 < 1e-16:
        return -skews
    M = (np.outer(rvec, rvec) + (R.T - np.eye(3)) @ _skew_matrix(rvec)) / theta2
    return -np.einsum("ij,njk,kl->nil", R, skews, M)


def _projection_jacobians(
    K: CameraIntrinsics,
    dist: DistortionCoeffs,
    rvec: np.ndarray,
    tvec: np.ndarray,
    pts: np.ndarray,
    *,
    pre_rotation: np.ndarray | None = None,
    post_translation: np.ndarray | None = None,
):
    """Analytic derivatives of projected pixels for every point.

    Returns (uv, J_intr (N,2,4), J_dist (N,2,5), J_rvec (N,2,3), J_t (N,2,3)).
    With pre_rotation Q and post_translation s, the model is
    x_cam = Q (R(v) X + t) + s; J_rvec/J_t are still with respect to v and t
    (used for shared board poses in stereo refinement, where Q and s are the
    fixed inter-camera transform).
    """
    pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
    R = rodrigues(rvec)
    cam = pts @ R.T + tvec
    d_cam_dv = _rotated_point_jacobian(rvec, R, pts)  # (N,3,3)
    d_cam_dt = np.broadcast_to(np.eye(3), (len(pts), 3, 3))
    if pre_rotation is not None:
        cam = cam @ pre_rotation.T
        d_cam_dv = np.einsum("ij,njk->nik", pre_rotation, d_cam_dv)
        d_cam_dt = np.einsum("ij,njk->nik", pre_rotation, d_cam_dt)
    if post_translation is not None:
        cam = cam + post_translation

    x_, y_, z = cam[:, 0], cam[:, 1], cam[:, 2]
    if np.any(z <= 0):
        raise ValueError("point behind camera (z <= 0 after pose transform)")
    x = x_ / z
    y = y_ / z
    # d(normalized)/d(cam): rows (x, y), cols (X, Y, Z)
    inv_z = 1.0 / z
    d_norm_dcam = np.zeros((len(pts), 2, 3))
    d_norm_dcam[:, 0, 0] = inv_z
    d_norm_dcam[:, 0, 2] = -x * inv_z
    d_norm_dcam[:, 1, 1] = inv_z
    d_norm_dcam[:, 1, 2] = -y * inv_z

    r2 = x * x + y * y
    radial = 1.0 + dist.k1 * r2 + dist.k2 * r2 * r2 + dist.k3 * r2 * r2 * r2
    g = dist.k1 + 2.0 * dist.k2 * r2 + 3.0 * dist.k3 * r2 * r2
    xd = x * radial + 2.0 * dist.p1 * x * y + dist.p2 * (r2 + 2.0 * x * x)
    yd = y * radial + dist.p1 * (r2 + 2.0 * y * y) + 2.0 * dist.p2 * x * y

    d_dist_dnorm = np.empty((len(pts), 2, 2))
    d_dist_dnorm[:, 0, 0] = radial + 2.0 * x * x * g + 2.0 * dist.p1 * y + 6.0 * dist.p2 * x
    d_dist_dnorm[:, 0, 1] = 2.0 * x * y * g + 2.0 * dist.p1 * x + 2.0 * dist.p2 * y
    d_dist_dnorm[:, 1, 0] = d_dist_dnorm[:, 0, 1]
    d_dist_dnorm[:, 1, 1] = radial + 2.0 * y * y * g + 6.0 * dist.p1 * y + 2.0 * dist.p2 * x

    # d(distorted)/d(k1,k2,p1,p2,k3)
    d_dist_dcoef = np.empty((len(pts), 2, 5))
    d_dist_dcoef[:, 0, 0] = x * r2
    d_dist_dcoef[:, 0, 1] = x * r2 * r2
    d_dist_dcoef[:, 0, 2] = 2.0 * x * y
    d_dist_dcoef[:, 0, 3] = r2 + 2.0 * x * x
    d_dist_dcoef[:, 0, 4] = x * r2 * r2 * r2
    d_dist_dcoef[:, 1, 0] = y * r2
    d_dist_dcoef[:, 1, 1] = y * r2 * r2
    d_dist_dcoef[:, 1, 2] = r2 + 2.0 * y * y
    d_dist_dcoef[:, 1, 3] = 2.0 * x * y
    d_dist_dcoef[:, 1, 4] = y * r2 * r2 * r2

    u = K.fx * xd + K.skew * yd + K.cx
    v = K.fy * yd + K.cy
    uv = np.stack([u, v], axis=1)

    F = np.array([[K.fx, K.skew], [0.0, K.fy]])
    d_uv_ddist = np.einsum("ij,njk->nik", F, d_dist_dnorm)  # (N,2,2) wrt (x,y) normalized
    d_uv_dcoef = np.einsum("ij,njk->nik", F, d_dist_dcoef)
    d_uv_dcam = np.einsum("nij,njk->nik", d_uv_ddist, d_norm_dcam)
    J_rvec = np.einsum("nij,njk->nik", d_uv_dcam, d_cam_dv)
    J_t = np.einsum("nij,njk->nik", d_uv_dcam, d_cam_dt)

    J_intr = np.zeros((len(pts), 2, 4))  # fx, fy, cx, cy (skew frozen)
    J_intr[:, 0, 0] = xd
    J_intr[:, 0, 2] = 1.0
    J_intr[:, 1, 1] = yd
    J_intr[:, 1, 3] = 1.0
    return uv, J_intr, d_uv_dcoef, J_rvec, J_t


# ---------------------------------------------------------------------------
# homographies and closed-form initialization


def _normalization_transform(pts: np.ndarray) -> np.ndarray:
    """Hartley normalization: centroid at origin, mean distance sqrt(2)."""
    centroid = pts.mean(axis=0)
    dist = np.mean(np.linalg.norm(pts - centroid, axis=1))
    s = np.sqrt(2.0) / dist if dist > 1e-12 else 1.0
    return np.array(
        [[s, 0.0, -s * centroid[0]], [0.0, s, -s * centroid[1]], [0.0, 0.0, 1.0]]
    )


def estimate_homography(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Normalized DLT from planar points (N,2) to image points (N,2), N >= 4."""
    src = np.atleast_2d(np.asarray(src, dtype=np.float64))
    dst = np.atleast_2d(np.asarray(dst, dtype=np.float64))
    if len(src) < 4 or len(src) != len(dst):
        raise ValueError("need at least 4 paired correspondences")
    Ts, Td = _normalization_transform(src), _normalization_transform(dst)
    sh = np.column_stack([src, np.ones(len(src))]) @ Ts.T
    dh = np.column_stack([dst, np.ones(len(dst))]) @ Td.T
    A = np.zeros((2 * len(src), 9))
    A[0::2, 0:3] = sh
    A[0::2, 6:9] = -dh[:, [0]] * sh
    A[1::2, 3:6] = sh
    A[1::2, 6:9] = -dh[:, [1]] * sh
    _, s, vt = np.linalg.svd(A)
    if s[-2] < 1e-10 * s[0]:
        raise CalibrationError("degenerate correspondences (rank-deficient design matrix)")
    H = np.linalg.inv(Td) @ vt[-1].reshape(3, 3) @ Ts
    if abs(H[2, 2]) > 1e-12:
        H = H / H[2, 2]
    return H


def _conic_row(H: np.ndarray, i: int, j: int) -> np.ndarray:
    h = H.T  # h[i] = i-th column of H
    return np.array(
        [
            h[i, 0] * h[j, 0],
            h[i, 0] * h[j, 1] + h[i, 1] * h[j, 0],
            h[i, 1] * h[j, 1],
            h[i, 2] * h[j, 0] + h[i, 0] * h[j, 2],
            h[i, 2] * h[j, 1] + h[i, 1] * h[j, 2],
            h[i, 2] * h[j, 2],
        ]
    )


def zhang_init(homographies: list[np.ndarray]) -> CameraIntrinsics:
    """Closed-form intrinsics from >= 3 board homographies.

    Solves for the image of the absolute conic B using the two standard
    constraints per homography, then extracts the pinhole parameters.
    Skew is estimated and then forced to zero.
    """
    if len(homographies) < 3:
        raise ValueError(f"need at least 3 homographies, got {len(homographies)}")
    rows = []
    for H in homographies:
        rows.append(_conic_row(H, 0, 1))
        rows.append(_conic_row(H, 0, 0) - _conic_row(H, 1, 1))
    V = np.array(rows)
    _, s, vt = np.linalg.svd(V)
    b = vt[-1]
    if s[-2] < 1e-9 * s[0]:
        raise CalibrationError("ill-conditioned pose set (fronto-parallel degeneracy)")
    B11, B12, B22, B13, B23, B33 = b
    if B11 < 0:
        B11, B12, B22, B13, B23, B33 = -B11, -B12, -B22, -B13, -B23, -B33
    denom = B11 * B22 - B12 * B12
    if denom <= 0 or B11 <= 0:
        raise CalibrationError("conic not positive definite")
    cy = (B12 * B13 - B11 * B23) / denom
    lam = B33 - (B13 * B13 + cy * (B12 * B13 - B11 * B23)) / B11
    if lam <= 0:
        raise CalibrationError("conic not positive definite")
    fx = np.sqrt(lam / B11)
    fy = np.sqrt(lam * B11 / denom)
    skew = -B12 * fx * fx * fy / lam
    cx = skew * cy / fy - B13 * fx * fx / lam
    return CameraIntrinsics(fx=float(fx), fy=float(fy), cx=float(cx), cy=float(cy), skew=0.0)


def pose_from_homography(K: CameraIntrinsics, H: np.ndarray) -> ViewPose:
    """Decompose a board homography into an approximate pose (then orthonormalized)."""
    M = np.linalg.inv(K.matrix()) @ H
    scale = 1.0 / np.linalg.norm(M[:, 0])
    if M[2, 2] * scale < 0:  # board must sit in front of the camera
        scale = -scale
    r1 = M[:, 0] * scale
    r2 = M[:, 1] * scale
    t = M[:, 2] * scale
    R_approx = np.column_stack([r1, r2, np.cross(r1, r2)])
    U, _, Vt = np.linalg.svd(R_approx)
    R = U @ Vt
    if np.linalg.det(R) < 0:
        R = U @ np.diag([1.0, 1.0, -1.0]) @ Vt
    return ViewPose(R, t)


# ---------------------------------------------------------------------------
# Levenberg-Marquardt


def _lm_refine(residual_fn, jacobian_fn, p0, *, max_iter=100, lam0=1e-3, rel_tol=1e-12):
    """Normal-equation LM with lambda*diag damping.

    lambda starts at lam0, x10 on a rejected step, /10 on acceptance; stops
    when the relative cost drop falls below rel_tol. Cost never increases
    across accepted states.
    """
    p = np.asarray(p0, dtype=np.float64).copy()
    r = residual_fn(p)
    cost = float(r @ r)
    lam = lam0
    for _ in range(max_iter):
        J = jacobian_fn(p)
        g = J.T @ r
        A = J.T @ J
        diag = np.clip(np.diag(A), 1e-12, None)
        accepted = False
        while lam <= 1e12:
            try:
                step = np.linalg.solve(A + lam * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            r_new = residual_fn(p + step)
            cost_new = float(r_new @ r_new)
            if cost_new < cost:
                p = p + step
                rel_drop = (cost - cost_new) / max(cost, 1e-300)
                r, cost = r_new, cost_new
                lam = max(lam / 10.0, 1e-15)
                accepted = True
                if rel_drop < rel_tol:
                    return p, cost
                break
            lam *= 10.0
        if not accepted:
            return p, cost
    return p, cost


def _unpack_mono_params(p: np.ndarray, n_views: int):
    K = CameraIntrinsics(fx=p[0], fy=p[1], cx=p[2], cy=p[3], skew=0.0)
    dist = DistortionCoeffs(k1=p[4], k2=p[5], p1=p[6], p2=p[7], k3=p[8])
    poses = [(p[9 + 6 * i : 12 + 6 * i], p[12 + 6 * i : 15 + 6 * i]) for i in range(n_views)]
    return K, dist, poses


def calibrate_camera(views, image_size: tuple[int, int]):
    """Full monocular calibration from detected corner grids.

    views: sequence of objects with .points (N,2 image px) and
    .object_points (N,3 board meters, z = 0). Returns
    (CameraIntrinsics, DistortionCoeffs, [ViewPose], rms_px) with rms the
    root-mean-square reprojection distance per corner.
    """
    if len(views) < 3:
        raise ValueError(f"need at least 3 views, got {len(views)}")
    obj = [np.asarray(v.object_points, dtype=np.float64) for v in views]
    img = [np.asarray(v.points, dtype=np.float64) for v in views]
    homs = [estimate_homography(o[:, :2], i) for o, i in zip(obj, img)]
    w, h = image_size
    try:
        K0 = zhang_init(homs)
    except CalibrationError:
        K0 = CameraIntrinsics(fx=1.2 * max(w, h), fy=1.2 * max(w, h), cx=w / 2.0, cy=h / 2.0)
    p0 = np.zeros(9 + 6 * len(views))
    p0[:4] = [K0.fx, K0.fy, K0.cx, K0.cy]
    for i, H in enumerate(homs):
        pose = pose_from_homography(K0, H)
        p0[9 + 6 * i : 12 + 6 * i] = pose.rvec
        p0[12 + 6 * i : 15 + 6 * i] = pose.translation

    def residuals(p):
        K, dist, poses = _unpack_mono_params(p, len(views))
        out = []
        for (rv, tv), o, meas in zip(poses, obj, img):
            uv = project_points(K, dist, ViewPose.from_rvec(rv, tv), o)
            out.append((uv - meas).ravel())
        return np.concatenate(out)

    def jacobian(p):
        K, dist, poses = _unpack_mono_params(p, len(views))
        blocks = []
        for i, ((rv, tv), o) in enumerate(zip(poses, obj)):
            _, J_intr, J_dist, J_rvec, J_t = _projection_jacobians(K, dist, rv, tv, o)
            n = len(o)
            Jv = np.zeros((2 * n, len(p)))
            Jv[:, 0:4] = J_intr.reshape(2 * n, 4)
            Jv[:, 4:9] = J_dist.reshape(2 * n, 5)
            Jv[:, 9 + 6 * i : 12 + 6 * i] = J_rvec.reshape(2 * n, 3)
            Jv[:, 12 + 6 * i : 15 + 6 * i] = J_t.reshape(2 * n, 3)
            blocks.append(Jv)
        return np.vstack(blocks)

    p_opt, cost = _lm_refine(residuals, jacobian, p0)
    K, dist, pose_params = _unpack_mono_params(p_opt, len(views))
    poses = [ViewPose.from_rvec(rv, tv) for rv, tv in pose_params]
    n_pts = sum(len(o) for o in obj)
    rms = float(np.sqrt(cost / n_pts))
    return K, dist, poses, rms


# ---------------------------------------------------------------------------
# optimal new camera matrix


def _undistorted_border(K: CameraIntrinsics, dist: DistortionCoeffs, image_size):
    """Undistorted pixel positions of each border edge, keyed by edge name."""
    w, h = image_size
    xs = np.arange(w, dtype=np.float64)
    ys = np.arange(h, dtype=np.float64)
    edges = {
        "top": np.stack([xs, np.zeros(w)], axis=1),
        "bottom": np.stack([xs, np.full(w, h - 1.0)], axis=1),
        "left": np.stack([np.zeros(h), ys], axis=1),
        "right": np.stack([np.full(h, w - 1.0), ys], axis=1),
    }
    Kinv = np.linalg.inv(K.matrix())
    out = {}
    for name, px in edges.items():
        ph = np.column_stack([px, np.ones(len(px))]) @ Kinv.T
        und = undistort_normalized(dist, ph[:, :2])
        uv = np.column_stack([und, np.ones(len(und))]) @ K.matrix().T
        out[name] = uv[:, :2]
    return out


def optimal_new_intrinsics(
    K: CameraIntrinsics,
    dist: DistortionCoeffs,
    image_size: tuple[int, int],
    alpha: float,
):
    """Scale intrinsics for undistortion with a free-zoom parameter.

    alpha=0 keeps only always-valid pixels; alpha=1 retains every source
    pixel; in between interpolates linearly between the two rectangles.
    Returns (K_new, roi) with roi = (x, y, w, h) of valid pixels in the new
    image.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0,1], got {alpha}")
    w, h = image_size
    edges = _undistorted_border(K, dist, image_size)
    all_pts = np.vstack(list(edges.values()))
    outer = np.array(
        [all_pts[:, 0].min(), all_pts[:, 1].min(), all_pts[:, 0].max(), all_pts[:, 1].max()]
    )
    # largest axis-aligned rectangle inside the border polygon, taking the
    # innermost excursion of each undistorted edge
    inner = np.array(
        [
            edges["left"][:, 0].max(),
            edges["top"][:, 1].max(),
            edges["right"][:, 0].min(),
            edges["bottom"][:, 1].min(),
        ]
    )
    if inner[2] <= inner[0] or inner[3] <= inner[1]:
        raise CalibrationError("degenerate distortion: empty inner rectangle")
    rect = inner * (1.0 - alpha) + outer * alpha
    sx = (w - 1.0) / (rect[2] - rect[0])
    sy = (h - 1.0) / (rect[3] - rect[1])
    K_new = CameraIntrinsics(
        fx=K.fx * sx,
        fy=K.fy * sy,
        cx=(K.cx - rect[0]) * sx,
        cy=(K.cy - rect[1]) * sy,
        skew=0.0,
    )
    # valid-pixel rectangle: the inner rect expressed in new-image pixels
    x0 = int(np.ceil(np.clip((inner[0] - rect[0]) * sx, 0, w - 1)))
    y0 = int(np.ceil(np.clip((inner[1] - rect[1]) * sy, 0, h - 1)))
    x1 = int(np.floor(np.clip((inner[2] - rect[0]) * sx, 0, w - 1)))
    y1 = int(np.floor(np.clip((inner[3] - rect[1]) * sy, 0, h - 1)))
    roi = (x0, y0, x1 - x0 + 1, y1 - y0 + 1)
    return K_new, roi


# ---------------------------------------------------------------------------
# stereo calibration and rectification


def stereo_calibrate(views_left, views_right, KL, dL, KR, dR, *, spread_limit_deg=5.0):
    """Relative pose of the right camera w.r.t. the left from paired views.

    Per-view board poses are estimated per camera, relative poses averaged
    (arithmetic Rodrigues mean) for the seed, then R, T and the shared board
    poses are LM-refined with intrinsics held fixed. Returns
    (R, T, rms_px, degenerate_flag).
    """
    if len(views_left) < 3 or len(views_left) != len(views_right):
        raise ValueError("need at least 3 paired views")
    obj = [np.asarray(v.object_points, dtype=np.float64) for v in views_left]
    imgL = [np.asarray(v.points, dtype=np.float64) for v in views_left]
    imgR = [np.asarray(v.points, dtype=np.float64) for v in views_right]
    for o, a, b in zip(obj, imgL, imgR):
        if len(a) != len(b) or len(a) != len(o):
            raise ValueError("paired views must share the grid size")

    posesL, rel_rvecs, rel_ts = [], [], []
    for o, a, b in zip(obj, imgL, imgR):
        HL = estimate_homography(o[:, :2], a)
        HR = estimate_homography(o[:, :2], b)
        pl = pose_from_homography(KL, HL)
        pr = pose_from_homography(KR, HR)
        R_rel = pr.rotation @ pl.rotation.T
        rel_rvecs.append(rodrigues_inv(R_rel))
        rel_ts.append(pr.translation - R_rel @ pl.translation)
        posesL.append(pl)
    rel_rvecs = np.array(rel_rvecs)
    mean_rvec = rel_rvecs.mean(axis=0)
    spread = np.degrees(np.max(np.linalg.norm(rel_rvecs - mean_rvec, axis=1)))
    if spread > spread_limit_deg:
        raise CalibrationError(
            f"inconsistent pairs: relative-pose spread {spread:.2f} deg exceeds "
            f"{spread_limit_deg} deg"
        )
    T0 = np.mean(rel_ts, axis=0)
    degenerate = bool(np.linalg.norm(T0) < 1e-6)

    n = len(obj)
    p0 = np.zeros(6 + 6 * n)
    p0[0:3] = mean_rvec
    p0[3:6] = T0
    for i, pl in enumerate(posesL):
        p0[6 + 6 * i : 9 + 6 * i] = pl.rvec
        p0[9 + 6 * i : 12 + 6 * i] = pl.translation

    def unpack(p):
        return p[0:3], p[3:6], [(p[6 + 6 * i : 9 + 6 * i], p[9 + 6 * i : 12 + 6 * i]) for i in range(n)]

    def residuals(p):
        rv_rel, t_rel, boards = unpack(p)
        R_rel = rodrigues(rv_rel)
        out = []
        for (rv, tv), o, ml, mr in zip(boards, obj, imgL, imgR):
            pose_l = ViewPose.from_rvec(rv, tv)
            uvl = project_points(KL, dL, pose_l, o)
            pose_r = ViewPose(
                _orthonormalize(R_rel @ pose_l.rotation), R_rel @ tv + t_rel
            )
            uvr = project_points(KR, dR, pose_r, o)
            out.append((uvl - ml).ravel())
            out.append((uvr - mr).ravel())
        return np.concatenate(out)

    def jacobian(p):
        rv_rel, t_rel, boards = unpack(p)
        R_rel = rodrigues(rv_rel)
        blocks = []
        for i, ((rv, tv), o) in enumerate(zip(boards, obj)):
            m = len(o)
            # left camera: plain projection through the board pose
            _, _, _, JL_rvec, JL_t = _projection_jacobians(KL, dL, rv, tv, o)
            Jl = np.zeros((2 * m, len(p)))
            Jl[:, 6 + 6 * i : 9 + 6 * i] = JL_rvec.reshape(2 * m, 3)
            Jl[:, 9 + 6 * i : 12 + 6 * i] = JL_t.reshape(2 * m, 3)
            blocks.append(Jl)
            # right camera: x_cam = R_rel (R_b X + t_b) + T
            R_b = rodrigues(rv)
            cam_l = o @ R_b.T + tv
            _, _, _, JR_rel_rvec, JR_T = _projection_jacobians(
                KR, dR, rv_rel, t_rel, cam_l
            )
            _, _, _, JR_board_rvec, JR_board_t = _projection_jacobians(
                KR, dR, rv, tv, o, pre_rotation=R_rel, post_translation=t_rel
            )
            Jr = np.zeros((2 * m, len(p)))
            Jr[:, 0:3] = JR_rel_rvec.reshape(2 * m, 3)
            Jr[:, 3:6] = JR_T.reshape(2 * m, 3)
            Jr[:, 6 + 6 * i : 9 + 6 * i] = JR_board_rvec.reshape(2 * m, 3)
            Jr[:, 9 + 6 * i : 12 + 6 * i] = JR_board_t.reshape(2 * m, 3)
            blocks.append(Jr)
        return np.vstack(blocks)

    p_opt, cost = _lm_refine(residuals, jacobian, p0)
    R = rodrigues(p_opt[0:3])
    T = p_opt[3:6].copy()
    n_pts = 2 * sum(len(o) for o in obj)
    rms = float(np.sqrt(cost / n_pts))
    return R, T, rms, degenerate


def _orthonormalize(R: np.ndarray) -> np.ndarray:
    U, _, Vt = np.linalg.svd(R)
    out = U @ Vt
    if np.linalg.det(out) < 0:
        out = U @ np.diag([1.0, 1.0, -1.0]) @ Vt
    return out


def stereo_rectify(
    KL: CameraIntrinsics,
    dL: DistortionCoeffs,
    KR: CameraIntrinsics,
    dR: DistortionCoeffs,
    R: np.ndarray,
    T: np.ndarray,
    image_size: tuple[int, int],
):
    """Bouguet rectification: half-rotation split, then baseline alignment.

    Returns (rect_left, rect_right, P_left, P_right, Q). Convention:
    x_right = R x_left + T; a standard rig has T = (-baseline, 0, 0).
    """
    T = np.asarray(T, dtype=np.float64).reshape(3)
    baseline = float(np.linalg.norm(T))
    if baseline <= 0:
        raise CalibrationError("zero baseline")
    rvec = rodrigues_inv(_check_rotation(R, tol=1e-8))
    R_half = rodrigues(rvec / 2.0)
    T_mid = R_half.T @ T  # translation seen from the half-rotated frames

    e1 = -T_mid / baseline
    up = np.array([0.0, 0.0, 1.0])
    if abs(e1 @ up) > 0.9:  # baseline nearly along z: pick another up vector
        up = np.array([0.0, 1.0, 0.0])
    e2 = np.cross(up, e1)
    e2 /= np.linalg.norm(e2)
    e3 = np.cross(e1, e2)
    R_align = np.stack([e1, e2, e3])

    rect_left = R_align @ R_half
    rect_right = R_align @ R_half.T

    f = (KL.fx + KL.fy + KR.fx + KR.fy) / 4.0
    cx = (KL.cx + KR.cx) / 2.0
    cy = (KL.cy + KR.cy) / 2.0
    K_rect = np.array([[f, 0.0, cx], [0.0, f, cy], [0.0, 0.0, 1.0]])
    P_left = np.hstack([K_rect, np.zeros((3, 1))])
    P_right = np.hstack([K_rect, np.array([[-f * baseline], [0.0], [0.0]])])
    Q = np.array(
        [
            [1.0, 0.0, 0.0, -cx],
            [0.0, 1.0, 0.0, -cy],
            [0.0, 0.0, 0.0, f],
            [0.0, 0.0, 1.0 / baseline, 0.0],
        ]
    )
    return rect_left, rect_right, P_left, P_right, Q


def build_rectify_map(
    K: CameraIntrinsics,
    dist: DistortionCoeffs,
    rect_rotation: np.ndarray,
    P_new: np.ndarray,
    image_size: tuple[int, int],
) -> np.ndarray:
    """Per-destination-pixel source coordinates, shape (H, W, 2) float64.

    Destination pixels are unprojected through P_new, rotated back into the
    original camera, distorted, and projected through K.
    """
    w, h = image_size
    fx_n, fy_n = P_new[0, 0], P_new[1, 1]
    cx_n, cy_n = P_new[0, 2], P_new[1, 2]
    us, vs = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    x = (us - cx_n) / fx_n
    y = (vs - cy_n) / fy_n
    rays = np.stack([x, y, np.ones_like(x)], axis=-1) @ rect_rotation  # == R^T ray
    norm = rays[..., :2] / rays[..., 2:3]
    d = distort_normalized(dist, norm.reshape(-1, 2)).reshape(h, w, 2)
    src_u = K.fx * d[..., 0] + K.skew * d[..., 1] + K.cx
    src_v = K.fy * d[..., 1] + K.cy
    return np.stack([src_u, src_v], axis=-1)


def remap(img: np.ndarray, coord_map: np.ndarray) -> np.ndarray:
    """Bilinear remap; out-of-source pixels become 0 (uint8) or NaN (float32)."""
    h, w = coord_map.shape[:2]
    sh, sw = img.shape[:2]
    u = coord_map[..., 0]
    v = coord_map[..., 1]
    inside = (u >= 0) & (u <= sw - 1) & (v >= 0) & (v <= sh - 1)
    uc = np.clip(u, 0, sw - 1)
    vc = np.clip(v, 0, sh - 1)
    x0 = np.minimum(np.floor(uc).astype(np.int64), max(sw - 2, 0))
    y0 = np.minimum(np.floor(vc).astype(np.int64), max(sh - 2, 0))
    x1 = np.minimum(x0 + 1, sw - 1)
    y1 = np.minimum(y0 + 1, sh - 1)
    fx = uc - x0
    fy = vc - y0
    img_f = img.astype(np.float64)
    if img.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]
        inside_b = inside[..., None]
    else:
        inside_b = inside
    val = (
        img_f[y0, x0] * (1 - fx) * (1 - fy)
        + img_f[y0, x1] * fx * (1 - fy)
        + img_f[y1, x0] * (1 - fx) * fy
        + img_f[y1, x1] * fx * fy
    )
    if img.dtype == np.uint8:
        out = np.clip(np.floor(val + 0.5), 0, 255)
        return np.where(inside_b, out, 0).astype(np.uint8)
    return np.where(inside_b, val, np.nan).astype(np.float32)


def vertical_misalignment(corners_left, corners_right) -> tuple[float, float]:
    """(mean |dv|, max |dv|) over paired corners; the Fig.-5-style diagnostic."""
    a = np.atleast_2d(np.asarray(getattr(corners_left, "points", corners_left), dtype=np.float64))
    b = np.atleast_2d(np.asarray(getattr(corners_right, "points", corners_right), dtype=np.float64))
    if a.shape != b.shape:
        raise ValueError(f"grid size mismatch: {a.shape} vs {b.shape}")
    dv = np.abs(a[:, 1] - b[:, 1])
    return float(dv.mean()), float(dv.max())


# ---------------------------------------------------------------------------
# StereoRig


@dataclass
class StereoRig:
    left: CameraIntrinsics
    left_dist: DistortionCoeffs
    right: CameraIntrinsics
    right_dist: DistortionCoeffs
    R: np.ndarray
    T: np.ndarray
    rect_left: np.ndarray = field(default=None)
    rect_right: np.ndarray = field(default=None)
    P_left: np.ndarray = field(default=None)
    P_right: np.ndarray = field(default=None)
    Q: np.ndarray = field(default=None)
    baseline_m: float = 0.0
    image_size: tuple[int, int] = (0, 0)

    @classmethod
    def from_calibration(cls, left, left_dist, right, right_dist, R, T, image_size):
        """Build a fully rectified rig from calibration outputs."""
        rl, rr, pl, pr, Q = stereo_rectify(left, left_dist, right, right_dist, R, T, image_size)
        return cls(
            left=left,
            left_dist=left_dist,
            right=right,
            right_dist=right_dist,
            R=np.asarray(R, dtype=np.float64),
            T=np.asarray(T, dtype=np.float64).reshape(3),
            rect_left=rl,
            rect_right=rr,
            P_left=pl,
            P_right=pr,
            Q=Q,
            baseline_m=float(np.linalg.norm(T)),
            image_size=tuple(image_size),
        )

    def to_json(self) -> str:
        def cam(K: CameraIntrinsics, d: DistortionCoeffs) -> dict:
            return {
                "fx": K.fx, "fy": K.fy, "cx": K.cx, "cy": K.cy, "skew": K.skew,
                "k1": d.k1, "k2": d.k2, "k3": d.k3, "p1": d.p1, "p2": d.p2,
            }

        doc = {
            "version": "rig-v1",
            "left": cam(self.left, self.left_dist),
            "right": cam(self.right, self.right_dist),
            "R": self.R.ravel().tolist(),
            "T": self.T.tolist(),
            "rect_left": self.rect_left.ravel().tolist(),
            "rect_right": self.rect_right.ravel().tolist(),
            "P_left": self.P_left.ravel().tolist(),
            "P_right": self.P_right.ravel().tolist(),
            "Q": self.Q.ravel().tolist(),
            "baseline_m": self.baseline_m,
            "width": self.image_size[0],
            "height": self.image_size[1],
        }
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "StereoRig":
        doc = json.loads(text)
        if doc.get("version") != "rig-v1":
            raise ValueError(f"unsupported rig version {doc.get('version')!r}")

        def cam(d: dict):
            K = CameraIntrinsics(fx=d["fx"], fy=d["fy"], cx=d["cx"], cy=d["cy"], skew=d["skew"])
            dist = DistortionCoeffs(k1=d["k1"], k2=d["k2"], p1=d["p1"], p2=d["p2"], k3=d["k3"])
            return K, dist

        KL, dL = cam(doc["left"])
        KR, dR = cam(doc["right"])
        arr = lambda key, shape: np.array(doc[key], dtype=np.float64).reshape(shape)
        return cls(
            left=KL,
            left_dist=dL,
            right=KR,
            right_dist=dR,
            R=arr("R", (3, 3)),
            T=arr("T", (3,)),
            rect_left=arr("rect_left", (3, 3)),
            rect_right=arr("rect_right", (3, 3)),
            P_left=arr("P_left", (3, 4)),
            P_right=arr("P_right", (3, 4)),
            Q=arr("Q", (4, 4)),
            baseline_m=float(doc["baseline_m"]),
            image_size=(int(doc["width"]), int(doc["height"])),
        )
