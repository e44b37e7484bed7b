import numpy as np
import pytest

from stereopipe.calib import (
    CalibrationError,
    CameraIntrinsics,
    DistortionCoeffs,
    StereoRig,
    ViewPose,
    _projection_jacobians,
    build_rectify_map,
    calibrate_camera,
    distort_normalized,
    estimate_homography,
    optimal_new_intrinsics,
    project_point,
    project_points,
    remap,
    rodrigues,
    rodrigues_inv,
    stereo_calibrate,
    stereo_rectify,
    undistort_normalized,
    vertical_misalignment,
    zhang_init,
)
from stereopipe.target import CornerGrid

from conftest import synthetic_views

K100 = CameraIntrinsics(fx=100.0, fy=100.0, cx=50.0, cy=50.0)
NODIST = DistortionCoeffs()
IDENTITY = ViewPose(np.eye(3), np.array([0.0, 0.0, 0.0]))

K_TRUE = CameraIntrinsics(fx=620.0, fy=610.0, cx=322.0, cy=241.0)
DIST_TRUE = DistortionCoeffs(k1=-0.18, k2=0.04, p1=0.0008, p2=-0.0005, k3=0.0)
IMAGE_SIZE = (640, 480)


class TestRodrigues:
    def test_zero_vector(self):
        assert np.allclose(rodrigues(np.zeros(3)), np.eye(3), atol=1e-15)

    def test_half_turn_about_z(self):
        R = rodrigues(np.array([0.0, 0.0, np.pi]))
        assert np.allclose(R, np.diag([-1.0, -1.0, 1.0]), atol=1e-12)

    def test_roundtrip(self, rng):
        for _ in range(50):
            axis = rng.normal(size=3)
            axis /= np.linalg.norm(axis)
            v = axis * rng.uniform(1e-3, np.pi - 1e-3)
            assert np.allclose(rodrigues_inv(rodrigues(v)), v, atol=1e-12)

    def test_rejects_non_rotation(self):
        with pytest.raises(ValueError):
            rodrigues_inv(np.diag([1.0, 1.0, 2.0]))


class TestProjection:
    def test_optical_axis(self):
        assert project_point(K100, NODIST, IDENTITY, [0, 0, 1]) == (50.0, 50.0)

    def test_offset_point(self):
        assert project_point(K100, NODIST, IDENTITY, [0.5, 0, 1]) == (100.0, 50.0)

    def test_radial_term(self):
        dist = DistortionCoeffs(k1=0.1)
        u, v = project_point(K100, dist, IDENTITY, [0.5, 0, 1])
        assert u == pytest.approx(100.0 * 0.5125 + 50.0, abs=1e-12)
        assert v == pytest.approx(50.0, abs=1e-12)

    def test_behind_camera(self):
        with pytest.raises(ValueError):
            project_point(K100, NODIST, IDENTITY, [0, 0, -1])


class TestUndistort:
    def test_zero_coeffs_identity(self):
        pts = np.array([[0.3, -0.2], [0.0, 0.0]])
        assert np.allclose(undistort_normalized(NODIST, pts), pts, atol=0)

    def test_inverse_of_radial_example(self):
        out = undistort_normalized(DistortionCoeffs(k1=0.1), np.array([[0.5125, 0.0]]))
        assert np.allclose(out, [[0.5, 0.0]], atol=1e-8)

    def test_roundtrip_property(self, rng):
        for _ in range(10):
            dist = DistortionCoeffs(
                k1=rng.uniform(-0.3, 0.3),
                k2=rng.uniform(-0.1, 0.1),
                p1=rng.uniform(-0.01, 0.01),
                p2=rng.uniform(-0.01, 0.01),
            )
            r = np.sqrt(rng.uniform(0, 0.7**2, 100))
            ang = rng.uniform(0, 2 * np.pi, 100)
            pts = np.stack([r * np.cos(ang), r * np.sin(ang)], axis=1)
            back = undistort_normalized(dist, distort_normalized(dist, pts))
            assert np.max(np.abs(back - pts)) < 1e-8

    def test_divergence_flagged(self):
        dist = DistortionCoeffs(k1=-1.0)
        _, converged = undistort_normalized(
            dist, np.array([[1.0, 0.0]]), return_converged=True
        )
        assert not converged.all()


class TestHomography:
    SQUARE = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])

    def test_identity(self):
        H = estimate_homography(self.SQUARE, self.SQUARE)
        assert np.allclose(H, np.eye(3), atol=1e-10)

    def test_pure_scale(self):
        H = estimate_homography(self.SQUARE, 2.0 * self.SQUARE)
        assert np.allclose(H, np.diag([2.0, 2.0, 1.0]), atol=1e-10)

    def test_noisy_rms_below_noise(self, rng):
        H_true = np.array([[1.1, 0.02, 5.0], [-0.03, 0.95, -2.0], [1e-4, -2e-4, 1.0]])
        src = rng.uniform(0, 100, (20, 2))
        ones = np.ones((20, 1))
        dst_h = np.hstack([src, ones]) @ H_true.T
        dst = dst_h[:, :2] / dst_h[:, 2:]
        noisy = dst + rng.normal(0, 0.5, dst.shape)
        H = estimate_homography(src, noisy)
        est_h = np.hstack([src, ones]) @ H.T
        est = est_h[:, :2] / est_h[:, 2:]
        rms = np.sqrt(np.mean(np.sum((est - dst) ** 2, axis=1)))
        assert rms < 1.0

    def test_collinear_rejected(self):
        src = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [3.0, 0.0]])
        with pytest.raises(CalibrationError):
            estimate_homography(src, src)


def _homographies_for(K, rng, count, board):
    obj = board.object_points()
    views, _ = synthetic_views(rng, board, K, NODIST, count)
    return [estimate_homography(obj[:, :2], v.points) for v in views]


class TestZhangInit:
    def test_recovers_intrinsics(self, rng, default_board):
        hs = _homographies_for(K_TRUE, rng, 6, default_board)
        K = zhang_init(hs)
        for got, want in [(K.fx, K_TRUE.fx), (K.fy, K_TRUE.fy), (K.cx, K_TRUE.cx), (K.cy, K_TRUE.cy)]:
            assert abs(got - want) / want < 1e-6
        assert K.skew == 0.0

    def test_needs_three_homographies(self, rng, default_board):
        hs = _homographies_for(K_TRUE, rng, 2, default_board)
        with pytest.raises(ValueError):
            zhang_init(hs)

    def test_fronto_parallel_degenerate(self, default_board):
        obj = default_board.object_points()
        hs = []
        for z in (0.5, 0.6, 0.7):
            pose = ViewPose(np.eye(3), np.array([-0.1, -0.06, z]))
            uv = project_points(K_TRUE, NODIST, pose, obj)
            hs.append(estimate_homography(obj[:, :2], uv))
        with pytest.raises(CalibrationError):
            zhang_init(hs)


class TestCalibrateCamera:
    def test_noise_free_exact(self, rng, default_board):
        views, _ = synthetic_views(rng, default_board, K_TRUE, DIST_TRUE, 10)
        K, dist, poses, rms = calibrate_camera(views, IMAGE_SIZE)
        assert rms < 1e-6
        assert abs(K.fx - K_TRUE.fx) / K_TRUE.fx < 1e-3
        assert abs(K.fy - K_TRUE.fy) / K_TRUE.fy < 1e-3
        assert abs(K.cx - K_TRUE.cx) / K_TRUE.cx < 1e-3
        assert abs(dist.k1 - DIST_TRUE.k1) < 1e-4
        assert len(poses) == 10
        for p in poses:
            assert np.allclose(p.rotation.T @ p.rotation, np.eye(3), atol=1e-9)

    def test_noisy_rms_near_noise_level(self, rng, default_board):
        views, _ = synthetic_views(rng, default_board, K_TRUE, DIST_TRUE, 10, noise=0.1)
        K, _, _, rms = calibrate_camera(views, IMAGE_SIZE)
        assert 0.05 < rms < 0.2
        assert abs(K.fx - K_TRUE.fx) / K_TRUE.fx < 0.005
        assert abs(K.fy - K_TRUE.fy) / K_TRUE.fy < 0.005

    def test_insufficient_views(self, rng, default_board):
        views, _ = synthetic_views(rng, default_board, K_TRUE, NODIST, 2)
        with pytest.raises(ValueError):
            calibrate_camera(views, IMAGE_SIZE)

    def test_gradient_matches_finite_differences(self, rng, default_board):
        # analytic LM gradient 2 J^T r against central differences of the
        # squared-error cost, at a perturbed (non-stationary) parameter point
        obj = default_board.object_points()
        views, _ = synthetic_views(rng, default_board, K_TRUE, DIST_TRUE, 1, noise=0.1)
        target = views[0].points

        p0 = np.array([620.0, 610.0, 322.0, 241.0, -0.18, 0.04, 8e-4, -5e-4, 0.0,
                       0.02, -0.3, 0.1, -0.09, -0.07, 0.62])
        p0 += rng.normal(0, 1e-3, p0.shape) * np.array(
            [100, 100, 10, 10, 0.1, 0.1, 0.01, 0.01, 0.01, 0.1, 0.1, 0.1, 0.01, 0.01, 0.05]
        )

        def residual(p):
            K = CameraIntrinsics(fx=p[0], fy=p[1], cx=p[2], cy=p[3])
            dist = DistortionCoeffs(*p[4:9])
            pose = ViewPose.from_rvec(p[9:12], p[12:15])
            return (project_points(K, dist, pose, obj) - target).ravel()

        def analytic_gradient(p):
            K = CameraIntrinsics(fx=p[0], fy=p[1], cx=p[2], cy=p[3])
            dist = DistortionCoeffs(*p[4:9])
            uv, J_intr, J_dist, J_rvec, J_t = _projection_jacobians(
                K, dist, p[9:12], p[12:15], obj
            )
            r = (uv - target).reshape(-1, 2)
            J = np.concatenate([J_intr, J_dist, J_rvec, J_t], axis=2).reshape(-1, 15)
            return 2.0 * J.T @ r.ravel()

        g_an = analytic_gradient(p0)
        g_fd = np.zeros_like(p0)
        for i in range(len(p0)):
            h = 1e-6 * max(1.0, abs(p0[i]))
            pp, pm = p0.copy(), p0.copy()
            pp[i] += h
            pm[i] -= h
            g_fd[i] = (np.sum(residual(pp) ** 2) - np.sum(residual(pm) ** 2)) / (2 * h)
        assert np.linalg.norm(g_an - g_fd) < 1e-4 * (np.linalg.norm(g_fd) + 1.0)


class TestOptimalNewIntrinsics:
    def test_zero_distortion_identity(self):
        for alpha in (0.0, 0.5, 1.0):
            K_new, roi = optimal_new_intrinsics(K_TRUE, NODIST, IMAGE_SIZE, alpha)
            assert np.allclose(K_new.matrix(), K_TRUE.matrix(), atol=1e-6)
            assert roi == (0, 0, IMAGE_SIZE[0], IMAGE_SIZE[1])

    def test_alpha_zero_no_invalid_pixels(self):
        dist = DistortionCoeffs(k1=0.1)
        K_new, roi = optimal_new_intrinsics(K_TRUE, dist, IMAGE_SIZE, 0.0)
        assert K_new.fx > K_TRUE.fx
        assert roi == (0, 0, IMAGE_SIZE[0], IMAGE_SIZE[1])
        m = build_rectify_map(K_TRUE, dist, np.eye(3), _p_from(K_new), IMAGE_SIZE)
        src = np.full((IMAGE_SIZE[1], IMAGE_SIZE[0]), 200, dtype=np.uint8)
        out = remap(src, m)
        assert np.all(out == 200)

    def test_alpha_one_keeps_all_source(self):
        dist = DistortionCoeffs(k1=0.1)
        K_new, roi = optimal_new_intrinsics(K_TRUE, dist, IMAGE_SIZE, 1.0)
        x, y, w, h = roi
        assert w < IMAGE_SIZE[0] or h < IMAGE_SIZE[1]
        m = build_rectify_map(K_TRUE, dist, np.eye(3), _p_from(K_new), IMAGE_SIZE)
        src = np.full((IMAGE_SIZE[1], IMAGE_SIZE[0]), 200, dtype=np.uint8)
        out = remap(src, m)
        assert np.any(out == 0)  # outer rectangle exceeds the source frame
        assert np.all(out[y : y + h, x : x + w] == 200)


def _p_from(K: CameraIntrinsics) -> np.ndarray:
    return np.hstack([K.matrix(), np.zeros((3, 1))])


def _paired_views(rng, board, K, dist, R_rel, t_rel, count, noise=0.0):
    obj = board.object_points()
    viewsL, posesL = synthetic_views(rng, board, K, dist, count, noise=noise)
    viewsR = []
    for pose in posesL:
        Rr = R_rel @ pose.rotation
        tr = R_rel @ pose.translation + t_rel
        uv = project_points(K, dist, ViewPose(Rr, tr), obj)
        if noise > 0:
            uv = uv + rng.normal(0, noise, uv.shape)
        viewsR.append(CornerGrid(board=board, points=uv))
    return viewsL, viewsR


class TestStereoCalibrate:
    def test_pure_x_offset(self, rng, default_board):
        t_rel = np.array([-0.06, 0.0, 0.0])
        vL, vR = _paired_views(rng, default_board, K_TRUE, NODIST, np.eye(3), t_rel, 6)
        R, T, rms, degenerate = stereo_calibrate(vL, vR, K_TRUE, NODIST, K_TRUE, NODIST)
        assert np.allclose(R, np.eye(3), atol=1e-6)
        assert abs(np.linalg.norm(T) - 0.06) < 1e-6
        assert not degenerate
        assert rms < 1e-6

    def test_identical_views_degenerate(self, rng, default_board):
        vL, _ = _paired_views(rng, default_board, K_TRUE, NODIST, np.eye(3), np.zeros(3), 4)
        _, T, _, degenerate = stereo_calibrate(vL, vL, K_TRUE, NODIST, K_TRUE, NODIST)
        assert np.linalg.norm(T) < 1e-6
        assert degenerate

    def test_toe_in_rotation(self, rng, default_board):
        angle = np.deg2rad(10.0)
        R_rel = rodrigues(np.array([0.0, angle, 0.0]))
        t_rel = np.array([-0.06, 0.0, 0.005])
        vL, vR = _paired_views(rng, default_board, K_TRUE, NODIST, R_rel, t_rel, 6)
        R, T, rms, _ = stereo_calibrate(vL, vR, K_TRUE, NODIST, K_TRUE, NODIST)
        err = np.rad2deg(np.linalg.norm(rodrigues_inv(R @ R_rel.T)))
        assert err < 0.01


class TestStereoRectify:
    def test_already_rectified_identity(self):
        rect_l, rect_r, P_l, P_r, Q = stereo_rectify(
            K_TRUE, NODIST, K_TRUE, NODIST, np.eye(3), np.array([-0.06, 0, 0]), IMAGE_SIZE
        )
        assert np.allclose(rect_l, np.eye(3), atol=1e-10)
        assert np.allclose(rect_r, np.eye(3), atol=1e-10)
        assert P_l[0, 0] == P_r[0, 0] and P_l[1, 1] == P_r[1, 1]

    def test_five_degree_roll_aligns_rows(self, rng):
        R_rel = rodrigues(np.array([0.0, 0.0, np.deg2rad(5.0)]))
        T_rel = -R_rel @ np.array([0.06, 0.0, 0.0])
        rect_l, rect_r, P_l, P_r, Q = stereo_rectify(
            K_TRUE, NODIST, K_TRUE, NODIST, R_rel, T_rel, IMAGE_SIZE
        )
        pts = np.stack(
            [rng.uniform(-0.2, 0.2, 40), rng.uniform(-0.15, 0.15, 40), rng.uniform(0.6, 1.5, 40)],
            axis=1,
        )
        vl = _project_rectified(P_l, rect_l, pts)
        pts_r = pts @ R_rel.T + T_rel
        vr = _project_rectified(P_r, rect_r, pts_r, right=True)
        dv = np.abs(vl[:, 1] - vr[:, 1])
        assert dv.mean() < 0.1 and dv.max() < 0.3

    def test_q_inverts_depth(self):
        *_, Q = stereo_rectify(
            K_TRUE, NODIST, K_TRUE, NODIST, np.eye(3), np.array([-0.06, 0, 0]), IMAGE_SIZE
        )
        f = Q[2, 3]
        cx, cy = -Q[0, 3], -Q[1, 3]
        for d in (10.0, 42.0, 63.0):
            X = Q @ np.array([cx, cy, d, 1.0])
            assert X[2] / X[3] == pytest.approx(f * 0.06 / d, rel=1e-12)

    def test_zero_baseline_rejected(self):
        with pytest.raises(CalibrationError):
            stereo_rectify(K_TRUE, NODIST, K_TRUE, NODIST, np.eye(3), np.zeros(3), IMAGE_SIZE)


def _project_rectified(P, rect, pts_cam, right=False):
    rot = pts_cam @ rect.T
    uvw = rot @ P[:, :3].T + P[:, 3]
    return uvw[:, :2] / uvw[:, 2:]


class TestRemap:
    def test_identity_map(self, rng):
        img = rng.integers(0, 256, (48, 64), dtype=np.uint8)
        m = build_rectify_map(K100, NODIST, np.eye(3), _p_from(K100), (64, 48))
        assert np.array_equal(remap(img, m), img)

    def test_two_pixel_shift(self, rng):
        img = rng.integers(0, 256, (48, 64), dtype=np.uint8)
        K_shift = CameraIntrinsics(fx=K100.fx, fy=K100.fy, cx=K100.cx - 2.0, cy=K100.cy)
        m = build_rectify_map(K100, NODIST, np.eye(3), _p_from(K_shift), (64, 48))
        out = remap(img, m)
        assert np.array_equal(out[:, :-2], img[:, 2:])
        assert np.all(out[:, -2:] == 0)

    def test_float_out_of_source_is_nan(self):
        img = np.ones((48, 64), dtype=np.float32)
        K_shift = CameraIntrinsics(fx=K100.fx, fy=K100.fy, cx=K100.cx - 2.0, cy=K100.cy)
        m = build_rectify_map(K100, NODIST, np.eye(3), _p_from(K_shift), (64, 48))
        out = remap(img, m)
        assert np.all(np.isnan(out[:, -2:]))
        assert np.all(out[:, :-2] == 1.0)

    def test_undistortion_straightens_edge(self):
        # synthesize a barrel-distorted view of a vertical step edge, remap it
        # back through the model, and check the recovered edge is straight
        w, h = 160, 120
        K = CameraIntrinsics(fx=150.0, fy=150.0, cx=80.0, cy=60.0)
        dist = DistortionCoeffs(k1=-0.25)
        edge_x = 0.22  # normalized-plane edge location

        yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
        norm = np.stack([(xx.ravel() - K.cx) / K.fx, (yy.ravel() - K.cy) / K.fy], axis=1)
        und = undistort_normalized(dist, norm)[:, 0].reshape(h, w)
        src = np.clip((und - edge_x) * K.fx + 0.5, 0.0, 1.0)  # ~1px soft edge
        src_u8 = np.round(src * 255).astype(np.uint8)

        m = build_rectify_map(K, dist, np.eye(3), _p_from(K), (w, h))
        out = remap(src_u8, m).astype(np.float64)

        cols = []
        for y in range(10, h - 10):
            row = out[y]
            idx = np.where((row[:-1] < 127.5) & (row[1:] >= 127.5))[0]
            assert idx.size >= 1
            i = idx[0]
            cols.append(i + (127.5 - row[i]) / (row[i + 1] - row[i]))
        cols = np.array(cols)
        assert np.max(np.abs(cols - np.median(cols))) < 0.2


class TestVerticalMisalignment:
    def test_identical(self, rng, default_board):
        views, _ = synthetic_views(rng, default_board, K_TRUE, NODIST, 1)
        mean, mx = vertical_misalignment(views[0], views[0])
        assert mean == 0.0 and mx == 0.0

    def test_uniform_shift(self, rng, default_board):
        views, _ = synthetic_views(rng, default_board, K_TRUE, NODIST, 1)
        shifted = CornerGrid(board=default_board, points=views[0].points + [0.0, 2.0])
        mean, mx = vertical_misalignment(views[0], shifted)
        assert mean == pytest.approx(2.0) and mx == pytest.approx(2.0)

    def test_size_mismatch(self, rng, default_board):
        from stereopipe.target import BoardSpec

        other = BoardSpec(cols=7, rows=5, square_size=0.025)
        views, _ = synthetic_views(rng, default_board, K_TRUE, NODIST, 1)
        small, _ = synthetic_views(rng, other, K_TRUE, NODIST, 1)
        with pytest.raises(ValueError):
            vertical_misalignment(views[0], small[0])


class TestStereoRigJson:
    def test_roundtrip(self):
        rig = StereoRig.from_calibration(
            K_TRUE, DIST_TRUE, K_TRUE, NODIST, np.eye(3), np.array([-0.06, 0, 0]), IMAGE_SIZE
        )
        back = StereoRig.from_json(rig.to_json())
        assert np.allclose(back.Q, rig.Q)
        assert np.allclose(back.P_left, rig.P_left)
        assert np.allclose(back.P_right, rig.P_right)
        assert back.baseline_m == pytest.approx(rig.baseline_m)
        assert back.image_size == rig.image_size
        assert back.left.fx == rig.left.fx
        assert back.left_dist.k1 == rig.left_dist.k1

    def test_rejects_wrong_version(self):
        with pytest.raises(ValueError):
            StereoRig.from_json('{"version": "rig-v2"}')
